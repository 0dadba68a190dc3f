use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn udmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udmg"))
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: &str = "vocab_size = 5\nseq_len = 6\nnum_prompts = 2\nembed_dim = 6\nhidden_dim = 8\n\
                    pretrain_steps = 5\nbatch_size = 8\nrl_updates = 3\ngroup_size = 2\n\
                    groups_per_batch = 2\nnum_steps = 6\neval_per_prompt = 2\nprobe_pairs = 64\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().display().to_string();
    let ckpt = dir.path().join("pretrain.ckpt").display().to_string();

    let o = udmg(&["pretrain", "--config", &cfg, "--out", &out, "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = udmg(&["rl", "--config", &cfg, "--out", &out, "--checkpoint", &ckpt, "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(dir.path().join("rl_metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "step,reward_mean,reward_std,kl,clip_frac,ratio_mean,loss,grad_norm,wallclock_ms"
    );
    assert_eq!(metrics.lines().count(), 4);

    let o = udmg(&["probe", "--config", &cfg, "--out", &out, "--checkpoint", &ckpt]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("probe.csv")).unwrap().lines().count(), 8);

    let sample = |n: &str| udmg(&["sample", "--config", &cfg, "--checkpoint", &ckpt, "--prompt", "1", "--n", n]);
    let (a, b) = (sample("1"), sample("1"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(sample("0").stdout).unwrap(), "index\treward\ttokens\n");

    let o = udmg(&["eval", "--config", &cfg, "--checkpoint", &ckpt]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("all\t"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();

    let bad = write_config(dir.path(), "grup_size = 4\n");
    let o = udmg(&["pretrain", "--config", &bad, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grup_size"));

    let cfg = write_config(dir.path(), TINY);
    let missing = dir.path().join("missing.ckpt").display().to_string();
    let o = udmg(&["probe", "--config", &cfg, "--out", &out, "--checkpoint", &missing]);
    assert_eq!(o.status.code(), Some(2));

    assert!(udmg(&["pretrain", "--config", &cfg, "--out", &out]).status.success());
    let ckpt = dir.path().join("pretrain.ckpt").display().to_string();
    let o = udmg(&["sample", "--config", &cfg, "--checkpoint", &ckpt, "--prompt", "7"]);
    assert_eq!(o.status.code(), Some(2));

    let other = write_config(dir.path(), &format!("{TINY}hidden_dim = 9\n").replace("hidden_dim = 8\n", ""));
    let o = udmg(&["rl", "--config", &other, "--out", &out, "--checkpoint", &ckpt]);
    assert_eq!(o.status.code(), Some(3));

    let corrupt = dir.path().join("corrupt.ckpt");
    fs::write(&corrupt, b"UDMG garbage").unwrap();
    let o = udmg(&["eval", "--config", &cfg, "--checkpoint", &corrupt.display().to_string()]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn strong_kl_anchor_keeps_params_near_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let base = format!("{TINY}rl_updates = 20\nrl_lr = 0.01\n").replace("rl_updates = 3\n", "");
    let cfg = write_config(dir.path(), &base);
    assert!(udmg(&["pretrain", "--config", &cfg, "--out", &out]).status.success());
    let ckpt = dir.path().join("pretrain.ckpt");
    let start = udm_core::model::checkpoint::load(&ckpt).unwrap();

    let drift = |beta: &str| {
        let sub = dir.path().join(format!("beta{beta}"));
        let cfg = write_config(dir.path(), &format!("{base}kl_weight = {beta}\n"));
        let o = udmg(&["rl", "--config", &cfg, "--out", &sub.display().to_string(), "--checkpoint", &ckpt.display().to_string()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        udm_core::model::checkpoint::load(&sub.join("rl.ckpt")).unwrap().distance(&start)
    };
    assert!(drift("1000") < drift("0"));
}
