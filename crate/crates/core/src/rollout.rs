//! Reverse-process rollouts and the three trajectory families.
//!
//! * backward: the states visited by the two-stage Euler sampler;
//! * forward: states rebuilt by forward-corrupting a rollout's final
//!   clean sample;
//! * pretrain: states built by forward-corrupting a dataset sample.

use std::io::{self, Write};

use rand::Rng;

use crate::diffusion::{sequence_log_prob, CategoricalField, TimeGrid, TokenSequence, UniformDiffusion};
use crate::error::{Error, Result};
use crate::model::{forward_logits, DenoiserInput, ModelParams, PolicyField};

/// Classifier-free guidance settings for sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfgSpec {
    pub enabled: bool,
    pub guidance_scale: f64,
}

impl CfgSpec {
    pub fn off() -> Self {
        Self {
            enabled: false,
            guidance_scale: 1.0,
        }
    }

    pub fn guided(scale: f64) -> Self {
        Self {
            enabled: true,
            guidance_scale: scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(Error::Config(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.guidance_scale
            )));
        }
        Ok(())
    }

    /// Field that sampling draws from.
    pub fn policy_field(&self) -> PolicyField {
        if self.enabled {
            PolicyField::Guided {
                scale: self.guidance_scale,
            }
        } else {
            PolicyField::Conditional
        }
    }
}

/// `uncond + w * (cond - uncond)`, applied in logit space.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], w: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::Shape(format!(
            "conditional logits {} vs unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| u + w * (c - u))
        .collect())
}

/// One reverse-process trajectory and everything later training needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub prompt: usize,
    pub grid: TimeGrid,
    /// `x_{t_0}, ..., x_{t_T}`; `states[0]` is drawn from the uniform source.
    pub states: Vec<TokenSequence>,
    /// `x_1^{t_j}` sampled at each of the `T` steps.
    pub intermediate_preds: Vec<TokenSequence>,
    /// Final clean sample, the last intermediate prediction.
    pub clean: TokenSequence,
    /// `log p_old(x_1^{t_j} | x_{t_j}, c)`.
    pub old_logprob_intermediate: Vec<f64>,
    /// `log p_old(clean | x_{t_j}, c)`.
    pub old_logprob_clean: Vec<f64>,
    pub reward: Option<f64>,
    pub advantage: Option<f64>,
    /// Network evaluations spent producing the record.
    pub model_evals: usize,
}

impl RolloutRecord {
    /// Text dump, one line per knot. Columns (tab separated): step index,
    /// t, state tokens, prediction tokens (`-` at the final knot).
    pub fn write_dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# step\tt\tstate\tprediction")?;
        for (j, state) in self.states.iter().enumerate() {
            let pred = self
                .intermediate_preds
                .get(j)
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".into());
            writeln!(out, "{j}\t{}\t{state}\t{pred}", self.grid.t(j))?;
        }
        Ok(())
    }
}

/// Policy field of `params` at `(x, t, c)` and the number of network
/// evaluations it took.
pub fn step_field(
    params: &ModelParams,
    x: &TokenSequence,
    t: f64,
    c: usize,
    field: PolicyField,
) -> Result<(CategoricalField, usize)> {
    let arch = params.arch;
    let input = DenoiserInput::new(x.clone(), t, Some(c));
    let cond = forward_logits(params, &input)?;
    let (logits, evals) = match field {
        PolicyField::Conditional => (cond, 1),
        PolicyField::Guided { scale } => {
            let uncond = forward_logits(params, &input.unconditional())?;
            (cfg_combine(&cond, &uncond, scale)?, 2)
        }
    };
    Ok((
        CategoricalField::from_logits(&logits, arch.seq_len, arch.vocab_size)?,
        evals,
    ))
}

/// Run the two-stage Euler sampler for prompt `c` under frozen parameters.
pub fn sample_rollout<R: Rng + ?Sized>(
    params_old: &ModelParams,
    diffusion: &UniformDiffusion,
    c: usize,
    grid: &TimeGrid,
    cfg: &CfgSpec,
    rng: &mut R,
) -> Result<RolloutRecord> {
    cfg.validate()?;
    let steps = grid.num_steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut preds = Vec::with_capacity(steps);
    let mut fields = Vec::with_capacity(steps);
    let mut lp_inter = Vec::with_capacity(steps);
    let mut evals = 0;

    states.push(diffusion.sample_source(rng));
    for j in 0..steps {
        let x = &states[j];
        let (field, n) = step_field(params_old, x, grid.t(j), c, cfg.policy_field())?;
        evals += n;
        let pred = field.sample(rng);
        lp_inter.push(sequence_log_prob(&field, &pred)?);
        let next = diffusion.euler_step(x, &pred, grid.t(j), grid.dt(j), rng)?;
        preds.push(pred);
        fields.push(field);
        states.push(next);
    }
    let clean = preds.last().cloned().expect("grid has at least one step");
    let lp_clean = fields
        .iter()
        .map(|f| sequence_log_prob(f, &clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutRecord {
        prompt: c,
        grid: grid.clone(),
        states,
        intermediate_preds: preds,
        clean,
        old_logprob_intermediate: lp_inter,
        old_logprob_clean: lp_clean,
        reward: None,
        advantage: None,
        model_evals: evals,
    })
}

/// A state of the forward trajectory: `forward_corrupt(clean, t)`.
pub fn reconstruct_forward_state<R: Rng + ?Sized>(
    diffusion: &UniformDiffusion,
    clean: &TokenSequence,
    t: f64,
    rng: &mut R,
) -> Result<TokenSequence> {
    diffusion.forward_corrupt(clean, t, rng)
}

/// Forward-corrupt a dataset sample at every knot of `grid`.
pub fn build_pretrain_trajectory<R: Rng + ?Sized>(
    diffusion: &UniformDiffusion,
    x1: &TokenSequence,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Vec<TokenSequence>> {
    grid.knots()
        .iter()
        .map(|&t| diffusion.forward_corrupt(x1, t, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::diffusion::schedule::LinearSchedule;
    use crate::diffusion::SpaceSpec;
    use crate::model::{adamw_step, loss_and_grad, AdamState, AdamWConfig, Arch, LossItem, LossSpec};
    use crate::rng::derive;

    fn setup(k: usize, d: usize) -> (UniformDiffusion, ModelParams) {
        let space = SpaceSpec::new(k, d).unwrap();
        let arch = Arch::new(space, 2, 8, 12).unwrap();
        let p = ModelParams::init(arch, 0.3, &mut derive(1, &[]));
        (UniformDiffusion::new(space, Arc::new(LinearSchedule)), p)
    }

    #[test]
    fn cfg_combine_examples() {
        let c = [1.0, -2.0, 0.5];
        let u = [0.3, 0.1, -0.7];
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
        for w in [0.0, 0.7, 3.0, 7.5] {
            assert_eq!(cfg_combine(&c, &c, w).unwrap(), c.to_vec());
        }
        assert!(cfg_combine(&c, &u[..2], 1.0).is_err());
    }

    #[test]
    fn one_step_grid_commits_immediately() {
        let (dif, p) = setup(4, 6);
        let grid = TimeGrid::uniform(1).unwrap();
        let r = sample_rollout(&p, &dif, 1, &grid, &CfgSpec::off(), &mut derive(2, &[])).unwrap();
        assert_eq!(r.clean, r.intermediate_preds[0]);
        assert_eq!(r.states[1], r.clean);
    }

    #[test]
    fn rollout_is_deterministic_and_consistent() {
        let (dif, p) = setup(4, 6);
        let grid = TimeGrid::uniform(10).unwrap();
        for cfg in [CfgSpec::off(), CfgSpec::guided(2.0)] {
            let a = sample_rollout(&p, &dif, 0, &grid, &cfg, &mut derive(3, &[])).unwrap();
            let b = sample_rollout(&p, &dif, 0, &grid, &cfg, &mut derive(3, &[])).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.states.len(), 11);
            assert_eq!(a.intermediate_preds.len(), 10);
            assert_eq!(a.old_logprob_clean[9], a.old_logprob_intermediate[9]);
            assert_eq!(a.clean, a.states[10]);
            let expected = if cfg.enabled { 20 } else { 10 };
            assert_eq!(a.model_evals, expected);
        }
    }

    #[test]
    fn source_states_are_uniform() {
        let (dif, p) = setup(3, 2);
        let grid = TimeGrid::uniform(1).unwrap();
        let n = 10_000;
        let mut counts = [[0usize; 3]; 2];
        for i in 0..n {
            let r = sample_rollout(&p, &dif, 0, &grid, &CfgSpec::off(), &mut derive(4, &[i])).unwrap();
            for (l, &t) in r.states[0].iter().enumerate() {
                counts[l][t] += 1;
            }
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01 + 0.005);
            }
        }
    }

    #[test]
    fn overfit_model_reproduces_its_sample() {
        let space = SpaceSpec::new(5, 6).unwrap();
        let dif = UniformDiffusion::new(space, Arc::new(LinearSchedule));
        let arch = Arch::new(space, 1, 16, 32).unwrap();
        let mut p = ModelParams::init(arch, 0.05, &mut derive(5, &[]));
        let x1 = TokenSequence::new(vec![4, 0, 2, 2, 1, 3]);
        let mut st = AdamState::new(p.len());
        let cfg = AdamWConfig {
            lr: 1e-2,
            ..Default::default()
        };
        let mut rng = derive(6, &[]);
        for _ in 0..300 {
            let batch: Vec<LossItem> = (0..16)
                .map(|_| {
                    let t: f64 = rng.gen();
                    let xt = dif.forward_corrupt(&x1, t, &mut rng).unwrap();
                    LossItem::cross_entropy(DenoiserInput::new(xt, t, Some(0)), x1.clone(), 1.0 / 16.0)
                })
                .collect();
            let (_, g) = loss_and_grad(&p, &batch, &LossSpec::CrossEntropy).unwrap();
            adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        let grid = TimeGrid::uniform(10).unwrap();
        let hits = (0..1000)
            .filter(|&i| {
                sample_rollout(&p, &dif, 0, &grid, &CfgSpec::off(), &mut derive(7, &[i]))
                    .unwrap()
                    .clean
                    == x1
            })
            .count();
        assert!(hits >= 990, "{hits}/1000");
    }

    #[test]
    fn forward_reconstruction_keep_rate() {
        let space = SpaceSpec::new(3, 1).unwrap();
        let dif = UniformDiffusion::new(space, Arc::new(LinearSchedule));
        let clean = TokenSequence::new(vec![2]);
        let mut rng = derive(8, &[]);
        assert_eq!(reconstruct_forward_state(&dif, &clean, 1.0, &mut rng).unwrap(), clean);
        let n = 20_000;
        let kept = (0..n)
            .filter(|_| reconstruct_forward_state(&dif, &clean, 0.5, &mut rng).unwrap()[0] == 2)
            .count();
        assert!((kept as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn pretrain_trajectory_knot_rates() {
        let space = SpaceSpec::new(4, 8).unwrap();
        let dif = UniformDiffusion::new(space, Arc::new(LinearSchedule));
        let grid = TimeGrid::uniform(4).unwrap();
        let x1 = TokenSequence::new(vec![0, 1, 2, 3, 0, 1, 2, 3]);
        let mut rng = derive(9, &[]);
        let reps = 2500;
        let mut kept = vec![0usize; 5];
        for _ in 0..reps {
            let traj = build_pretrain_trajectory(&dif, &x1, &grid, &mut rng).unwrap();
            assert_eq!(traj[4], x1);
            for (j, s) in traj.iter().enumerate() {
                kept[j] += s.matches(&x1);
            }
        }
        for (j, &k) in kept.iter().enumerate() {
            let expected = dif.forward_marginal_prob(0, 0, grid.t(j)).unwrap();
            assert!((k as f64 / (reps * 8) as f64 - expected).abs() < 0.01, "knot {j}");
        }
    }

    #[test]
    fn dump_has_one_line_per_knot() {
        let (dif, p) = setup(4, 3);
        let grid = TimeGrid::uniform(4).unwrap();
        let r = sample_rollout(&p, &dif, 1, &grid, &CfgSpec::off(), &mut derive(10, &[])).unwrap();
        let mut buf = Vec::new();
        r.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.lines().last().unwrap().ends_with("\t-"));
    }
}
