//! Synthetic prompt-conditioned data distributions.
//!
//! Prompt `c` owns a target token. A clean sample puts the target at each
//! position independently with probability `target_prob` and otherwise a
//! token drawn uniformly from the remaining `K - 1`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::diffusion::{SpaceSpec, TokenSequence};
use crate::error::{Error, Result};
use crate::harness::kv;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub space: SpaceSpec,
    pub num_prompts: usize,
    pub target_prob: f64,
    /// Target token per prompt.
    pub targets: Vec<usize>,
    /// Desired number of target tokens per prompt (`count_match`).
    pub target_counts: Vec<usize>,
    /// Token that should follow the target per prompt (`bigram_pattern`).
    pub bigram_next: Vec<usize>,
}

impl Default for SyntheticTask {
    /// `K = 16`, `D = 24`, `P = 4`.
    fn default() -> Self {
        Self::with_defaults(SpaceSpec::new(16, 24).unwrap(), 4).unwrap()
    }
}

impl SyntheticTask {
    /// Task over `space` with `num_prompts` prompts and deterministic
    /// default targets: prompt `c` targets token `(3 + 5c) mod K`.
    pub fn with_defaults(space: SpaceSpec, num_prompts: usize) -> Result<Self> {
        let k = space.vocab_size;
        let targets: Vec<usize> = (0..num_prompts).map(|c| (3 + 5 * c) % k).collect();
        let task = Self {
            space,
            num_prompts,
            target_prob: 0.6,
            target_counts: vec![(3 * space.seq_len) / 4; num_prompts],
            bigram_next: targets.iter().map(|t| (t + k / 2) % k).collect(),
            targets,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.space.vocab_size;
        if self.num_prompts == 0 {
            return Err(Error::Config("task has no prompts".into()));
        }
        if !(0.0..=1.0).contains(&self.target_prob) {
            return Err(Error::Config(format!("target_prob {} outside [0, 1]", self.target_prob)));
        }
        for (name, list) in [
            ("targets", &self.targets),
            ("target_counts", &self.target_counts),
            ("bigram_next", &self.bigram_next),
        ] {
            if list.len() != self.num_prompts {
                return Err(Error::Config(format!(
                    "{name} has {} entries for {} prompts",
                    list.len(),
                    self.num_prompts
                )));
            }
        }
        if let Some(t) = self.targets.iter().chain(&self.bigram_next).find(|&&t| t >= k) {
            return Err(Error::Config(format!("token {t} outside vocabulary of size {k}")));
        }
        if let Some(n) = self.target_counts.iter().find(|&&n| n > self.space.seq_len) {
            return Err(Error::Config(format!("target count {n} exceeds seq_len")));
        }
        Ok(())
    }

    pub fn check_prompt(&self, c: usize) -> Result<()> {
        if c >= self.num_prompts {
            return Err(Error::Config(format!(
                "unknown prompt {c} (task has {})",
                self.num_prompts
            )));
        }
        Ok(())
    }

    /// Draw a clean sample for prompt `c`.
    pub fn sample_clean<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> TokenSequence {
        let target = self.targets[c];
        let k = self.space.vocab_size;
        TokenSequence::new(
            (0..self.space.seq_len)
                .map(|_| {
                    if rng.gen::<f64>() < self.target_prob {
                        target
                    } else {
                        let r = rng.gen_range(0..k - 1);
                        if r >= target {
                            r + 1
                        } else {
                            r
                        }
                    }
                })
                .collect(),
        )
    }

    pub fn sample_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.num_prompts)
    }

    fn join(list: &[usize]) -> String {
        list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }

    /// Serialize to the task description format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "vocab_size={}", self.space.vocab_size).unwrap();
        writeln!(s, "seq_len={}", self.space.seq_len).unwrap();
        writeln!(s, "num_prompts={}", self.num_prompts).unwrap();
        writeln!(s, "target_prob={}", self.target_prob).unwrap();
        writeln!(s, "targets={}", Self::join(&self.targets)).unwrap();
        writeln!(s, "target_counts={}", Self::join(&self.target_counts)).unwrap();
        writeln!(s, "bigram_next={}", Self::join(&self.bigram_next)).unwrap();
        s
    }

    /// Parse a task description. `vocab_size`, `seq_len` and `num_prompts`
    /// are required; the per-prompt lists default as in
    /// [`SyntheticTask::with_defaults`].
    pub fn parse(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        const KNOWN: [&str; 7] = [
            "vocab_size",
            "seq_len",
            "num_prompts",
            "target_prob",
            "targets",
            "target_counts",
            "bigram_next",
        ];
        if let Some(k) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown task key '{k}'")));
        }
        let required = |key: &str| -> Result<usize> {
            let v = map
                .get(key)
                .ok_or_else(|| Error::Config(format!("task file is missing '{key}'")))?;
            kv::parse_value(key, v)
        };
        let space = SpaceSpec::new(required("vocab_size")?, required("seq_len")?)?;
        let mut task = Self::with_defaults(space, required("num_prompts")?)?;
        if let Some(v) = map.get("target_prob") {
            task.target_prob = kv::parse_value("target_prob", v)?;
        }
        if let Some(v) = map.get("targets") {
            task.targets = kv::parse_list("targets", v)?;
        }
        if let Some(v) = map.get("target_counts") {
            task.target_counts = kv::parse_list("target_counts", v)?;
        }
        if let Some(v) = map.get("bigram_next") {
            task.bigram_next = kv::parse_list("bigram_next", v)?;
        }
        task.validate()?;
        Ok(task)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
