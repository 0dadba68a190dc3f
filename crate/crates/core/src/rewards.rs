//! Terminal rewards on the final clean sample. All values lie in `[0, 1]`.

use std::fmt::Debug;

use crate::diffusion::TokenSequence;
use crate::error::Result;
use crate::tasks::SyntheticTask;

pub trait RewardFn: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// Reward of a validated sequence `x` under prompt `c`.
    fn score(&self, task: &SyntheticTask, x: &TokenSequence, c: usize) -> f64;
}

/// Fraction of positions equal to the prompt's target token.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenMatch;

/// `1 - |#target - target_count| / D`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CountMatch;

/// Fraction of adjacent pairs equal to `(target, bigram_next)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BigramPattern;

impl RewardFn for TokenMatch {
    fn name(&self) -> &'static str {
        "token_match"
    }
    fn score(&self, task: &SyntheticTask, x: &TokenSequence, c: usize) -> f64 {
        let target = task.targets[c];
        x.iter().filter(|&&t| t == target).count() as f64 / x.len() as f64
    }
}

impl RewardFn for CountMatch {
    fn name(&self) -> &'static str {
        "count_match"
    }
    fn score(&self, task: &SyntheticTask, x: &TokenSequence, c: usize) -> f64 {
        let target = task.targets[c];
        let count = x.iter().filter(|&&t| t == target).count() as f64;
        let want = task.target_counts[c] as f64;
        1.0 - (count - want).abs() / x.len() as f64
    }
}

impl RewardFn for BigramPattern {
    fn name(&self) -> &'static str {
        "bigram_pattern"
    }
    fn score(&self, task: &SyntheticTask, x: &TokenSequence, c: usize) -> f64 {
        if x.len() < 2 {
            return 0.0;
        }
        let pair = (task.targets[c], task.bigram_next[c]);
        let hits = x
            .as_slice()
            .windows(2)
            .filter(|w| (w[0], w[1]) == pair)
            .count();
        hits as f64 / (x.len() - 1) as f64
    }
}

/// Validated reward evaluation.
pub fn reward(f: &dyn RewardFn, task: &SyntheticTask, x: &TokenSequence, c: usize) -> Result<f64> {
    task.space.check(x)?;
    task.check_prompt(c)?;
    Ok(f.score(task, x, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::SpaceSpec;
    use crate::rng::derive;
    use proptest::prelude::*;

    fn task4() -> SyntheticTask {
        let mut t = SyntheticTask::with_defaults(SpaceSpec::new(5, 4).unwrap(), 2).unwrap();
        t.targets = vec![1, 2];
        t.bigram_next = vec![3, 0];
        t.target_counts = vec![4, 2];
        t
    }

    #[test]
    fn token_match_examples() {
        let t = task4();
        assert_eq!(reward(&TokenMatch, &t, &TokenSequence::filled(1, 4), 0).unwrap(), 1.0);
        // [t, t, a, b]
        let x = TokenSequence::new(vec![1, 1, 0, 4]);
        assert_eq!(reward(&TokenMatch, &t, &x, 0).unwrap(), 0.5);
    }

    #[test]
    fn count_match_examples() {
        let t = task4();
        // zero target tokens, target_count = D
        assert_eq!(reward(&CountMatch, &t, &TokenSequence::filled(0, 4), 0).unwrap(), 0.0);
        assert_eq!(reward(&CountMatch, &t, &TokenSequence::new(vec![2, 2, 0, 0]), 1).unwrap(), 1.0);
        assert_eq!(reward(&CountMatch, &t, &TokenSequence::new(vec![2, 2, 2, 0]), 1).unwrap(), 0.75);
    }

    #[test]
    fn bigram_examples() {
        let t = task4();
        let x = TokenSequence::new(vec![1, 3, 1, 3]);
        assert!((reward(&BigramPattern, &t, &x, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reward(&BigramPattern, &t, &TokenSequence::filled(1, 4), 0).unwrap(), 0.0);
    }

    #[test]
    fn reward_validates_inputs() {
        let t = task4();
        assert!(reward(&TokenMatch, &t, &TokenSequence::filled(1, 3), 0).is_err());
        assert!(reward(&TokenMatch, &t, &TokenSequence::filled(1, 4), 2).is_err());
    }

    #[test]
    fn pretrained_data_reward_sits_near_target_prob() {
        let task = SyntheticTask::default();
        let mut rng = derive(8, &[]);
        let n = 1000;
        let mean: f64 = (0..n)
            .map(|i| {
                let c = i % task.num_prompts;
                TokenMatch.score(&task, &task.sample_clean(c, &mut rng), c)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.6).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn rewards_lie_in_unit_interval(tokens in proptest::collection::vec(0usize..5, 4), c in 0usize..2) {
            let t = task4();
            let x = TokenSequence::new(tokens);
            for f in [&TokenMatch as &dyn RewardFn, &CountMatch, &BigramPattern] {
                let r = reward(f, &t, &x, c).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert_eq!(r, reward(f, &t, &x, c).unwrap());
            }
        }
    }
}
