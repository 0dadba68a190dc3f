//! Group-normalized advantages and the per-sample surrogate pieces.

use crate::diffusion::{sequence_log_prob, TokenSequence};
use crate::error::{Error, Result};
use crate::model::loss::mean_kl;
use crate::model::{policy_field, DenoiserInput, ModelParams, PolicyField};

/// Standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-8;

/// `(r - mean) / std` with the population standard deviation of the group.
/// A group with (numerically) identical rewards gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Statistics(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Statistics(format!("non-finite reward {r}")));
    }
    let (mean, std) = mean_std(rewards);
    if std < STD_FLOOR {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `exp(log p_theta(a | s) - log p_old(a | s))`.
pub fn policy_ratio(
    params: &ModelParams,
    params_old: &ModelParams,
    state: &DenoiserInput,
    action: &TokenSequence,
    field: PolicyField,
) -> Result<f64> {
    let new = sequence_log_prob(&policy_field(params, state, field)?, action)?;
    let old = sequence_log_prob(&policy_field(params_old, state, field)?, action)?;
    if old == f64::NEG_INFINITY {
        return Err(Error::Ratio(
            "old policy assigns zero probability to the action".into(),
        ));
    }
    Ok((new - old).exp())
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Position-averaged `KL(p_theta || p_ref)` at `state`.
pub fn kl_penalty(
    params: &ModelParams,
    params_ref: &ModelParams,
    state: &DenoiserInput,
    field: PolicyField,
) -> Result<f64> {
    let p = policy_field(params, state, field)?;
    let q = policy_field(params_ref, state, field)?;
    Ok(mean_kl(&p, &q).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{random_input, random_target, small_arch};
    use crate::rng::derive;
    use proptest::prelude::*;

    #[test]
    fn advantage_examples() {
        let a = compute_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(compute_advantages(&[0.5; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(
            compute_advantages(&[1.0]),
            Err(Error::Statistics(_))
        ));
        assert!(compute_advantages(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn clipping_examples() {
        assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert!((clipped_objective(1.5, -1.0, 0.2) + 1.5).abs() < 1e-15);
        assert!((clipped_objective(0.5, 1.0, 0.2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_params_give_unit_ratio_and_zero_kl() {
        let arch = small_arch();
        let mut rng = derive(4, &[]);
        let p = ModelParams::init(arch, 0.5, &mut rng);
        let s = random_input(&arch, &mut rng, false);
        let a = random_target(&arch, &mut rng);
        for f in [PolicyField::Conditional, PolicyField::Guided { scale: 1.7 }] {
            assert_eq!(policy_ratio(&p, &p, &s, &a, f).unwrap(), 1.0);
            assert_eq!(kl_penalty(&p, &p, &s, f).unwrap(), 0.0);
        }
        let q = ModelParams::init(arch, 0.5, &mut rng);
        assert!(kl_penalty(&p, &q, &s, PolicyField::Conditional).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rs in proptest::collection::vec(0.0f64..1.0, 2..32)) {
            let a = compute_advantages(&rs).unwrap();
            let (m, s) = mean_std(&a);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!(s.abs() < 1e-9 || (s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn objective_is_bounded_by_unclipped(r in 0.0f64..3.0, a in -2.0f64..2.0, eps in 0.01f64..0.99) {
            prop_assert!(clipped_objective(r, a, eps) <= r * a + 1e-12);
        }
    }
}
