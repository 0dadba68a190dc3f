use super::arch::ModelParams;
use crate::error::{Error, Result};

/// AdamW hyperparameters. Defaults follow the fine-tuning recipe
/// (`beta1 = 0.9`, `beta2 = 0.95`, weight decay 0.01).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}
impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update, in place. On error nothing is
/// modified.
pub fn adamw_step(
    params: &mut ModelParams,
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    let n = params.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "adamw: params {n}, grad {}, moments {}/{}",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            index: i,
            detail: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..n {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let w = &mut params.values[i];
        *w -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::Arch;

    fn tiny() -> ModelParams {
        let arch = Arch {
            embed_dim: 2,
            hidden_dim: 2,
            num_prompts: 1,
            vocab_size: 2,
            seq_len: 1,
        };
        let n = arch.num_params();
        ModelParams::from_values(arch, (0..n).map(|i| 0.1 * i as f64 - 1.0).collect()).unwrap()
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let zero = vec![0.0; p.len()];
        adamw_step(&mut p, &zero, &mut st, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn zero_grad_decays_multiplicatively() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            ..Default::default()
        };
        let zero = vec![0.0; p.len()];
        adamw_step(&mut p, &zero, &mut st, &cfg).unwrap();
        for (a, b) in p.values.iter().zip(&before.values) {
            assert!((a - b * (1.0 - 1e-5)).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = w^2 at w = 1 on the first coordinate
        let mut p = tiny();
        p.values[0] = 1.0;
        let mut st = AdamState::new(p.len());
        let mut g = vec![0.0; p.len()];
        g[0] = 2.0;
        adamw_step(&mut p, &g, &mut st, &AdamWConfig::default()).unwrap();
        assert!(p.values[0] < 1.0);
    }

    #[test]
    fn non_finite_grad_rejected_without_mutation() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let mut g = vec![0.0; p.len()];
        g[3] = f64::INFINITY;
        let err = adamw_step(&mut p, &g, &mut st, &AdamWConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric { index: 3, .. }));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}
