//! Noise schedules `kappa(t)` for the uniform mixture path.
//!
//! `kappa(0) = 0` is pure noise and `kappa(1) = 1` is clean data.

use std::f64::consts::PI;
use std::fmt::Debug;

pub trait NoiseSchedule: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn kappa(&self, t: f64) -> f64;
    fn kappa_dot(&self, t: f64) -> f64;
}

/// `kappa(t) = t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearSchedule;

impl NoiseSchedule for LinearSchedule {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn kappa(&self, t: f64) -> f64 {
        t
    }
    fn kappa_dot(&self, _t: f64) -> f64 {
        1.0
    }
}

/// `kappa(t) = sin^2(pi t / 2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineSchedule;

impl NoiseSchedule for CosineSchedule {
    fn name(&self) -> &'static str {
        "cosine"
    }
    fn kappa(&self, t: f64) -> f64 {
        let s = (0.5 * PI * t).sin();
        s * s
    }
    fn kappa_dot(&self, t: f64) -> f64 {
        0.5 * PI * (PI * t).sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_schedule(s: &dyn NoiseSchedule) {
        assert!(s.kappa(0.0).abs() < 1e-15);
        assert!((s.kappa(1.0) - 1.0).abs() < 1e-15);
        let mut prev = s.kappa(0.0);
        for i in 1..=1000 {
            let t = i as f64 / 1000.0;
            let k = s.kappa(t);
            assert!(k >= prev - 1e-15, "{} not monotone at {t}", s.name());
            assert!(s.kappa_dot(t) >= -1e-12);
            prev = k;
        }
        // derivative against central differences
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let h = 1e-6;
            let fd = (s.kappa(t + h) - s.kappa(t - h)) / (2.0 * h);
            assert!((fd - s.kappa_dot(t)).abs() < 1e-6, "{} at {t}", s.name());
        }
    }

    #[test]
    fn schedules_satisfy_boundary_and_monotonicity() {
        check_schedule(&LinearSchedule);
        check_schedule(&CosineSchedule);
    }
}
