use crate::error::{Error, Result};

/// Knots `0 = t_0 < t_1 < ... < t_T = 1` of the reverse-time solver.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// `num_steps` equal steps on `[0, 1]`.
    pub fn uniform(num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        let knots = (0..=num_steps)
            .map(|j| j as f64 / num_steps as f64)
            .collect();
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("time grid needs at least two knots".into()));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::Domain("time grid must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("time grid knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    /// Number of solver steps `T`.
    pub fn num_steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn t(&self, j: usize) -> f64 {
        self.knots[j]
    }

    /// Step size `t_{j+1} - t_j`.
    pub fn dt(&self, j: usize) -> f64 {
        self.knots[j + 1] - self.knots[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_steps_sum_to_one() {
        for t in [1, 3, 10, 25, 100] {
            let g = TimeGrid::uniform(t).unwrap();
            assert_eq!(g.num_steps(), t);
            let total: f64 = (0..t).map(|j| g.dt(j)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(g.t(t), 1.0);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(TimeGrid::uniform(0).is_err());
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_knots(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::from_knots(vec![0.0, 0.3, 1.0]).is_ok());
    }
}
