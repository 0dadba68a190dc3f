use rand::Rng;

use super::space::TokenSequence;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking a log. Exact zeros
/// are kept as `-inf` so that genuinely impossible targets stay visible.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-normalized `D x K` probability table, one categorical per position.
///
/// Log-probabilities are stored next to the probabilities. Fields built
/// from logits get them from a stable log-softmax; fields built from raw
/// probabilities use `ln(max(p, PROB_FLOOR))`, or `-inf` when `p == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalField {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

fn floored_ln(p: f64) -> f64 {
    if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        p.max(PROB_FLOOR).ln()
    }
}

impl CategoricalField {
    /// Row-wise softmax of a `rows x cols` logits table.
    pub fn from_logits(logits: &[f64], rows: usize, cols: usize) -> Result<Self> {
        if logits.len() != rows * cols {
            return Err(Error::Shape(format!(
                "logits length {} != {rows}x{cols}",
                logits.len()
            )));
        }
        let mut probs = vec![0.0; rows * cols];
        let mut log_probs = vec![0.0; rows * cols];
        for r in 0..rows {
            let z = &logits[r * cols..(r + 1) * cols];
            let lse = log_sum_exp(z);
            if !lse.is_finite() {
                return Err(Error::Numeric {
                    index: r,
                    detail: "non-finite logits".into(),
                });
            }
            for k in 0..cols {
                let lp = z[k] - lse;
                log_probs[r * cols + k] = lp;
                probs[r * cols + k] = lp.exp();
            }
        }
        Ok(Self {
            rows,
            cols,
            probs,
            log_probs,
        })
    }

    /// Wrap an explicit table; every row must be a distribution to 1e-9.
    pub fn from_probs(probs: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(Error::Shape(format!(
                "probability table length {} != {rows}x{cols}",
                probs.len()
            )));
        }
        for r in 0..rows {
            let row = &probs[r * cols..(r + 1) * cols];
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Domain(format!("row {r} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {r} sums to {s}")));
            }
        }
        let log_probs = probs.iter().map(|&p| floored_ln(p)).collect();
        Ok(Self {
            rows,
            cols,
            probs,
            log_probs,
        })
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let p = 1.0 / cols as f64;
        Self {
            rows,
            cols,
            probs: vec![p; rows * cols],
            log_probs: vec![p.ln(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.probs[r * self.cols..(r + 1) * self.cols]
    }

    pub fn log_row(&self, r: usize) -> &[f64] {
        &self.log_probs[r * self.cols..(r + 1) * self.cols]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draw one token per row.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        let tokens = (0..self.rows)
            .map(|r| sample_categorical(self.row(r), rng))
            .collect();
        TokenSequence::new(tokens)
    }
}

/// Inverse-CDF draw from a normalized row.
pub fn sample_categorical<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding gap above the accumulated mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// `sum_l log field[l][target[l]]`, i.e. the log of the product of
/// per-position probabilities of `target`. Returns `-inf` if any target
/// token has exactly zero probability.
pub fn sequence_log_prob(field: &CategoricalField, target: &TokenSequence) -> Result<f64> {
    if target.len() != field.rows() {
        return Err(Error::Shape(format!(
            "target length {} != field rows {}",
            target.len(),
            field.rows()
        )));
    }
    let mut total = 0.0;
    for (l, &tok) in target.iter().enumerate() {
        if tok >= field.cols() {
            return Err(Error::Domain(format!("token {tok} outside vocabulary")));
        }
        total += field.log_row(l)[tok];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    fn random_field(rows: usize, cols: usize, seed: u64) -> CategoricalField {
        let mut rng = derive(seed, &[]);
        let logits: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
        CategoricalField::from_logits(&logits, rows, cols).unwrap()
    }

    #[test]
    fn uniform_field_log_prob() {
        let f = CategoricalField::uniform(1, 4);
        let lp = sequence_log_prob(&f, &TokenSequence::new(vec![2])).unwrap();
        assert!((lp + 4f64.ln()).abs() < 1e-12);
        assert!((lp + 1.386294).abs() < 1e-6);
    }

    #[test]
    fn one_hot_field_gives_zero() {
        let f = CategoricalField::from_probs(vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 2, 3).unwrap();
        let lp = sequence_log_prob(&f, &TokenSequence::new(vec![1, 2])).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn exact_zero_is_negative_infinity_not_nan() {
        let f = CategoricalField::from_probs(vec![0.0, 1.0], 1, 2).unwrap();
        let lp = sequence_log_prob(&f, &TokenSequence::new(vec![0])).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn tiny_probabilities_are_floored() {
        let f = CategoricalField::from_probs(vec![1e-300, 1.0 - 1e-300], 1, 2).unwrap();
        let lp = sequence_log_prob(&f, &TokenSequence::new(vec![0])).unwrap();
        assert_eq!(lp, PROB_FLOOR.ln());
    }

    #[test]
    fn brute_force_normalization_k3_d2() {
        let f = random_field(2, 3, 11);
        let mut total = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                total += sequence_log_prob(&f, &TokenSequence::new(vec![a, b]))
                    .unwrap()
                    .exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rows_sum_to_one() {
        let f = random_field(7, 5, 3);
        for r in 0..7 {
            assert!((f.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_and_range_errors() {
        let f = CategoricalField::uniform(2, 3);
        assert!(matches!(
            sequence_log_prob(&f, &TokenSequence::new(vec![0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            sequence_log_prob(&f, &TokenSequence::new(vec![0, 3])),
            Err(Error::Domain(_))
        ));
        assert!(CategoricalField::from_probs(vec![0.5, 0.6], 1, 2).is_err());
    }

    #[test]
    fn sampling_frequencies_follow_row() {
        let f = CategoricalField::from_probs(vec![0.2, 0.5, 0.3], 1, 3).unwrap();
        let mut rng = derive(5, &[]);
        let mut counts = [0usize; 3];
        let n = 50_000;
        for _ in 0..n {
            counts[f.sample(&mut rng)[0]] += 1;
        }
        for (k, &p) in [0.2, 0.5, 0.3].iter().enumerate() {
            assert!((counts[k] as f64 / n as f64 - p).abs() < 0.01);
        }
    }
}
