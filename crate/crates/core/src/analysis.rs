//! Trajectory diagnostics: prediction entropy along the reverse process and
//! how far each trajectory family's predictions drift from those made on
//! forward-corrupted data.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{CategoricalField, TimeGrid, TokenSequence, UniformDiffusion};
use crate::error::{Error, Result};
use crate::model::{policy_field, DenoiserInput, ModelParams, PolicyField};
use crate::rng::{derive, domain};
use crate::rollout::{build_pretrain_trajectory, reconstruct_forward_state, sample_rollout, CfgSpec};
use crate::tasks::SyntheticTask;

/// Mean over positions of the Shannon entropy (nats) of each row.
pub fn field_entropy(field: &CategoricalField) -> f64 {
    let total: f64 = (0..field.rows())
        .map(|l| {
            field
                .row(l)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / field.rows() as f64
}

fn check_sets(a: &[TokenSequence], b: &[TokenSequence], min: usize) -> Result<usize> {
    if a.len() < min || b.len() < min {
        return Err(Error::Statistics(format!(
            "need at least {min} samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|s| s.len() != d) {
        return Err(Error::Shape("sample sets mix sequence lengths".into()));
    }
    Ok(d)
}

/// Mean over positions of the total-variation distance between the two
/// sets' empirical token histograms.
pub fn token_marginal_tv(a: &[TokenSequence], b: &[TokenSequence], vocab_size: usize) -> Result<f64> {
    let d = check_sets(a, b, 1)?;
    if a.iter().chain(b).flat_map(|s| s.iter()).any(|&t| t >= vocab_size) {
        return Err(Error::Domain(format!("token outside vocabulary of {vocab_size}")));
    }
    let hist = |set: &[TokenSequence], l: usize| {
        let mut h = vec![0.0; vocab_size];
        for s in set {
            h[s[l]] += 1.0 / set.len() as f64;
        }
        h
    };
    let mut tv = 0.0;
    for l in 0..d {
        let (ha, hb) = (hist(a, l), hist(b, l));
        tv += 0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    Ok(tv / d as f64)
}

/// One-hot encoding of a `D x K` sequence followed by a fixed random
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    vocab_size: usize,
    seq_len: usize,
    dim: usize,
    /// Row `l * K + k` holds the projection of one-hot entry `(l, k)`.
    weights: Vec<f64>,
}

impl FeatureMap {
    pub fn new(vocab_size: usize, seq_len: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || vocab_size == 0 || seq_len == 0 {
            return Err(Error::Config("feature map dimensions must be positive".into()));
        }
        let mut rng = derive(seed, &[domain::FEATURES]);
        let scale = 1.0 / (seq_len as f64).sqrt();
        let weights = (0..vocab_size * seq_len * dim)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect();
        Ok(Self {
            vocab_size,
            seq_len,
            dim,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        if x.len() != self.seq_len || x.iter().any(|&t| t >= self.vocab_size) {
            return Err(Error::Shape(format!(
                "sequence does not fit a {}x{} feature map",
                self.seq_len, self.vocab_size
            )));
        }
        let mut f = vec![0.0; self.dim];
        for (l, &tok) in x.iter().enumerate() {
            let row = &self.weights[(l * self.vocab_size + tok) * self.dim..][..self.dim];
            for (fi, w) in f.iter_mut().zip(row) {
                *fi += w;
            }
        }
        Ok(f)
    }
}

fn moments(xs: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mut mu = DVector::zeros(dim);
    for x in xs {
        mu += DVector::from_column_slice(x);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in xs {
        let c = DVector::from_column_slice(x) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted (unbiased covariance) to two
/// sets of feature vectors.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "need at least 2 feature vectors per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let root_a = psd_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let cross: f64 = SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = (&mu_a - &mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

pub fn frechet_feature_distance(a: &[TokenSequence], b: &[TokenSequence], map: &FeatureMap) -> Result<f64> {
    check_sets(a, b, 2)?;
    let fa = a.iter().map(|x| map.features(x)).collect::<Result<Vec<_>>>()?;
    let fb = b.iter().map(|x| map.features(x)).collect::<Result<Vec<_>>>()?;
    frechet_distance(&fa, &fb)
}

/// Spearman rank correlation, with tied values sharing their mean rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Statistics(format!(
            "spearman needs two equal-length series of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let mean = (xs.len() as f64 + 1.0) / 2.0;
    let (mut num, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mean) * (b - mean);
        vx += (a - mean).powi(2);
        vy += (b - mean).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Statistics("spearman of a constant series".into()));
    }
    Ok(num / (vx * vy).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub n_pairs: usize,
    /// Guidance used to generate the backward trajectories.
    pub cfg: CfgSpec,
    pub feature_dim: usize,
    pub feature_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_pairs: 512,
            cfg: CfgSpec::off(),
            feature_dim: 8,
            feature_seed: 0,
        }
    }
}

pub const PROBE_COLUMNS: [&str; 7] = [
    "knot",
    "t",
    "entropy_backward",
    "frechet_fwd",
    "frechet_bwd",
    "tv_fwd",
    "tv_bwd",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub knot: usize,
    pub t: f64,
    pub entropy_backward: f64,
    pub frechet_fwd: f64,
    pub frechet_bwd: f64,
    pub tv_fwd: f64,
    pub tv_bwd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// Fréchet distance between predictions on two disjoint halves of the
    /// pretraining trajectories at the final knot: the sampling-noise floor.
    pub self_distance: f64,
    /// Set when the model's final-knot predictions are nearly uniform.
    pub untrained_warning: bool,
}

impl ProbeTable {
    /// Means of `(frechet_fwd, frechet_bwd)` over knots `j < ceil(T/2)`,
    /// where `T` is the number of solver steps.
    pub fn first_half_frechet(&self) -> (f64, f64) {
        let steps = self.rows.len() - 1;
        let half = &self.rows[..steps.div_ceil(2)];
        let n = half.len() as f64;
        (
            half.iter().map(|r| r.frechet_fwd).sum::<f64>() / n,
            half.iter().map(|r| r.frechet_bwd).sum::<f64>() / n,
        )
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{}", PROBE_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.knot, r.t, r.entropy_backward, r.frechet_fwd, r.frechet_bwd, r.tv_fwd, r.tv_bwd
            )?;
        }
        Ok(())
    }
}

/// Per-pair predictions at every knot: (pretrain, forward, backward) and
/// the backward-state entropies.
struct PairTrace {
    pretrain: Vec<TokenSequence>,
    forward: Vec<TokenSequence>,
    backward: Vec<TokenSequence>,
    entropy: Vec<f64>,
}

fn trace_pair(
    params: &ModelParams,
    task: &SyntheticTask,
    diffusion: &UniformDiffusion,
    grid: &TimeGrid,
    cfg: &CfgSpec,
    seed: u64,
    i: u64,
) -> Result<PairTrace> {
    let stream = |family: u64| derive(seed, &[domain::PROBE, i, family]);
    let c = task.sample_prompt(&mut stream(0));
    let x1 = task.sample_clean(c, &mut stream(1));
    let pre_states = build_pretrain_trajectory(diffusion, &x1, grid, &mut stream(2))?;
    let rollout = sample_rollout(params, diffusion, c, grid, cfg, &mut stream(3))?;
    let mut fwd_rng = stream(4);
    let fwd_states = grid
        .knots()
        .iter()
        .map(|&t| reconstruct_forward_state(diffusion, &rollout.clean, t, &mut fwd_rng))
        .collect::<Result<Vec<_>>>()?;

    let mut pred_rng = stream(5);
    let mut predict = |x: &TokenSequence, t: f64| -> Result<(TokenSequence, CategoricalField)> {
        let f = policy_field(params, &DenoiserInput::new(x.clone(), t, Some(c)), PolicyField::Conditional)?;
        Ok((f.sample(&mut pred_rng), f))
    };
    let mut trace = PairTrace {
        pretrain: Vec::new(),
        forward: Vec::new(),
        backward: Vec::new(),
        entropy: Vec::new(),
    };
    for (j, &t) in grid.knots().iter().enumerate() {
        trace.pretrain.push(predict(&pre_states[j], t)?.0);
        trace.forward.push(predict(&fwd_states[j], t)?.0);
        let (b, field) = predict(&rollout.states[j], t)?;
        trace.backward.push(b);
        trace.entropy.push(field_entropy(&field));
    }
    Ok(trace)
}

/// Compare prediction sets of the three trajectory families at every knot
/// of `grid` (including `t = 1`).
pub fn trajectory_probe(
    params: &ModelParams,
    task: &SyntheticTask,
    diffusion: &UniformDiffusion,
    grid: &TimeGrid,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeTable> {
    if config.n_pairs < 64 {
        return Err(Error::Statistics(format!(
            "probe needs at least 64 pairs, got {}",
            config.n_pairs
        )));
    }
    params.check_arch(&params.arch)?;
    if params.arch.space() != task.space || params.arch.num_prompts != task.num_prompts {
        return Err(Error::CheckpointMismatch(
            "model and task disagree on vocabulary, length or prompts".into(),
        ));
    }
    let map = FeatureMap::new(task.space.vocab_size, task.space.seq_len, config.feature_dim, config.feature_seed)?;
    let traces = (0..config.n_pairs as u64)
        .into_par_iter()
        .map(|i| trace_pair(params, task, diffusion, grid, &config.cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;

    let k = task.space.vocab_size;
    let n = traces.len() as f64;
    let rows = grid
        .knots()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let pre: Vec<_> = traces.iter().map(|p| p.pretrain[j].clone()).collect();
            let fwd: Vec<_> = traces.iter().map(|p| p.forward[j].clone()).collect();
            let bwd: Vec<_> = traces.iter().map(|p| p.backward[j].clone()).collect();
            Ok(ProbeRow {
                knot: j,
                t,
                entropy_backward: traces.iter().map(|p| p.entropy[j]).sum::<f64>() / n,
                frechet_fwd: frechet_feature_distance(&fwd, &pre, &map)?,
                frechet_bwd: frechet_feature_distance(&bwd, &pre, &map)?,
                tv_fwd: token_marginal_tv(&fwd, &pre, k)?,
                tv_bwd: token_marginal_tv(&bwd, &pre, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let last = grid.num_steps();
    let half = traces.len() / 2;
    let first: Vec<_> = traces[..half].iter().map(|p| p.pretrain[last].clone()).collect();
    let second: Vec<_> = traces[half..].iter().map(|p| p.pretrain[last].clone()).collect();
    let self_distance = frechet_feature_distance(&first, &second, &map)?;
    let untrained_warning = rows[last].entropy_backward >= 0.95 * (k as f64).ln();
    Ok(ProbeTable {
        rows,
        self_distance,
        untrained_warning,
    })
}
