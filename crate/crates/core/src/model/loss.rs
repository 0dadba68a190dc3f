//! Cross-entropy and clipped-surrogate losses with exact gradients.

use rayon::prelude::*;

use super::arch::ModelParams;
use super::net::{backward, forward_tape, DenoiserInput, Tape};
use crate::diffusion::{CategoricalField, TokenSequence};
use crate::error::{Error, Result};
use crate::rollout::cfg_combine;

/// Which field defines the policy probability `p(a | s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyField {
    /// Softmax of the branch selected by `input.cond`.
    Conditional,
    /// Softmax of `uncond + scale * (cond - uncond)`.
    Guided { scale: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SurrogateSpec<'a> {
    pub clip_eps: f64,
    pub kl_weight: f64,
    /// Frozen reference policy for the KL term.
    pub reference: &'a ModelParams,
    pub field: PolicyField,
}

#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// `-log p(target | input)` summed over positions.
    CrossEntropy,
    /// `-min(r A, clip(r, 1-eps, 1+eps) A) + beta * KL(p || p_ref)` with
    /// `r = exp(log p(target) - old_logprob)`.
    GrpoSurrogate(SurrogateSpec<'a>),
}

/// One weighted batch element. `advantage` and `old_logprob` are only read
/// by the surrogate loss.
#[derive(Debug, Clone)]
pub struct LossItem {
    pub input: DenoiserInput,
    pub target: TokenSequence,
    pub weight: f64,
    pub advantage: f64,
    pub old_logprob: f64,
}

impl LossItem {
    pub fn cross_entropy(input: DenoiserInput, target: TokenSequence, weight: f64) -> Self {
        Self {
            input,
            target,
            weight,
            advantage: 0.0,
            old_logprob: 0.0,
        }
    }
}

/// Per-item diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ItemStats {
    pub logprob: f64,
    pub ratio: f64,
    /// The clipped branch of the surrogate was selected and binds.
    pub clipped: bool,
    /// Mean per-position `KL(p_theta || p_ref)`.
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub items: Vec<ItemStats>,
}

/// Items per reduction chunk. Fixed so that the floating-point summation
/// order does not depend on the number of worker threads.
const CHUNK: usize = 8;

struct PolicyEval {
    tapes: Vec<Tape>,
    field: CategoricalField,
}

fn eval_policy(params: &ModelParams, input: &DenoiserInput, field: PolicyField) -> Result<PolicyEval> {
    let arch = params.arch;
    match field {
        PolicyField::Conditional => {
            let tape = forward_tape(params, input)?;
            let field = CategoricalField::from_logits(&tape.logits, arch.seq_len, arch.vocab_size)?;
            Ok(PolicyEval {
                tapes: vec![tape],
                field,
            })
        }
        PolicyField::Guided { scale } => {
            let cond = forward_tape(params, input)?;
            let uncond = forward_tape(params, &input.unconditional())?;
            let logits = cfg_combine(&cond.logits, &uncond.logits, scale)?;
            let field = CategoricalField::from_logits(&logits, arch.seq_len, arch.vocab_size)?;
            Ok(PolicyEval {
                tapes: vec![cond, uncond],
                field,
            })
        }
    }
}

/// The policy's categorical field at `input`.
pub fn policy_field(params: &ModelParams, input: &DenoiserInput, field: PolicyField) -> Result<CategoricalField> {
    Ok(eval_policy(params, input, field)?.field)
}

/// Mean over positions of `KL(p || q)`, plus the per-position values.
pub(crate) fn mean_kl(p: &CategoricalField, q: &CategoricalField) -> (f64, Vec<f64>) {
    let per_row: Vec<f64> = (0..p.rows())
        .map(|l| {
            p.row(l)
                .iter()
                .zip(p.log_row(l).iter().zip(q.log_row(l)))
                .filter(|(&pk, _)| pk > 0.0)
                .map(|(&pk, (&lp, &lq))| pk * (lp - lq))
                .sum()
        })
        .collect();
    (per_row.iter().sum::<f64>() / p.rows() as f64, per_row)
}

fn item_loss(
    params: &ModelParams,
    item: &LossItem,
    spec: &LossSpec<'_>,
    grad: &mut [f64],
) -> Result<(f64, ItemStats)> {
    let arch = params.arch;
    let (d, k) = (arch.seq_len, arch.vocab_size);
    arch.space().check(&item.target)?;
    let policy = match spec {
        LossSpec::CrossEntropy => PolicyField::Conditional,
        LossSpec::GrpoSurrogate(s) => s.field,
    };
    let eval = eval_policy(params, &item.input, policy)?;
    let field = &eval.field;
    let logprob: f64 = item
        .target
        .iter()
        .enumerate()
        .map(|(l, &tok)| field.log_row(l)[tok])
        .sum();

    // d loss / d logits of the policy field, before routing through guidance
    let mut dlogits = vec![0.0; d * k];
    let (loss, stats) = match spec {
        LossSpec::CrossEntropy => {
            for l in 0..d {
                let row = field.row(l);
                for c in 0..k {
                    dlogits[l * k + c] = item.weight * row[c];
                }
                dlogits[l * k + item.target[l]] -= item.weight;
            }
            (
                -item.weight * logprob,
                ItemStats {
                    logprob,
                    ratio: 1.0,
                    clipped: false,
                    kl: 0.0,
                },
            )
        }
        LossSpec::GrpoSurrogate(s) => {
            if item.old_logprob == f64::NEG_INFINITY {
                return Err(Error::Ratio(
                    "old policy assigns zero probability to the action".into(),
                ));
            }
            let ratio = (logprob - item.old_logprob).exp();
            let a = item.advantage;
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - s.clip_eps, 1.0 + s.clip_eps) * a;
            let unclipped_active = unclipped <= clipped;
            let objective = unclipped.min(clipped);

            let reference = policy_field(s.reference, &item.input, s.field)?;
            let (kl, kl_rows) = mean_kl(field, &reference);

            let pg_coef = if unclipped_active { -a * ratio } else { 0.0 };
            let kl_coef = s.kl_weight / d as f64;
            for l in 0..d {
                let (row, lrow, lref) = (field.row(l), field.log_row(l), reference.log_row(l));
                for c in 0..k {
                    let onehot = if c == item.target[l] { 1.0 } else { 0.0 };
                    let pg = pg_coef * (onehot - row[c]);
                    let klg = if row[c] > 0.0 {
                        kl_coef * row[c] * (lrow[c] - lref[c] - kl_rows[l])
                    } else {
                        0.0
                    };
                    dlogits[l * k + c] = item.weight * (pg + klg);
                }
            }
            (
                item.weight * (-objective + s.kl_weight * kl),
                ItemStats {
                    logprob,
                    ratio,
                    clipped: !unclipped_active,
                    kl,
                },
            )
        }
    };

    if item.weight != 0.0 {
        match policy {
            PolicyField::Conditional => backward(params, &eval.tapes[0], &dlogits, grad),
            PolicyField::Guided { scale } => {
                let cond: Vec<f64> = dlogits.iter().map(|g| g * scale).collect();
                let uncond: Vec<f64> = dlogits.iter().map(|g| g * (1.0 - scale)).collect();
                backward(params, &eval.tapes[0], &cond, grad);
                backward(params, &eval.tapes[1], &uncond, grad);
            }
        }
    }
    Ok((loss, stats))
}

/// Loss, gradient and per-item statistics for a weighted batch.
pub fn evaluate_loss(params: &ModelParams, batch: &[LossItem], spec: &LossSpec<'_>) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Config("loss batch is empty".into()));
    }
    let n = params.len();
    let chunks: Vec<Result<(f64, Vec<f64>, Vec<ItemStats>)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            let mut stats = Vec::with_capacity(chunk.len());
            for (j, item) in chunk.iter().enumerate() {
                let index = ci * CHUNK + j;
                let (l, s) = item_loss(params, item, spec, &mut grad).map_err(|e| match e {
                    Error::Numeric { detail, .. } => Error::Numeric { index, detail },
                    other => other,
                })?;
                if !l.is_finite() {
                    return Err(Error::Numeric {
                        index,
                        detail: format!("loss is {l}"),
                    });
                }
                loss += l;
                stats.push(s);
            }
            Ok((loss, grad, stats))
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut items = Vec::with_capacity(batch.len());
    for (ci, chunk) in chunks.into_iter().enumerate() {
        let (l, g, s) = chunk?;
        loss += l;
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += x;
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                index: ci * CHUNK,
                detail: format!("non-finite gradient coordinate {i}"),
            });
        }
        items.extend(s);
    }
    Ok(LossOutput { loss, grad, items })
}

/// Loss and its exact gradient with respect to `params`.
pub fn loss_and_grad(params: &ModelParams, batch: &[LossItem], spec: &LossSpec<'_>) -> Result<(f64, Vec<f64>)> {
    let out = evaluate_loss(params, batch, spec)?;
    Ok((out.loss, out.grad))
}
