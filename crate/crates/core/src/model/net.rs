//! Forward pass and hand-derived reverse-mode gradients.
//!
//! ```text
//! h0_l   = tok[x_l] + pos[l] + prompt[c] + W_time phi(t)
//! block:   m = mean_l h_l,  g = W_ctx m + b_ctx
//!          u_l = h_l + g,   a_l = tanh(W1 u_l + b1)
//!          h_l <- h_l + W2 a_l + b2
//! logits_l = W_out h_l + b_out
//! ```

use std::f64::consts::PI;

use super::arch::{Arch, ModelParams, NUM_BLOCKS, TIME_FEATURES};
use crate::diffusion::TokenSequence;
use crate::error::{Error, Result};

/// Model input: the state `(x_t, t, c)`; `cond = None` selects the
/// unconditional (null prompt) branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput {
    pub x_t: TokenSequence,
    pub t: f64,
    pub cond: Option<usize>,
}

impl DenoiserInput {
    pub fn new(x_t: TokenSequence, t: f64, cond: Option<usize>) -> Self {
        Self { x_t, t, cond }
    }

    pub fn unconditional(&self) -> Self {
        Self {
            x_t: self.x_t.clone(),
            t: self.t,
            cond: None,
        }
    }

    pub(crate) fn validate(&self, arch: &Arch) -> Result<usize> {
        arch.space().check(&self.x_t)?;
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::Domain(format!("time {} outside [0, 1]", self.t)));
        }
        match self.cond {
            Some(c) if c >= arch.num_prompts => Err(Error::Domain(format!(
                "prompt {c} outside [0, {})",
                arch.num_prompts
            ))),
            Some(c) => Ok(c),
            None => Ok(arch.null_prompt()),
        }
    }
}

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut phi = [0.0; TIME_FEATURES];
    for i in 0..TIME_FEATURES / 2 {
        let w = (i + 1) as f64 * 0.5 * PI;
        phi[2 * i] = (w * t).sin();
        phi[2 * i + 1] = (w * t).cos();
    }
    phi
}

/// `out += W x` for row-major `W` of shape `rows x cols`.
#[inline]
fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = 0.0;
        for c in 0..cols {
            s += row[c] * x[c];
        }
        out[r] += s;
    }
}

/// `out += W^T y`.
#[inline]
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * yr;
        }
    }
}

/// `gw += y x^T`.
#[inline]
fn outer_add(gw: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += yr * x[c];
        }
    }
}

struct BlockTape {
    mean: Vec<f64>,
    /// `h_in + g`, `D x E`
    mixed: Vec<f64>,
    /// `tanh` activations, `D x H`
    act: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Tape {
    tokens: Vec<usize>,
    prompt_row: usize,
    phi: [f64; TIME_FEATURES],
    /// Residual stream before each block and after the last, `D x E` each.
    hidden: Vec<Vec<f64>>,
    blocks: Vec<BlockTape>,
    pub logits: Vec<f64>,
}

pub(crate) fn forward_tape(params: &ModelParams, input: &DenoiserInput) -> Result<Tape> {
    let arch = params.arch;
    let prompt_row = input.validate(&arch)?;
    let lay = arch.layout();
    let v = &params.values;
    let (e, hd, k, d) = (arch.embed_dim, arch.hidden_dim, arch.vocab_size, arch.seq_len);

    let phi = time_features(input.t);
    let mut shared = vec![0.0; e];
    matvec_add(&v[lay.time..lay.time + e * TIME_FEATURES], e, TIME_FEATURES, &phi, &mut shared);
    for i in 0..e {
        shared[i] += v[lay.prompt + prompt_row * e + i];
    }
    let mut h = vec![0.0; d * e];
    for (l, &tok) in input.x_t.iter().enumerate() {
        let row = &mut h[l * e..(l + 1) * e];
        for i in 0..e {
            row[i] = v[lay.tok + tok * e + i] + v[lay.pos + l * e + i] + shared[i];
        }
    }

    let mut hidden = Vec::with_capacity(NUM_BLOCKS + 1);
    let mut blocks = Vec::with_capacity(NUM_BLOCKS);
    for bl in lay.blocks.iter() {
        let mut mean = vec![0.0; e];
        for l in 0..d {
            for i in 0..e {
                mean[i] += h[l * e + i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= d as f64);
        let mut g = v[bl.ctx_b..bl.ctx_b + e].to_vec();
        matvec_add(&v[bl.ctx_w..bl.ctx_w + e * e], e, e, &mean, &mut g);

        let mut mixed = vec![0.0; d * e];
        let mut act = vec![0.0; d * hd];
        let mut next = h.clone();
        for l in 0..d {
            let u = &mut mixed[l * e..(l + 1) * e];
            for i in 0..e {
                u[i] = h[l * e + i] + g[i];
            }
            let a = &mut act[l * hd..(l + 1) * hd];
            a.copy_from_slice(&v[bl.b1..bl.b1 + hd]);
            matvec_add(&v[bl.w1..bl.w1 + hd * e], hd, e, u, a);
            a.iter_mut().for_each(|z| *z = z.tanh());
            let out = &mut next[l * e..(l + 1) * e];
            for i in 0..e {
                out[i] += v[bl.b2 + i];
            }
            matvec_add(&v[bl.w2..bl.w2 + e * hd], e, hd, a, out);
        }
        hidden.push(std::mem::replace(&mut h, next));
        blocks.push(BlockTape { mean, mixed, act });
    }

    let mut logits = vec![0.0; d * k];
    for l in 0..d {
        let out = &mut logits[l * k..(l + 1) * k];
        out.copy_from_slice(&v[lay.out_b..lay.out_b + k]);
        matvec_add(&v[lay.out_w..lay.out_w + k * e], k, e, &h[l * e..(l + 1) * e], out);
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::Numeric {
            index: i / k,
            detail: "non-finite logit".into(),
        });
    }
    hidden.push(h);
    Ok(Tape {
        tokens: input.x_t.0.clone(),
        prompt_row,
        phi,
        hidden,
        blocks,
        logits,
    })
}

/// Accumulate `d loss / d params` into `grad` given `d loss / d logits`.
pub(crate) fn backward(params: &ModelParams, tape: &Tape, dlogits: &[f64], grad: &mut [f64]) {
    let arch = params.arch;
    let lay = arch.layout();
    let v = &params.values;
    let (e, hd, k, d) = (arch.embed_dim, arch.hidden_dim, arch.vocab_size, arch.seq_len);

    let top = &tape.hidden[NUM_BLOCKS];
    let mut dh = vec![0.0; d * e];
    for l in 0..d {
        let dz = &dlogits[l * k..(l + 1) * k];
        outer_add(&mut grad[lay.out_w..lay.out_w + k * e], k, e, dz, &top[l * e..(l + 1) * e]);
        for c in 0..k {
            grad[lay.out_b + c] += dz[c];
        }
        matvec_t_add(&v[lay.out_w..lay.out_w + k * e], k, e, dz, &mut dh[l * e..(l + 1) * e]);
    }

    for (b, bl) in lay.blocks.iter().enumerate().rev() {
        let bt = &tape.blocks[b];
        // residual path: dh_in starts as a copy of dh_out
        let mut dh_in = dh.clone();
        let mut dg = vec![0.0; e];
        let mut dz = vec![0.0; hd];
        let mut du = vec![0.0; e];
        for l in 0..d {
            let dout = &dh[l * e..(l + 1) * e];
            let a = &bt.act[l * hd..(l + 1) * hd];
            outer_add(&mut grad[bl.w2..bl.w2 + e * hd], e, hd, dout, a);
            for i in 0..e {
                grad[bl.b2 + i] += dout[i];
            }
            dz.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_add(&v[bl.w2..bl.w2 + e * hd], e, hd, dout, &mut dz);
            for j in 0..hd {
                dz[j] *= 1.0 - a[j] * a[j];
            }
            outer_add(&mut grad[bl.w1..bl.w1 + hd * e], hd, e, &dz, &bt.mixed[l * e..(l + 1) * e]);
            for j in 0..hd {
                grad[bl.b1 + j] += dz[j];
            }
            du.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_add(&v[bl.w1..bl.w1 + hd * e], hd, e, &dz, &mut du);
            for i in 0..e {
                dh_in[l * e + i] += du[i];
                dg[i] += du[i];
            }
        }
        outer_add(&mut grad[bl.ctx_w..bl.ctx_w + e * e], e, e, &dg, &bt.mean);
        for i in 0..e {
            grad[bl.ctx_b + i] += dg[i];
        }
        let mut dmean = vec![0.0; e];
        matvec_t_add(&v[bl.ctx_w..bl.ctx_w + e * e], e, e, &dg, &mut dmean);
        let inv_d = 1.0 / d as f64;
        for l in 0..d {
            for i in 0..e {
                dh_in[l * e + i] += dmean[i] * inv_d;
            }
        }
        dh = dh_in;
    }

    let mut dshared = vec![0.0; e];
    for (l, &tok) in tape.tokens.iter().enumerate() {
        for i in 0..e {
            let g = dh[l * e + i];
            grad[lay.tok + tok * e + i] += g;
            grad[lay.pos + l * e + i] += g;
            dshared[i] += g;
        }
    }
    for i in 0..e {
        grad[lay.prompt + tape.prompt_row * e + i] += dshared[i];
    }
    outer_add(
        &mut grad[lay.time..lay.time + e * TIME_FEATURES],
        e,
        TIME_FEATURES,
        &dshared,
        &tape.phi,
    );
}

/// Per-position logits, `D x K` row-major.
pub fn forward_logits(params: &ModelParams, input: &DenoiserInput) -> Result<Vec<f64>> {
    Ok(forward_tape(params, input)?.logits)
}
