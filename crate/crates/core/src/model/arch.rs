use rand::Rng;

use crate::diffusion::SpaceSpec;
use crate::error::{Error, Result};

/// Residual context blocks in the network.
pub const NUM_BLOCKS: usize = 2;
/// Fixed sinusoidal features of the diffusion time.
pub const TIME_FEATURES: usize = 16;

/// Architecture descriptor. The parameter count is a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

/// Offsets of every parameter tensor inside the flat vector. Matrices are
/// stored row-major as `out x in`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub tok: usize,
    pub pos: usize,
    pub prompt: usize,
    pub time: usize,
    pub blocks: [BlockLayout; NUM_BLOCKS],
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BlockLayout {
    pub ctx_w: usize,
    pub ctx_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl Arch {
    pub fn new(space: SpaceSpec, num_prompts: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        if num_prompts == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(
                "num_prompts, embed_dim and hidden_dim must be positive".into(),
            ));
        }
        Ok(Self {
            embed_dim,
            hidden_dim,
            num_prompts,
            vocab_size: space.vocab_size,
            seq_len: space.seq_len,
        })
    }

    pub fn space(&self) -> SpaceSpec {
        SpaceSpec {
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
        }
    }

    /// Row of the prompt table used for the unconditional branch.
    pub fn null_prompt(&self) -> usize {
        self.num_prompts
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    pub(crate) fn layout(&self) -> Layout {
        let (e, h, k, d, p) = (
            self.embed_dim,
            self.hidden_dim,
            self.vocab_size,
            self.seq_len,
            self.num_prompts,
        );
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let tok = take(k * e);
        let pos = take(d * e);
        let prompt = take((p + 1) * e);
        let time = take(e * TIME_FEATURES);
        let mut blocks = [BlockLayout::default(); NUM_BLOCKS];
        for b in blocks.iter_mut() {
            b.ctx_w = take(e * e);
            b.ctx_b = take(e);
            b.w1 = take(h * e);
            b.b1 = take(h);
            b.w2 = take(e * h);
            b.b2 = take(e);
        }
        let out_w = take(k * e);
        let out_b = take(k);
        Layout {
            tok,
            pos,
            prompt,
            time,
            blocks,
            out_w,
            out_b,
            total: off,
        }
    }
}

/// Flat parameter vector plus the architecture that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.num_params()],
        }
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn init<R: Rng + ?Sized>(arch: Arch, scale: f64, rng: &mut R) -> Self {
        let values = (0..arch.num_params())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self { arch, values }
    }

    pub fn from_values(arch: Arch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                values.len(),
                arch.num_params()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                index: i,
                detail: "non-finite parameter".into(),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_arch(&self, expected: &Arch) -> Result<()> {
        if self.arch != *expected {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                self.arch, expected
            )));
        }
        Ok(())
    }

    /// Euclidean distance between two parameter vectors.
    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_counts_match() {
        let arch = Arch {
            embed_dim: 4,
            hidden_dim: 6,
            num_prompts: 2,
            vocab_size: 3,
            seq_len: 5,
        };
        let l = arch.layout();
        let expected = 3 * 4 + 5 * 4 + 3 * 4 + 4 * TIME_FEATURES
            + NUM_BLOCKS * (4 * 4 + 4 + 6 * 4 + 6 + 4 * 6 + 4)
            + 3 * 4
            + 3;
        assert_eq!(l.total, expected);
        assert_eq!(arch.num_params(), expected);
        assert_eq!(l.out_b + 3, l.total);
    }

    #[test]
    fn from_values_validates() {
        let arch = Arch {
            embed_dim: 2,
            hidden_dim: 2,
            num_prompts: 1,
            vocab_size: 2,
            seq_len: 1,
        };
        assert!(ModelParams::from_values(arch, vec![0.0; 3]).is_err());
        let mut v = vec![0.0; arch.num_params()];
        v[1] = f64::NAN;
        assert!(ModelParams::from_values(arch, v).is_err());
    }
}
