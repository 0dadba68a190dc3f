//! Binary checkpoint format.
//!
//! ```text
//! bytes 0..4    magic "UDMG"
//! u32 LE        format version (1)
//! 5 x u32 LE    embed_dim, hidden_dim, num_prompts, vocab_size, seq_len
//! f64 LE ...    parameters, in layout order
//! ```

use std::fs;
use std::path::Path;

use super::arch::{Arch, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UDMG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let a = params.arch;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [a.embed_dim, a.hidden_dim, a.num_prompts, a.vocab_size, a.seq_len] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing UDMG header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dims: Vec<usize> = (0..5).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let arch = Arch {
        embed_dim: dims[0],
        hidden_dim: dims[1],
        num_prompts: dims[2],
        vocab_size: dims[3],
        seq_len: dims[4],
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * arch.num_params() {
        return Err(Error::Format(format!(
            "checkpoint body has {} bytes, architecture needs {}",
            body.len(),
            8 * arch.num_params()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_values(arch, values)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use proptest::prelude::*;

    fn arch() -> Arch {
        Arch {
            embed_dim: 3,
            hidden_dim: 4,
            num_prompts: 2,
            vocab_size: 5,
            seq_len: 3,
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), scale in 1e-6f64..1e6) {
            let p = ModelParams::init(arch(), scale, &mut derive(seed, &[]));
            let bytes = encode(&p);
            let q = decode(&bytes).unwrap();
            prop_assert_eq!(&bytes, &encode(&q));
            prop_assert!(p.values.iter().zip(&q.values).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(p.arch, q.arch);
        }
    }

    #[test]
    fn rejects_corruption() {
        let p = ModelParams::zeros(arch());
        let mut bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&p);
        bytes[4] = 9;
        assert!(decode(&bytes).is_err());
    }
}
