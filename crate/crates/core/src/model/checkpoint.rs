//! Binary checkpoint container.
//!
//! Layout: `b"XTCK"`, `u32` LE format version, `u64` LE header length, a JSON
//! header (configs, vocabulary sizes and hashes, tensor names and lengths),
//! the parameter values as `f64` LE in [`Params::tensors`] order, and finally
//! the SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{init_model, ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"XTCK";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    vocab_sizes: [usize; 2],
    vocab_hashes: [Option<String>; 2],
    tensors: Vec<(String, usize)>,
}

pub fn encode_checkpoint(state: &ModelState, train_config: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let header = Header {
        model: state.config.clone(),
        train: train_config.cloned(),
        vocab_sizes: state.vocab_sizes,
        vocab_hashes: state.vocab_hashes.clone(),
        tensors: state
            .params
            .tensors()
            .iter()
            .map(|(n, t)| (n.to_string(), t.len()))
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + state.params.num_values() * 8 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in state.params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::Checkpoint(format!("corrupt payload: {m}"));
    if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic or truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header length"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end]).map_err(|e| corrupt(&e.to_string()))?;

    let mut state = init_model(&header.model, header.vocab_sizes)?;
    state.vocab_hashes = header.vocab_hashes;
    let mut payload = body[header_end..].chunks_exact(8);
    if payload.len() != state.params.num_values() || !payload.remainder().is_empty() {
        return Err(corrupt("parameter payload size"));
    }
    {
        let mut tensors = state.params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(corrupt("tensor count"));
        }
        for ((name, t), (hname, hlen)) in tensors.iter_mut().zip(&header.tensors) {
            if name != hname || t.len() != *hlen {
                return Err(corrupt(&format!("tensor `{hname}` does not match the model layout")));
            }
            for x in t.iter_mut() {
                *x = f64::from_le_bytes(payload.next().unwrap().try_into().unwrap());
            }
        }
    }
    Ok(Checkpoint {
        state,
        train_config: header.train,
    })
}

pub fn save_checkpoint(state: &ModelState, train_config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state, train_config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state() -> ModelState {
        let cfg = ModelConfig {
            topics: 4,
            hidden_dim: 6,
            sem_dim: 5,
            embed_dim: 3,
            dropout: 0.1,
            decoder_init_std: 0.3,
            seed: 9,
        };
        let mut s = init_model(&cfg, [8, 11]).unwrap();
        s.vocab_hashes = [Some("aa".into()), None];
        s
    }

    #[test]
    fn round_trip_reproduces_decode_bit_exactly() {
        let s = state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xtck");
        let tc = TrainConfig::default();
        save_checkpoint(&s, Some(&tc), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state, s);
        assert_eq!(back.train_config, Some(tc));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let t = Array1::from_shape_simple_fn(4, || rng.random::<f64>());
            let t = &t / t.sum();
            for lang in Lang::BOTH {
                let a = s.decode(t.view(), lang);
                let b = back.state.decode(t.view(), lang);
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = encode_checkpoint(&state(), None).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(decode_checkpoint(&flipped).unwrap_err().to_string().contains("corrupt"));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).unwrap_err().to_string().contains("version"));
    }
}
