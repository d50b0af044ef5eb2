//! The trainable network: language-specific input layers feeding a shared
//! variational encoder, per-language softmax decoders, and the two projection
//! heads used by the alignment objectives.

mod checkpoint;
pub(crate) mod forward;
mod params;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{DocNoise, LOGVAR_MAX, LOGVAR_MIN};
pub use params::{Linear, Mlp, Params};

use crate::corpus::{BowMatrix, Lang, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::softmax_cols;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of topics K.
    pub topics: usize,
    pub hidden_dim: usize,
    /// Width of the shared topic-semantic space.
    pub sem_dim: usize,
    /// Document embedding dimension M.
    pub embed_dim: usize,
    pub dropout: f64,
    /// Standard deviation of the decoder weight initialization.
    pub decoder_init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            topics: 50,
            hidden_dim: 100,
            sem_dim: 128,
            embed_dim: 1024,
            dropout: 0.2,
            decoder_init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::invalid("topics", "K must be at least 2"));
        }
        if self.hidden_dim == 0 || self.sem_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("model", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        if !(self.decoder_init_std > 0.0) {
            return Err(Error::invalid("decoder_init_std", "must be positive"));
        }
        Ok(())
    }
}

/// Output of encoding a single document.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Array1<f64>,
    pub logvar: Array1<f64>,
    pub z: Array1<f64>,
    pub theta: Array1<f64>,
}

/// Encoding mode: evaluation uses `z = mu` and no dropout.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DocNoise),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocab_sizes: [usize; 2],
    /// Hashes of the vocabularies the model was built for, when known.
    pub vocab_hashes: [Option<String>; 2],
    pub params: Params,
}

/// Deterministically initializes every parameter from `config.seed`.
pub fn init_model(config: &ModelConfig, vocab_sizes: [usize; 2]) -> Result<ModelState> {
    config.validate()?;
    if vocab_sizes.iter().any(|&v| v == 0) {
        return Err(Error::invalid("vocab_sizes", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = Params::init(
        &mut rng,
        vocab_sizes,
        config.hidden_dim,
        config.topics,
        config.embed_dim,
        config.sem_dim,
        config.decoder_init_std,
    );
    Ok(ModelState {
        config: config.clone(),
        vocab_sizes,
        vocab_hashes: [None, None],
        params,
    })
}

impl ModelState {
    pub fn topics(&self) -> usize {
        self.config.topics
    }

    pub fn with_vocab_hashes(mut self, l1: &Vocabulary, l2: &Vocabulary) -> Self {
        self.vocab_hashes = [Some(l1.hash()), Some(l2.hash())];
        self
    }

    /// Checks `vocab` against the recorded hash for its language.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        self.check_vocab_hash(vocab.lang(), &vocab.hash(), vocab.len())
    }

    pub fn check_vocab_hash(&self, lang: Lang, hash: &str, size: usize) -> Result<()> {
        if let Some(expected) = &self.vocab_hashes[lang.index()] {
            if expected != hash {
                return Err(Error::VocabMismatch {
                    lang,
                    expected: expected.clone(),
                    found: hash.to_string(),
                });
            }
        }
        if size != self.vocab_sizes[lang.index()] {
            return Err(Error::VocabMismatch {
                lang,
                expected: format!("size {}", self.vocab_sizes[lang.index()]),
                found: format!("size {size}"),
            });
        }
        Ok(())
    }

    /// Encodes one BoW row.
    pub fn encode(&self, x: &[f64], lang: Lang, mode: Mode<'_>) -> Result<EncoderOutput> {
        let noise = match mode {
            Mode::Eval => None,
            Mode::Train(n) => {
                if n.eps.len() != self.config.topics || n.dropout_mask.len() != self.config.hidden_dim {
                    return Err(Error::invalid("noise", "shape does not match the model"));
                }
                Some(std::slice::from_ref(n))
            }
        };
        let pass = forward::encode_batch(&self.params, &self.config, &[(lang, x)], noise)?;
        Ok(EncoderOutput {
            mu: pass.mu.row(0).to_owned(),
            logvar: pass.logvar.row(0).to_owned(),
            z: pass.z.row(0).to_owned(),
            theta: pass.theta.row(0).to_owned(),
        })
    }

    /// Word distribution `softmax(W^(l) theta)`.
    pub fn decode(&self, theta: ArrayView1<f64>, lang: Lang) -> Array1<f64> {
        let logits = self.params.decoder[lang.index()].dot(&theta);
        crate::numeric::softmax(logits.view())
    }

    /// |V_l| x K matrix whose column k is `softmax(W^(l)[:, k])`.
    pub fn beta(&self, lang: Lang) -> Array2<f64> {
        softmax_cols(&self.params.decoder[lang.index()])
    }

    /// `phi(theta)` in the document-embedding space.
    pub fn project_theta(&self, theta: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.params.theta_proj;
        p.weight.dot(&theta) + &p.bias
    }

    /// K x D_sem matrix whose row k is `P_l(beta_k^(l))`.
    pub fn project_beta(&self, lang: Lang) -> Array2<f64> {
        forward::beta_forward(&self.params, lang).y
    }

    /// Deterministic topic proportions for every row of `bows`.
    pub fn infer_theta(&self, bows: &BowMatrix) -> Result<Array2<f64>> {
        if let Some(hash) = &bows.vocab_hash {
            self.check_vocab_hash(bows.lang, hash, bows.vocab_size)?;
        } else if bows.vocab_size != self.vocab_sizes[bows.lang.index()] {
            return Err(Error::VocabMismatch {
                lang: bows.lang,
                expected: format!("size {}", self.vocab_sizes[bows.lang.index()]),
                found: format!("size {}", bows.vocab_size),
            });
        }
        let mut out = Array2::zeros((bows.num_docs(), self.config.topics));
        const CHUNK: usize = 512;
        for start in (0..bows.num_docs()).step_by(CHUNK) {
            let end = (start + CHUNK).min(bows.num_docs());
            let dense: Vec<Vec<f64>> = (start..end).map(|d| bows.dense_row(d)).collect();
            let docs: Vec<(Lang, &[f64])> = dense.iter().map(|r| (bows.lang, r.as_slice())).collect();
            let pass = forward::encode_batch(&self.params, &self.config, &docs, None)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&pass.theta);
        }
        Ok(out)
    }
}

/// For each topic, the `top` tokens with the highest probability, descending;
/// ties go to the lower vocabulary index.
pub fn top_words(beta: &Array2<f64>, vocab: &Vocabulary, top: usize) -> Result<Vec<Vec<String>>> {
    if beta.nrows() != vocab.len() {
        return Err(Error::invalid("beta", "row count must equal the vocabulary size"));
    }
    if top > vocab.len() {
        return Err(Error::invalid("top", format!("{top} exceeds vocabulary size {}", vocab.len())));
    }
    Ok(beta
        .axis_iter(Axis(1))
        .map(|col| {
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            idx.into_iter().take(top).map(|i| vocab.token(i).to_string()).collect()
        })
        .collect())
}
