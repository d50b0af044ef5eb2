//! Mini-batch optimization: balanced bilingual batches, Adam with a step
//! learning-rate schedule, gradient clipping and per-epoch logging.

mod adam;

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::clustering::PriorParams;
use crate::corpus::{BowMatrix, EmbeddingTable, Lang};
use crate::error::{Error, Result};
use crate::model::{DocNoise, ModelState};
use crate::numeric::derive_seed;
use crate::objectives::{batch_objective, BatchView, LossBreakdown, TermWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Documents per batch, half from each language.
    pub batch_size: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Divisor of every cosine similarity in the contrastive terms.
    pub temperature: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            lr: 0.002,
            lr_decay_factor: 0.5,
            lr_decay_every: 250,
            batch_size: 50,
            seed: 0,
            lambda1: 80.0,
            lambda2: 5.0,
            lambda3: 7.0,
            temperature: 1.0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor", "must lie in (0, 1]"));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::invalid("lr_decay_every", "must be at least 1"));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::invalid("batch_size", "must be an even number of at least 2"));
        }
        for (arg, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(arg, "must be a non-negative number"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm", "must be positive"));
        }
        Ok(())
    }

    pub fn weights(&self) -> TermWeights {
        TermWeights::lambdas(self.lambda1, self.lambda2, self.lambda3)
    }
}

/// `lr * factor^floor(epoch / every)`, epochs counted from 0.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay_factor.powi((epoch / config.lr_decay_every) as i32)
}

/// One batch: `(language, row index within that language)` pairs, the first
/// half from L1 and the second from L2.
pub type Batch = Vec<(Lang, usize)>;

/// Splits one epoch into language-balanced batches.
///
/// Both languages are laid out as concatenated shuffles. The longer language
/// contributes every document once, with the final batch topped up from a
/// fresh shuffle; the shorter language is cycled to match.
pub fn make_balanced_batches(n1: usize, n2: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("batches", "both languages need at least one document"));
    }
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::invalid("batch_size", "must be an even number of at least 2"));
    }
    let half = batch_size / 2;
    let num_batches = n1.max(n2).div_ceil(half);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch as u64, 0xBA7C]));
    let mut stream = |n: usize| {
        let mut out = Vec::with_capacity(num_batches * half);
        while out.len() < num_batches * half {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            out.extend(perm);
        }
        out.truncate(num_batches * half);
        out
    };
    let s1 = stream(n1);
    let s2 = stream(n2);
    Ok((0..num_batches)
        .map(|b| {
            let r = b * half..(b + 1) * half;
            s1[r.clone()]
                .iter()
                .map(|&i| (Lang::L1, i))
                .chain(s2[r].iter().map(|&i| (Lang::L2, i)))
                .collect()
        })
        .collect())
}

/// Training documents of both languages joined with their embeddings and
/// cluster ids.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    bows: [BowMatrix; 2],
    embeddings: [Array2<f64>; 2],
    clusters: [Vec<usize>; 2],
}

impl TrainingSet {
    pub fn new(
        bows_l1: &BowMatrix,
        bows_l2: &BowMatrix,
        embeddings: &EmbeddingTable,
        clusters: &HashMap<String, usize>,
    ) -> Result<Self> {
        let mut embs: [Array2<f64>; 2] = Default::default();
        let mut cls: [Vec<usize>; 2] = Default::default();
        for (l, bows) in [bows_l1, bows_l2].into_iter().enumerate() {
            if bows.lang.index() != l {
                return Err(Error::invalid("bows", "matrices must be given in L1, L2 order"));
            }
            let mut e = Array2::zeros((bows.num_docs(), embeddings.dim()));
            for (d, id) in bows.doc_ids.iter().enumerate() {
                let row = embeddings.get(id).ok_or_else(|| Error::MissingForDocument {
                    what: "embedding",
                    id: id.clone(),
                })?;
                e.row_mut(d).iter_mut().zip(row).for_each(|(dst, &v)| *dst = v as f64);
                cls[l].push(*clusters.get(id).ok_or_else(|| Error::MissingForDocument {
                    what: "cluster assignment",
                    id: id.clone(),
                })?);
            }
            embs[l] = e;
        }
        Ok(Self {
            bows: [bows_l1.clone(), bows_l2.clone()],
            embeddings: embs,
            clusters: cls,
        })
    }

    pub fn num_docs(&self, lang: Lang) -> usize {
        self.bows[lang.index()].num_docs()
    }

    pub fn bows(&self, lang: Lang) -> &BowMatrix {
        &self.bows[lang.index()]
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings[0].ncols()
    }

    pub fn max_cluster(&self) -> Option<usize> {
        self.clusters.iter().flatten().copied().max()
    }

    /// Dense rows for `batch`, kept alive while a [`BatchView`] borrows them.
    pub fn dense_rows(&self, batch: &[(Lang, usize)]) -> Vec<Vec<f64>> {
        batch.iter().map(|&(l, i)| self.bows[l.index()].dense_row(i)).collect()
    }

    pub fn view<'a>(&self, batch: &[(Lang, usize)], dense: &'a [Vec<f64>]) -> BatchView<'a> {
        let m = self.embed_dim();
        BatchView {
            docs: batch.iter().zip(dense).map(|(&(l, _), r)| (l, r.as_slice())).collect(),
            embeddings: Array2::from_shape_fn((batch.len(), m), |(r, j)| {
                let (l, i) = batch[r];
                self.embeddings[l.index()][[i, j]]
            }),
            cluster_ids: batch.iter().map(|&(l, i)| self.clusters[l.index()][i]).collect(),
        }
    }
}

/// Training-mode noise for every slot of batch `batch` in `epoch`.
pub fn batch_noise(state: &ModelState, seed: u64, epoch: usize, batch: usize, size: usize) -> Vec<DocNoise> {
    (0..size)
        .map(|slot| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch as u64, batch as u64, slot as u64]));
            DocNoise::sample(&mut rng, state.config.topics, state.config.hidden_dim, state.config.dropout)
        })
        .collect()
}

/// Per-epoch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_tm: f64,
    pub l_infonce: f64,
    pub l_cluster: f64,
    pub l_beta: f64,
    pub total: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_compatible(state: &ModelState, data: &TrainingSet, prior: &PriorParams) -> Result<()> {
    let k = state.config.topics;
    if prior.mu.len() != k {
        return Err(Error::TopicClusterMismatch {
            topics: k,
            clusters: prior.mu.len(),
        });
    }
    if let Some(max) = data.max_cluster() {
        if max >= k {
            return Err(Error::TopicClusterMismatch { topics: k, clusters: max + 1 });
        }
    }
    if data.embed_dim() != state.config.embed_dim {
        return Err(Error::invalid(
            "embeddings",
            format!("dimension {} does not match the model's {}", data.embed_dim(), state.config.embed_dim),
        ));
    }
    for lang in Lang::BOTH {
        let bows = data.bows(lang);
        match &bows.vocab_hash {
            Some(h) => state.check_vocab_hash(lang, h, bows.vocab_size)?,
            None if bows.vocab_size != state.vocab_sizes[lang.index()] => {
                return Err(Error::VocabMismatch {
                    lang,
                    expected: format!("size {}", state.vocab_sizes[lang.index()]),
                    found: format!("size {}", bows.vocab_size),
                })
            }
            None => {}
        }
    }
    Ok(())
}

pub fn train(
    state: ModelState,
    data: &TrainingSet,
    prior: &PriorParams,
    config: &TrainConfig,
) -> Result<(ModelState, TrainLog)> {
    train_with(state, data, prior, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every completed epoch.
pub fn train_with(
    mut state: ModelState,
    data: &TrainingSet,
    prior: &PriorParams,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelState, TrainLog)> {
    config.validate()?;
    prior.validate()?;
    check_compatible(&state, data, prior)?;
    let weights = config.weights();
    let mut adam = Adam::new(&state.params);
    let mut log = TrainLog::default();
    let n1 = data.num_docs(Lang::L1);
    let n2 = data.num_docs(Lang::L2);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(config, epoch);
        let batches = make_balanced_batches(n1, n2, config.batch_size, config.seed, epoch)?;
        let mut sum = LossBreakdown::default();
        for (bi, batch) in batches.iter().enumerate() {
            let dense = data.dense_rows(batch);
            let view = data.view(batch, &dense);
            let noise = batch_noise(&state, config.seed, epoch, bi, batch.len());
            let non_finite = |term: &str| Error::NonFinite {
                term: term.to_string(),
                epoch,
                batch: bi,
            };
            let (parts, grads) = match batch_objective(&state, &view, prior, &weights, config.temperature, Some(&noise), true) {
                Ok(r) => r,
                Err(Error::NonFiniteTerm(t)) => return Err(non_finite(t)),
                Err(e) => return Err(e),
            };
            let mut grads = grads.expect("gradients requested");
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(non_finite("gradient"));
            }
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            adam.update(&mut state.params, &grads, lr);
            if !state.params.all_finite() {
                return Err(non_finite("parameter"));
            }
            sum.l_tm += parts.l_tm;
            sum.l_infonce += parts.l_infonce;
            sum.l_cluster += parts.l_cluster;
            sum.l_beta += parts.l_beta;
            sum.total += parts.total;
        }
        let nb = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            l_tm: sum.l_tm / nb,
            l_infonce: sum.l_infonce / nb,
            l_cluster: sum.l_cluster / nb,
            l_beta: sum.l_beta / nb,
            total: sum.total / nb,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: total {:.6}", record.total);
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((state, log))
}

/// Deterministic objective over the whole training set: every balanced batch
/// of `epoch` evaluated with the encoder in eval mode, averaged.
pub fn evaluate_objective(
    state: &ModelState,
    data: &TrainingSet,
    prior: &PriorParams,
    config: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    check_compatible(state, data, prior)?;
    let weights = config.weights();
    let batches = make_balanced_batches(data.num_docs(Lang::L1), data.num_docs(Lang::L2), config.batch_size, config.seed, epoch)?;
    let mut sum = LossBreakdown::default();
    for batch in &batches {
        let dense = data.dense_rows(batch);
        let view = data.view(batch, &dense);
        let (p, _) = batch_objective(state, &view, prior, &weights, config.temperature, None, false)?;
        sum.l_tm += p.l_tm;
        sum.l_infonce += p.l_infonce;
        sum.l_cluster += p.l_cluster;
        sum.l_beta += p.l_beta;
        sum.total += p.total;
    }
    let nb = batches.len() as f64;
    Ok(LossBreakdown {
        l_tm: sum.l_tm / nb,
        l_infonce: sum.l_infonce / nb,
        l_cluster: sum.l_cluster / nb,
        l_beta: sum.l_beta / nb,
        total: sum.total / nb,
    })
}
