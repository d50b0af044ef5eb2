#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xtra::clustering::{compute_prior, PriorParams};
use xtra::model::{init_model, DocNoise, ModelConfig, ModelState, Params};
use xtra::objectives::{batch_objective, BatchView, TermWeights};
use xtra::Lang;

/// A randomly sized small model with one batch of documents.
pub struct Instance {
    pub state: ModelState,
    pub docs: Vec<(Lang, Vec<f64>)>,
    pub embeddings: Array2<f64>,
    pub clusters: Vec<usize>,
    pub prior: PriorParams,
    pub noise: Vec<DocNoise>,
    pub temperature: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=4);
        let v = [rng.random_range(5..=20), rng.random_range(5..=20)];
        let cfg = ModelConfig {
            topics: k,
            hidden_dim: rng.random_range(3..=6),
            sem_dim: rng.random_range(3..=5),
            embed_dim: rng.random_range(3..=6),
            dropout: 0.2,
            decoder_init_std: 0.5,
            seed,
        };
        let state = init_model(&cfg, v).unwrap();
        let b = rng.random_range(2..=6);
        let mut docs = Vec::new();
        for i in 0..b {
            let lang = if i % 2 == 0 { Lang::L1 } else { Lang::L2 };
            let n = v[lang.index()];
            let mut x: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { rng.random_range(1..4) as f64 } else { 0.0 }).collect();
            x[rng.random_range(0..n)] += 1.0;
            docs.push((lang, x));
        }
        let embeddings = Array2::from_shape_simple_fn((b, cfg.embed_dim), || rng.sample(StandardNormal));
        let clusters = (0..b).map(|_| rng.random_range(0..k)).collect();
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(0..20)).collect();
        let prior = compute_prior(&counts, 1.0).unwrap();
        let noise = (0..b).map(|_| DocNoise::sample(&mut rng, k, cfg.hidden_dim, cfg.dropout)).collect();
        let temperature = rng.random_range(0.5..1.5);
        Self {
            state,
            docs,
            embeddings,
            clusters,
            prior,
            noise,
            temperature,
        }
    }

    pub fn view(&self) -> BatchView<'_> {
        BatchView {
            docs: self.docs.iter().map(|(l, x)| (*l, x.as_slice())).collect(),
            embeddings: self.embeddings.clone(),
            cluster_ids: self.clusters.clone(),
        }
    }

    pub fn loss(&self, state: &ModelState, w: &TermWeights) -> f64 {
        batch_objective(state, &self.view(), &self.prior, w, self.temperature, Some(&self.noise), false)
            .unwrap()
            .0
            .total
    }

    pub fn analytic(&self, w: &TermWeights) -> Params {
        batch_objective(&self.state, &self.view(), &self.prior, w, self.temperature, Some(&self.noise), true)
            .unwrap()
            .1
            .unwrap()
    }

    /// Central differences for every parameter. A weighted sum of terms is
    /// differenced term by term to keep cancellation error at the scale of
    /// each term rather than of the total.
    pub fn numeric(&self, w: &TermWeights, step: f64) -> Params {
        let parts = [
            (w.tm, TermWeights::only_tm()),
            (w.infonce, TermWeights::only_infonce()),
            (w.cluster, TermWeights::only_cluster()),
            (w.beta, TermWeights::only_beta()),
        ];
        let active: Vec<_> = parts.iter().filter(|(c, _)| *c != 0.0).collect();
        if active.len() < 2 {
            return self.numeric_single(w, step);
        }
        let mut out = self.state.params.zeros_like();
        for (c, single) in active {
            let g = self.numeric_single(single, step);
            for ((_, o), (_, t)) in out.tensors_mut().into_iter().zip(g.tensors()) {
                o.iter_mut().zip(t).for_each(|(o, t)| *o += c * t);
            }
        }
        out
    }

    fn numeric_single(&self, w: &TermWeights, step: f64) -> Params {
        let mut out = self.state.params.zeros_like();
        let mut probe = self.state.clone();
        let names: Vec<(&str, usize)> = self.state.params.tensors().iter().map(|(n, t)| (*n, t.len())).collect();
        let mut grads: Vec<Vec<f64>> = Vec::new();
        for (ti, (_, len)) in names.iter().enumerate() {
            let mut g = vec![0.0; *len];
            for (i, gi) in g.iter_mut().enumerate() {
                let orig = probe.params.tensors()[ti].1[i];
                probe.params.tensors_mut()[ti].1[i] = orig + step;
                let up = self.loss(&probe, w);
                probe.params.tensors_mut()[ti].1[i] = orig - step;
                let down = self.loss(&probe, w);
                probe.params.tensors_mut()[ti].1[i] = orig;
                *gi = (up - down) / (2.0 * step);
            }
            grads.push(g);
        }
        for ((_, t), g) in out.tensors_mut().into_iter().zip(grads) {
            t.copy_from_slice(&g);
        }
        out
    }
}

/// Largest per-tensor relative error `|a - n| / max(|a|, |n|)`; tensors whose
/// gradients are both below `floor` in norm are compared absolutely.
pub fn max_relative_error(a: &Params, n: &Params, floor: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ((name, x), (_, y)) in a.tensors().into_iter().zip(n.tensors()) {
        let diff = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let na = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nn = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(floor);
        if rel > worst.0 {
            worst = (rel, name.to_string());
        }
    }
    worst
}

pub const TERMS: [(&str, fn() -> TermWeights); 5] = [
    ("l_tm", TermWeights::only_tm),
    ("l_infonce", TermWeights::only_infonce),
    ("l_cluster", TermWeights::only_cluster),
    ("l_beta", TermWeights::only_beta),
    ("total", || TermWeights::lambdas(80.0, 5.0, 7.0)),
];

use std::collections::HashMap;
use xtra::clustering::{cluster_documents, ClusterOptions, DEFAULT_EPSILON, DEFAULT_MAX_ITER};
use xtra::corpus::{build_vocab, vectorize, Vocabulary};
use xtra::evaluation::{planted_recovery, Recovery, TopicSet};
use xtra::synthetic::{planted_corpus, Planted, PlantedSpec};
use xtra::training::{train, TrainConfig, TrainLog, TrainingSet};

/// Everything needed to train on a planted corpus.
pub struct Prepared {
    pub planted: Planted,
    pub vocabs: [Vocabulary; 2],
    pub data: TrainingSet,
    pub prior: PriorParams,
    pub model_config: ModelConfig,
}

pub fn prepare(spec: &PlantedSpec, cluster_seed: u64) -> Prepared {
    let planted = planted_corpus(spec).unwrap();
    let vocabs = Lang::BOTH.map(|l| build_vocab(&planted.corpus, l, 1, 1.0).unwrap());
    let bows = vocabs.each_ref().map(|v| vectorize(&planted.corpus, v).unwrap().matrix);
    let ids = [&bows[0].doc_ids[..], &bows[1].doc_ids[..]];
    let options = ClusterOptions {
        pivot: Lang::L1,
        clusters: spec.topics,
        svd_rank: None,
        seed: cluster_seed,
        max_iter: DEFAULT_MAX_ITER,
    };
    let clusters = cluster_documents(&planted.embeddings, ids, &options).unwrap();
    let prior = compute_prior(&clusters.counts, DEFAULT_EPSILON).unwrap();
    let map: HashMap<String, usize> = clusters.assignment.iter().cloned().collect();
    let data = TrainingSet::new(&bows[0], &bows[1], &planted.embeddings, &map).unwrap();
    let model_config = ModelConfig {
        topics: spec.topics,
        embed_dim: spec.embed_dim,
        ..ModelConfig::default()
    };
    Prepared {
        planted,
        vocabs,
        data,
        prior,
        model_config,
    }
}

impl Prepared {
    pub fn fit(&self, model_seed: u64, config: &TrainConfig) -> (ModelState, TrainLog) {
        let cfg = ModelConfig {
            seed: model_seed,
            ..self.model_config.clone()
        };
        let state = init_model(&cfg, [self.vocabs[0].len(), self.vocabs[1].len()])
            .unwrap()
            .with_vocab_hashes(&self.vocabs[0], &self.vocabs[1]);
        train(state, &self.data, &self.prior, config).unwrap()
    }

    pub fn recovery(&self, state: &ModelState, top: usize) -> Recovery {
        let topics = TopicSet::from_model(state, [&self.vocabs[0], &self.vocabs[1]], top).unwrap();
        planted_recovery(&topics, &self.planted.lexicons).unwrap()
    }
}
