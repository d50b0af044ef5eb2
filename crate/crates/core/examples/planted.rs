//! Trains on a planted-topic corpus and prints recovery per epoch budget.
//!
//! cargo run --release -p xtra-core --example planted -- [epochs] [seeds] [lambda3]

use std::collections::HashMap;
use std::time::Instant;

use xtra::clustering::{cluster_documents, compute_prior, ClusterOptions, DEFAULT_EPSILON, DEFAULT_MAX_ITER};
use xtra::corpus::{build_vocab, vectorize};
use xtra::evaluation::{planted_recovery, TopicSet};
use xtra::model::{init_model, ModelConfig};
use xtra::synthetic::{planted_corpus, PlantedSpec};
use xtra::training::{train, TrainConfig, TrainingSet};
use xtra::Lang;

fn main() -> xtra::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(300, |s| s.parse().unwrap());
    let seeds: u64 = args.get(1).map_or(1, |s| s.parse().unwrap());
    let lambda3: f64 = args.get(2).map_or(7.0, |s| s.parse().unwrap());
    for seed in 0..seeds {
        let lens = |k: &str, d: usize| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
        let spec = PlantedSpec {
            seed,
            doc_len: (lens("LMIN", 300), lens("LMAX", 500)),
            ..Default::default()
        };
        let planted = planted_corpus(&spec)?;
        let vocabs = Lang::BOTH.map(|l| build_vocab(&planted.corpus, l, 1, 1.0).unwrap());
        let bows = vocabs.each_ref().map(|v| vectorize(&planted.corpus, v).unwrap().matrix);
        let options = ClusterOptions {
            pivot: Lang::L1,
            clusters: spec.topics,
            svd_rank: None,
            seed,
            max_iter: DEFAULT_MAX_ITER,
        };
        let clusters = cluster_documents(&planted.embeddings, [&bows[0].doc_ids, &bows[1].doc_ids], &options)?;
        let prior = if std::env::var("PRIOR").as_deref() == Ok("std") {
            xtra::clustering::PriorParams::standard(spec.topics)
        } else {
            compute_prior(&clusters.counts, DEFAULT_EPSILON)?
        };
        let env = |k: &str, d: f64| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
        let map: HashMap<String, usize> = clusters.assignment.iter().cloned().collect();
        let data = TrainingSet::new(&bows[0], &bows[1], &planted.embeddings, &map)?;
        let cfg = ModelConfig {
            topics: spec.topics,
            embed_dim: spec.embed_dim,
            seed,
            decoder_init_std: env("DSTD", 0.02),
            dropout: env("DROP", 0.2),
            ..ModelConfig::default()
        };
        let state = init_model(&cfg, [vocabs[0].len(), vocabs[1].len()])?;
        let tc = TrainConfig {
            epochs,
            seed,
            lambda3,
            lambda1: env("L1", 80.0),
            lambda2: env("L2", 5.0),
            lr: env("LR", 0.002),
            batch_size: env("B", 50.0) as usize,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let (state, log) = train(state, &data, &prior, &tc)?;
        let last = log.records.last().unwrap();
        let topics = TopicSet::from_model(&state, [&vocabs[0], &vocabs[1]], 10)?;
        let r = planted_recovery(&topics, &planted.lexicons)?;
        println!(
            "{} seed {seed}: overlap {:.3} paired {}/5 matched {:?} | tm {:.2} nce {:.3} cl {:.3} beta {:.3} | {:.1}s",
            std::env::var("TAG").unwrap_or_default(),
            r.mean_overlap,
            r.paired,
            r.matched,
            last.l_tm,
            last.l_infonce,
            last.l_cluster,
            last.l_beta,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
