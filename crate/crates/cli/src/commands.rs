use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use xtra::clustering::{cluster_documents, compute_prior, load_assignments, ClusterOptions, PriorParams};
use xtra::corpus::{build_vocab, load_corpus, load_embeddings, split_corpus, vectorize, BilingualCorpus, BowMatrix, Vocabulary};
use xtra::evaluation::llm::{llm_rate_topics, Dataset, HttpProvider, RatingOptions, RatingTask};
use xtra::evaluation::{eval_classification, metric_report, ClassifierConfig, TopicSet};
use xtra::model::{init_model, load_checkpoint, save_checkpoint, ModelState};
use xtra::training::{train_with, TrainingSet};
use xtra::{Error, Lang};

use crate::config::RunConfig;
use crate::manifest::{self, sha256_file};
use crate::Failure;

const TRAIN: &str = "train.jsonl";
const TEST: &str = "test.jsonl";
const CLUSTERS: &str = "clusters.tsv";
const PRIOR: &str = "prior.json";
const CHECKPOINT: &str = "model.ckpt";
const TRAIN_LOG: &str = "train_log.jsonl";
const TOPICS: &str = "topics.json";

fn vocab_file(lang: Lang) -> String {
    format!("vocab_{lang}.txt")
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// An input produced by an earlier stage.
fn stage_file(cfg: &RunConfig, name: &str, producer: &str) -> Result<PathBuf, Failure> {
    let p = cfg.path(name);
    if !p.is_file() {
        return Err(Failure::Validation(format!(
            "{} not found; run `xtra {producer}` first",
            p.display()
        )));
    }
    Ok(p)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| runtime(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| runtime(path, e))
}

fn load_vocabs(cfg: &RunConfig) -> Result<([Vocabulary; 2], Vec<PathBuf>), Failure> {
    let mut paths = Vec::new();
    let mut out = Vec::new();
    for lang in Lang::BOTH {
        let p = stage_file(cfg, &vocab_file(lang), "preprocess")?;
        out.push(Vocabulary::load(lang, &p)?);
        paths.push(p);
    }
    let [a, b]: [Vocabulary; 2] = out.try_into().expect("two languages");
    Ok(([a, b], paths))
}

fn vectorize_both(corpus: &BilingualCorpus, vocabs: &[Vocabulary; 2]) -> Result<[BowMatrix; 2], Failure> {
    let mut out = Vec::new();
    for v in vocabs {
        let vec = vectorize(corpus, v)?;
        if !vec.dropped.is_empty() {
            log::warn!("{}: {} documents have no in-vocabulary tokens and are skipped", v.lang(), vec.dropped.len());
        }
        out.push(vec.matrix);
    }
    let [a, b]: [BowMatrix; 2] = out.try_into().expect("two languages");
    Ok([a, b])
}

fn load_model(cfg: &RunConfig, vocabs: &[Vocabulary; 2]) -> Result<(ModelState, PathBuf), Failure> {
    let p = stage_file(cfg, CHECKPOINT, "train")?;
    let state = load_checkpoint(&p)?.state;
    for v in vocabs {
        state.check_vocab(v)?;
    }
    Ok((state, p))
}

pub fn preprocess(cfg: &RunConfig) -> Result<(), Failure> {
    let input = cfg.input(&cfg.corpus, "corpus")?;
    let corpus = load_corpus(&input)?;
    let (train, test) = split_corpus(&corpus, cfg.train_ratio, cfg.seed)?;
    std::fs::create_dir_all(&cfg.work_dir).map_err(|e| runtime(&cfg.work_dir, e))?;
    for lang in Lang::BOTH {
        let vocab = build_vocab(&train, lang, cfg.min_df, cfg.max_df_ratio)?;
        log::info!("{lang}: {} documents, vocabulary of {}", train.count(lang), vocab.len());
        vocab.save(cfg.path(&vocab_file(lang)))?;
    }
    train.save(cfg.path(TRAIN))?;
    test.save(cfg.path(TEST))?;
    manifest::write(cfg, "preprocess", &[&input], &["vocab_l1.txt", "vocab_l2.txt", TRAIN, TEST])
}

pub fn cluster(cfg: &RunConfig) -> Result<(), Failure> {
    let (vocabs, mut inputs) = load_vocabs(cfg)?;
    let train_path = stage_file(cfg, TRAIN, "preprocess")?;
    let corpus = load_corpus(&train_path)?;
    let bows = vectorize_both(&corpus, &vocabs)?;
    let emb_path = cfg.input(&cfg.embeddings, "embeddings")?;
    let ids_path = cfg.input(&cfg.embedding_ids, "embedding_ids")?;
    let table = load_embeddings(&emb_path, &ids_path)?;
    let options = ClusterOptions {
        pivot: cfg.pivot()?,
        clusters: cfg.topics,
        svd_rank: cfg.svd_rank,
        seed: cfg.seed,
        max_iter: cfg.kmeans_max_iter,
    };
    let model = cluster_documents(&table, [&bows[0].doc_ids, &bows[1].doc_ids], &options)?;
    log::info!("cluster sizes {:?} (rank {})", model.counts, model.svd_rank);
    let out = cfg.path(CLUSTERS);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out).map_err(|e| runtime(&out, e))?);
    let ids = bows.iter().flat_map(|b| b.doc_ids.iter().map(String::as_str));
    model.write_assignments(&mut w, ids).map_err(|e| runtime(&out, e))?;
    w.flush().map_err(|e| runtime(&out, e))?;
    compute_prior(&model.counts, cfg.epsilon)?.save(cfg.path(PRIOR))?;
    inputs.extend([train_path, emb_path, ids_path]);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(cfg, "cluster", &refs, &[CLUSTERS, PRIOR])
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let (vocabs, mut inputs) = load_vocabs(cfg)?;
    let train_path = stage_file(cfg, TRAIN, "preprocess")?;
    let clusters_path = stage_file(cfg, CLUSTERS, "cluster")?;
    let prior_path = stage_file(cfg, PRIOR, "cluster")?;
    let prior = PriorParams::load(&prior_path)?;
    if prior.num_clusters != cfg.topics {
        return Err(Error::TopicClusterMismatch {
            topics: cfg.topics,
            clusters: prior.num_clusters,
        }
        .into());
    }
    let corpus = load_corpus(&train_path)?;
    let bows = vectorize_both(&corpus, &vocabs)?;
    let emb_path = cfg.input(&cfg.embeddings, "embeddings")?;
    let ids_path = cfg.input(&cfg.embedding_ids, "embedding_ids")?;
    let table = load_embeddings(&emb_path, &ids_path)?;
    let assignments = load_assignments(&clusters_path)?;
    let data = TrainingSet::new(&bows[0], &bows[1], &table, &assignments)?;
    let state = init_model(&cfg.model_config(table.dim()), [vocabs[0].len(), vocabs[1].len()])?
        .with_vocab_hashes(&vocabs[0], &vocabs[1]);
    let tc = cfg.train_config();
    let (state, log) = train_with(state, &data, &prior, &tc, |r| {
        if r.epoch % 10 == 0 || r.epoch + 1 == tc.epochs {
            log::info!(
                "epoch {} total {:.4} (tm {:.4}, infonce {:.4}, cluster {:.4}, beta {:.4}) lr {}",
                r.epoch,
                r.total,
                r.l_tm,
                r.l_infonce,
                r.l_cluster,
                r.l_beta,
                r.lr
            );
        }
    })?;
    save_checkpoint(&state, Some(&tc), cfg.path(CHECKPOINT))?;
    let log_path = cfg.path(TRAIN_LOG);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| runtime(&log_path, e))?);
    log.write_jsonl(&mut w).map_err(|e| runtime(&log_path, e))?;
    w.flush().map_err(|e| runtime(&log_path, e))?;
    inputs.extend([train_path, clusters_path, prior_path, emb_path, ids_path]);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(cfg, "train", &refs, &[CHECKPOINT, TRAIN_LOG])
}

fn split_file(split: &str) -> Result<&'static str, Failure> {
    match split {
        "train" => Ok(TRAIN),
        "test" => Ok(TEST),
        other => Err(Failure::Validation(format!("split must be train or test, not `{other}`"))),
    }
}

#[derive(Serialize)]
struct ThetaRow<'a> {
    id: &'a str,
    lang: Lang,
    label: Option<i64>,
    theta: Vec<f64>,
}

pub fn infer(cfg: &RunConfig, split: &str) -> Result<(), Failure> {
    let name = split_file(split)?;
    let (vocabs, mut inputs) = load_vocabs(cfg)?;
    let (state, ckpt) = load_model(cfg, &vocabs)?;
    let path = stage_file(cfg, name, "preprocess")?;
    let bows = vectorize_both(&load_corpus(&path)?, &vocabs)?;
    let out_name = format!("theta_{split}.jsonl");
    let out = cfg.path(&out_name);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out).map_err(|e| runtime(&out, e))?);
    for b in &bows {
        let theta = state.infer_theta(b)?;
        for (i, row) in theta.rows().into_iter().enumerate() {
            let rec = ThetaRow {
                id: &b.doc_ids[i],
                lang: b.lang,
                label: b.labels[i],
                theta: row.to_vec(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| runtime(&out, e))?;
            writeln!(w, "{line}").map_err(|e| runtime(&out, e))?;
        }
    }
    w.flush().map_err(|e| runtime(&out, e))?;
    inputs.extend([ckpt, path]);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(cfg, "infer", &refs, &[&out_name])
}

pub fn export_topics(cfg: &RunConfig) -> Result<(), Failure> {
    let (vocabs, mut inputs) = load_vocabs(cfg)?;
    let (state, ckpt) = load_model(cfg, &vocabs)?;
    let topics = TopicSet::from_model(&state, [&vocabs[0], &vocabs[1]], cfg.top)?;
    topics.save(cfg.path(TOPICS))?;
    inputs.push(ckpt);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(cfg, "export-topics", &refs, &[TOPICS])
}

pub fn eval_topics(cfg: &RunConfig) -> Result<(), Failure> {
    let topics_path = stage_file(cfg, TOPICS, "export-topics")?;
    let topics = TopicSet::load(&topics_path)?;
    let ref_path = cfg.input(&cfg.reference, "reference")?;
    let reference = xtra::evaluation::load_reference(&ref_path)?;
    let ckpt = cfg.path(CHECKPOINT);
    let ckpt_hash = if ckpt.is_file() { Some(sha256_file(&ckpt)?) } else { None };
    let report = metric_report(&topics, &reference, ckpt_hash)?;
    log::info!("CNPMI {:.4}  TU {:.4}  TQ {:.4}", report.cnpmi, report.tu, report.tq);
    write_json(&cfg.path("metrics.json"), &report)?;
    manifest::write(cfg, "eval-topics", &[&topics_path, &ref_path], &["metrics.json"])
}

/// Labelled topic proportions of one language.
fn labelled(state: &ModelState, bows: &BowMatrix) -> Result<(Array2<f64>, Vec<i64>), Failure> {
    let rows: Vec<usize> = (0..bows.num_docs()).filter(|&i| bows.labels[i].is_some()).collect();
    if rows.is_empty() {
        return Err(Failure::Validation(format!("no labelled {} documents", bows.lang)));
    }
    let sub = bows.select(&rows);
    let theta = state.infer_theta(&sub)?;
    let labels = rows.iter().map(|&i| bows.labels[i].expect("filtered")).collect();
    Ok((theta, labels))
}

pub fn eval_clf(cfg: &RunConfig) -> Result<(), Failure> {
    let (vocabs, mut inputs) = load_vocabs(cfg)?;
    let (state, ckpt) = load_model(cfg, &vocabs)?;
    let train_path = stage_file(cfg, TRAIN, "preprocess")?;
    let test_path = stage_file(cfg, TEST, "preprocess")?;
    let tr = vectorize_both(&load_corpus(&train_path)?, &vocabs)?;
    let te = vectorize_both(&load_corpus(&test_path)?, &vocabs)?;
    let clf = ClassifierConfig {
        c: cfg.svm_c,
        seed: cfg.seed,
        ..ClassifierConfig::default()
    };
    let mut results = serde_json::Map::new();
    for train_lang in Lang::BOTH {
        let (x, y) = labelled(&state, &tr[train_lang.index()])?;
        for test_lang in Lang::BOTH {
            let (xt, yt) = labelled(&state, &te[test_lang.index()])?;
            let acc = eval_classification(&x, &y, &xt, &yt, &clf)?;
            let key = if train_lang == test_lang {
                format!("{train_lang}-intra")
            } else {
                format!("{train_lang}-to-{test_lang}")
            };
            log::info!("{key}: {acc:.4}");
            results.insert(key, json!(acc));
        }
    }
    write_json(&cfg.path("classification.json"), &results)?;
    inputs.extend([ckpt, train_path, test_path]);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(cfg, "eval-clf", &refs, &["classification.json"])
}

pub fn eval_llm(cfg: &RunConfig, task: &str) -> Result<(), Failure> {
    let task: RatingTask = task.parse()?;
    let dataset: Dataset = cfg.dataset.parse()?;
    let topics_path = stage_file(cfg, TOPICS, "export-topics")?;
    let topics = TopicSet::load(&topics_path)?;
    let out_name = match task {
        RatingTask::IntraCoherence => "llm_intra.json",
        RatingTask::CrossSimilarity => "llm_cross.json",
    };
    let opts = RatingOptions {
        assessments: cfg.assessments,
        ..RatingOptions::default()
    };
    let outcome = HttpProvider::from_env().and_then(|p| llm_rate_topics(&topics, task, dataset, &p, &opts));
    let report = match outcome {
        Ok(series) => json!({"task": task, "dataset": dataset, "series": series}),
        Err(Error::Provider(reason)) => {
            log::warn!("LLM rating skipped: {reason}");
            json!({"task": task, "dataset": dataset, "skipped": reason})
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&cfg.path(out_name), &report)?;
    manifest::write(cfg, "eval-llm", &[&topics_path], &[out_name])
}
