//! Topic quality (CNPMI, TU, TQ), document classification transfer and an
//! optional LLM judge.

mod classify;
mod hungarian;
pub mod llm;
mod reference;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{accuracy, eval_classification, ClassifierConfig, LinearSvm};
pub use hungarian::{max_weight_matching, min_cost_assignment};
pub use reference::{read_reference, load_reference, ReferencePairs};

use crate::corpus::{Lang, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{top_words, ModelState};

/// Top words per topic for both languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSet {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub l1: Vec<Vec<String>>,
    pub l2: Vec<Vec<String>>,
}

impl TopicSet {
    pub fn new(l1: Vec<Vec<String>>, l2: Vec<Vec<String>>) -> Result<Self> {
        let k = l1.len();
        if k == 0 || l2.len() != k {
            return Err(Error::invalid("topics", "both languages need the same non-zero number of topics"));
        }
        let l = l1[0].len();
        if l == 0 || l1.iter().chain(&l2).any(|t| t.len() != l) {
            return Err(Error::invalid("topics", "every topic needs the same non-zero number of words"));
        }
        Ok(Self { k, l, l1, l2 })
    }

    /// The `top` highest-probability words of every topic of `state`.
    pub fn from_model(state: &ModelState, vocabs: [&Vocabulary; 2], top: usize) -> Result<Self> {
        let mut lists: [Vec<Vec<String>>; 2] = Default::default();
        for lang in Lang::BOTH {
            let vocab = vocabs[lang.index()];
            state.check_vocab(vocab)?;
            lists[lang.index()] = top_words(&state.beta(lang), vocab, top)?;
        }
        let [l1, l2] = lists;
        Self::new(l1, l2)
    }

    pub fn topics(&self, lang: Lang) -> &[Vec<String>] {
        match lang {
            Lang::L1 => &self.l1,
            Lang::L2 => &self.l2,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: TopicSet = serde_json::from_str(&text)?;
        let set = Self::new(raw.l1, raw.l2)?;
        if set.k != raw.k || set.l != raw.l {
            return Err(Error::invalid("topics", "K or L does not match the word lists"));
        }
        Ok(set)
    }
}

/// Per-topic uniqueness `(1/L) sum_w 1/cnt(w)` for one language.
pub fn topic_uniqueness(topics: &TopicSet, lang: Lang) -> Vec<f64> {
    let lists = topics.topics(lang);
    let mut cnt: HashMap<&str, usize> = HashMap::new();
    for t in lists {
        let distinct: HashSet<&str> = t.iter().map(String::as_str).collect();
        for w in distinct {
            *cnt.entry(w).or_default() += 1;
        }
    }
    lists
        .iter()
        .map(|t| t.iter().map(|w| 1.0 / cnt[w.as_str()] as f64).sum::<f64>() / t.len() as f64)
        .collect()
}

/// Topic uniqueness of one language.
pub fn compute_tu(topics: &TopicSet, lang: Lang) -> f64 {
    let per = topic_uniqueness(topics, lang);
    per.iter().sum::<f64>() / per.len() as f64
}

/// Per-topic CNPMI: mean NPMI over all cross-lingual pairs of top words.
pub fn cnpmi_per_topic(topics: &TopicSet, reference: &ReferencePairs) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(Error::invalid("reference", "at least one document pair is required"));
    }
    let n = reference.len() as f64;
    let mut missing: Vec<&str> = Vec::new();
    let mut per_topic = Vec::with_capacity(topics.k);
    for (t1, t2) in topics.l1.iter().zip(&topics.l2) {
        let d1: Vec<&[u32]> = t1.iter().map(|w| reference.postings(Lang::L1, w)).collect();
        let d2: Vec<&[u32]> = t2.iter().map(|w| reference.postings(Lang::L2, w)).collect();
        for (w, d) in t1.iter().zip(&d1).chain(t2.iter().zip(&d2)) {
            if d.is_empty() {
                missing.push(w);
            }
        }
        let mut sum = 0.0;
        for a in &d1 {
            for b in &d2 {
                let joint = intersection_size(a, b) as f64;
                sum += npmi(a.len() as f64 / n, b.len() as f64 / n, joint / n);
            }
        }
        per_topic.push(sum / (t1.len() * t2.len()) as f64);
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        log::warn!(
            "{} top words never occur in the reference corpus on their side (e.g. `{}`); their pairs score -1",
            missing.len(),
            missing[0]
        );
    }
    Ok(per_topic)
}

pub fn compute_cnpmi(topics: &TopicSet, reference: &ReferencePairs) -> Result<f64> {
    let per = cnpmi_per_topic(topics, reference)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Normalized PMI with the conventions `p12 = 0 -> -1` and `p12 = 1 -> 1`.
pub fn npmi(p1: f64, p2: f64, p12: f64) -> f64 {
    if p12 <= 0.0 {
        return -1.0;
    }
    if p12 >= 1.0 {
        return 1.0;
    }
    (p12 / (p1 * p2)).ln() / -p12.ln()
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn compute_tq(cnpmi: f64, tu: f64) -> f64 {
    cnpmi.max(0.0) * tu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_sha256: Option<String>,
    pub reference_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cnpmi: f64,
    /// Mean of the two per-language values.
    pub tu: f64,
    pub tu_l1: f64,
    pub tu_l2: f64,
    pub tq: f64,
    pub cnpmi_per_topic: Vec<f64>,
    pub tu_per_topic_l1: Vec<f64>,
    pub tu_per_topic_l2: Vec<f64>,
    pub provenance: Provenance,
}

pub fn metric_report(
    topics: &TopicSet,
    reference: &ReferencePairs,
    checkpoint_sha256: Option<String>,
) -> Result<MetricReport> {
    let cnpmi_per_topic = cnpmi_per_topic(topics, reference)?;
    let cnpmi = cnpmi_per_topic.iter().sum::<f64>() / cnpmi_per_topic.len() as f64;
    let tu_per_topic_l1 = topic_uniqueness(topics, Lang::L1);
    let tu_per_topic_l2 = topic_uniqueness(topics, Lang::L2);
    let tu_l1 = tu_per_topic_l1.iter().sum::<f64>() / topics.k as f64;
    let tu_l2 = tu_per_topic_l2.iter().sum::<f64>() / topics.k as f64;
    let tu = 0.5 * (tu_l1 + tu_l2);
    Ok(MetricReport {
        cnpmi,
        tu,
        tu_l1,
        tu_l2,
        tq: compute_tq(cnpmi, tu),
        cnpmi_per_topic,
        tu_per_topic_l1,
        tu_per_topic_l2,
        provenance: Provenance {
            checkpoint_sha256,
            reference_sha256: reference.hash().to_string(),
        },
    })
}

/// Matches learned topics to planted word lists per language and reports how
/// well they were recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// `matched[lang][k]` is the planted topic assigned to learned topic k.
    pub matched: [Vec<usize>; 2],
    /// Mean fraction of each learned topic's top words found in its matched
    /// planted list, over both languages.
    pub mean_overlap: f64,
    /// Learned topics whose two languages matched the same planted topic.
    pub paired: usize,
}

pub fn planted_recovery(topics: &TopicSet, planted: &[Vec<Vec<String>>; 2]) -> Result<Recovery> {
    let mut matched: [Vec<usize>; 2] = Default::default();
    let mut overlap = 0.0;
    for lang in Lang::BOTH {
        let learned = topics.topics(lang);
        let truth = &planted[lang.index()];
        if truth.len() < learned.len() {
            return Err(Error::invalid("planted", "fewer planted topics than learned topics"));
        }
        let sets: Vec<HashSet<&str>> = truth.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
        let score: Vec<Vec<f64>> = learned
            .iter()
            .map(|t| {
                sets.iter()
                    .map(|s| t.iter().filter(|w| s.contains(w.as_str())).count() as f64 / t.len() as f64)
                    .collect()
            })
            .collect();
        let m = max_weight_matching(&score);
        overlap += m.iter().enumerate().map(|(k, &j)| score[k][j]).sum::<f64>() / learned.len() as f64;
        matched[lang.index()] = m;
    }
    let paired = matched[0].iter().zip(&matched[1]).filter(|(a, b)| a == b).count();
    Ok(Recovery {
        matched,
        mean_overlap: overlap / 2.0,
        paired,
    })
}
