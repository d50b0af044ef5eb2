//! Planted-topic bilingual corpora for tests and demos.
//!
//! Each language gets `topics` disjoint lexicons. Every document is drawn from
//! one planted topic: most of its tokens come from that topic's lexicon and
//! the rest uniformly from the whole vocabulary. Embeddings are noisy one-hot
//! topic indicators, shared across languages so that documents of the same
//! planted topic are paired by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{BilingualCorpus, Document, EmbeddingTable, Lang};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub topics: usize,
    pub words_per_topic: usize,
    pub docs_per_lang: usize,
    pub doc_len: (usize, usize),
    /// Probability that a token comes from the document's own lexicon.
    pub purity: f64,
    pub embed_dim: usize,
    pub embed_noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            topics: 5,
            words_per_topic: 40,
            docs_per_lang: 1000,
            doc_len: (300, 500),
            purity: 0.85,
            embed_dim: 32,
            embed_noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub corpus: BilingualCorpus,
    pub embeddings: EmbeddingTable,
    /// `lexicons[lang][topic]` lists the planted words.
    pub lexicons: [Vec<Vec<String>>; 2],
}

pub fn word(lang: Lang, topic: usize, j: usize) -> String {
    format!("{}_t{topic}_w{j:02}", lang.as_str())
}

pub fn planted_corpus(spec: &PlantedSpec) -> Result<Planted> {
    assert!(spec.embed_dim >= spec.topics, "embedding dimension must cover the topics");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.embed_noise).expect("non-negative noise");
    let lexicons: [Vec<Vec<String>>; 2] = Lang::BOTH.map(|lang| {
        (0..spec.topics)
            .map(|t| (0..spec.words_per_topic).map(|j| word(lang, t, j)).collect())
            .collect()
    });
    let mut docs = Vec::new();
    let mut rows = Vec::new();
    for lang in Lang::BOTH {
        for d in 0..spec.docs_per_lang {
            let topic = rng.random_range(0..spec.topics);
            let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
            let tokens = (0..len)
                .map(|_| {
                    let t = if rng.random_bool(spec.purity) { topic } else { rng.random_range(0..spec.topics) };
                    lexicons[lang.index()][t][rng.random_range(0..spec.words_per_topic)].clone()
                })
                .collect();
            let id = format!("{}-{d:05}", lang.as_str());
            let mut e: Vec<f32> = (0..spec.embed_dim).map(|_| noise.sample(&mut rng) as f32).collect();
            e[topic] += 1.0;
            rows.push((id.clone(), e));
            docs.push(Document {
                id,
                lang,
                tokens,
                label: Some(topic as i64),
            });
        }
    }
    Ok(Planted {
        corpus: BilingualCorpus::new(docs)?,
        embeddings: EmbeddingTable::new(spec.embed_dim, rows)?,
        lexicons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = PlantedSpec {
            docs_per_lang: 50,
            ..Default::default()
        };
        let a = planted_corpus(&spec).unwrap();
        let b = planted_corpus(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.count(Lang::L1), 50);
        assert_eq!(a.embeddings.len(), 100);
        let mut hits = 0.0;
        for doc in a.corpus.iter() {
            let t = doc.label.unwrap() as usize;
            let e = a.embeddings.get(&doc.id).unwrap();
            assert!(doc.tokens.iter().all(|w| w.starts_with(doc.lang.as_str())));
            let own = doc
                .tokens
                .iter()
                .filter(|w| a.lexicons[doc.lang.index()][t].contains(w))
                .count();
            assert!(own * 2 > doc.tokens.len());
            hits += e[t];
        }
        assert!(hits / 100.0 > 0.8);
    }
}
