use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BilingualCorpus, Lang};
use crate::error::{Error, Result};

/// Ordered token list for one language; a token's position is its id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    lang: Lang,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(lang: Lang, tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::VocabularyTooSmall {
                lang,
                size: tokens.len(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid("vocabulary", format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { lang, tokens, index })
    }

    pub fn lang(&self) -> Lang {
        self.lang
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                h.update(b"\n");
            }
            h.update(t.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn read(lang: Lang, reader: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let token = line.strip_suffix('\r').unwrap_or(&line);
            if token.is_empty() {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: "empty token".into(),
                });
            }
            tokens.push(token.to_string());
        }
        Self::new(lang, tokens)
    }

    pub fn load(lang: Lang, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(lang, std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Keeps tokens whose document frequency lies in
/// `[min_df, max_df_ratio * num_docs]`, sorted lexicographically.
pub fn build_vocab(
    corpus: &BilingualCorpus,
    lang: Lang,
    min_df: usize,
    max_df_ratio: f64,
) -> Result<Vocabulary> {
    let docs = corpus.docs(lang);
    if docs.is_empty() {
        return Err(Error::invalid("lang", format!("corpus has no {lang} documents")));
    }
    if min_df < 1 {
        return Err(Error::invalid("min_df", "must be at least 1"));
    }
    if !(max_df_ratio > 0.0 && max_df_ratio <= 1.0) {
        return Err(Error::invalid("max_df_ratio", "must lie in (0, 1]"));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let max_df = max_df_ratio * docs.len() as f64;
    let tokens: Vec<String> = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df && n as f64 <= max_df)
        .map(|(t, _)| t.to_string())
        .collect();
    Vocabulary::new(lang, tokens)
}

/// Sparse count matrix: row `d` lists `(token id, count)` pairs sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct BowMatrix {
    pub lang: Lang,
    pub vocab_size: usize,
    pub doc_ids: Vec<String>,
    pub labels: Vec<Option<i64>>,
    /// Hash of the vocabulary the rows were built against.
    pub vocab_hash: Option<String>,
    rows: Vec<Vec<(u32, u32)>>,
}

impl BowMatrix {
    /// Builds a matrix from sparse rows of `(token id, count)` pairs.
    pub fn from_rows(lang: Lang, vocab_size: usize, doc_ids: Vec<String>, rows: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if doc_ids.len() != rows.len() {
            return Err(Error::invalid("rows", "one id per row is required"));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (id, row) in doc_ids.iter().zip(rows) {
            let mut merged: BTreeMap<u32, u32> = BTreeMap::new();
            for (i, c) in row {
                if i as usize >= vocab_size {
                    return Err(Error::invalid("rows", format!("token id {i} out of range in `{id}`")));
                }
                *merged.entry(i).or_default() += c;
            }
            merged.retain(|_, c| *c > 0);
            if merged.is_empty() {
                return Err(Error::invalid("rows", format!("document `{id}` has an empty row")));
            }
            clean.push(merged.into_iter().collect());
        }
        Ok(Self {
            lang,
            vocab_size,
            labels: vec![None; doc_ids.len()],
            doc_ids,
            vocab_hash: None,
            rows: clean,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, d: usize) -> &[(u32, u32)] {
        &self.rows[d]
    }

    pub fn get(&self, d: usize, v: usize) -> u32 {
        let row = &self.rows[d];
        row.binary_search_by_key(&(v as u32), |&(i, _)| i)
            .map(|p| row[p].1)
            .unwrap_or(0)
    }

    pub fn row_sum(&self, d: usize) -> u64 {
        self.rows[d].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn dense_row(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        for &(i, c) in &self.rows[d] {
            out[i as usize] = c as f64;
        }
        out
    }

    /// Restricts to the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> BowMatrix {
        BowMatrix {
            lang: self.lang,
            vocab_size: self.vocab_size,
            doc_ids: rows.iter().map(|&r| self.doc_ids[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            vocab_hash: self.vocab_hash.clone(),
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
        }
    }
}

/// Result of [`vectorize`]: the matrix plus ids of documents that had no
/// in-vocabulary tokens.
#[derive(Debug, Clone)]
pub struct Vectorized {
    pub matrix: BowMatrix,
    pub dropped: Vec<String>,
}

pub fn vectorize(corpus: &BilingualCorpus, vocab: &Vocabulary) -> Result<Vectorized> {
    let lang = vocab.lang();
    let mut doc_ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for doc in corpus.docs(lang) {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for t in &doc.tokens {
            if let Some(id) = vocab.id(t) {
                *counts.entry(id as u32).or_default() += 1;
            }
        }
        if counts.is_empty() {
            dropped.push(doc.id.clone());
            continue;
        }
        doc_ids.push(doc.id.clone());
        labels.push(doc.label);
        rows.push(counts.into_iter().collect());
    }
    if rows.is_empty() {
        return Err(Error::AllDocumentsDropped(lang));
    }
    Ok(Vectorized {
        matrix: BowMatrix {
            lang,
            vocab_size: vocab.len(),
            doc_ids,
            labels,
            vocab_hash: Some(vocab.hash()),
            rows,
        },
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, lang: Lang, tokens: &[&str]) -> Document {
        Document {
            id: id.into(),
            lang,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            label: None,
        }
    }

    fn random_corpus(seed: u64, n: usize) -> BilingualCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..n).map(|i| {
            let len = rng.random_range(1..12);
            let tokens: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..25))).collect();
            Document {
                id: format!("d{i}"),
                lang: Lang::L1,
                tokens,
                label: None,
            }
        });
        BilingualCorpus::new(docs).unwrap()
    }

    #[test]
    fn max_df_excludes_ubiquitous_token() {
        let c = BilingualCorpus::new([
            doc("1", Lang::L1, &["a", "b"]),
            doc("2", Lang::L1, &["a", "c"]),
            doc("3", Lang::L1, &["a", "b", "d"]),
        ])
        .unwrap();
        let v = build_vocab(&c, Lang::L1, 1, 0.5).unwrap();
        assert!(v.id("a").is_none());
        assert_eq!(v.tokens(), &["c", "d"]);
    }

    #[test]
    fn min_df_boundary_inclusive() {
        let c = BilingualCorpus::new([
            doc("1", Lang::L1, &["a", "b", "c"]),
            doc("2", Lang::L1, &["a", "b"]),
            doc("3", Lang::L1, &["c"]),
        ])
        .unwrap();
        let v = build_vocab(&c, Lang::L1, 2, 1.0).unwrap();
        assert_eq!(v.tokens(), &["a", "b", "c"]);
        let err = build_vocab(&c, Lang::L1, 3, 1.0).unwrap_err();
        assert!(matches!(err, Error::VocabularyTooSmall { .. }));
    }

    #[test]
    fn vocab_matches_brute_force_df_filter() {
        let c = random_corpus(7, 50);
        let (min_df, ratio) = (3, 0.4);
        let v = build_vocab(&c, Lang::L1, min_df, ratio).unwrap();
        // oracle: count df per candidate token by scanning every document
        let mut expected: Vec<String> = (0..25)
            .map(|i| format!("w{i}"))
            .filter(|t| {
                let df = c.docs(Lang::L1).iter().filter(|d| d.tokens.contains(t)).count();
                df >= min_df && df as f64 <= ratio * 50.0
            })
            .collect();
        expected.sort();
        assert_eq!(v.tokens(), expected.as_slice());
    }

    #[test]
    fn vectorize_counts_and_drops() {
        let c = BilingualCorpus::new([
            doc("1", Lang::L1, &["a", "b", "a"]),
            doc("2", Lang::L1, &["zz"]),
        ])
        .unwrap();
        let v = Vocabulary::new(Lang::L1, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let out = vectorize(&c, &v).unwrap();
        assert_eq!(out.matrix.dense_row(0), vec![2.0, 1.0, 0.0]);
        assert_eq!(out.dropped, vec!["2".to_string()]);
        assert_eq!(out.matrix.doc_ids, vec!["1".to_string()]);

        let only_oov = BilingualCorpus::new([doc("x", Lang::L1, &["q"])]).unwrap();
        assert!(matches!(vectorize(&only_oov, &v), Err(Error::AllDocumentsDropped(Lang::L1))));
    }

    #[test]
    fn row_sums_match_naive_scan() {
        let c = random_corpus(11, 60);
        let v = build_vocab(&c, Lang::L1, 2, 0.9).unwrap();
        let out = vectorize(&c, &v).unwrap();
        let mut r = 0;
        for d in c.docs(Lang::L1) {
            let naive = d.tokens.iter().filter(|t| v.tokens().contains(t)).count() as u64;
            if naive == 0 {
                assert!(out.dropped.contains(&d.id));
                continue;
            }
            assert_eq!(out.matrix.doc_ids[r], d.id);
            assert_eq!(out.matrix.row_sum(r), naive);
            r += 1;
        }
        assert_eq!(r, out.matrix.num_docs());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::new(Lang::L2, vec!["b".into(), "a".into(), "日本".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        v.save(&p).unwrap();
        let back = Vocabulary::load(Lang::L2, &p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("a"), Some(1));
        assert_eq!(back.hash(), v.hash());
    }

    proptest! {
        #[test]
        fn build_vocab_is_order_independent(seed in 0u64..1000, shift in 0usize..40) {
            let c = random_corpus(seed, 40);
            let mut docs: Vec<Document> = c.docs(Lang::L1).to_vec();
            let n = docs.len();
            docs.rotate_left(shift % n);
            docs.reverse();
            let permuted = BilingualCorpus::new(docs).unwrap();
            let a = build_vocab(&c, Lang::L1, 2, 0.8);
            let b = build_vocab(&permuted, Lang::L1, 2, 0.8);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.tokens(), b.tokens());
                    let again = build_vocab(&c, Lang::L1, 2, 0.8).unwrap();
                    prop_assert_eq!(a, again);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "vocab differs under permutation"),
            }
        }
    }
}
