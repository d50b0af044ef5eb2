use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Lang;
use crate::error::{Error, Result};

/// Aligned document pairs used to estimate cross-lingual co-occurrence.
/// Presence is binary: a word counts once per document side.
#[derive(Debug, Clone)]
pub struct ReferencePairs {
    len: usize,
    /// Sorted pair indices containing each word, per side.
    postings: [HashMap<String, Vec<u32>>; 2],
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    l1_tokens: Vec<String>,
    l2_tokens: Vec<String>,
}

impl ReferencePairs {
    pub fn new(pairs: Vec<(Vec<String>, Vec<String>)>) -> Result<Self> {
        let mut postings: [HashMap<String, Vec<u32>>; 2] = Default::default();
        let mut hasher = Sha256::new();
        for (i, (a, b)) in pairs.iter().enumerate() {
            if a.is_empty() || b.is_empty() {
                return Err(Error::invalid("reference", format!("pair {i} has an empty side")));
            }
            for (side, tokens) in [a, b].into_iter().enumerate() {
                let distinct: BTreeSet<&String> = tokens.iter().collect();
                for w in distinct {
                    postings[side].entry(w.clone()).or_default().push(i as u32);
                }
            }
            let line = serde_json::to_string(&Record {
                l1_tokens: a.clone(),
                l2_tokens: b.clone(),
            })?;
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        Ok(Self {
            len: pairs.len(),
            postings,
            hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Indices of the pairs whose `lang` side contains `word`.
    pub fn postings(&self, lang: Lang, word: &str) -> &[u32] {
        self.postings[lang.index()].get(word).map_or(&[], Vec::as_slice)
    }

    /// SHA-256 of the canonical line-delimited form of the pairs.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

/// Reads `{"l1_tokens": [...], "l2_tokens": [...]}` lines; blank lines are
/// skipped.
pub fn read_reference(reader: impl BufRead) -> Result<ReferencePairs> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let malformed = |reason: String| Error::MalformedRecord { line: i + 1, reason };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.l1_tokens.is_empty() || r.l2_tokens.is_empty() {
            return Err(malformed("both sides of a pair must be non-empty".into()));
        }
        pairs.push((r.l1_tokens, r.l2_tokens));
    }
    ReferencePairs::new(pairs)
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<ReferencePairs> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reference(std::io::BufReader::new(file))
}
