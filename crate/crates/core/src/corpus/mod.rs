//! Bilingual corpus ingestion, vocabularies, Bag-of-Words matrices, document
//! embeddings and train/test splitting.

mod embeddings;
mod split;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, read_embeddings, save_embeddings, write_embeddings, EmbeddingTable};
pub use split::split_corpus;
pub use vocab::{build_vocab, vectorize, BowMatrix, Vectorized, Vocabulary};

/// One of the two corpus languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
}

impl Lang {
    pub const BOTH: [Lang; 2] = [Lang::L1, Lang::L2];

    /// 0 for L1, 1 for L2.
    pub fn index(self) -> usize {
        match self {
            Lang::L1 => 0,
            Lang::L2 => 1,
        }
    }

    pub fn other(self) -> Lang {
        match self {
            Lang::L1 => Lang::L2,
            Lang::L2 => Lang::L1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::L1 => "l1",
            Lang::L2 => "l2",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Lang::L1),
            "l2" | "L2" => Ok(Lang::L2),
            other => Err(Error::invalid("lang", format!("unknown language tag `{other}`"))),
        }
    }
}

/// A pre-tokenized document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: Lang,
    pub tokens: Vec<String>,
    pub label: Option<i64>,
}

/// Documents of both languages, each kept in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BilingualCorpus {
    docs: [Vec<Document>; 2],
}

impl BilingualCorpus {
    /// Builds a corpus, rejecting empty or duplicate ids and empty token lists.
    pub fn new(documents: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut docs: [Vec<Document>; 2] = Default::default();
        for doc in documents {
            if doc.id.is_empty() {
                return Err(Error::invalid("id", "document id must be non-empty"));
            }
            if doc.tokens.is_empty() {
                return Err(Error::invalid("tokens", format!("document `{}` has no tokens", doc.id)));
            }
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateId(doc.id));
            }
            docs[doc.lang.index()].push(doc);
        }
        Ok(Self { docs })
    }

    pub fn docs(&self, lang: Lang) -> &[Document] {
        &self.docs[lang.index()]
    }

    pub fn count(&self, lang: Lang) -> usize {
        self.docs[lang.index()].len()
    }

    pub fn len(&self) -> usize {
        self.docs[0].len() + self.docs[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All documents, L1 first, then L2.
    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs[0].iter().chain(self.docs[1].iter())
    }

    pub fn has_labels(&self) -> bool {
        self.iter().any(|d| d.label.is_some())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.iter().find(|d| d.id == id)
    }

    /// Writes the corpus as line-delimited records, L1 documents first.
    pub fn write_to(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        for doc in self.iter() {
            let record = RecordOut {
                id: &doc.id,
                lang: doc.lang,
                tokens: &doc.tokens,
                label: doc.label,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    lang: String,
    tokens: Vec<String>,
    #[serde(default)]
    label: Option<i64>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    lang: Lang,
    tokens: &'a [String],
    label: Option<i64>,
}

/// Parses line-delimited corpus records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_corpus(reader: impl BufRead) -> Result<BilingualCorpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let lang = rec.lang.parse::<Lang>().map_err(|_| Error::MalformedRecord {
            line: line_no,
            reason: format!("unknown lang tag `{}`", rec.lang),
        })?;
        if rec.id.is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if rec.tokens.is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: "empty tokens".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        docs.push(Document {
            id: rec.id,
            lang,
            tokens: rec.tokens,
            label: rec.label,
        });
    }
    BilingualCorpus::new(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<BilingualCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(std::io::BufReader::new(file))
}
