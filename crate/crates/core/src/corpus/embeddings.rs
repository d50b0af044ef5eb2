//! External per-document embeddings.
//!
//! Binary layout: `b"XEMB"`, then little-endian `u32` version (1), `u32` row
//! count D, `u32` dimension M, then D*M little-endian `f32` values row-major.
//! A separate manifest of `{"id": ...}` lines binds row i to a document id.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"XEMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dimension must be positive".into()));
        }
        let mut table = Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        };
        for (row, (id, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::EmbeddingFormat(format!(
                    "row {row} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteEmbedding { row });
            }
            if table.index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId(id));
            }
            table.ids.push(id);
            table.data.extend_from_slice(&v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
}

pub fn write_embeddings(table: &EmbeddingTable, mut vectors: impl Write, mut manifest: impl Write) -> std::io::Result<()> {
    vectors.write_all(MAGIC)?;
    vectors.write_all(&VERSION.to_le_bytes())?;
    vectors.write_all(&(table.len() as u32).to_le_bytes())?;
    vectors.write_all(&(table.dim as u32).to_le_bytes())?;
    for x in &table.data {
        vectors.write_all(&x.to_le_bytes())?;
    }
    for id in &table.ids {
        serde_json::to_writer(&mut manifest, &ManifestLine { id: id.clone() })?;
        manifest.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_embeddings(mut vectors: impl Read, manifest: impl BufRead) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    vectors
        .read_to_end(&mut bytes)
        .map_err(|e| Error::EmbeddingFormat(e.to_string()))?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::EmbeddingFormat("bad magic".into()));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::EmbeddingFormat(format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let dim = word(12) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::EmbeddingFormat("header size overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::EmbeddingFormat(format!(
            "size mismatch: header declares {rows}x{dim} ({expected} bytes), payload has {} bytes",
            payload.len()
        )));
    }

    let mut ids = Vec::with_capacity(rows);
    for (i, line) in manifest.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        ids.push(rec.id);
    }
    if ids.len() != rows {
        return Err(Error::EmbeddingFormat(format!(
            "manifest has {} ids but header declares {rows} rows",
            ids.len()
        )));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingTable::new(
        dim,
        ids.into_iter()
            .enumerate()
            .map(|(i, id)| (id, values[i * dim..(i + 1) * dim].to_vec())),
    )
}

pub fn load_embeddings(vec_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let (vp, mp) = (vec_path.as_ref(), manifest_path.as_ref());
    let v = std::fs::File::open(vp).map_err(|e| Error::io(vp, e))?;
    let m = std::fs::File::open(mp).map_err(|e| Error::io(mp, e))?;
    read_embeddings(std::io::BufReader::new(v), std::io::BufReader::new(m))
}

pub fn save_embeddings(
    table: &EmbeddingTable,
    vec_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<()> {
    let (vp, mp) = (vec_path.as_ref(), manifest_path.as_ref());
    let mut v = std::io::BufWriter::new(std::fs::File::create(vp).map_err(|e| Error::io(vp, e))?);
    let mut m = std::io::BufWriter::new(std::fs::File::create(mp).map_err(|e| Error::io(mp, e))?);
    write_embeddings(table, &mut v, &mut m).map_err(|e| Error::io(vp, e))?;
    v.flush().map_err(|e| Error::io(vp, e))?;
    m.flush().map_err(|e| Error::io(mp, e))
}
