//! Document clustering over multilingual embeddings and the cluster-derived
//! Gaussian prior.
//!
//! The pivot language is clustered with k-means after a truncated SVD and L2
//! normalization; documents of the other language are attached to the nearest
//! centroid by cosine similarity.

mod kmeans;
mod prior;
mod reduce;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

pub use kmeans::{fit_pivot_clusters, DEFAULT_MAX_ITER};
pub use prior::{compute_prior, PriorParams, DEFAULT_EPSILON};
pub use reduce::{default_svd_rank, reduce_and_normalize, svd_project, Reduced};

use crate::corpus::{EmbeddingTable, Lang};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub pivot_lang: Lang,
    pub svd_rank: usize,
    /// T x r centroid matrix.
    pub centroids: Vec<Vec<f64>>,
    /// Clustered documents in insertion order (pivot documents first).
    pub assignment: Vec<(String, usize)>,
    /// Documents per cluster over every assigned document.
    pub counts: Vec<usize>,
    /// Within-cluster sum of squares of the pivot fit, one entry per iteration.
    pub wcss_history: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ClusterModel {
    fn from_pivot(
        pivot_lang: Lang,
        svd_rank: usize,
        centroids: Vec<Vec<f64>>,
        assignment: Vec<(String, usize)>,
        wcss_history: Vec<f64>,
    ) -> Self {
        let mut counts = vec![0; centroids.len()];
        let mut index = HashMap::with_capacity(assignment.len());
        for (i, (id, k)) in assignment.iter().enumerate() {
            counts[*k] += 1;
            index.insert(id.clone(), i);
        }
        Self {
            pivot_lang,
            svd_rank,
            centroids,
            assignment,
            counts,
            wcss_history,
            index,
        }
    }

    /// Number of clusters T.
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.assignment[i].1)
    }

    /// Writes `id<TAB>cluster` rows for the given ids, in that order. Ids
    /// without an assignment are skipped.
    pub fn write_assignments<'a>(
        &self,
        mut out: impl Write,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> std::io::Result<()> {
        for id in ids {
            if let Some(k) = self.cluster_of(id) {
                writeln!(out, "{id}\t{k}")?;
            }
        }
        Ok(())
    }
}

/// Assigns each non-pivot vector to the centroid with the highest cosine
/// similarity (ties to the lowest index) and recounts clusters over all
/// assigned documents. Pivot assignments and centroids are left untouched.
pub fn assign_nonpivot(reduced: &Reduced, model: ClusterModel) -> Result<ClusterModel> {
    let centroid_norms: Vec<f64> = model
        .centroids
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut model = model;
    for (id, v) in reduced.ids.iter().zip(&reduced.vectors) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(id.clone()));
        }
        if model.index.contains_key(id) {
            return Err(Error::DuplicateId(id.clone()));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (c, cn)) in model.centroids.iter().zip(&centroid_norms).enumerate() {
            let cos = if *cn == 0.0 {
                0.0
            } else {
                v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / (norm * cn)
            };
            if cos > best.1 {
                best = (k, cos);
            }
        }
        model.index.insert(id.clone(), model.assignment.len());
        model.assignment.push((id.clone(), best.0));
        model.counts[best.0] += 1;
    }
    Ok(model)
}

/// Settings of [`cluster_documents`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOptions {
    pub pivot: Lang,
    pub clusters: usize,
    /// Defaults to [`default_svd_rank`] of the selected documents.
    pub svd_rank: Option<usize>,
    pub seed: u64,
    pub max_iter: usize,
}

/// Reduces the embeddings of `ids` (both languages), clusters the pivot
/// language and attaches the other one.
pub fn cluster_documents(
    table: &EmbeddingTable,
    ids: [&[String]; 2],
    options: &ClusterOptions,
) -> Result<ClusterModel> {
    let mut rows = Vec::with_capacity(ids[0].len() + ids[1].len());
    for id in ids.iter().flat_map(|l| l.iter()) {
        let v = table.get(id).ok_or_else(|| Error::MissingForDocument {
            what: "embedding",
            id: id.clone(),
        })?;
        rows.push((id.clone(), v.to_vec()));
    }
    let subset = EmbeddingTable::new(table.dim(), rows)?;
    let rank = options
        .svd_rank
        .unwrap_or_else(|| default_svd_rank(subset.len(), subset.dim()));
    let reduced = reduce_and_normalize(&subset, rank)?;
    let pivot: HashSet<&str> = ids[options.pivot.index()].iter().map(String::as_str).collect();
    let model = fit_pivot_clusters(
        &reduced.filter(|id| pivot.contains(id)),
        options.pivot,
        options.clusters,
        options.seed,
        options.max_iter,
    )?;
    assign_nonpivot(&reduced.filter(|id| !pivot.contains(id)), model)
}

/// Reads `id<TAB>cluster` rows.
pub fn read_assignments(reader: impl BufRead) -> Result<Vec<(String, usize)>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(k), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::MalformedRecord {
                line: i + 1,
                reason: "expected two tab-separated columns".into(),
            });
        };
        let k = k.trim().parse().map_err(|_| Error::MalformedRecord {
            line: i + 1,
            reason: format!("bad cluster index `{k}`"),
        })?;
        rows.push((id.to_string(), k));
    }
    Ok(rows)
}

pub fn load_assignments(path: impl AsRef<Path>) -> Result<HashMap<String, usize>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_assignments(std::io::BufReader::new(file))?;
    let mut map = HashMap::with_capacity(rows.len());
    for (id, k) in rows {
        if map.insert(id.clone(), k).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_with(centroids: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel::from_pivot(Lang::L1, 2, centroids, vec![("p".into(), 0)], vec![])
    }

    fn one(id: &str, v: Vec<f64>) -> Reduced {
        Reduced {
            ids: vec![id.into()],
            vectors: vec![v],
        }
    }

    #[test]
    fn argmax_cosine_and_tie() {
        let m = model_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = assign_nonpivot(&one("a", vec![0.9, 0.1]), m).unwrap();
        assert_eq!(m.cluster_of("a"), Some(0));
        let m = assign_nonpivot(&one("b", vec![0.3, 0.3]), m).unwrap();
        assert_eq!(m.cluster_of("b"), Some(0));
        let m = assign_nonpivot(&one("c", vec![0.1, 2.0]), m).unwrap();
        assert_eq!(m.cluster_of("c"), Some(1));
        assert_eq!(m.counts, vec![3, 1]);
        assert_eq!(m.counts.iter().sum::<usize>(), m.assignment.len());
    }

    #[test]
    fn zero_vector_rejected() {
        let m = model_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let err = assign_nonpivot(&one("z", vec![0.0, 0.0]), m).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(ref id) if id == "z"));
    }

    #[test]
    fn matches_exhaustive_scan_and_keeps_pivot() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let centroids: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = model_with(centroids.clone());
        let docs = Reduced {
            ids: (0..50).map(|i| format!("q{i}")).collect(),
            vectors: (0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        };
        let out = assign_nonpivot(&docs, m.clone()).unwrap();
        assert_eq!(out.centroids, m.centroids);
        assert_eq!(out.cluster_of("p"), Some(0));
        for (id, v) in docs.ids.iter().zip(&docs.vectors) {
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let dot: f64 = (0..3).map(|j| v[j] * c[j]).sum();
                let cos = dot / ((0..3).map(|j| v[j] * v[j]).sum::<f64>().sqrt() * (0..3).map(|j| c[j] * c[j]).sum::<f64>().sqrt());
                if cos > best_cos {
                    best_cos = cos;
                    best = k;
                }
            }
            assert_eq!(out.cluster_of(id), Some(best));
        }
    }

    #[test]
    fn tsv_round_trip() {
        let m = model_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = assign_nonpivot(&one("b", vec![0.0, 1.0]), m).unwrap();
        let mut buf = Vec::new();
        m.write_assignments(&mut buf, ["b", "p", "missing"]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "b\t1\np\t0\n");
        let rows = read_assignments(buf.as_slice()).unwrap();
        assert_eq!(rows, vec![("b".to_string(), 1), ("p".to_string(), 0)]);
        assert!(read_assignments(&b"x\ty\n"[..]).is_err());
    }
}
