use nalgebra::DMatrix;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

/// Document vectors keyed by id, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl Reduced {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keeps only the rows whose id satisfies `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> Reduced {
        let (ids, vectors) = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(id, _)| keep(id))
            .map(|(id, v)| (id.clone(), v.clone()))
            .unzip();
        Reduced { ids, vectors }
    }
}

/// `min(100, num_docs - 1, dim)`.
pub fn default_svd_rank(num_docs: usize, dim: usize) -> usize {
    100.min(num_docs.saturating_sub(1)).min(dim).max(1)
}

/// Projects the mean-centered embedding matrix onto its top `rank` right
/// singular vectors. Each singular vector's largest-magnitude entry is made
/// positive so the output is unique.
pub fn svd_project(table: &EmbeddingTable, rank: usize) -> Result<Reduced> {
    let n = table.len();
    let m = table.dim();
    if n < 2 {
        return Err(Error::invalid("embeddings", "at least 2 documents are required"));
    }
    if rank == 0 || rank > n.min(m) {
        return Err(Error::invalid(
            "svd_rank",
            format!("rank {rank} must lie in 1..={}", n.min(m)),
        ));
    }
    let mut mean = vec![0.0f64; m];
    for i in 0..n {
        for (acc, &x) in mean.iter_mut().zip(table.row(i)) {
            *acc += x as f64;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let centered = DMatrix::from_fn(n, m, |i, j| table.row(i)[j] as f64 - mean[j]);

    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = n.max(m) as f64 * f64::EPSILON * s_max;
    let nonzero = order
        .iter()
        .filter(|&&i| s_max > 0.0 && svd.singular_values[i] > tol)
        .count();
    if nonzero < rank {
        return Err(Error::RankDeficient { rank, nonzero });
    }

    let mut basis = DMatrix::<f64>::zeros(m, rank);
    for (c, &i) in order.iter().take(rank).enumerate() {
        let row = v_t.row(i);
        let (pivot, _) = row
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (j, &x)| if x.abs() > best.1 { (j, x.abs()) } else { best });
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            basis[(j, c)] = sign * row[j];
        }
    }
    let projected = centered * basis;
    Ok(Reduced {
        ids: table.ids().to_vec(),
        vectors: (0..n)
            .map(|i| projected.row(i).iter().copied().collect())
            .collect(),
    })
}

/// Truncated-SVD projection followed by L2 normalization of every row.
pub fn reduce_and_normalize(table: &EmbeddingTable, rank: usize) -> Result<Reduced> {
    let mut reduced = svd_project(table, rank)?;
    for (id, v) in reduced.ids.iter().zip(reduced.vectors.iter_mut()) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(id.clone()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(reduced)
}
