//! Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reduce::Reduced;
use super::ClusterModel;
use crate::corpus::Lang;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against landing on an already-chosen point through rounding
            if d2[pick] == 0.0 {
                pick = d2.iter().enumerate().fold(0, |b, (i, &w)| if w > d2[b] { i } else { b });
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Clusters the pivot-language vectors into `clusters` groups.
///
/// Runs until assignments stop changing or `max_iter` iterations. Clusters that
/// become empty are re-seeded from the point farthest from its centroid. The
/// within-cluster sum of squares after each iteration is kept in
/// [`ClusterModel::wcss_history`].
pub fn fit_pivot_clusters(
    reduced: &Reduced,
    pivot: Lang,
    clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    if clusters < 2 {
        return Err(Error::invalid("clusters", "at least 2 clusters are required"));
    }
    let points = &reduced.vectors;
    if points.len() < clusters {
        return Err(Error::invalid(
            "clusters",
            format!("{} pivot documents for {clusters} clusters", points.len()),
        ));
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    if distinct.len() < clusters {
        return Err(Error::TooFewDistinctPoints {
            distinct: distinct.len(),
            clusters,
        });
    }
    let dim = reduced.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, clusters, &mut rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut history = Vec::new();

    for iter in 0..max_iter.max(1) {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assign;
        assign = next;

        // update step with empty-cluster re-seeding
        loop {
            let mut sums = vec![vec![0.0; dim]; clusters];
            let mut sizes = vec![0usize; clusters];
            for (p, &a) in points.iter().zip(&assign) {
                sizes[a] += 1;
                for (s, x) in sums[a].iter_mut().zip(p) {
                    *s += x;
                }
            }
            for k in 0..clusters {
                if sizes[k] > 0 {
                    centroids[k] = sums[k].iter().map(|s| s / sizes[k] as f64).collect();
                }
            }
            let Some(k) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let far = (0..points.len())
                .filter(|&i| sizes[assign[i]] > 1)
                .fold(None, |best: Option<(usize, f64)>, i| {
                    let d = sq_dist(&points[i], &centroids[assign[i]]);
                    match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    }
                })
                .map(|(i, _)| i)
                .expect("more distinct points than clusters");
            assign[far] = k;
            centroids[k] = points[far].clone();
        }
        let wcss: f64 = points
            .iter()
            .zip(&assign)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        history.push(wcss);
        if !changed {
            log::debug!("k-means converged after {} iterations", iter + 1);
            break;
        }
    }

    Ok(ClusterModel::from_pivot(
        pivot,
        dim,
        centroids,
        reduced.ids.iter().cloned().zip(assign).collect(),
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn reduced(points: Vec<Vec<f64>>) -> Reduced {
        Reduced {
            ids: (0..points.len()).map(|i| format!("p{i}")).collect(),
            vectors: points,
        }
    }

    fn wcss(points: &[Vec<f64>], groups: &[usize], k: usize) -> f64 {
        let dim = points[0].len();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(groups).filter(|(_, &g)| g == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mean: Vec<f64> = (0..dim).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
        }
        total
    }

    #[test]
    fn separated_blobs_match_best_two_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Vec::new();
        for i in 0..12 {
            let cx = if i < 6 { -3.0 } else { 3.0 };
            pts.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
        }
        let model = fit_pivot_clusters(&reduced(pts.clone()), Lang::L1, 2, 1, 300).unwrap();
        let got: Vec<usize> = pts.iter().enumerate().map(|(i, _)| model.cluster_of(&format!("p{i}")).unwrap()).collect();

        // oracle: exhaustive search over all 2-partitions
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 11) {
            let groups: Vec<usize> = (0..12).map(|i| ((mask >> i) & 1) as usize).collect();
            let w = wcss(&pts, &groups, 2);
            if w < best.0 {
                best = (w, mask);
            }
        }
        let oracle: Vec<usize> = (0..12).map(|i| ((best.1 >> i) & 1) as usize).collect();
        let same = got.iter().zip(&oracle).all(|(a, b)| a == b);
        let flipped = got.iter().zip(&oracle).all(|(a, b)| *a != *b);
        assert!(same || flipped, "{got:?} vs {oracle:?}");
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]];
        let model = fit_pivot_clusters(&reduced(pts), Lang::L1, 4, 3, 300).unwrap();
        assert_eq!(*model.wcss_history.last().unwrap(), 0.0);
        assert!(model.counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn wcss_non_increasing_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let model = fit_pivot_clusters(&reduced(pts.clone()), Lang::L1, 6, 11, 300).unwrap();
        for w in model.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", model.wcss_history);
        }
        assert!(model.wcss_history.last().unwrap() <= model.wcss_history.first().unwrap());
        assert!(model.counts.iter().all(|&c| c > 0));
        let again = fit_pivot_clusters(&reduced(pts), Lang::L1, 6, 11, 300).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn errors() {
        let pts = vec![vec![0.0], vec![0.0], vec![1.0]];
        assert!(matches!(
            fit_pivot_clusters(&reduced(pts.clone()), Lang::L1, 3, 0, 10),
            Err(Error::TooFewDistinctPoints { distinct: 2, clusters: 3 })
        ));
        assert!(fit_pivot_clusters(&reduced(pts), Lang::L1, 1, 0, 10).is_err());
    }
}
