//! One-vs-rest linear SVM (L2-regularized hinge loss) trained by dual
//! coordinate descent, used to score topic proportions as features.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Hinge-loss weight.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the projected-gradient spread falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 1000,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub classes: Vec<i64>,
    /// One row per class; the last column is the bias.
    pub weights: Array2<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl LinearSvm {
    /// Fits on `x` (n x d), standardizing each feature with the training
    /// mean and standard deviation.
    pub fn fit(x: &Array2<f64>, y: &[i64], config: &ClassifierConfig) -> Result<Self> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::invalid("labels", "one label per training row is required"));
        }
        let mut classes: Vec<i64> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClass(classes[0]));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xs = augment(&((x - &mean) / &scale));
        let mut weights = Array2::zeros((classes.len(), xs.ncols()));
        for (ci, &c) in classes.iter().enumerate() {
            let signs: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            let w = binary_dual_cd(&xs, &signs, config, ci as u64);
            weights.row_mut(ci).assign(&w);
        }
        Ok(Self {
            classes,
            weights,
            mean,
            scale,
        })
    }

    pub fn decision(&self, x: &Array2<f64>) -> Array2<f64> {
        augment(&((x - &self.mean) / &self.scale)).dot(&self.weights.t())
    }

    /// Highest-scoring class per row; ties go to the smaller label.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<i64> {
        self.decision(x)
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                self.classes[best]
            })
            .collect()
    }
}

fn augment(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}

fn binary_dual_cd(x: &Array2<f64>, y: &[f64], config: &ClassifierConfig, salt: u64) -> Array1<f64> {
    let n = x.nrows();
    let mut w = Array1::zeros(x.ncols());
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ salt.wrapping_mul(0x9E37_79B9));
    for _ in 0..config.max_iter {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi: ArrayView1<f64> = x.row(i);
            let g = y[i] * w.dot(&xi) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == config.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 && qii[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, config.c);
                w.scaled_add((alpha[i] - old) * y[i], &xi);
            }
        }
        if pg_max - pg_min < config.tol {
            break;
        }
    }
    w
}

pub fn accuracy(predicted: &[i64], truth: &[i64]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Test accuracy of a classifier trained on `train` features.
pub fn eval_classification(
    train: &Array2<f64>,
    train_labels: &[i64],
    test: &Array2<f64>,
    test_labels: &[i64],
    config: &ClassifierConfig,
) -> Result<f64> {
    if train.ncols() != test.ncols() {
        return Err(Error::invalid("features", "train and test must have the same number of topics"));
    }
    if test.nrows() != test_labels.len() || test_labels.is_empty() {
        return Err(Error::invalid("labels", "one label per test row is required"));
    }
    let svm = LinearSvm::fit(train, train_labels, config)?;
    Ok(accuracy(&svm.predict(test), test_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_one_hot() {
        let k = 4;
        let x = Array2::from_shape_fn((40, k), |(i, j)| if i % k == j { 1.0 } else { 0.0 });
        let y: Vec<i64> = (0..40).map(|i| (i % k) as i64 * 10).collect();
        let acc = eval_classification(&x, &y, &x, &y, &ClassifierConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::zeros((3, 2));
        let err = eval_classification(&x, &[5, 5, 5], &x, &[5, 5, 5], &ClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SingleClass(5)));
    }

    #[test]
    fn training_accuracy_bounds_held_out_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ClassifierConfig::default();
        let (mut train_sum, mut test_sum) = (0.0, 0.0);
        for _ in 0..10 {
            let x = Array2::from_shape_simple_fn((120, 5), || rng.random::<f64>());
            let y: Vec<i64> = x.axis_iter(Axis(0)).map(|r| i64::from(r[0] + 0.5 * rng.random::<f64>() > 0.75)).collect();
            let (tr, te) = (x.slice(ndarray::s![..80, ..]).to_owned(), x.slice(ndarray::s![80.., ..]).to_owned());
            train_sum += eval_classification(&tr, &y[..80], &tr, &y[..80], &cfg).unwrap();
            test_sum += eval_classification(&tr, &y[..80], &te, &y[80..], &cfg).unwrap();
        }
        assert!(train_sum >= test_sum, "{train_sum} < {test_sum}");
        assert!(train_sum / 10.0 > 0.7);
    }
}
