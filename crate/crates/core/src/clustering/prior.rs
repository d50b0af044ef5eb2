use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1.0;

/// Gaussian prior over the logistic-normal latent, obtained from a Laplace
/// approximation of a Dirichlet whose concentrations are cluster sizes plus
/// `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    #[serde(rename = "T")]
    pub num_clusters: usize,
    pub epsilon: f64,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// With `alpha_k = n_k + epsilon`:
///
/// ```text
/// mu_k  = ln alpha_k - (1/T) sum_j ln alpha_j
/// var_k = (1/alpha_k)(1 - 2/T) + (1/T^2) sum_j 1/alpha_j
/// ```
pub fn compute_prior(counts: &[usize], epsilon: f64) -> Result<PriorParams> {
    let t = counts.len();
    if t < 2 {
        return Err(Error::invalid("counts", "at least 2 clusters are required"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be a positive finite number"));
    }
    let tf = t as f64;
    let alpha: Vec<f64> = counts.iter().map(|&n| n as f64 + epsilon).collect();
    let log_alpha: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let mean_log = log_alpha.iter().sum::<f64>() / tf;
    let mu = log_alpha.iter().map(|l| l - mean_log).collect();
    let inv_sum = alpha.iter().map(|a| 1.0 / a).sum::<f64>() / (tf * tf);
    let var = alpha.iter().map(|a| (1.0 / a) * (1.0 - 2.0 / tf) + inv_sum).collect();
    Ok(PriorParams {
        num_clusters: t,
        epsilon,
        alpha,
        mu,
        var,
    })
}

impl PriorParams {
    /// The standard-normal prior of length `k`, used when no clustering is
    /// available.
    pub fn standard(k: usize) -> Self {
        Self {
            num_clusters: k,
            epsilon: 0.0,
            alpha: vec![1.0; k],
            mu: vec![0.0; k],
            var: vec![1.0; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.num_clusters;
        if self.alpha.len() != t || self.mu.len() != t || self.var.len() != t {
            return Err(Error::invalid("prior", "alpha, mu and var must all have length T"));
        }
        if self.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("prior", "mu must be finite and var positive"));
        }
        Ok(())
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
        let prior: PriorParams = serde_json::from_str(&text)?;
        prior.validate()?;
        Ok(prior)
    }
}
