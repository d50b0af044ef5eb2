//! Loss terms and the weighted training objective.
//!
//! [`terms`] holds the losses over plain matrices; [`batch_objective`] wires
//! them to the model, running the forward pass and, on request, the full
//! reverse pass into a [`Params`]-shaped gradient.

mod terms;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use terms::{kl_divergence, loss_beta, loss_cluster, loss_infonce, loss_tm, TmGrad};

use crate::clustering::PriorParams;
use crate::corpus::Lang;
use crate::error::{Error, Result};
use crate::model::forward::{beta_backward, beta_forward, decoder_log_probs, encode_batch, encoder_backward};
use crate::model::{DocNoise, ModelState, Params};

/// Per-term values of one evaluation, and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_tm: f64,
    pub l_infonce: f64,
    pub l_cluster: f64,
    pub l_beta: f64,
    pub total: f64,
}

/// Multipliers of the four terms. Training uses `tm = 1` and the three
/// lambdas; other settings isolate single terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub tm: f64,
    pub infonce: f64,
    pub cluster: f64,
    pub beta: f64,
}

impl TermWeights {
    pub fn lambdas(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            tm: 1.0,
            infonce: lambda1,
            cluster: lambda2,
            beta: lambda3,
        }
    }

    pub fn only_tm() -> Self {
        Self::lambdas(0.0, 0.0, 0.0)
    }

    pub fn only_infonce() -> Self {
        Self { tm: 0.0, ..Self::lambdas(1.0, 0.0, 0.0) }
    }

    pub fn only_cluster() -> Self {
        Self { tm: 0.0, ..Self::lambdas(0.0, 1.0, 0.0) }
    }

    pub fn only_beta() -> Self {
        Self { tm: 0.0, ..Self::lambdas(0.0, 0.0, 1.0) }
    }
}

/// Combines the four term values. Fails on the first non-finite part.
pub fn total_loss(l_tm: f64, l_infonce: f64, l_cluster: f64, l_beta: f64, w: &TermWeights) -> Result<LossBreakdown> {
    for (name, v) in [
        ("l_tm", l_tm),
        ("l_infonce", l_infonce),
        ("l_cluster", l_cluster),
        ("l_beta", l_beta),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteTerm(name));
        }
    }
    Ok(LossBreakdown {
        l_tm,
        l_infonce,
        l_cluster,
        l_beta,
        total: w.tm * l_tm + w.infonce * l_infonce + w.cluster * l_cluster + w.beta * l_beta,
    })
}

/// The documents of one mini-batch with their side information.
#[derive(Debug, Clone)]
pub struct BatchView<'a> {
    /// Language and raw BoW counts per document.
    pub docs: Vec<(Lang, &'a [f64])>,
    /// Document embeddings, one row per document (B x M).
    pub embeddings: Array2<f64>,
    pub cluster_ids: Vec<usize>,
}

impl BatchView<'_> {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn validate(&self, state: &ModelState) -> Result<()> {
        if self.docs.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        if self.embeddings.nrows() != self.docs.len() || self.cluster_ids.len() != self.docs.len() {
            return Err(Error::invalid("batch", "every document needs an embedding row and a cluster id"));
        }
        if self.embeddings.ncols() != state.config.embed_dim {
            return Err(Error::invalid(
                "embeddings",
                format!("dimension {} does not match the model's {}", self.embeddings.ncols(), state.config.embed_dim),
            ));
        }
        Ok(())
    }
}

/// Evaluates the weighted objective on one batch. With `noise` the encoder
/// runs in training mode (reparameterization and dropout); without it the
/// pass is deterministic. Gradients are returned when `with_grad` is set.
pub fn batch_objective(
    state: &ModelState,
    batch: &BatchView<'_>,
    prior: &PriorParams,
    weights: &TermWeights,
    temperature: f64,
    noise: Option<&[DocNoise]>,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Params>)> {
    batch.validate(state)?;
    if prior.mu.len() != state.config.topics {
        return Err(Error::TopicClusterMismatch {
            topics: state.config.topics,
            clusters: prior.mu.len(),
        });
    }
    let params = &state.params;
    let b = batch.len();
    let bf = b as f64;
    let pass = encode_batch(params, &state.config, &batch.docs, noise)?;
    let theta = &pass.theta;

    let mut dtheta = Array2::zeros(theta.raw_dim());
    let mut dmu = Array2::zeros(theta.raw_dim());
    let mut dlogvar = Array2::zeros(theta.raw_dim());
    let mut grads = with_grad.then(|| params.zeros_like());

    // reconstruction + KL, per language group, weighted to a batch mean
    let mut l_tm = 0.0;
    for lang in Lang::BOTH {
        let rows = &pass.groups[lang.index()];
        if rows.is_empty() {
            continue;
        }
        let v = state.vocab_sizes[lang.index()];
        let bows = Array2::from_shape_fn((rows.len(), v), |(r, j)| batch.docs[rows[r]].1[j]);
        let th = theta.select(Axis(0), rows);
        let log_recon = decoder_log_probs(params, lang, &th);
        let mu = pass.mu.select(Axis(0), rows);
        let lv = pass.logvar.select(Axis(0), rows);
        let (l, g) = loss_tm(&bows, &log_recon, &mu, &lv, prior)?;
        let share = rows.len() as f64 / bf;
        l_tm += share * l;
        if let Some(grads) = grads.as_mut().filter(|_| weights.tm != 0.0) {
            let s = weights.tm * share;
            let dlogits = g.dlogits * s;
            grads.decoder[lang.index()] += &dlogits.t().dot(&th);
            let dth = dlogits.dot(&params.decoder[lang.index()]);
            for (r, &pos) in rows.iter().enumerate() {
                let mut t = dtheta.row_mut(pos);
                t += &dth.row(r);
                let mut m = dmu.row_mut(pos);
                m.scaled_add(s, &g.dmu.row(r));
                let mut lvr = dlogvar.row_mut(pos);
                lvr.scaled_add(s, &g.dlogvar.row(r));
            }
        }
    }

    let proj = params.theta_proj.forward(theta);
    let (l_infonce, dproj) = loss_infonce(&proj, &batch.embeddings, temperature)?;
    if let Some(grads) = grads.as_mut().filter(|_| weights.infonce != 0.0) {
        let dproj = dproj * weights.infonce;
        dtheta += &params.theta_proj.backward(theta, &dproj, &mut grads.theta_proj);
    }

    let (l_cluster, dth_cluster) = loss_cluster(theta, &batch.cluster_ids, temperature)?;
    if weights.cluster != 0.0 && grads.is_some() {
        dtheta.scaled_add(weights.cluster, &dth_cluster);
    }

    let bp1 = beta_forward(params, Lang::L1);
    let bp2 = beta_forward(params, Lang::L2);
    let (l_beta, dy1, dy2) = loss_beta(&bp1.y, &bp2.y, temperature)?;
    if let Some(grads) = grads.as_mut().filter(|_| weights.beta != 0.0) {
        beta_backward(params, Lang::L1, &bp1, &(dy1 * weights.beta), grads);
        beta_backward(params, Lang::L2, &bp2, &(dy2 * weights.beta), grads);
    }

    if let Some(grads) = grads.as_mut() {
        encoder_backward(params, &pass, &dtheta, &dmu, &dlogvar, grads);
    }
    let breakdown = total_loss(l_tm, l_infonce, l_cluster, l_beta, weights)?;
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_arithmetic() {
        let w = TermWeights::lambdas(70.0, 5.0, 7.0);
        let b = total_loss(1.0, 2.0, 3.0, 4.0, &w).unwrap();
        assert_eq!(b.total, 184.0);
        let z = total_loss(1.5, 2.0, 3.0, 4.0, &TermWeights::only_tm()).unwrap();
        assert_eq!(z.total, 1.5);
        let w2 = TermWeights::lambdas(70.0, 10.0, 7.0);
        let b2 = total_loss(1.0, 2.0, 3.0, 4.0, &w2).unwrap();
        assert_eq!(b2.total - b.total, 3.0 * 5.0);
        let err = total_loss(1.0, f64::NAN, 3.0, 4.0, &w).unwrap_err();
        assert!(err.to_string().contains("l_infonce"));
    }
}
