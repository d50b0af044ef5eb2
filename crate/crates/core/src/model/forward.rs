//! Batched forward passes with cached intermediates, and the matching
//! reverse-mode gradient code.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Linear, Params};
use super::ModelConfig;
use crate::corpus::Lang;
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softmax_cols, softmax_rows, softplus};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Per-document randomness for a training-mode pass: reparameterization
/// draws and the inverted-dropout mask of the input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DocNoise {
    pub eps: Vec<f64>,
    pub dropout_mask: Vec<f64>,
}

impl DocNoise {
    pub fn sample(rng: &mut impl Rng, topics: usize, hidden: usize, dropout: f64) -> Self {
        let eps = (0..topics).map(|_| rng.sample(StandardNormal)).collect();
        let keep = 1.0 - dropout;
        let dropout_mask = (0..hidden)
            .map(|_| {
                if dropout == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Self { eps, dropout_mask }
    }

    /// No perturbation: zero draws and an all-ones mask.
    pub fn zero(topics: usize, hidden: usize) -> Self {
        Self {
            eps: vec![0.0; topics],
            dropout_mask: vec![1.0; hidden],
        }
    }
}

/// Cached encoder activations for a batch; rows follow batch order.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    /// Batch positions of each language's documents.
    pub groups: [Vec<usize>; 2],
    pub x_norm: [Array2<f64>; 2],
    pub a1: [Array2<f64>; 2],
    pub mask: Option<Array2<f64>>,
    pub h1: Array2<f64>,
    pub a2: Array2<f64>,
    pub h2: Array2<f64>,
    pub mu: Array2<f64>,
    pub logvar_raw: Array2<f64>,
    pub logvar: Array2<f64>,
    pub eps: Option<Array2<f64>>,
    pub z: Array2<f64>,
    pub theta: Array2<f64>,
}

fn rows_of(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

pub(crate) fn encode_batch(
    params: &Params,
    config: &ModelConfig,
    docs: &[(Lang, &[f64])],
    noise: Option<&[DocNoise]>,
) -> Result<EncoderPass> {
    let b = docs.len();
    let hidden = config.hidden_dim;
    let k = config.topics;
    if let Some(n) = noise {
        assert_eq!(n.len(), b, "one noise record per document");
    }
    let mut groups: [Vec<usize>; 2] = Default::default();
    for (i, (lang, _)) in docs.iter().enumerate() {
        groups[lang.index()].push(i);
    }

    let mut x_norm: [Array2<f64>; 2] = Default::default();
    let mut a1: [Array2<f64>; 2] = Default::default();
    let mut h1 = Array2::zeros((b, hidden));
    for lang in Lang::BOTH {
        let l = lang.index();
        let v = params.input[l].fan_in();
        let mut x = Array2::zeros((groups[l].len(), v));
        for (r, &pos) in groups[l].iter().enumerate() {
            let bow = docs[pos].1;
            if bow.len() != v {
                return Err(Error::invalid(
                    "bow",
                    format!("length {} does not match {lang} vocabulary size {v}", bow.len()),
                ));
            }
            let total: f64 = bow.iter().sum();
            if !(total > 0.0) || bow.iter().any(|&c| c < 0.0) {
                return Err(Error::invalid("bow", "input must be non-negative and not all zero"));
            }
            for (dst, &c) in x.row_mut(r).iter_mut().zip(bow) {
                *dst = c / total;
            }
        }
        let pre = params.input[l].forward(&x);
        for (r, &pos) in groups[l].iter().enumerate() {
            let mut out = h1.row_mut(pos);
            for (j, &a) in pre.row(r).iter().enumerate() {
                let m = noise.map_or(1.0, |n| n[pos].dropout_mask[j]);
                out[j] = softplus(a) * m;
            }
        }
        x_norm[l] = x;
        a1[l] = pre;
    }
    let mask = noise.map(|n| Array2::from_shape_fn((b, hidden), |(i, j)| n[i].dropout_mask[j]));

    let a2 = params.shared.forward(&h1);
    let h2 = a2.mapv(softplus);
    let mu = params.mu_head.forward(&h2);
    let logvar_raw = params.logvar_head.forward(&h2);
    let logvar = logvar_raw.mapv(|x| x.clamp(LOGVAR_MIN, LOGVAR_MAX));
    let eps = noise.map(|n| Array2::from_shape_fn((b, k), |(i, j)| n[i].eps[j]));
    let z = match &eps {
        Some(e) => &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * e),
        None => mu.clone(),
    };
    let theta = softmax_rows(&z);
    Ok(EncoderPass {
        groups,
        x_norm,
        a1,
        mask,
        h1,
        a2,
        h2,
        mu,
        logvar_raw,
        logvar,
        eps,
        z,
        theta,
    })
}

fn linear_param_grads(x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
    grad.weight += &dy.t().dot(x);
    grad.bias += &dy.sum_axis(Axis(0));
}

/// Backpropagates upstream gradients on theta, mu and logvar through the
/// encoder, accumulating into `grads`.
pub(crate) fn encoder_backward(
    params: &Params,
    pass: &EncoderPass,
    dtheta: &Array2<f64>,
    dmu: &Array2<f64>,
    dlogvar: &Array2<f64>,
    grads: &mut Params,
) {
    // softmax Jacobian: dz = theta * (dtheta - <theta, dtheta>)
    let inner = (&pass.theta * dtheta).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dz = &pass.theta * &(dtheta - &inner);

    let dmu_total = dmu + &dz;
    let mut dlv = dlogvar.clone();
    if let Some(eps) = &pass.eps {
        Zip::from(&mut dlv)
            .and(&dz)
            .and(eps)
            .and(&pass.logvar)
            .for_each(|d, &g, &e, &lv| *d += g * e * 0.5 * (0.5 * lv).exp());
    }
    Zip::from(&mut dlv).and(&pass.logvar_raw).for_each(|d, &raw| {
        if !(LOGVAR_MIN < raw && raw < LOGVAR_MAX) {
            *d = 0.0;
        }
    });

    let mut dh2 = params.mu_head.backward(&pass.h2, &dmu_total, &mut grads.mu_head);
    dh2 += &params.logvar_head.backward(&pass.h2, &dlv, &mut grads.logvar_head);
    let da2 = dh2 * &pass.a2.mapv(sigmoid);
    let dh1 = params.shared.backward(&pass.h1, &da2, &mut grads.shared);

    for lang in Lang::BOTH {
        let l = lang.index();
        let rows = &pass.groups[l];
        if rows.is_empty() {
            continue;
        }
        let mut da1 = rows_of(&dh1, rows) * &pass.a1[l].mapv(sigmoid);
        if let Some(mask) = &pass.mask {
            da1 *= &rows_of(mask, rows);
        }
        linear_param_grads(&pass.x_norm[l], &da1, &mut grads.input[l]);
    }
}

/// Reconstruction log-probabilities `log softmax(W theta)` for the rows of
/// `theta` belonging to one language.
pub(crate) fn decoder_log_probs(params: &Params, lang: Lang, theta: &Array2<f64>) -> Array2<f64> {
    let logits = theta.dot(&params.decoder[lang.index()].t());
    crate::numeric::log_softmax_rows(&logits)
}

/// Cached activations of the topic-word projection for one language.
#[derive(Debug, Clone)]
pub struct BetaPass {
    /// beta transposed: K x |V|, each row a distribution.
    pub beta_t: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
    /// K x D_sem.
    pub y: Array2<f64>,
}

pub(crate) fn beta_forward(params: &Params, lang: Lang) -> BetaPass {
    let l = lang.index();
    let beta_t = softmax_cols(&params.decoder[l]).reversed_axes();
    let mlp = &params.beta_proj[l];
    let hidden_pre = mlp.hidden.forward(&beta_t);
    let hidden = hidden_pre.mapv(softplus);
    let y = mlp.output.forward(&hidden);
    BetaPass {
        beta_t,
        hidden_pre,
        hidden,
        y,
    }
}

pub(crate) fn beta_backward(params: &Params, lang: Lang, pass: &BetaPass, dy: &Array2<f64>, grads: &mut Params) {
    let l = lang.index();
    let mlp = &params.beta_proj[l];
    let dh = mlp.output.backward(&pass.hidden, dy, &mut grads.beta_proj[l].output);
    let dpre = dh * &pass.hidden_pre.mapv(sigmoid);
    let dbeta_t = mlp.hidden.backward(&pass.beta_t, &dpre, &mut grads.beta_proj[l].hidden);
    // column softmax Jacobian, applied per topic row of beta_t
    let inner = (&pass.beta_t * &dbeta_t).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dw_t = &pass.beta_t * &(&dbeta_t - &inner);
    grads.decoder[l] += &dw_t.t();
}
