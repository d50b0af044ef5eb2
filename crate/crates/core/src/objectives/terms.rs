//! The four loss terms as functions of plain matrices, each paired with its
//! gradient with respect to the matrix inputs.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::clustering::PriorParams;
use crate::error::{Error, Result};
use crate::numeric::logsumexp;

/// Row-wise cosine similarity `C[i][j] = cos(a_i, b_j)`, with the row norms.
fn cosine_matrix(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>, Array1<f64>)> {
    let na = row_norms(a, what, "left")?;
    let nb = row_norms(b, what, "right")?;
    let ah = a / &na.view().insert_axis(Axis(1));
    let bh = b / &nb.view().insert_axis(Axis(1));
    let c = ah.dot(&bh.t());
    Ok((c, ah, bh, na, nb))
}

fn row_norms(m: &Array2<f64>, what: &str, side: &str) -> Result<Array1<f64>> {
    let n = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = n.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroNormAt(format!("{what} {side} row {i}")));
    }
    Ok(n)
}

/// Back-propagates `dc` (gradient on the cosine matrix) to both inputs.
fn cosine_backward(
    dc: &Array2<f64>,
    c: &Array2<f64>,
    ah: &Array2<f64>,
    bh: &Array2<f64>,
    na: &Array1<f64>,
    nb: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let dcc = dc * c;
    let ra = dcc.sum_axis(Axis(1)).insert_axis(Axis(1));
    let rb = dcc.sum_axis(Axis(0)).insert_axis(Axis(1));
    let da = (dc.dot(bh) - &(ah * &ra)) / &na.view().insert_axis(Axis(1));
    let db = (dc.t().dot(ah) - &(bh * &rb)) / &nb.view().insert_axis(Axis(1));
    (da, db)
}

fn softmax_of_row(row: ArrayView1<f64>, skip: Option<usize>) -> Array1<f64> {
    let m = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .fold(f64::NEG_INFINITY, |a, (_, &b)| a.max(b));
    let mut out = row.mapv(|x| (x - m).exp());
    if let Some(s) = skip {
        out[s] = 0.0;
    }
    let s = out.sum();
    out / s
}

/// `KL(N(mu, diag exp(logvar)) || N(prior.mu, diag prior.var))`.
pub fn kl_divergence(mu: ArrayView1<f64>, logvar: ArrayView1<f64>, prior: &PriorParams) -> f64 {
    let mut kl = 0.0;
    for k in 0..mu.len() {
        let pv = prior.var[k];
        let d = prior.mu[k] - mu[k];
        kl += logvar[k].exp() / pv + d * d / pv - 1.0 + pv.ln() - logvar[k];
    }
    0.5 * kl
}

/// Gradients of [`TmTerm::value`] with respect to the decoder logits, mu and
/// logvar, already divided by the batch size.
#[derive(Debug, Clone)]
pub struct TmGrad {
    pub dlogits: Array2<f64>,
    pub dmu: Array2<f64>,
    pub dlogvar: Array2<f64>,
}

/// Mean over the batch of `-x^T log recon + KL`, where `x` holds raw counts
/// and `log_recon` row-wise log-probabilities.
pub fn loss_tm(
    bows: &Array2<f64>,
    log_recon: &Array2<f64>,
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
    prior: &PriorParams,
) -> Result<(f64, TmGrad)> {
    let b = bows.nrows();
    if b == 0 || log_recon.dim() != bows.dim() || mu.dim() != logvar.dim() || mu.nrows() != b {
        return Err(Error::invalid("batch", "inconsistent shapes for the reconstruction term"));
    }
    if mu.ncols() != prior.mu.len() {
        return Err(Error::TopicClusterMismatch {
            topics: mu.ncols(),
            clusters: prior.mu.len(),
        });
    }
    let bf = b as f64;
    let mut total = 0.0;
    for d in 0..b {
        total -= bows.row(d).dot(&log_recon.row(d));
        total += kl_divergence(mu.row(d), logvar.row(d), prior);
    }
    let loss = total / bf;
    if !loss.is_finite() {
        return Err(Error::NonFiniteTerm("l_tm"));
    }
    let counts = bows.sum_axis(Axis(1)).insert_axis(Axis(1));
    let dlogits = (log_recon.mapv(f64::exp) * &counts - bows) / bf;
    let pmu = ArrayView1::from(&prior.mu[..]);
    let pvar = ArrayView1::from(&prior.var[..]);
    let dmu = (mu - &pmu) / &pvar / bf;
    let dlogvar = (logvar.mapv(f64::exp) / &pvar - 1.0) * 0.5 / bf;
    Ok((loss, TmGrad { dlogits, dmu, dlogvar }))
}

/// Single-positive InfoNCE between document embeddings `emb` (B x M) and
/// projected topic proportions `proj` (B x M): for row i the positive is
/// `proj_i` and the candidates are every `proj_j` in the batch.
///
/// Returns the loss and its gradient with respect to `proj`.
pub fn loss_infonce(proj: &Array2<f64>, emb: &Array2<f64>, temperature: f64) -> Result<(f64, Array2<f64>)> {
    let b = proj.nrows();
    if b == 0 || emb.dim() != proj.dim() {
        return Err(Error::invalid("batch", "embeddings and projections must have the same shape"));
    }
    let (c, eh, ph, ne, np) = cosine_matrix(emb, proj, "infonce")?;
    let s = &c / temperature;
    let bf = b as f64;
    let mut loss = 0.0;
    let mut ds = Array2::zeros((b, b));
    for i in 0..b {
        let row = s.row(i);
        loss += logsumexp(row.iter().copied()) - row[i];
        let mut p = softmax_of_row(row, None);
        p[i] -= 1.0;
        ds.row_mut(i).assign(&(p / bf));
    }
    let loss = loss / bf;
    if !loss.is_finite() {
        return Err(Error::NonFiniteTerm("l_infonce"));
    }
    let (_, dproj) = cosine_backward(&(ds / temperature), &c, &eh, &ph, &ne, &np);
    Ok((loss, dproj))
}

/// Multi-positive contrast over topic proportions: for doc i the candidates
/// are all other docs in the batch and the positives those sharing i's
/// cluster. The sum over docs is divided by the batch size.
///
/// Returns the loss and its gradient with respect to `theta`.
pub fn loss_cluster(theta: &Array2<f64>, clusters: &[usize], temperature: f64) -> Result<(f64, Array2<f64>)> {
    let b = theta.nrows();
    if clusters.len() != b {
        return Err(Error::invalid("clusters", "one cluster id per document is required"));
    }
    if b < 2 {
        return Ok((0.0, Array2::zeros(theta.raw_dim())));
    }
    let (c, th, _, n, _) = cosine_matrix(theta, theta, "cluster")?;
    let g = &c / temperature;
    let bf = b as f64;
    let mut loss = 0.0;
    let mut dg = Array2::zeros((b, b));
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && clusters[j] == clusters[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let np = pos.len() as f64;
        let row = g.row(i);
        let lse = logsumexp((0..b).filter(|&j| j != i).map(|j| row[j]));
        loss += pos.iter().map(|&j| lse - row[j]).sum::<f64>();
        let mut d = softmax_of_row(row, Some(i)) * np;
        for &j in &pos {
            d[j] -= 1.0;
        }
        dg.row_mut(i).assign(&(d / bf));
    }
    let loss = loss / bf;
    if !loss.is_finite() {
        return Err(Error::NonFiniteTerm("l_cluster"));
    }
    let (da, db) = cosine_backward(&(dg / temperature), &c, &th, &th, &n, &n);
    Ok((loss, da + db))
}

/// Symmetric topic-level InfoNCE between the semantic representations of the
/// two languages: topic k in one language is the positive for topic k in the
/// other.
///
/// Returns the loss and the gradients with respect to `y1` and `y2`.
pub fn loss_beta(y1: &Array2<f64>, y2: &Array2<f64>, temperature: f64) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let k = y1.nrows();
    if k == 0 || y1.dim() != y2.dim() {
        return Err(Error::invalid("beta", "both languages need the same number of topic rows"));
    }
    let (c, h1, h2, n1, n2) = cosine_matrix(y1, y2, "topic")?;
    let g = &c / temperature;
    let kf = k as f64;
    let mut l12 = 0.0;
    let mut l21 = 0.0;
    let mut dg = Array2::zeros((k, k));
    for a in 0..k {
        l12 += logsumexp(g.row(a).iter().copied()) - g[[a, a]];
        l21 += logsumexp(g.column(a).iter().copied()) - g[[a, a]];
        let mut pr = softmax_of_row(g.row(a), None);
        pr[a] -= 1.0;
        let mut pc = softmax_of_row(g.column(a), None);
        pc[a] -= 1.0;
        let mut row = dg.row_mut(a);
        row += &(pr / (2.0 * kf));
        let mut col = dg.column_mut(a);
        col += &(pc / (2.0 * kf));
    }
    let loss = 0.5 * (l12 + l21) / kf;
    if !loss.is_finite() {
        return Err(Error::NonFiniteTerm("l_beta"));
    }
    let (d1, d2) = cosine_backward(&(dg / temperature), &c, &h1, &h2, &n1, &n2);
    Ok((loss, d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    fn fd_check(x: &Array2<f64>, grad: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) {
        let h = 1e-6;
        let mut num = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.as_slice_mut().unwrap()[idx] += h;
            m.as_slice_mut().unwrap()[idx] -= h;
            num.as_slice_mut().unwrap()[idx] = (f(&p) - f(&m)) / (2.0 * h);
        }
        let err = (&num - grad).mapv(|v| v * v).sum().sqrt();
        let scale = num.mapv(|v| v * v).sum().sqrt().max(1e-8);
        assert!(err / scale < 1e-6, "relative error {}", err / scale);
    }

    #[test]
    fn kl_zero_for_identical_gaussians() {
        let prior = crate::clustering::compute_prior(&[3, 1, 7], 1.0).unwrap();
        let mu = Array1::from(prior.mu.clone());
        let lv = Array1::from(prior.var.iter().map(|v| v.ln()).collect::<Vec<_>>());
        assert!(kl_divergence(mu.view(), lv.view(), &prior).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prior = crate::clustering::compute_prior(&[5, 2, 9], 1.0).unwrap();
        let mu = array![0.3, -0.2, 0.1];
        let lv = array![-0.5, 0.2, -1.0];
        let n = 1_000_000;
        let mut acc = 0.0;
        let logpdf = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + v.ln() + (2.0 * std::f64::consts::PI).ln());
        for _ in 0..n {
            let mut s = 0.0;
            for k in 0..3 {
                let v: f64 = (lv[k] as f64).exp();
                let e: f64 = rng.sample(StandardNormal);
                let x = mu[k] + v.sqrt() * e;
                s += logpdf(x, mu[k], v) - logpdf(x, prior.mu[k], prior.var[k]);
            }
            acc += s;
        }
        let mc = acc / n as f64;
        let exact = kl_divergence(mu.view(), lv.view(), &prior);
        assert!((mc - exact).abs() < 1e-2, "mc {mc} exact {exact}");
    }

    #[test]
    fn one_hot_against_uniform_reconstruction() {
        let v = 7;
        let prior = PriorParams::standard(2);
        let mut x = Array2::zeros((1, v));
        x[[0, 3]] = 1.0;
        let lr = Array2::from_elem((1, v), -(v as f64).ln());
        let (l, _) = loss_tm(&x, &lr, &Array2::zeros((1, 2)), &Array2::zeros((1, 2)), &prior).unwrap();
        assert!((l - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn infonce_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = randn(&mut rng, 1, 4);
        let e = randn(&mut rng, 1, 4);
        assert!(loss_infonce(&p, &e, 1.0).unwrap().0.abs() < 1e-12);
        for b in 2..8 {
            let row = randn(&mut rng, 1, 5);
            let p = Array2::from_shape_fn((b, 5), |(_, j)| row[[0, j]]);
            let e = randn(&mut rng, b, 5);
            let l = loss_infonce(&p, &e, 1.0).unwrap().0;
            assert!((l - (b as f64).ln()).abs() < 1e-9);
        }
        let mut z = randn(&mut rng, 3, 4);
        z.row_mut(1).fill(0.0);
        assert!(matches!(loss_infonce(&z, &randn(&mut rng, 3, 4), 1.0), Err(Error::ZeroNormAt(_))));
    }

    #[test]
    fn cluster_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = randn(&mut rng, 5, 3).mapv(f64::abs);
        assert_eq!(loss_cluster(&t, &[0, 1, 2, 3, 4], 1.0).unwrap().0, 0.0);
        assert_eq!(loss_cluster(&t.slice(ndarray::s![..1, ..]).to_owned(), &[0], 1.0).unwrap().0, 0.0);
        for b in 2..8usize {
            let t = Array2::from_shape_fn((b, 3), |(_, j)| [0.2, 0.5, 0.3][j]);
            let l = loss_cluster(&t, &vec![1; b], 1.0).unwrap().0;
            let bf = (b - 1) as f64;
            assert!((l - bf * bf.ln()).abs() < 1e-9, "b={b} l={l}");
        }
    }

    #[test]
    fn beta_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = randn(&mut rng, 1, 4);
        assert!(loss_beta(&y, &randn(&mut rng, 1, 4), 1.0).unwrap().0.abs() < 1e-15);
        for k in 2..6usize {
            let eye = Array2::<f64>::eye(k) * 2.5;
            let l = loss_beta(&eye, &eye, 1.0).unwrap().0;
            let e = std::f64::consts::E;
            let want = -(e / (e + (k - 1) as f64)).ln();
            assert!((l - want).abs() < 1e-12);
        }
        let a = randn(&mut rng, 4, 3);
        let b = randn(&mut rng, 4, 3);
        let l1 = loss_beta(&a, &b, 1.0).unwrap().0;
        let l2 = loss_beta(&b, &a, 1.0).unwrap().0;
        assert!((l1 - l2).abs() < 1e-12);
        let mut z = a.clone();
        z.row_mut(2).fill(0.0);
        let err = loss_beta(&z, &b, 1.0).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = randn(&mut rng, 6, 4);
        let e = randn(&mut rng, 6, 4);
        let t = randn(&mut rng, 6, 3).mapv(f64::abs);
        let cl = [0, 1, 0, 2, 1, 0];
        let perm = [3, 0, 5, 1, 4, 2];
        let pp = p.select(Axis(0), &perm);
        let ep = e.select(Axis(0), &perm);
        let tp = t.select(Axis(0), &perm);
        let clp: Vec<usize> = perm.iter().map(|&i| cl[i]).collect();
        let a = loss_infonce(&p, &e, 1.0).unwrap().0;
        let b = loss_infonce(&pp, &ep, 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);
        let a = loss_cluster(&t, &cl, 1.0).unwrap().0;
        let b = loss_cluster(&tp, &clp, 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);

        let y1 = randn(&mut rng, 4, 5);
        let y2 = randn(&mut rng, 4, 5);
        let kp = [2, 0, 3, 1];
        let a = loss_beta(&y1, &y2, 1.0).unwrap().0;
        let b = loss_beta(&y1.select(Axis(0), &kp), &y2.select(Axis(0), &kp), 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = randn(&mut rng, 5, 3).mapv(f64::abs);
        let mut s = t.clone();
        s.row_mut(2).mapv_inplace(|x| x * 7.5);
        let cl = [0, 0, 0, 1, 1];
        let a = loss_cluster(&t, &cl, 1.0).unwrap().0;
        let b = loss_cluster(&s, &cl, 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matrix_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let tau = rng.random_range(0.5..2.0);
            let p = randn(&mut rng, 5, 4);
            let e = randn(&mut rng, 5, 4);
            let (_, g) = loss_infonce(&p, &e, tau).unwrap();
            fd_check(&p, &g, |x| loss_infonce(x, &e, tau).unwrap().0);

            let t = randn(&mut rng, 6, 3);
            let cl = [0, 1, 0, 0, 1, 2];
            let (_, g) = loss_cluster(&t, &cl, tau).unwrap();
            fd_check(&t, &g, |x| loss_cluster(x, &cl, tau).unwrap().0);

            let y1 = randn(&mut rng, 4, 3);
            let y2 = randn(&mut rng, 4, 3);
            let (_, g1, g2) = loss_beta(&y1, &y2, tau).unwrap();
            fd_check(&y1, &g1, |x| loss_beta(x, &y2, tau).unwrap().0);
            fd_check(&y2, &g2, |x| loss_beta(&y1, x, tau).unwrap().0);

            let prior = crate::clustering::compute_prior(&[2, 5, 1], 1.0).unwrap();
            let x = Array2::from_shape_simple_fn((3, 6), || rng.random_range(0..4) as f64);
            let logits = randn(&mut rng, 3, 6);
            let lr = crate::numeric::log_softmax_rows(&logits);
            let mu = randn(&mut rng, 3, 3);
            let lv = randn(&mut rng, 3, 3);
            let (_, g) = loss_tm(&x, &lr, &mu, &lv, &prior).unwrap();
            fd_check(&logits, &g.dlogits, |z| {
                loss_tm(&x, &crate::numeric::log_softmax_rows(z), &mu, &lv, &prior).unwrap().0
            });
            fd_check(&mu, &g.dmu, |z| loss_tm(&x, &lr, z, &lv, &prior).unwrap().0);
            fd_check(&lv, &g.dlogvar, |z| loss_tm(&x, &lr, &mu, z, &prior).unwrap().0);
        }
    }
}
