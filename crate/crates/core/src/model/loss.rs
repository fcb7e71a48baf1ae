//! Loss terms shared by the parsimony model and the comparison models.

use ndarray::{Array2, Zip};

use crate::diffmath::{bernoulli_kl, diag_gaussian_kl, BernoulliVec, GaussianParams, Graph, Var, PROB_CLAMP};
use crate::scalar::Scalar;

/// Per-row deterministic transition loss `|e|^2 + exp(-|e|)` with `e = pred - next`,
/// or `|e|^2` alone when `mse_only` is set. Returns an `m×1` column.
pub fn transition_loss_det_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, next: Var, mse_only: bool) -> Var {
    let err = g.sub(pred, next);
    let sq = g.square(err);
    let sq = g.sum_cols(sq);
    if mse_only {
        return sq;
    }
    let norm = g.row_norm(err);
    let neg = g.neg(norm);
    let e = g.exp(neg);
    g.add(sq, e)
}

/// Scalar form of the deterministic transition loss for one pair of latents.
pub fn transition_loss_det<T: Scalar>(pred: &[T], next: &[T], mse_only: bool) -> crate::Result<T> {
    if pred.len() != next.len() {
        return Err(crate::error::shape_err("transition loss: latent lengths differ"));
    }
    let row = |v: &[T]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
    let mut g = Graph::new();
    let (p, n) = (g.constant(row(pred)), g.constant(row(next)));
    let l = transition_loss_det_graph(&mut g, p, n, mse_only);
    g.check()?;
    Ok(g.scalar(l))
}

/// Pairwise Euclidean distances between rows of a constant matrix.
pub fn pairwise_distances<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let m = x.nrows();
    let mut d = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let v = Zip::from(x.row(i)).and(x.row(j)).fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b)).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Contrastive cross entropy over every ordered pair of the batch.
///
/// Targets `l = exp(-tau_s |s - s'|)` come from the observations and are
/// clamped to `[eps, 1 - eps]`; similarities `k = exp(-tau_z |z - z'|)` come
/// from the latents. Returns `-(1/N) sum [k ln l + (1 - k) ln(1 - l)]` with
/// `N = batch^2`.
pub fn contrastive_graph<T: Scalar>(g: &mut Graph<T>, obs: &Array2<T>, z: Var, tau_s: f64, tau_z: f64) -> Var {
    let eps = T::lit(PROB_CLAMP);
    let ts = T::lit(tau_s);
    let targets = pairwise_distances(obs).mapv(|d| (-ts * d).exp().max(eps).min(T::one() - eps));
    let log_l = targets.mapv(|l| l.ln());
    let log_1ml = targets.mapv(|l| (T::one() - l).ln());
    let slope = g.constant(&log_l - &log_1ml);
    let base = g.constant(log_1ml);
    let d = g.pairwise_dist(z);
    let scaled = g.scale(d, T::lit(-tau_z));
    let k = g.exp(scaled);
    // k ln l + (1 - k) ln(1 - l) = k (ln l - ln(1 - l)) + ln(1 - l)
    let weighted = g.mul(k, slope);
    let per_pair = g.add(weighted, base);
    let m = g.mean(per_pair);
    g.neg(m)
}

/// Contrastive loss for a batch of `(observation, latent)` rows.
pub fn contrastive_loss<T: Scalar>(obs: &Array2<T>, z: &Array2<T>, tau_s: f64, tau_z: f64) -> crate::Result<T> {
    if obs.nrows() < 2 || obs.nrows() != z.nrows() {
        return Err(crate::Error::InvalidArgument("contrastive loss needs at least two paired rows".into()));
    }
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let l = contrastive_graph(&mut g, obs, zv, tau_s, tau_z);
    g.check()?;
    Ok(g.scalar(l))
}

/// `KL[N(next) || N(predicted)] + beta * KL[q || p]` for one transition.
pub fn transition_loss_stoch<T: Scalar>(
    encoded_next: &GaussianParams<T>,
    predicted: &GaussianParams<T>,
    q: &BernoulliVec<T>,
    p: &BernoulliVec<T>,
    beta: f64,
) -> crate::Result<T> {
    Ok(diag_gaussian_kl(encoded_next, predicted)? + T::lit(beta) * bernoulli_kl(q, p)?)
}

/// Contrastive term on the posterior means plus `beta` times the mean KL
/// between each posterior and the prior predicted for it.
pub fn stochastic_state_loss<T: Scalar>(
    obs: &Array2<T>,
    posterior: &[GaussianParams<T>],
    predicted: &[GaussianParams<T>],
    beta: f64,
    tau_s: f64,
    tau_z: f64,
) -> crate::Result<T> {
    if posterior.len() != predicted.len() || posterior.len() != obs.nrows() || posterior.is_empty() {
        return Err(crate::error::shape_err("stochastic state loss: batch lengths differ"));
    }
    let d = posterior[0].dim();
    let means = Array2::from_shape_fn((posterior.len(), d), |(i, j)| posterior[i].mean[j]);
    let mut kl = T::zero();
    for (q, p) in posterior.iter().zip(predicted) {
        kl += diag_gaussian_kl(q, p)?;
    }
    let kl = kl / T::from_usize(posterior.len()).unwrap();
    Ok(contrastive_loss(obs, &means, tau_s, tau_z)? + T::lit(beta) * kl)
}
