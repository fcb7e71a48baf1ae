//! Matrix exponential of skew-symmetric matrices, straight-through rounding,
//! divergences and the reparameterised Gaussian sample.

use ndarray::{Array1, Array2};

use super::graph::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm.
pub const PROB_CLAMP: f64 = 1e-6;

/// Number of free entries in an `n×n` skew-symmetric matrix.
pub const fn skew_param_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Upper-triangle entries of a skew-symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewParams<T> {
    n: usize,
    params: Vec<T>,
}

impl<T: Scalar> SkewParams<T> {
    pub fn new(params: Vec<T>, n: usize) -> Result<Self> {
        if params.len() != skew_param_count(n) {
            return Err(shape_err(format!(
                "{n}x{n} skew matrix needs {} parameters, got {}",
                skew_param_count(n),
                params.len()
            )));
        }
        Ok(Self { n, params })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.params
    }

    pub fn to_matrix(&self) -> Array2<T> {
        skew_from_params(&self.params, self.n).expect("length checked on construction")
    }

    /// `exp(S)`, a rotation matrix.
    pub fn rotation(&self) -> Array2<T> {
        matrix_exp(&self.to_matrix()).expect("square by construction")
    }
}

/// Fills the upper triangle row-major from `params` and mirrors it negated.
pub fn skew_from_params<T: Scalar>(params: &[T], n: usize) -> Result<Array2<T>> {
    if params.len() != skew_param_count(n) {
        return Err(shape_err(format!("expected {} skew parameters, got {}", skew_param_count(n), params.len())));
    }
    let mut g = Graph::new();
    let p = g.constant(Array2::from_shape_vec((1, params.len()), params.to_vec()).unwrap());
    let s = g.skew(p, n);
    Ok(g.value(s).clone().into_shape_with_order((n, n)).unwrap())
}

fn one_norm<T: Scalar>(flat: &[T], d: usize) -> T {
    (0..d).map(|j| (0..d).map(|i| flat[i * d + j].abs()).sum::<T>()).fold(T::zero(), T::max)
}

/// Batched matrix exponential recorded on the graph.
///
/// Rows of `s` are flattened `d×d` matrices. The batch shares one scaling
/// exponent: halve until every 1-norm is below 0.5, sum the Taylor series
/// until the largest term entry drops under `Scalar::series_tolerance`, then
/// square back.
pub fn matrix_exp_graph<T: Scalar>(g: &mut Graph<T>, s: Var, d: usize) -> Var {
    let (batch, width) = g.shape(s);
    assert_eq!(width, d * d, "matrix_exp_graph: rows must hold d×d matrices");
    let norm = g
        .value(s)
        .rows()
        .into_iter()
        .map(|r| one_norm(r.as_slice().expect("standard layout"), d))
        .fold(T::zero(), T::max);
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    // Non-finite input skips scaling; the graph's finiteness check reports it.
    while scaled_norm.is_finite() && scaled_norm >= half {
        scaled_norm = scaled_norm * half;
        squarings += 1;
    }
    let a = g.scale(s, T::lit(0.5f64.powi(squarings as i32)));
    let mut eye = Array2::zeros((batch, d * d));
    for mut row in eye.rows_mut() {
        for i in 0..d {
            row[i * d + i] = T::one();
        }
    }
    let eye = g.constant(eye);
    let mut result = g.add(eye, a);
    let mut term = a;
    let tol = T::series_tolerance();
    for k in 2..=60 {
        let largest = g.value(term).iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if largest < tol {
            break;
        }
        let prod = g.batch_matmul(term, a, d);
        term = g.scale(prod, T::one() / T::from_usize(k).unwrap());
        result = g.add(result, term);
    }
    for _ in 0..squarings {
        result = g.batch_matmul(result, result, d);
    }
    result
}

/// `exp(S)` by scaling and squaring with a truncated Taylor series.
pub fn matrix_exp<T: Scalar>(s: &Array2<T>) -> Result<Array2<T>> {
    let (r, c) = s.dim();
    if r != c {
        return Err(shape_err(format!("matrix_exp needs a square matrix, got {r}x{c}")));
    }
    let mut g = Graph::new();
    let flat = g.constant(s.as_standard_layout().into_owned().into_shape_with_order((1, r * r)).unwrap());
    let e = matrix_exp_graph(&mut g, flat, r);
    g.check()?;
    Ok(g.value(e).clone().into_shape_with_order((r, r)).unwrap())
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant<T: Scalar>(m: &Array2<T>) -> T {
    let n = m.nrows();
    let mut a = m.to_owned();
    let mut det = T::one();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap()).unwrap();
        if a[[pivot, col]] == T::zero() {
            return T::zero();
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            det = -det;
        }
        det = det * a[[col, col]];
        for row in (col + 1)..n {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..n {
                let v = a[[col, k]];
                a[[row, k]] = a[[row, k]] - f * v;
            }
        }
    }
    det
}

/// Rounds each probability to {0, 1}; `0.5` rounds up.
pub fn straight_through_round<T: Scalar>(p: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    p.iter().map(|&v| if v >= half { T::one() } else { T::zero() }).collect()
}

/// Probability vector of independent Bernoulli variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliVec<T>(Vec<T>);

impl<T: Scalar> BernoulliVec<T> {
    /// Entries must lie in `[0, 1]`; they are stored clamped.
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument("Bernoulli probabilities must lie in [0, 1]".into()));
        }
        let eps = T::lit(PROB_CLAMP);
        Ok(Self(p.into_iter().map(|v| v.max(eps).min(T::one() - eps)).collect()))
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Row sums of the Bernoulli KL divergence `KL[q || p]`, an `m×1` column.
pub fn bernoulli_kl_graph<T: Scalar>(g: &mut Graph<T>, q: Var, p: Var) -> Var {
    let eps = T::lit(PROB_CLAMP);
    let hi = T::one() - eps;
    let qc = g.clamp(q, eps, hi);
    let pc = g.clamp(p, eps, hi);
    let lq = g.ln(qc);
    let lp = g.ln(pc);
    let on = g.sub(lq, lp);
    let on = g.mul(qc, on);
    let q1 = g.one_minus(qc);
    let p1 = g.one_minus(pc);
    let lq1 = g.ln(q1);
    let lp1 = g.ln(p1);
    let off = g.sub(lq1, lp1);
    let off = g.mul(q1, off);
    let kl = g.add(on, off);
    g.sum_cols(kl)
}

pub fn bernoulli_kl<T: Scalar>(q: &BernoulliVec<T>, p: &BernoulliVec<T>) -> Result<T> {
    if q.len() != p.len() {
        return Err(shape_err(format!("bernoulli_kl: lengths {} and {}", q.len(), p.len())));
    }
    let row = |v: &BernoulliVec<T>| Array2::from_shape_vec((1, v.len()), v.0.clone()).unwrap();
    let mut g = Graph::new();
    let (qv, pv) = (g.constant(row(q)), g.constant(row(p)));
    let kl = bernoulli_kl_graph(&mut g, qv, pv);
    g.check()?;
    Ok(g.scalar(kl))
}

/// Diagonal Gaussian given by mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
}

impl<T: Scalar> GaussianParams<T> {
    pub fn new(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(shape_err("gaussian: mean and std lengths differ"));
        }
        if std.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidArgument("gaussian: standard deviations must be positive".into()));
        }
        Ok(Self { mean: Array1::from(mean), std: Array1::from(std) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Row sums of `KL[N(mq, sq) || N(mp, sp)]` for diagonal Gaussians, an `m×1` column.
pub fn gaussian_kl_graph<T: Scalar>(g: &mut Graph<T>, mq: Var, sq: Var, mp: Var, sp: Var) -> Var {
    let lsp = g.ln(sp);
    let lsq = g.ln(sq);
    let log_ratio = g.sub(lsp, lsq);
    let vq = g.square(sq);
    let diff = g.sub(mq, mp);
    let d2 = g.square(diff);
    let num = g.add(vq, d2);
    let vp = g.square(sp);
    let den = g.scale(vp, T::lit(2.0));
    let frac = g.div(num, den);
    let s = g.add(log_ratio, frac);
    let s = g.offset(s, T::lit(-0.5));
    g.sum_cols(s)
}

pub fn diag_gaussian_kl<T: Scalar>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<T> {
    if q.dim() != p.dim() {
        return Err(shape_err(format!("diag_gaussian_kl: dimensions {} and {}", q.dim(), p.dim())));
    }
    let row = |v: &Array1<T>| v.clone().insert_axis(ndarray::Axis(0));
    let mut g = Graph::new();
    let mq = g.constant(row(&q.mean));
    let sq = g.constant(row(&q.std));
    let mp = g.constant(row(&p.mean));
    let sp = g.constant(row(&p.std));
    let kl = gaussian_kl_graph(&mut g, mq, sq, mp, sp);
    g.check()?;
    Ok(g.scalar(kl))
}

/// `mean + std * noise` on the graph.
pub fn reparam_graph<T: Scalar>(g: &mut Graph<T>, mean: Var, std: Var, noise: Var) -> Var {
    let scaled = g.mul(std, noise);
    g.add(mean, scaled)
}

pub fn reparam_sample<T: Scalar>(params: &GaussianParams<T>, noise: &[T]) -> Result<Array1<T>> {
    if noise.len() != params.dim() {
        return Err(shape_err(format!("reparam_sample: noise length {} for dimension {}", noise.len(), params.dim())));
    }
    Ok(&params.mean + &(&params.std * &Array1::from(noise.to_vec())))
}
