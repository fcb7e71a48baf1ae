//! Comparison models: a β-VAE with next-state prediction, a recurrent
//! deterministic model and a stochastic latent state model. All predict the
//! next latent with a learned general affine map `z' = (I + M) z + v`; none
//! uses transition codes.

mod rnn;
mod ssm;
mod vae;

use ndarray::{s, Array2};

pub use rnn::{RnnConfig, RnnModel, SequenceBatch};
pub use ssm::{SsmConfig, SsmModel};
pub use vae::{VaeConfig, VaeModel};

use crate::diffmath::{Graph, Var};
use crate::scalar::Scalar;

/// Head width for an affine map on `d` dimensions: `d*d` matrix entries then `d` offsets.
pub const fn affine_param_count(d: usize) -> usize {
    d * d + d
}

fn eye_rows<T: Scalar>(batch: usize, d: usize) -> Array2<T> {
    let mut eye = Array2::zeros((batch, d * d));
    for mut row in eye.rows_mut() {
        for i in 0..d {
            row[i * d + i] = T::one();
        }
    }
    eye
}

/// `(I + M) z + v` on the graph, with `M` and `v` read from the head output `out`.
pub(crate) fn affine_apply_graph<T: Scalar>(g: &mut Graph<T>, out: Var, z: Var, d: usize) -> Var {
    let batch = g.shape(z).0;
    let m = g.slice_cols(out, 0, d * d);
    let eye = g.constant(eye_rows(batch, d));
    let a = g.add(eye, m);
    let v = g.slice_cols(out, d * d, d * d + d);
    let az = g.batch_matvec(a, z, d);
    g.add(az, v)
}

/// Plain evaluation of [`affine_apply_graph`].
pub(crate) fn affine_apply<T: Scalar>(out: &Array2<T>, z: &Array2<T>, d: usize) -> Array2<T> {
    let mut res = out.slice(s![.., d * d..d * d + d]).to_owned();
    for (i, mut r) in res.rows_mut().into_iter().enumerate() {
        let m = out.slice(s![i, ..d * d]);
        for a in 0..d {
            let mut acc = z[[i, a]];
            for b in 0..d {
                acc += m[a * d + b] * z[[i, b]];
            }
            r[a] += acc;
        }
    }
    res
}

/// Row-mean of `|a - b|^2`, recorded on the graph.
pub(crate) fn mean_sq_error<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let e = g.sub(a, b);
    let sq = g.square(e);
    let rows = g.sum_cols(sq);
    g.mean(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn affine_graph_and_plain_agree() {
        let d = 2;
        let out: Array2<f64> = array![[0.1, -0.2, 0.3, 0.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0, 0.5, 0.5]];
        let z: Array2<f64> = array![[1.0, 2.0], [-3.0, 4.0]];
        let plain = affine_apply(&out, &z, d);
        // Row 0: A = [[1.1, -0.2], [0.3, 1.0]], v = [1, -1].
        assert!((plain[[0, 0]] - (1.1 - 0.4 + 1.0)).abs() < 1e-12);
        assert!((plain[[0, 1]] - (0.3 + 2.0 - 1.0)).abs() < 1e-12);
        assert_eq!(plain.row(1).to_vec(), vec![-2.5, 4.5]);
        let mut g = Graph::new();
        let (o, zv) = (g.constant(out), g.constant(z));
        let r = affine_apply_graph(&mut g, o, zv, d);
        assert!((g.value(r) - &plain).iter().all(|v: &f64| v.abs() < 1e-12));
    }
}
