//! Differentiable numeric substrate: reverse-mode graph, networks, Adam and
//! the special functions the models are built from.

pub mod adam;
pub mod graph;
pub mod nn;
pub mod special;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use nn::{Activation, BoundGru, BoundNet, FeedforwardNet, GruCell, Parameters};
pub use special::{
    bernoulli_kl, determinant, diag_gaussian_kl, matrix_exp, reparam_sample, skew_from_params,
    skew_param_count, straight_through_round, BernoulliVec, GaussianParams, SkewParams, PROB_CLAMP,
};

use ndarray::Array2;

use crate::scalar::Scalar;

/// Gradients for `vars`, zero-filled where nothing flowed, in the same order.
pub fn collect_grads<T: Scalar>(g: &Graph<T>, grads: &Gradients<T>, vars: &[Var]) -> Vec<Array2<T>> {
    vars.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect()
}
