//! The parsimonious latent dynamics model.
//!
//! An encoder maps observations to latents. A posterior network reads the
//! latent and the action and emits Bernoulli probabilities whose rounding is
//! the binary transition code; a prior network sees only the action. A decoder
//! turns `(code, action)` into a rotation and/or translation applied to the
//! latent.

mod config;
pub mod loss;

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

pub use config::{ParsimonyConfig, TransformFamily, Variant};
pub(crate) use config::{parse_list, parse_value};

use crate::checkpoint::Checkpoint;
use crate::diffmath::special::{bernoulli_kl_graph, gaussian_kl_graph, matrix_exp_graph};
use crate::diffmath::{
    adam_step, collect_grads, Activation, AdamConfig, AdamState, BernoulliVec, BoundNet, FeedforwardNet, Graph,
    Parameters, Var,
};
use crate::diffmath::nn::SIGMA_FLOOR;
use crate::envs::{one_hot_rows, Action};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use loss::{contrastive_graph, transition_loss_det_graph};

/// Observation/action/next-observation triples, one per row.
#[derive(Clone, Debug)]
pub struct TransitionBatch<T> {
    pub obs: Array2<T>,
    pub actions: Vec<Action>,
    pub next_obs: Array2<T>,
}

impl<T: Scalar> TransitionBatch<T> {
    pub fn new(obs: Array2<T>, actions: Vec<Action>, next_obs: Array2<T>) -> Result<Self> {
        if obs.dim() != next_obs.dim() || obs.nrows() != actions.len() {
            return Err(shape_err(format!(
                "transition batch: obs {:?}, next {:?}, {} actions",
                obs.dim(),
                next_obs.dim(),
                actions.len()
            )));
        }
        if obs.nrows() == 0 {
            return Err(Error::InvalidArgument("transition batch is empty".into()));
        }
        Ok(Self { obs, actions, next_obs })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Loss components of one evaluation. `total` is the sum of the other three.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Next-latent prediction term.
    pub transition: f64,
    /// Weighted code KL (zero for models without codes).
    pub parsimony: f64,
    /// Term that keeps states apart: contrastive, or reconstruction for the VAE.
    pub representation: f64,
}

/// Posterior and prior code probabilities with the rounded code.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCode<T> {
    pub h: Vec<T>,
    pub posterior: BernoulliVec<T>,
    pub prior: BernoulliVec<T>,
}

impl<T: Scalar> TransitionCode<T> {
    /// Code bits packed little-end first.
    pub fn bits(&self) -> u32 {
        pack_bits(self.h.iter().copied())
    }
}

fn pack_bits<T: Scalar>(h: impl Iterator<Item = T>) -> u32 {
    h.enumerate().fold(0, |acc, (i, v)| if v >= T::lit(0.5) { acc | (1 << i) } else { acc })
}

/// `z' = R z + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform<T> {
    pub family: TransformFamily,
    pub rotation: Array2<T>,
    pub translation: Array1<T>,
}

impl<T: Scalar> Transform<T> {
    pub fn identity(family: TransformFamily, d: usize) -> Self {
        Self { family, rotation: Array2::eye(d), translation: Array1::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn apply(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if z.len() != self.dim() {
            return Err(shape_err(format!("transform of dimension {} applied to {}", self.dim(), z.len())));
        }
        Ok(self.rotation.dot(&z) + &self.translation)
    }
}

/// Trainable state of the model plus its optimizer moments.
#[derive(Clone, Debug)]
pub struct ParsimonyModel<T> {
    cfg: ParsimonyConfig,
    obs_width: usize,
    encoder: FeedforwardNet<T>,
    posterior: FeedforwardNet<T>,
    prior: FeedforwardNet<T>,
    decoder: FeedforwardNet<T>,
    adam: AdamState<T>,
}

struct Bound {
    encoder: BoundNet,
    posterior: BoundNet,
    prior: BoundNet,
    decoder: BoundNet,
}

impl Bound {
    fn vars(&self) -> Vec<Var> {
        [&self.encoder, &self.posterior, &self.prior, &self.decoder].iter().flat_map(|b| b.vars().to_vec()).collect()
    }
}

/// Graph handles for one forward pass over a batch.
struct Forward {
    z: Var,
    z_next: Var,
    z_next_std: Option<Var>,
    q: Var,
    p: Var,
    sigma_tilde: Option<Var>,
    pred: Var,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

fn softplus_floor<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p() + T::lit(SIGMA_FLOOR)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> ParsimonyModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: ParsimonyConfig, obs_width: usize, rng: &mut R) -> Result<Self> {
        Self::build(cfg, obs_width, |sizes, act| FeedforwardNet::new(sizes, act, rng))
    }

    fn build(
        cfg: ParsimonyConfig,
        obs_width: usize,
        mut make: impl FnMut(&[usize], Activation) -> Result<FeedforwardNet<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if obs_width == 0 {
            return Err(Error::Config("observation width must be positive".into()));
        }
        let (d, n, a) = (cfg.latent_dim, cfg.code_dim, Action::COUNT);
        let stoch = cfg.variant == Variant::Stochastic;
        let enc_out = if stoch { 2 * d } else { d };
        let post_out = if stoch { n + d } else { n };
        let encoder = make(&layer_sizes(obs_width, &cfg.hidden, enc_out), Activation::Identity)?;
        let posterior = make(&layer_sizes(d + a, &cfg.hidden, post_out), Activation::Identity)?;
        let mut prior = make(&layer_sizes(a, &cfg.hidden, n), Activation::Sigmoid)?;
        let mut decoder = make(&layer_sizes(n + a, &cfg.hidden, cfg.family.param_count(d)), Activation::Identity)?;
        // Small last layers start the prior near 1/2 and the transforms near identity.
        prior.scale_output_layer(T::lit(0.1));
        decoder.scale_output_layer(T::lit(0.1));
        Ok(Self { cfg, obs_width, encoder, posterior, prior, decoder, adam: AdamState::new() })
    }

    pub fn config(&self) -> &ParsimonyConfig {
        &self.cfg
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn code_dim(&self) -> usize {
        self.cfg.code_dim
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.step
    }

    /// Sets the learning rate used by later [`Self::train_step`] calls.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    fn check_obs(&self, obs: &Array2<T>) -> Result<()> {
        if obs.ncols() != self.obs_width {
            return Err(shape_err(format!("observation width {} but model expects {}", obs.ncols(), self.obs_width)));
        }
        Ok(())
    }

    /// Latent means for each observation row.
    pub fn encode(&self, obs: &Array2<T>) -> Result<Array2<T>> {
        self.check_obs(obs)?;
        let out = self.encoder.forward(obs)?;
        Ok(out.slice(s![.., ..self.cfg.latent_dim]).to_owned())
    }

    /// Mean and standard deviation of the latent (stochastic variant only).
    pub fn encode_gaussian(&self, obs: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
        if self.cfg.variant != Variant::Stochastic {
            return Err(Error::InvalidArgument("encode_gaussian needs the stochastic variant".into()));
        }
        self.check_obs(obs)?;
        let out = self.encoder.forward(obs)?;
        let d = self.cfg.latent_dim;
        Ok((out.slice(s![.., ..d]).to_owned(), out.slice(s![.., d..]).mapv(softplus_floor)))
    }

    fn check_latents(&self, z: &Array2<T>, actions: &[Action]) -> Result<()> {
        if z.ncols() != self.cfg.latent_dim || z.nrows() != actions.len() {
            return Err(shape_err(format!("latents {:?} with {} actions", z.dim(), actions.len())));
        }
        Ok(())
    }

    /// Posterior code probabilities `q(h | z, a)`, one row per latent.
    pub fn posterior_probs(&self, z: &Array2<T>, actions: &[Action]) -> Result<Array2<T>> {
        self.check_latents(z, actions)?;
        let input = ndarray::concatenate![Axis(1), *z, one_hot_rows::<T>(actions)];
        let out = self.posterior.forward(&input)?;
        Ok(out.slice(s![.., ..self.cfg.code_dim]).mapv(sigmoid))
    }

    /// Prior code probabilities `p(h | a)`; the latent is not an input.
    pub fn prior_probs(&self, actions: &[Action]) -> Result<Array2<T>> {
        self.prior.forward(&one_hot_rows(actions))
    }

    pub fn transition_codes(&self, z: &Array2<T>, actions: &[Action]) -> Result<Vec<TransitionCode<T>>> {
        let q = self.posterior_probs(z, actions)?;
        let p = self.prior_probs(actions)?;
        q.rows()
            .into_iter()
            .zip(p.rows())
            .map(|(qr, pr)| {
                let qv = qr.to_vec();
                Ok(TransitionCode {
                    h: crate::diffmath::straight_through_round(&qv),
                    posterior: BernoulliVec::new(qv)?,
                    prior: BernoulliVec::new(pr.to_vec())?,
                })
            })
            .collect()
    }

    /// Decodes rounded codes and actions into transforms.
    pub fn decode_transforms(&self, h: &Array2<T>, actions: &[Action]) -> Result<Vec<Transform<T>>> {
        let (d, n) = (self.cfg.latent_dim, self.cfg.code_dim);
        if h.ncols() != n || h.nrows() != actions.len() {
            return Err(shape_err(format!("codes {:?} with {} actions", h.dim(), actions.len())));
        }
        if h.nrows() == 0 {
            return Ok(Vec::new());
        }
        let input = ndarray::concatenate![Axis(1), *h, one_hot_rows::<T>(actions)];
        let out = self.decoder.forward(&input)?;
        let family = self.cfg.family;
        let rot_params = family.has_rotation().then(|| crate::diffmath::skew_param_count(d)).unwrap_or(0);
        let rotations = if family.has_rotation() {
            let mut g = Graph::new();
            let p = g.constant(out.slice(s![.., ..rot_params]).to_owned());
            let sk = g.skew(p, d);
            let e = matrix_exp_graph(&mut g, sk, d);
            g.check()?;
            Some(g.value(e).clone())
        } else {
            None
        };
        Ok((0..h.nrows())
            .map(|i| {
                let rotation = match &rotations {
                    Some(r) => r.row(i).to_owned().into_shape_with_order((d, d)).unwrap(),
                    None => Array2::eye(d),
                };
                let translation = if family.has_translation() {
                    out.slice(s![i, rot_params..rot_params + d]).to_owned()
                } else {
                    Array1::zeros(d)
                };
                Transform { family, rotation, translation }
            })
            .collect())
    }

    /// One latent step per row using the rounded posterior code.
    pub fn predict(&self, z: &Array2<T>, actions: &[Action]) -> Result<Array2<T>> {
        self.step_cached(z, actions, &mut HashMap::new())
    }

    fn step_cached(
        &self,
        z: &Array2<T>,
        actions: &[Action],
        cache: &mut HashMap<(u32, usize), Transform<T>>,
    ) -> Result<Array2<T>> {
        let q = self.posterior_probs(z, actions)?;
        let keys: Vec<(u32, usize)> =
            q.rows().into_iter().zip(actions).map(|(r, a)| (pack_bits(r.iter().copied()), a.index())).collect();
        let mut missing: Vec<(u32, usize)> = Vec::new();
        for k in &keys {
            if !cache.contains_key(k) && !missing.contains(k) {
                missing.push(*k);
            }
        }
        if !missing.is_empty() {
            let n = self.cfg.code_dim;
            let h = Array2::from_shape_fn((missing.len(), n), |(i, j)| {
                if missing[i].0 >> j & 1 == 1 {
                    T::one()
                } else {
                    T::zero()
                }
            });
            let acts = missing.iter().map(|k| Action::from_index(k.1)).collect::<Result<Vec<_>>>()?;
            for (k, t) in missing.iter().zip(self.decode_transforms(&h, &acts)?) {
                cache.insert(*k, t);
            }
        }
        let mut out = Array2::zeros(z.dim());
        for (i, k) in keys.iter().enumerate() {
            out.row_mut(i).assign(&cache[k].apply(z.row(i))?);
        }
        Ok(out)
    }

    /// Open-loop latent trajectory `z_1..z_H` from `z0`.
    pub fn rollout(&self, z0: ArrayView1<'_, T>, actions: &[Action]) -> Result<Vec<Array1<T>>> {
        let z0 = z0.to_owned().insert_axis(Axis(0));
        let seqs = [actions.to_vec()];
        let traj = self.rollout_batch(&z0, &seqs)?;
        Ok(traj.into_iter().map(|z| z.row(0).to_owned()).collect())
    }

    /// Rolls every row of `z0` through its own action sequence. Element `t`
    /// of the result holds all latents after `t + 1` steps.
    pub fn rollout_batch(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        if z0.nrows() != actions.len() {
            return Err(shape_err(format!("{} start latents for {} action sequences", z0.nrows(), actions.len())));
        }
        let horizon = actions.first().map_or(0, |a| a.len());
        if horizon == 0 || actions.iter().any(|a| a.len() != horizon) {
            return Err(Error::InvalidArgument("action sequences must share a positive length".into()));
        }
        let mut cache = HashMap::new();
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let acts: Vec<Action> = actions.iter().map(|s| s[t]).collect();
            z = self.step_cached(&z, &acts, &mut cache)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Number of distinct rounded codes each action produces over `obs`.
    pub fn distinct_codes_per_action(&self, obs: &Array2<T>) -> Result<[usize; Action::COUNT]> {
        let z = self.encode(obs)?;
        let mut counts = [0; Action::COUNT];
        for a in Action::ALL {
            let q = self.posterior_probs(&z, &vec![a; z.nrows()])?;
            let mut seen: Vec<u32> = q.rows().into_iter().map(|r| pack_bits(r.iter().copied())).collect();
            seen.sort_unstable();
            seen.dedup();
            counts[a.index()] = seen.len();
        }
        Ok(counts)
    }

    fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            encoder: self.encoder.bind(g),
            posterior: self.posterior.bind(g),
            prior: self.prior.bind(g),
            decoder: self.decoder.bind(g),
        }
    }

    fn encode_graph(&self, g: &mut Graph<T>, enc: &BoundNet, obs: &Array2<T>) -> (Var, Option<Var>) {
        let d = self.cfg.latent_dim;
        let x = g.constant(obs.clone());
        let out = enc.forward(g, x);
        match self.cfg.variant {
            Variant::Deterministic => (out, None),
            Variant::Stochastic => {
                let mean = g.slice_cols(out, 0, d);
                let raw = g.slice_cols(out, d, 2 * d);
                let sp = g.softplus(raw);
                (mean, Some(g.offset(sp, T::lit(SIGMA_FLOOR))))
            }
        }
    }

    /// Applies decoded transforms to `z` on the graph.
    fn transform_graph(&self, g: &mut Graph<T>, dec: &BoundNet, h: Var, onehot: Var, z: Var) -> Var {
        let d = self.cfg.latent_dim;
        let family = self.cfg.family;
        let input = g.concat(&[h, onehot]);
        let out = dec.forward(g, input);
        let rot_params = if family.has_rotation() { crate::diffmath::skew_param_count(d) } else { 0 };
        let mut pred = z;
        if family.has_rotation() {
            let p = g.slice_cols(out, 0, rot_params);
            let sk = g.skew(p, d);
            let r = matrix_exp_graph(g, sk, d);
            pred = g.batch_matvec(r, z, d);
        }
        if family.has_translation() {
            let v = g.slice_cols(out, rot_params, rot_params + d);
            pred = g.add(pred, v);
        }
        pred
    }

    fn forward_graph(&self, g: &mut Graph<T>, b: &Bound, batch: &TransitionBatch<T>) -> Forward {
        let n = self.cfg.code_dim;
        let (z, _) = self.encode_graph(g, &b.encoder, &batch.obs);
        let (z_next, z_next_std) = self.encode_graph(g, &b.encoder, &batch.next_obs);
        let onehot = g.constant(one_hot_rows(&batch.actions));
        let post_in = g.concat(&[z, onehot]);
        let post = b.posterior.forward(g, post_in);
        let logits = g.slice_cols(post, 0, n);
        let q = g.sigmoid(logits);
        let sigma_tilde = (self.cfg.variant == Variant::Stochastic).then(|| {
            let raw = g.slice_cols(post, n, n + self.cfg.latent_dim);
            let sp = g.softplus(raw);
            g.offset(sp, T::lit(SIGMA_FLOOR))
        });
        let p = b.prior.forward(g, onehot);
        let h = g.round_straight_through(q);
        let pred = self.transform_graph(g, &b.decoder, h, onehot, z);
        Forward { z, z_next, z_next_std, q, p, sigma_tilde, pred }
    }

    /// Builds the training objective; returns the total and its components.
    fn loss_graph(&self, g: &mut Graph<T>, b: &Bound, batch: &TransitionBatch<T>) -> Result<[Var; 4]> {
        if batch.obs.ncols() != self.obs_width {
            return Err(shape_err(format!("batch width {} but model expects {}", batch.obs.ncols(), self.obs_width)));
        }
        if batch.len() < 2 {
            return Err(Error::InvalidArgument("training batch needs at least two transitions".into()));
        }
        let f = self.forward_graph(g, b, batch);
        let per_row = match self.cfg.variant {
            Variant::Deterministic => transition_loss_det_graph(g, f.pred, f.z_next, self.cfg.mse_only),
            Variant::Stochastic => {
                let (mn, sn) = (f.z_next, f.z_next_std.expect("stochastic encoder"));
                gaussian_kl_graph(g, mn, sn, f.pred, f.sigma_tilde.expect("stochastic posterior"))
            }
        };
        let transition = g.mean(per_row);
        let kl = bernoulli_kl_graph(g, f.q, f.p);
        let kl = g.mean(kl);
        let parsimony = g.scale(kl, T::lit(self.cfg.beta));
        let contrastive = contrastive_graph(g, &batch.obs, f.z, self.cfg.tau_s, self.cfg.tau_z);
        let tp = g.add(transition, parsimony);
        let total = g.add(tp, contrastive);
        Ok([total, transition, parsimony, contrastive])
    }

    /// Loss components on `batch` without touching the parameters.
    pub fn loss(&self, batch: &TransitionBatch<T>) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let vars = self.loss_graph(&mut g, &b, batch)?;
        g.check()?;
        Ok(breakdown(&g, vars))
    }

    /// Gradients of the total loss for every parameter, in [`Parameters`] order.
    pub fn gradients(&self, batch: &TransitionBatch<T>) -> Result<(LossBreakdown, Vec<Array2<T>>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let vars = self.loss_graph(&mut g, &b, batch)?;
        let grads = g.backward(vars[0])?;
        Ok((breakdown(&g, vars), collect_grads(&g, &grads, &b.vars())))
    }

    /// One Adam update of encoder, posterior, prior and decoder.
    pub fn train_step(&mut self, batch: &TransitionBatch<T>) -> Result<LossBreakdown> {
        let (parts, grads) = self.gradients(batch)?;
        let cfg = AdamConfig::with_lr(self.cfg.lr);
        let mut adam = std::mem::take(&mut self.adam);
        let res = adam_step(self.params_mut(), &grads, &mut adam, &cfg);
        self.adam = adam;
        res.map(|_| parts)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut config = self.cfg.to_pairs();
        config.push(("obs_width".into(), self.obs_width.to_string()));
        Checkpoint::new("parsimony", config, self.param_names().into_iter().zip(self.params().into_iter().cloned()))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_kind("parsimony")?;
        let mut obs_width = None;
        let mut cfg = ParsimonyConfig::default();
        for (k, v) in &ckpt.config {
            if k == "obs_width" {
                obs_width = Some(parse_value(k, v)?);
            } else {
                cfg.set(k, v)?;
            }
        }
        let obs_width = obs_width.ok_or_else(|| Error::Checkpoint("missing obs_width".into()))?;
        let mut model = Self::build(cfg, obs_width, FeedforwardNet::zeros)?;
        ckpt.restore_into(&mut model)?;
        Ok(model)
    }
}

fn breakdown<T: Scalar>(g: &Graph<T>, [total, transition, parsimony, representation]: [Var; 4]) -> LossBreakdown {
    LossBreakdown {
        total: g.scalar(total).as_f64(),
        transition: g.scalar(transition).as_f64(),
        parsimony: g.scalar(parsimony).as_f64(),
        representation: g.scalar(representation).as_f64(),
    }
}

impl<T: Scalar> Parameters<T> for ParsimonyModel<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        [&self.encoder, &self.posterior, &self.prior, &self.decoder].into_iter().flat_map(|n| n.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.posterior.params_mut());
        v.extend(self.prior.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        [("encoder", &self.encoder), ("posterior", &self.posterior), ("prior", &self.prior), ("decoder", &self.decoder)]
            .into_iter()
            .flat_map(|(prefix, net)| net.param_names().into_iter().map(move |n| format!("{prefix}.{n}")))
            .collect()
    }
}
