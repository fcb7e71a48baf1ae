use ndarray::{Array2, Axis};
use rand::Rng;

use super::vae::breakdown;
use super::{affine_apply, affine_apply_graph, affine_param_count, mean_sq_error};
use crate::checkpoint::Checkpoint;
use crate::diffmath::{
    adam_step, collect_grads, Activation, AdamConfig, AdamState, FeedforwardNet, Graph, GruCell, Parameters, Var,
};
use crate::envs::{one_hot_rows, Action};
use crate::error::{shape_err, Error, Result};
use crate::model::loss::contrastive_graph;
use crate::model::{parse_list, parse_value, LossBreakdown};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RnnConfig {
    pub latent_dim: usize,
    /// Encoder hidden widths.
    pub hidden: Vec<usize>,
    /// Width of the recurrent state.
    pub recurrent_width: usize,
    pub tau_s: f64,
    pub tau_z: f64,
    pub lr: f64,
    /// Transitions per training chunk.
    pub chunk_len: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            latent_dim: 15,
            hidden: vec![1200, 1200],
            recurrent_width: 200,
            tau_s: 100.0,
            tau_z: 0.1,
            lr: 1e-3,
            chunk_len: 8,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.recurrent_width == 0 || self.chunk_len == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("rnn: widths and chunk length must be positive".into()));
        }
        if !(self.tau_s > 0.0 && self.tau_z > 0.0) {
            return Err(Error::Config("rnn: tau_s and tau_z must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("hidden".into(), hidden),
            ("recurrent_width".into(), self.recurrent_width.to_string()),
            ("tau_s".into(), self.tau_s.to_string()),
            ("tau_z".into(), self.tau_z.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("chunk_len".into(), self.chunk_len.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "recurrent_width" => self.recurrent_width = parse_value(key, value)?,
            "tau_s" => self.tau_s = parse_value(key, value)?,
            "tau_z" => self.tau_z = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "chunk_len" => self.chunk_len = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "rnn config key", value: other.into() }),
        }
        Ok(())
    }
}

/// Contiguous chunks: `obs[t]` holds the observation at step `t` of every
/// chunk (one row per chunk) and `actions[t]` the action taken there.
#[derive(Clone, Debug)]
pub struct SequenceBatch<T> {
    pub obs: Vec<Array2<T>>,
    pub actions: Vec<Vec<Action>>,
}

impl<T: Scalar> SequenceBatch<T> {
    pub fn new(obs: Vec<Array2<T>>, actions: Vec<Vec<Action>>) -> Result<Self> {
        if obs.len() < 2 {
            return Err(Error::InvalidArgument("sequences need at least two observations".into()));
        }
        if actions.len() + 1 != obs.len() {
            return Err(shape_err(format!("{} observation steps but {} action steps", obs.len(), actions.len())));
        }
        let (rows, cols) = obs[0].dim();
        if obs.iter().any(|o| o.dim() != (rows, cols)) || actions.iter().any(|a| a.len() != rows) {
            return Err(shape_err("sequence batch: ragged steps"));
        }
        Ok(Self { obs, actions })
    }

    pub fn chunks(&self) -> usize {
        self.obs[0].nrows()
    }

    /// Number of transitions per chunk.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Deterministic recurrent dynamics: a gated recurrent state reads
/// `(z_t, a_t)` and a linear head emits the affine map for `z_t`.
#[derive(Clone, Debug)]
pub struct RnnModel<T> {
    cfg: RnnConfig,
    obs_width: usize,
    encoder: FeedforwardNet<T>,
    cell: GruCell<T>,
    head: FeedforwardNet<T>,
    adam: AdamState<T>,
}

impl<T: Scalar> RnnModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: RnnConfig, obs_width: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let enc_sizes: Vec<usize> =
            std::iter::once(obs_width).chain(cfg.hidden.iter().copied()).chain(std::iter::once(d)).collect();
        let encoder = FeedforwardNet::new(&enc_sizes, Activation::Identity, rng)?;
        let cell = GruCell::new(d + Action::COUNT, cfg.recurrent_width, rng);
        let mut head = FeedforwardNet::new(&[cfg.recurrent_width, affine_param_count(d)], Activation::Identity, rng)?;
        head.scale_output_layer(T::lit(0.1));
        Ok(Self { cfg, obs_width, encoder, cell, head, adam: AdamState::new() })
    }

    pub fn config(&self) -> &RnnConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn encode(&self, obs: &Array2<T>) -> Result<Array2<T>> {
        if obs.ncols() != self.obs_width {
            return Err(shape_err(format!("rnn: observation width {} expected {}", obs.ncols(), self.obs_width)));
        }
        self.encoder.forward(obs)
    }

    /// Recurrent state at the start of an episode, for `rows` parallel tracks.
    pub fn initial_state(&self, rows: usize) -> Array2<T> {
        self.cell.initial_state(rows)
    }

    /// Consumes `(z, a)`; returns the new recurrent state and the predicted next latent.
    pub fn step(&self, state: &Array2<T>, z: &Array2<T>, actions: &[Action]) -> Result<(Array2<T>, Array2<T>)> {
        if z.nrows() != actions.len() || z.ncols() != self.cfg.latent_dim {
            return Err(shape_err("rnn step: latent/action mismatch"));
        }
        let x = ndarray::concatenate![Axis(1), *z, one_hot_rows::<T>(actions)];
        let h = self.cell.step(state, &x)?;
        let out = self.head.forward(&h)?;
        let pred = affine_apply(&out, z, self.cfg.latent_dim);
        Ok((h, pred))
    }

    /// Open-loop rollouts sharing the recurrent state `state` (one row).
    pub fn rollout_batch(&self, state: &Array2<T>, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        let horizon = actions.first().map_or(0, |a| a.len());
        if horizon == 0 || actions.len() != z0.nrows() || actions.iter().any(|a| a.len() != horizon) {
            return Err(Error::InvalidArgument("rnn rollout: action sequences must share a positive length".into()));
        }
        if state.nrows() != 1 {
            return Err(shape_err("rnn rollout: expected a single recurrent state row"));
        }
        let mut h = state.broadcast((z0.nrows(), state.ncols())).unwrap().to_owned();
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let acts: Vec<Action> = actions.iter().map(|s| s[t]).collect();
            let (h2, z2) = self.step(&h, &z, &acts)?;
            h = h2;
            z = z2;
            out.push(z.clone());
        }
        Ok(out)
    }

    fn loss_graph(&self, g: &mut Graph<T>, batch: &SequenceBatch<T>) -> Result<([Var; 4], Vec<Var>)> {
        let d = self.cfg.latent_dim;
        if batch.obs[0].ncols() != self.obs_width {
            return Err(shape_err("rnn: batch observation width"));
        }
        let enc = self.encoder.bind(g);
        let cell = self.cell.bind(g);
        let head = self.head.bind(g);
        let zs: Vec<Var> = batch
            .obs
            .iter()
            .map(|o| {
                let x = g.constant(o.clone());
                enc.forward(g, x)
            })
            .collect();
        let mut h = g.constant(self.cell.initial_state(batch.chunks()));
        let mut errs = Vec::with_capacity(batch.len());
        for t in 0..batch.len() {
            let onehot = g.constant(one_hot_rows(&batch.actions[t]));
            let x = g.concat(&[zs[t], onehot]);
            h = cell.step(g, h, x);
            let out = head.forward(g, h);
            let pred = affine_apply_graph(g, out, zs[t], d);
            errs.push(mean_sq_error(g, pred, zs[t + 1]));
        }
        let stacked = g.concat(&errs);
        let transition = g.mean(stacked);
        let all_z = g.concat_rows(&zs);
        let views: Vec<_> = batch.obs.iter().map(|o| o.view()).collect();
        let all_obs = ndarray::concatenate(Axis(0), &views).unwrap();
        let contrastive = contrastive_graph(g, &all_obs, all_z, self.cfg.tau_s, self.cfg.tau_z);
        let parsimony = g.scalar_constant(T::zero());
        let total = g.add(transition, contrastive);
        let vars = [enc.vars(), cell.vars(), head.vars()].concat();
        Ok(([total, transition, parsimony, contrastive], vars))
    }

    pub fn loss(&self, batch: &SequenceBatch<T>) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let (v, _) = self.loss_graph(&mut g, batch)?;
        g.check()?;
        Ok(breakdown(&g, v))
    }

    pub fn gradients(&self, batch: &SequenceBatch<T>) -> Result<(LossBreakdown, Vec<Array2<T>>)> {
        let mut g = Graph::new();
        let (v, vars) = self.loss_graph(&mut g, batch)?;
        let grads = g.backward(v[0])?;
        Ok((breakdown(&g, v), collect_grads(&g, &grads, &vars)))
    }

    pub fn train_step(&mut self, batch: &SequenceBatch<T>) -> Result<LossBreakdown> {
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
        Checkpoint::new("rnn", config, self.param_names().into_iter().zip(self.params().into_iter().cloned()))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_kind("rnn")?;
        let mut cfg = RnnConfig::default();
        let mut obs_width = None;
        for (k, v) in &ckpt.config {
            if k == "obs_width" {
                obs_width = Some(parse_value(k, v)?);
            } else {
                cfg.set(k, v)?;
            }
        }
        let obs_width = obs_width.ok_or_else(|| Error::Checkpoint("missing obs_width".into()))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::new(cfg, obs_width, &mut rng)?;
        ckpt.restore_into(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> Parameters<T> for RnnModel<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        let mut v = self.encoder.params();
        v.extend(self.cell.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.cell.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        let pre = |p: &str, names: Vec<String>| names.into_iter().map(|n| format!("{p}.{n}")).collect::<Vec<_>>();
        [pre("encoder", self.encoder.param_names()), pre("cell", self.cell.param_names()), pre("head", self.head.param_names())]
            .concat()
    }
}
