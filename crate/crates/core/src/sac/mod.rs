//! Discrete soft actor-critic on latent states.

mod experiment;
mod replay;

use ndarray::{Array2, ArrayView1, Axis, Zip};
use rand::Rng;

pub use experiment::{
    default_episodes, run_policy_experiment, run_policy_experiment_with, EpisodeRow, PolicyExperimentConfig,
    PolicyModel,
};
pub use replay::{ReplayBatch, ReplayBuffer, Transition};

use crate::diffmath::{adam_step, collect_grads, Activation, AdamConfig, AdamState, FeedforwardNet, Graph, Parameters, Var};
use crate::envs::{one_hot_rows, Action, EnvKind};
use crate::error::{shape_err, Error, Result};
use crate::model::{parse_list, parse_value};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    /// Entropy temperature.
    pub alpha: f64,
    /// Target smoothing constant.
    pub tau: f64,
    pub gamma: f64,
    /// Actor/critic gradient steps per episode.
    pub policy_steps: usize,
    /// Representation-model gradient steps per episode.
    pub dynamics_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub episode_len: usize,
    /// Let actor and critic gradients train the agent's own encoder.
    pub attach_encoder: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: 0.1,
            gamma: 0.99,
            policy_steps: 15,
            dynamics_steps: 15,
            batch_size: 150,
            lr: 1e-4,
            hidden: vec![800, 800],
            replay_capacity: 100_000,
            episode_len: 250,
            attach_encoder: true,
        }
    }
}

impl SacConfig {
    /// Defaults with the per-environment batch size.
    pub fn for_env(kind: EnvKind) -> Self {
        let batch_size = match kind {
            EnvKind::FourRooms => 350,
            EnvKind::Gridworld | EnvKind::Torus => 150,
        };
        Self { batch_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("sac: tau must lie in (0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("sac: gamma must lie in (0, 1)".into()));
        }
        if !(self.alpha >= 0.0) || self.batch_size == 0 || self.replay_capacity == 0 || self.episode_len == 0 {
            return Err(Error::Config("sac: alpha, batch size, capacity and episode length must be valid".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("sac: hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("alpha".into(), self.alpha.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("policy_steps".into(), self.policy_steps.to_string()),
            ("dynamics_steps".into(), self.dynamics_steps.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("hidden".into(), hidden),
            ("replay_capacity".into(), self.replay_capacity.to_string()),
            ("episode_len".into(), self.episode_len.to_string()),
            ("attach_encoder".into(), self.attach_encoder.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "policy_steps" => self.policy_steps = parse_value(key, value)?,
            "dynamics_steps" => self.dynamics_steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "replay_capacity" => self.replay_capacity = parse_value(key, value)?,
            "episode_len" => self.episode_len = parse_value(key, value)?,
            "attach_encoder" => self.attach_encoder = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "sac config key", value: other.into() }),
        }
        Ok(())
    }
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    log_softmax_rows(logits).mapv(|v| v.exp())
}

pub fn log_softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Draws an index from a probability row by inverse transform.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: ArrayView1<'_, T>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Soft Bellman targets
/// `y = r + gamma (1 - done) sum_a pi(a|z') [min(Q1', Q2')(z', a) - alpha log pi(a|z')]`.
#[allow(clippy::too_many_arguments)]
pub fn critic_target<T: Scalar>(
    rewards: &[T],
    dones: &[T],
    next_probs: &Array2<T>,
    next_log_probs: &Array2<T>,
    q1_next: &Array2<T>,
    q2_next: &Array2<T>,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<T>> {
    let n = rewards.len();
    if dones.len() != n || [next_probs, next_log_probs, q1_next, q2_next].iter().any(|a| a.nrows() != n) {
        return Err(shape_err("critic_target: batch sizes differ"));
    }
    let (g, a) = (T::lit(gamma), T::lit(alpha));
    Ok((0..n)
        .map(|i| {
            let mut soft_v = T::zero();
            for j in 0..next_probs.ncols() {
                let q = q1_next[[i, j]].min(q2_next[[i, j]]);
                soft_v += next_probs[[i, j]] * (q - a * next_log_probs[[i, j]]);
            }
            rewards[i] + g * (T::one() - dones[i]) * soft_v
        })
        .collect())
}

/// Sum of both critics' mean squared errors against fixed targets.
pub fn critic_loss_graph<T: Scalar>(g: &mut Graph<T>, q1: Var, q2: Var, actions: &[Action], targets: &[T]) -> Var {
    let mask = g.constant(one_hot_rows(actions));
    let y = g.constant(Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("targets column"));
    let mut total = None;
    for q in [q1, q2] {
        let picked = g.mul(q, mask);
        let qa = g.sum_cols(picked);
        let err = g.sub(qa, y);
        let sq = g.square(err);
        let m = g.mean(sq);
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m),
        });
    }
    total.expect("two critics")
}

/// `mean_batch sum_a pi(a|z) [alpha log pi(a|z) - q_min(z, a)]` with `q_min` held fixed.
pub fn actor_loss_graph<T: Scalar>(g: &mut Graph<T>, logits: Var, q_min: &Array2<T>, alpha: f64) -> Var {
    let logp = g.log_softmax(logits);
    let p = g.exp(logp);
    let scaled = g.scale(logp, T::lit(alpha));
    let q = g.constant(q_min.clone());
    let inner = g.sub(scaled, q);
    let weighted = g.mul(p, inner);
    let per_row = g.sum_cols(weighted);
    g.mean(per_row)
}

/// `target <- tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update<T: Scalar>(target: &mut FeedforwardNet<T>, source: &FeedforwardNet<T>, tau: f64) -> Result<()> {
    if target.param_shapes() != source.param_shapes() {
        return Err(shape_err("soft_update: network shapes differ"));
    }
    let t = T::lit(tau);
    for (dst, src) in target.params_mut().into_iter().zip(source.params()) {
        Zip::from(dst).and(src).for_each(|d, &s| *d = t * s + (T::one() - t) * *d);
    }
    Ok(())
}

/// Mean losses of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SacLosses {
    pub actor: f64,
    pub critic: f64,
}

/// Actor, two critics with their targets, and optionally an encoder of its own.
#[derive(Clone, Debug)]
pub struct SacAgent<T> {
    cfg: SacConfig,
    latent_dim: usize,
    encoder: Option<FeedforwardNet<T>>,
    actor: FeedforwardNet<T>,
    critics: [FeedforwardNet<T>; 2],
    targets: [FeedforwardNet<T>; 2],
    actor_adam: AdamState<T>,
    critic_adam: AdamState<T>,
    encoder_adam: AdamState<T>,
}

impl<T: Scalar> SacAgent<T> {
    /// `encoder`, when given, maps observations to the `latent_dim` inputs and is
    /// trained by actor and critic gradients if `attach_encoder` is set.
    pub fn new<R: Rng + ?Sized>(
        cfg: SacConfig,
        latent_dim: usize,
        encoder: Option<FeedforwardNet<T>>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(e) = &encoder {
            if e.output_width() != latent_dim {
                return Err(shape_err("sac: encoder output width differs from latent_dim"));
            }
        }
        let sizes: Vec<usize> = std::iter::once(latent_dim)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(Action::COUNT))
            .collect();
        let actor = FeedforwardNet::new(&sizes, Activation::Identity, rng)?;
        let critics = [FeedforwardNet::new(&sizes, Activation::Identity, rng)?, FeedforwardNet::new(&sizes, Activation::Identity, rng)?];
        let targets = critics.clone();
        Ok(Self {
            cfg,
            latent_dim,
            encoder,
            actor,
            critics,
            targets,
            actor_adam: AdamState::new(),
            critic_adam: AdamState::new(),
            encoder_adam: AdamState::new(),
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn actor(&self) -> &FeedforwardNet<T> {
        &self.actor
    }

    pub fn critics(&self) -> &[FeedforwardNet<T>; 2] {
        &self.critics
    }

    pub fn targets(&self) -> &[FeedforwardNet<T>; 2] {
        &self.targets
    }

    pub fn encoder(&self) -> Option<&FeedforwardNet<T>> {
        self.encoder.as_ref()
    }

    pub fn critics_mut(&mut self) -> &mut [FeedforwardNet<T>; 2] {
        &mut self.critics
    }

    pub fn actor_mut(&mut self) -> &mut FeedforwardNet<T> {
        &mut self.actor
    }

    /// Latents from the agent's own encoder.
    pub fn encode(&self, obs: &Array2<T>) -> Result<Array2<T>> {
        match &self.encoder {
            Some(e) => e.forward(obs),
            None => Err(Error::InvalidArgument("sac agent has no encoder".into())),
        }
    }

    pub fn action_probs(&self, z: &Array2<T>) -> Result<Array2<T>> {
        Ok(softmax_rows(&self.actor.forward(z)?))
    }

    pub fn act<R: Rng + ?Sized>(&self, z: ArrayView1<'_, T>, rng: &mut R) -> Result<Action> {
        let p = self.action_probs(&z.to_owned().insert_axis(Axis(0)))?;
        Action::from_index(sample_index(p.row(0), rng))
    }

    fn targets_for(&self, batch: &ReplayBatch<T>, next_z: &Array2<T>) -> Result<Vec<T>> {
        let logits = self.actor.forward(next_z)?;
        let q1 = self.targets[0].forward(next_z)?;
        let q2 = self.targets[1].forward(next_z)?;
        critic_target(
            &batch.rewards,
            &batch.dones,
            &softmax_rows(&logits),
            &log_softmax_rows(&logits),
            &q1,
            &q2,
            self.cfg.gamma,
            self.cfg.alpha,
        )
    }

    fn latent_input(&self, g: &mut Graph<T>, obs: &Array2<T>, given: Option<&Array2<T>>) -> Result<(Var, Vec<Var>)> {
        match (&self.encoder, given) {
            (_, Some(z)) => Ok((g.constant(z.clone()), Vec::new())),
            (Some(e), None) => {
                let x = g.constant(obs.clone());
                let b = if self.cfg.attach_encoder { e.bind(g) } else { e.bind_frozen(g) };
                let vars = if self.cfg.attach_encoder { b.vars().to_vec() } else { Vec::new() };
                Ok((b.forward(g, x), vars))
            }
            (None, None) => Err(Error::InvalidArgument("sac update needs latents or an encoder".into())),
        }
    }

    /// Critic loss and gradients (critic parameters first, then encoder).
    pub fn critic_gradients(
        &self,
        batch: &ReplayBatch<T>,
        latents: Option<(&Array2<T>, &Array2<T>)>,
    ) -> Result<(f64, Vec<Array2<T>>, Vec<Array2<T>>)> {
        let next_z = match latents {
            Some((_, nz)) => nz.clone(),
            None => self.encode(&batch.next_obs)?,
        };
        let y = self.targets_for(batch, &next_z)?;
        let mut g = Graph::new();
        let (z, enc_vars) = self.latent_input(&mut g, &batch.obs, latents.map(|l| l.0))?;
        let c1 = self.critics[0].bind(&mut g);
        let c2 = self.critics[1].bind(&mut g);
        let q1 = c1.forward(&mut g, z);
        let q2 = c2.forward(&mut g, z);
        let loss = critic_loss_graph(&mut g, q1, q2, &batch.actions, &y);
        let grads = g.backward(loss)?;
        let critic_vars = [c1.vars(), c2.vars()].concat();
        Ok((g.scalar(loss).as_f64(), collect_grads(&g, &grads, &critic_vars), collect_grads(&g, &grads, &enc_vars)))
    }

    /// Actor loss and gradients (actor parameters first, then encoder).
    pub fn actor_gradients(
        &self,
        batch: &ReplayBatch<T>,
        latents: Option<(&Array2<T>, &Array2<T>)>,
    ) -> Result<(f64, Vec<Array2<T>>, Vec<Array2<T>>)> {
        let z_plain = match latents {
            Some((z, _)) => z.clone(),
            None => self.encode(&batch.obs)?,
        };
        let q1 = self.critics[0].forward(&z_plain)?;
        let q2 = self.critics[1].forward(&z_plain)?;
        let q_min = Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
        let mut g = Graph::new();
        let (z, enc_vars) = self.latent_input(&mut g, &batch.obs, latents.map(|l| l.0))?;
        let a = self.actor.bind(&mut g);
        let logits = a.forward(&mut g, z);
        let loss = actor_loss_graph(&mut g, logits, &q_min, self.cfg.alpha);
        let grads = g.backward(loss)?;
        Ok((g.scalar(loss).as_f64(), collect_grads(&g, &grads, a.vars()), collect_grads(&g, &grads, &enc_vars)))
    }

    /// One critic step, one actor step, then the soft target update.
    /// `latents` supplies detached `(z, z')` for agents without their own encoder.
    pub fn update(&mut self, batch: &ReplayBatch<T>, latents: Option<(&Array2<T>, &Array2<T>)>) -> Result<SacLosses> {
        let cfg = AdamConfig::with_lr(self.cfg.lr);
        let (critic, c_grads, ce_grads) = self.critic_gradients(batch, latents)?;
        let (actor, a_grads, ae_grads) = self.actor_gradients(batch, latents)?;
        let [c1, c2] = &mut self.critics;
        let mut params: Vec<&mut Array2<T>> = c1.params_mut();
        params.extend(c2.params_mut());
        adam_step(params, &c_grads, &mut self.critic_adam, &cfg)?;
        adam_step(self.actor.params_mut(), &a_grads, &mut self.actor_adam, &cfg)?;
        if let (Some(enc), false) = (self.encoder.as_mut(), ce_grads.is_empty()) {
            let summed: Vec<Array2<T>> = ce_grads.iter().zip(&ae_grads).map(|(a, b)| a + b).collect();
            adam_step(enc.params_mut(), &summed, &mut self.encoder_adam, &cfg)?;
        }
        for k in 0..2 {
            soft_update(&mut self.targets[k], &self.critics[k], self.cfg.tau)?;
        }
        Ok(SacLosses { actor, critic })
    }
}

#[cfg(test)]
mod tests;
