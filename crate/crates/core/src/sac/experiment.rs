use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use super::{ReplayBuffer, SacAgent, SacConfig, SacLosses, Transition};
use crate::baselines::{VaeConfig, VaeModel};
use crate::diffmath::{Activation, FeedforwardNet};
use crate::envs::{EnvConfig, EnvKind, DEFAULT_OBS_DIM};
use crate::error::{Error, Result};
use crate::harness::seeds::{streams, SeedStreams};
use crate::model::{LossBreakdown, ParsimonyConfig, ParsimonyModel};
use crate::scalar::Scalar;

/// Where the policy's latent states come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyModel {
    Parsimony,
    Vae,
    /// An encoder trained only by actor and critic gradients.
    Baseline,
}

impl PolicyModel {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyModel::Parsimony => "parsimony",
            PolicyModel::Vae => "vae",
            PolicyModel::Baseline => "baseline",
        }
    }
}

impl fmt::Display for PolicyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parsimony" => Ok(PolicyModel::Parsimony),
            "vae" => Ok(PolicyModel::Vae),
            "baseline" => Ok(PolicyModel::Baseline),
            other => Err(Error::Unknown { what: "policy model", value: other.into() }),
        }
    }
}

/// Episodes per environment.
pub fn default_episodes(kind: EnvKind) -> usize {
    match kind {
        EnvKind::Gridworld => 200,
        EnvKind::Torus => 250,
        EnvKind::FourRooms => 500,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyExperimentConfig {
    pub env: EnvKind,
    pub obs_dim: usize,
    pub model: PolicyModel,
    pub episodes: usize,
    pub sac: SacConfig,
    pub parsimony: ParsimonyConfig,
    pub vae: VaeConfig,
}

impl PolicyExperimentConfig {
    pub fn new(env: EnvKind, model: PolicyModel) -> Self {
        Self {
            env,
            obs_dim: DEFAULT_OBS_DIM,
            model,
            episodes: default_episodes(env),
            sac: SacConfig::for_env(env),
            parsimony: ParsimonyConfig::default(),
            vae: VaeConfig::default(),
        }
    }
}

/// One CSV row per episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub dyn_loss_total: f64,
    pub dyn_loss_parsimony: f64,
}

impl EpisodeRow {
    pub const HEADER: &'static str = "seed,episode,return,actor_loss,critic_loss,dyn_loss_total,dyn_loss_parsimony";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            self.seed,
            self.episode,
            self.ret,
            self.actor_loss,
            self.critic_loss,
            self.dyn_loss_total,
            self.dyn_loss_parsimony
        )
    }
}

enum Representation<T> {
    Parsimony(ParsimonyModel<T>),
    Vae(VaeModel<T>),
    Baseline,
}

pub fn run_policy_experiment<T: Scalar>(cfg: &PolicyExperimentConfig, seed: u64) -> Result<Vec<EpisodeRow>> {
    run_policy_experiment_with::<T>(cfg, seed, &mut |_| {})
}

/// Runs the experiment, calling `on_episode` after every episode.
pub fn run_policy_experiment_with<T: Scalar>(
    cfg: &PolicyExperimentConfig,
    seed: u64,
    on_episode: &mut dyn FnMut(&EpisodeRow),
) -> Result<Vec<EpisodeRow>> {
    let seeds = SeedStreams::new(seed);
    let env = crate::envs::build_env(&EnvConfig { obs_dim: cfg.obs_dim, ..EnvConfig::new(cfg.env, seeds.seed(streams::ENV)) })?;
    let width = env.observation_width();
    let table: Array2<T> = env.observation_table();

    let mut init = seeds.rng(streams::INIT);
    let mut act_rng = seeds.rng(streams::ACTION);
    let mut replay_rng = seeds.rng(streams::REPLAY);
    let mut noise_rng = seeds.rng(streams::NOISE);

    let (mut repr, latent_dim, encoder) = match cfg.model {
        PolicyModel::Parsimony => {
            let m = ParsimonyModel::new(cfg.parsimony.clone(), width, &mut init)?;
            let d = m.latent_dim();
            (Representation::Parsimony(m), d, None)
        }
        PolicyModel::Vae => {
            let m = VaeModel::new(cfg.vae.clone(), width, &mut init)?;
            let d = m.latent_dim();
            (Representation::Vae(m), d, None)
        }
        PolicyModel::Baseline => {
            let d = cfg.parsimony.latent_dim;
            let sizes: Vec<usize> = std::iter::once(width)
                .chain(cfg.parsimony.hidden.iter().copied())
                .chain(std::iter::once(d))
                .collect();
            let enc = FeedforwardNet::new(&sizes, Activation::Identity, &mut init)?;
            (Representation::Baseline, d, Some(enc))
        }
    };
    let mut agent = SacAgent::new(cfg.sac.clone(), latent_dim, encoder, &mut init)?;
    let mut replay = ReplayBuffer::new(cfg.sac.replay_capacity)?;
    let dyn_batch = match cfg.model {
        PolicyModel::Parsimony => cfg.parsimony.batch_size,
        PolicyModel::Vae => cfg.vae.batch_size,
        PolicyModel::Baseline => 0,
    };

    let mut rows = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let latents = match &repr {
            Representation::Parsimony(m) => m.encode(&table)?,
            Representation::Vae(m) => m.encode(&table)?,
            Representation::Baseline => agent.encode(&table)?,
        };
        let mut pos = env.start();
        let mut ret = 0.0;
        for _ in 0..cfg.sac.episode_len {
            let here = env.cell_index(pos);
            let action = agent.act(latents.row(here), &mut act_rng)?;
            let step = env.step(pos, action)?;
            ret += step.reward;
            replay.push(Transition {
                obs: table.row(here).to_vec(),
                action,
                reward: T::lit(step.reward),
                next_obs: table.row(env.cell_index(step.next)).to_vec(),
                // Episodes end only by timeout, so targets always bootstrap.
                done: false,
            });
            pos = step.next;
        }

        let mut dyn_loss = LossBreakdown::default();
        if dyn_batch > 0 && replay.len() >= 2 {
            for _ in 0..cfg.sac.dynamics_steps {
                let batch = replay.sample(dyn_batch, &mut replay_rng)?.into_transitions()?;
                let l = match &mut repr {
                    Representation::Parsimony(m) => m.train_step(&batch)?,
                    Representation::Vae(m) => m.train_step(&batch, &mut noise_rng)?,
                    Representation::Baseline => unreachable!("baseline has no dynamics model"),
                };
                dyn_loss.total += l.total / cfg.sac.dynamics_steps as f64;
                dyn_loss.parsimony += l.parsimony / cfg.sac.dynamics_steps as f64;
            }
        }

        let mut losses = SacLosses::default();
        if replay.len() >= cfg.sac.batch_size {
            for _ in 0..cfg.sac.policy_steps {
                let batch = replay.sample(cfg.sac.batch_size, &mut replay_rng)?;
                let l = match &repr {
                    Representation::Parsimony(m) => {
                        let (z, nz) = (m.encode(&batch.obs)?, m.encode(&batch.next_obs)?);
                        agent.update(&batch, Some((&z, &nz)))?
                    }
                    Representation::Vae(m) => {
                        let (z, nz) = (m.encode(&batch.obs)?, m.encode(&batch.next_obs)?);
                        agent.update(&batch, Some((&z, &nz)))?
                    }
                    Representation::Baseline => agent.update(&batch, None)?,
                };
                losses.actor += l.actor / cfg.sac.policy_steps as f64;
                losses.critic += l.critic / cfg.sac.policy_steps as f64;
            }
        }
        let row = EpisodeRow {
            seed,
            episode,
            ret,
            actor_loss: losses.actor,
            critic_loss: losses.critic,
            dyn_loss_total: dyn_loss.total,
            dyn_loss_parsimony: dyn_loss.parsimony,
        };
        if !ret.is_finite() || !losses.actor.is_finite() || !losses.critic.is_finite() || !dyn_loss.total.is_finite() {
            return Err(Error::NonFinite("policy experiment diverged"));
        }
        on_episode(&row);
        rows.push(row);
    }
    Ok(rows)
}
