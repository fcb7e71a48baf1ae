use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;

use super::{cem_plan, epsilon, CemConfig, EpisodeBuffer, PlanningDynamics, EPSILON_POWER};
use super::{OracleDynamics, ParsimonyDynamics, RnnDynamics, SsmDynamics};
use crate::baselines::{RnnConfig, RnnModel, SsmConfig, SsmModel};
use crate::envs::{build_env, Action, EnvConfig, EnvInstance, EnvKind, GridPos, DEFAULT_OBS_DIM};
use crate::error::{Error, Result};
use crate::harness::seeds::{streams, SeedStreams};
use crate::model::{ParsimonyConfig, ParsimonyModel};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanningModel {
    Parsimony,
    Rnn,
    Ssm,
    /// True coordinates and transition rules; never trained.
    Oracle,
}

impl PlanningModel {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanningModel::Parsimony => "parsimony",
            PlanningModel::Rnn => "rnn",
            PlanningModel::Ssm => "ssm",
            PlanningModel::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PlanningModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlanningModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parsimony" => Ok(PlanningModel::Parsimony),
            "rnn" => Ok(PlanningModel::Rnn),
            "ssm" => Ok(PlanningModel::Ssm),
            "oracle" => Ok(PlanningModel::Oracle),
            other => Err(Error::Unknown { what: "planning model", value: other.into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanningExperimentConfig {
    pub env: EnvKind,
    pub obs_dim: usize,
    pub model: PlanningModel,
    pub tasks: usize,
    pub steps: usize,
    pub cem: CemConfig,
    pub epsilon_power: f64,
    /// Replaces the schedule with a fixed rate when set.
    pub epsilon_override: Option<f64>,
    pub dynamics_steps: usize,
    pub dynamics_batch: usize,
    pub parsimony: ParsimonyConfig,
    pub rnn: RnnConfig,
    pub ssm: SsmConfig,
}

impl PlanningExperimentConfig {
    pub fn new(env: EnvKind, model: PlanningModel) -> Self {
        Self {
            env,
            obs_dim: DEFAULT_OBS_DIM,
            model,
            tasks: 30,
            steps: 50,
            cem: CemConfig::default(),
            epsilon_power: EPSILON_POWER,
            epsilon_override: None,
            dynamics_steps: 50,
            dynamics_batch: 128,
            parsimony: ParsimonyConfig::default(),
            rnn: RnnConfig::default(),
            ssm: SsmConfig::default(),
        }
    }
}

/// One CSV row per task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskRow {
    pub seed: u64,
    pub task: usize,
    /// Cumulative environment reward.
    pub score: f64,
    pub epsilon: f64,
    pub bfs_distance: usize,
    /// Occupies the goal after the last step.
    pub solved: bool,
    /// Mean of the model's own exp-distance return over executed steps.
    pub latent_return: f64,
}

impl TaskRow {
    pub const HEADER: &'static str = "seed,task,score,epsilon,bfs_distance";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{:.6},{}", self.seed, self.task, self.score, self.epsilon, self.bfs_distance)
    }
}

pub fn build_dynamics<T: Scalar, R: Rng + ?Sized>(
    cfg: &PlanningExperimentConfig,
    env: &EnvInstance,
    rng: &mut R,
) -> Result<Box<dyn PlanningDynamics<T>>> {
    let width = env.observation_width();
    Ok(match cfg.model {
        PlanningModel::Parsimony => Box::new(ParsimonyDynamics(ParsimonyModel::new(cfg.parsimony.clone(), width, rng)?)),
        PlanningModel::Rnn => Box::new(RnnDynamics::new(RnnModel::new(cfg.rnn.clone(), width, rng)?)),
        PlanningModel::Ssm => Box::new(SsmDynamics(SsmModel::new(cfg.ssm.clone(), width, rng)?)),
        PlanningModel::Oracle => Box::new(OracleDynamics::new(env)),
    })
}

pub fn run_planning_experiment<T: Scalar>(cfg: &PlanningExperimentConfig, seed: u64) -> Result<Vec<TaskRow>> {
    run_planning_experiment_with::<T>(cfg, seed, &mut |_| {})
}

/// Runs every task in order, calling `on_task` after each.
pub fn run_planning_experiment_with<T: Scalar>(
    cfg: &PlanningExperimentConfig,
    seed: u64,
    on_task: &mut dyn FnMut(&TaskRow),
) -> Result<Vec<TaskRow>> {
    cfg.cem.validate()?;
    if cfg.tasks == 0 || cfg.steps == 0 {
        return Err(Error::Config("planning: tasks and steps must be positive".into()));
    }
    let seeds = SeedStreams::new(seed);
    let env = build_env(&EnvConfig { obs_dim: cfg.obs_dim, ..EnvConfig::new(cfg.env, seeds.seed(streams::ENV)) })?;
    let table: Array2<T> = env.observation_table();
    let cells: Vec<GridPos> = env.cells().collect();

    let mut dynamics = build_dynamics::<T, _>(cfg, &env, &mut seeds.rng(streams::INIT))?;
    let mut task_rng = seeds.rng(streams::TASKS);
    let mut act_rng = seeds.rng(streams::ACTION);
    let mut cem_rng = seeds.rng(streams::CEM);
    let mut replay_rng = seeds.rng(streams::REPLAY);
    let mut buffer = EpisodeBuffer::new();

    let mut rows = Vec::with_capacity(cfg.tasks);
    for n in 1..=cfg.tasks {
        let start = cells[task_rng.random_range(0..cells.len())];
        let goal = loop {
            let g = cells[task_rng.random_range(0..cells.len())];
            if g != start {
                break g;
            }
        };
        let task_env = env.with_endpoints(start, goal)?;
        let eps = match cfg.epsilon_override {
            Some(e) => e,
            None => epsilon(n, cfg.tasks, cfg.epsilon_power)?,
        };

        // The encoder only changes in `fit`, so one pass per task covers every step.
        let latents = dynamics.encode(&table, &cells)?;
        let z_goal = latents.row(env.cell_index(goal)).to_owned();
        dynamics.reset_context();

        let mut pos = start;
        let mut score = 0.0;
        let mut latent_return = 0.0;
        let mut visited = vec![env.cell_index(pos)];
        let mut actions = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            let z = latents.row(env.cell_index(pos));
            let action = if act_rng.random::<f64>() < eps {
                Action::ALL[act_rng.random_range(0..Action::COUNT)]
            } else {
                cem_plan(dynamics.as_ref(), z, z_goal.view(), &cfg.cem, &mut cem_rng)?.action
            };
            dynamics.advance_context(z, action)?;
            let step = task_env.step(pos, action)?;
            score += step.reward;
            pos = step.next;
            let dz: f64 = latents
                .row(env.cell_index(pos))
                .iter()
                .zip(&z_goal)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                .sum();
            latent_return += (-dz.sqrt()).exp() / cfg.steps as f64;
            visited.push(env.cell_index(pos));
            actions.push(action);
        }
        buffer.push(table.select(Axis(0), &visited), actions)?;
        if cfg.model != PlanningModel::Oracle {
            dynamics.fit(&buffer, cfg.dynamics_steps, cfg.dynamics_batch, &mut replay_rng)?;
        }
        let row = TaskRow {
            seed,
            task: n,
            score,
            epsilon: eps,
            bfs_distance: env.shortest_path(start, goal)?,
            solved: pos == goal,
            latent_return,
        };
        if !(-(cfg.steps as f64)..=cfg.steps as f64).contains(&score) {
            return Err(Error::InvalidArgument(format!("task score {score} outside its bounds")));
        }
        on_task(&row);
        rows.push(row);
    }
    Ok(rows)
}
