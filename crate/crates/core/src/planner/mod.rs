//! Cross-entropy-method planning over latent rollouts.

mod dynamics;
mod experiment;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use dynamics::{
    EpisodeBuffer, OracleDynamics, ParsimonyDynamics, PlanningDynamics, RnnDynamics, SsmDynamics,
};
pub use experiment::{
    build_dynamics, run_planning_experiment, run_planning_experiment_with, PlanningExperimentConfig, PlanningModel,
    TaskRow,
};

use crate::envs::Action;
use crate::error::{shape_err, Error, Result};
use crate::model::parse_value;
use crate::sac::{log_softmax_rows, sample_index};
use crate::scalar::Scalar;

/// Exponent of the exploration schedule.
pub const EPSILON_POWER: f64 = 2.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CemConfig {
    pub horizon: usize,
    pub iterations: usize,
    /// Candidates per iteration.
    pub samples: usize,
    pub elites: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self { horizon: 15, iterations: 10, samples: 1000, elites: 200 }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 || self.elites == 0 || self.elites > self.samples {
            return Err(Error::Config("cem: need horizon, iterations >= 1 and 1 <= elites <= samples".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("horizon".into(), self.horizon.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("elites".into(), self.elites.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "horizon" => self.horizon = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "samples" => self.samples = parse_value(key, value)?,
            "elites" => self.elites = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "cem config key", value: other.into() }),
        }
        Ok(())
    }
}

/// `sum_t exp(-|z_t - z_goal|)` over the rows of `traj`.
pub fn trajectory_return<T: Scalar>(traj: ArrayView2<'_, T>, goal: ArrayView1<'_, T>) -> Result<f64> {
    if traj.nrows() == 0 || traj.ncols() != goal.len() {
        return Err(shape_err("trajectory_return: empty trajectory or dimension mismatch"));
    }
    Ok(traj
        .rows()
        .into_iter()
        .map(|z| {
            let sq: f64 = z.iter().zip(goal).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
            (-sq.sqrt()).exp()
        })
        .sum())
}

/// Exploration rate for task `n` of `total`: `1 - ((n - 1) / total)^power`.
pub fn epsilon(n: usize, total: usize, power: f64) -> Result<f64> {
    if n == 0 || n > total {
        return Err(Error::InvalidArgument(format!("task index {n} outside 1..={total}")));
    }
    Ok(1.0 - ((n - 1) as f64 / total as f64).powf(power))
}

/// Scores of `J` rollouts, `traj[t]` holding every candidate's latent after `t + 1` steps.
fn score_rollouts<T: Scalar>(traj: &[Array2<T>], goal: ArrayView1<'_, T>) -> Vec<f64> {
    let j = traj[0].nrows();
    let mut scores = vec![0.0; j];
    for z in traj {
        for (s, row) in scores.iter_mut().zip(z.rows()) {
            let sq: f64 = row.iter().zip(goal).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
            *s += (-sq.sqrt()).exp();
        }
    }
    scores
}

/// Indices of the `k` highest scores, best first. Ties keep the lower index.
pub fn elite_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Result of one planning call.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub action: Action,
    pub sequence: Vec<Action>,
    pub score: f64,
}

/// Plans from `z0` toward `goal` and returns the first action of the best
/// sequence of the final iteration. Logits are `J x (H * |A|)`, row-major over steps.
pub fn cem_plan<T: Scalar, D: PlanningDynamics<T> + ?Sized, R: Rng + ?Sized>(
    dynamics: &D,
    z0: ArrayView1<'_, T>,
    goal: ArrayView1<'_, T>,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<Plan> {
    cfg.validate()?;
    if z0.len() != goal.len() {
        return Err(shape_err("cem_plan: start and goal dimensions differ"));
    }
    let (j, h, na) = (cfg.samples, cfg.horizon, Action::COUNT);
    let mut mean = Array2::<f64>::zeros((1, h * na));
    let starts = z0.insert_axis(Axis(0)).broadcast((j, z0.len())).expect("row broadcast").to_owned();
    let mut best = None;
    for _ in 0..cfg.iterations {
        let logits = Array2::from_shape_fn((j, h * na), |(_, c)| { let e: f64 = StandardNormal.sample(&mut *rng); mean[[0, c]] + e });
        let mut seqs = Vec::with_capacity(j);
        for row in logits.rows() {
            let steps = row.to_owned().into_shape_with_order((h, na)).expect("logit layout");
            let probs = log_softmax_rows(&steps).mapv(f64::exp);
            seqs.push(
                probs.rows().into_iter().map(|p| Action::ALL[sample_index(p, &mut *rng)]).collect::<Vec<_>>(),
            );
        }
        let traj = dynamics.rollout(&starts, &seqs)?;
        if traj.len() != h || traj.iter().any(|z| z.nrows() != j) {
            return Err(shape_err("cem_plan: rollout returned the wrong shape"));
        }
        let scores = score_rollouts(&traj, goal);
        let elites = elite_indices(&scores, cfg.elites);
        mean = logits.select(Axis(0), &elites).mean_axis(Axis(0)).expect("elites nonempty").insert_axis(Axis(0));
        let top = elites[0];
        best = Some(Plan { action: seqs[top][0], sequence: seqs[top].clone(), score: scores[top] });
    }
    let plan = best.expect("at least one iteration");
    if !plan.score.is_finite() {
        return Err(Error::NonFinite("cem_plan: rollout scores"));
    }
    Ok(plan)
}
