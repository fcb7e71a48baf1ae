use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{RnnModel, SequenceBatch, SsmModel};
use crate::envs::{Action, EnvInstance, EnvKind, GridPos};
use crate::error::{shape_err, Error, Result};
use crate::model::{ParsimonyModel, TransitionBatch};
use crate::scalar::Scalar;

/// Observation rows of one episode (`L + 1`) and its actions (`L`).
#[derive(Clone, Debug)]
struct Episode<T> {
    obs: Array2<T>,
    actions: Vec<Action>,
}

/// Whole episodes, kept in order so recurrent models can train on chunks.
#[derive(Clone, Debug, Default)]
pub struct EpisodeBuffer<T> {
    episodes: Vec<Episode<T>>,
}

impl<T: Scalar> EpisodeBuffer<T> {
    pub fn new() -> Self {
        Self { episodes: Vec::new() }
    }

    pub fn push(&mut self, obs: Array2<T>, actions: Vec<Action>) -> Result<()> {
        if actions.is_empty() || obs.nrows() != actions.len() + 1 {
            return Err(shape_err("episode needs one more observation than actions"));
        }
        if let Some(first) = self.episodes.first() {
            if first.obs.ncols() != obs.ncols() {
                return Err(shape_err("episode observation width differs from the buffer"));
            }
        }
        self.episodes.push(Episode { obs, actions });
        Ok(())
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total stored transitions.
    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.actions.len()).sum()
    }

    /// Uniform transitions with replacement.
    pub fn sample_transitions<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<TransitionBatch<T>> {
        let total = self.transitions();
        if total == 0 || batch == 0 {
            return Err(Error::InvalidArgument("cannot sample from an empty episode buffer".into()));
        }
        let width = self.episodes[0].obs.ncols();
        let mut obs = Array2::zeros((batch, width));
        let mut next = Array2::zeros((batch, width));
        let mut actions = Vec::with_capacity(batch);
        for r in 0..batch {
            let (e, t) = self.locate(rng.random_range(0..total));
            let ep = &self.episodes[e];
            obs.row_mut(r).assign(&ep.obs.row(t));
            next.row_mut(r).assign(&ep.obs.row(t + 1));
            actions.push(ep.actions[t]);
        }
        TransitionBatch::new(obs, actions, next)
    }

    /// `chunks` windows of `len` consecutive transitions, start uniform over valid windows.
    pub fn sample_chunks<R: Rng + ?Sized>(&self, chunks: usize, len: usize, rng: &mut R) -> Result<SequenceBatch<T>> {
        let windows: Vec<(usize, usize)> = self
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..(ep.actions.len() + 1).saturating_sub(len)).map(move |t| (e, t)))
            .collect();
        if windows.is_empty() || chunks == 0 || len == 0 {
            return Err(Error::InvalidArgument(format!("no episode holds {len} transitions")));
        }
        let picks: Vec<(usize, usize)> = (0..chunks).map(|_| windows[rng.random_range(0..windows.len())]).collect();
        let width = self.episodes[0].obs.ncols();
        let obs = (0..=len)
            .map(|k| Array2::from_shape_fn((chunks, width), |(r, c)| self.episodes[picks[r].0].obs[[picks[r].1 + k, c]]))
            .collect();
        let actions = (0..len).map(|k| picks.iter().map(|&(e, t)| self.episodes[e].actions[t + k]).collect()).collect();
        SequenceBatch::new(obs, actions)
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (e, ep) in self.episodes.iter().enumerate() {
            if i < ep.actions.len() {
                return (e, i);
            }
            i -= ep.actions.len();
        }
        unreachable!("index below the transition count")
    }
}

/// A latent model the planner can roll forward.
pub trait PlanningDynamics<T: Scalar> {
    fn latent_dim(&self) -> usize;

    /// Latents for observation rows; `cells` gives the matching true positions.
    fn encode(&self, obs: &Array2<T>, cells: &[GridPos]) -> Result<Array2<T>>;

    /// Open-loop rollouts; element `t` holds every row's latent after `t + 1` steps.
    fn rollout(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>>;

    /// Called at the start of every episode.
    fn reset_context(&mut self) {}

    /// Called after each executed step with the latent it was taken from.
    fn advance_context(&mut self, _z: ArrayView1<'_, T>, _action: Action) -> Result<()> {
        Ok(())
    }

    /// Gradient steps on the buffer; returns the mean total loss.
    fn fit(&mut self, _buffer: &EpisodeBuffer<T>, _steps: usize, _batch: usize, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(0.0)
    }
}

/// True transition rules on true coordinates. Gridworlds use `(x, y)`; the torus
/// embeds each axis on a circle whose neighbouring cells sit one unit apart.
#[derive(Clone, Debug)]
pub struct OracleDynamics<T> {
    env: EnvInstance,
    coords: Array2<T>,
    lookup: HashMap<Vec<i64>, GridPos>,
}

fn coord_key<T: Scalar>(z: ArrayView1<'_, T>) -> Vec<i64> {
    z.iter().map(|v| (v.as_f64() * 1e4).round() as i64).collect()
}

impl<T: Scalar> OracleDynamics<T> {
    pub fn new(env: &EnvInstance) -> Self {
        let side = env.side();
        let cells: Vec<GridPos> = env.cells().collect();
        let coords = match env.kind() {
            EnvKind::Torus => {
                let r = 0.5 / (std::f64::consts::PI / side as f64).sin();
                let ang = |k: usize| 2.0 * std::f64::consts::PI * k as f64 / side as f64;
                Array2::from_shape_fn((cells.len(), 4), |(i, c)| {
                    let p = cells[i];
                    T::lit(match c {
                        0 => r * ang(p.x).cos(),
                        1 => r * ang(p.x).sin(),
                        2 => r * ang(p.y).cos(),
                        _ => r * ang(p.y).sin(),
                    })
                })
            }
            _ => Array2::from_shape_fn((cells.len(), 2), |(i, c)| {
                T::lit(if c == 0 { cells[i].x as f64 } else { cells[i].y as f64 })
            }),
        };
        let lookup = cells.iter().enumerate().map(|(i, &p)| (coord_key(coords.row(i)), p)).collect();
        Self { env: env.clone(), coords, lookup }
    }

    pub fn coords(&self, pos: GridPos) -> ArrayView1<'_, T> {
        self.coords.row(self.env.cell_index(pos))
    }

    fn cell_of(&self, z: ArrayView1<'_, T>) -> Result<GridPos> {
        self.lookup
            .get(&coord_key(z))
            .copied()
            .ok_or_else(|| Error::InvalidArgument("oracle latent matches no cell".into()))
    }
}

impl<T: Scalar> PlanningDynamics<T> for OracleDynamics<T> {
    fn latent_dim(&self) -> usize {
        self.coords.ncols()
    }

    fn encode(&self, _obs: &Array2<T>, cells: &[GridPos]) -> Result<Array2<T>> {
        for &p in cells {
            self.env.validate(p)?;
        }
        let idx: Vec<usize> = cells.iter().map(|&p| self.env.cell_index(p)).collect();
        Ok(self.coords.select(Axis(0), &idx))
    }

    fn rollout(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        let horizon = actions.first().map_or(0, |a| a.len());
        if horizon == 0 || actions.len() != z0.nrows() || actions.iter().any(|a| a.len() != horizon) {
            return Err(Error::InvalidArgument("oracle rollout: action sequences must share a positive length".into()));
        }
        let mut pos: Vec<GridPos> = z0.rows().into_iter().map(|z| self.cell_of(z)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            for (p, seq) in pos.iter_mut().zip(actions) {
                *p = self.env.next_pos(*p, seq[t]);
            }
            let idx: Vec<usize> = pos.iter().map(|&p| self.env.cell_index(p)).collect();
            out.push(self.coords.select(Axis(0), &idx));
        }
        Ok(out)
    }
}

pub struct ParsimonyDynamics<T>(pub ParsimonyModel<T>);

impl<T: Scalar> PlanningDynamics<T> for ParsimonyDynamics<T> {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn encode(&self, obs: &Array2<T>, _cells: &[GridPos]) -> Result<Array2<T>> {
        self.0.encode(obs)
    }

    fn rollout(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        self.0.rollout_batch(z0, actions)
    }

    fn fit(&mut self, buffer: &EpisodeBuffer<T>, steps: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.0.train_step(&buffer.sample_transitions(batch, rng)?)?.total;
        }
        Ok(total / steps.max(1) as f64)
    }
}

pub struct SsmDynamics<T>(pub SsmModel<T>);

impl<T: Scalar> PlanningDynamics<T> for SsmDynamics<T> {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn encode(&self, obs: &Array2<T>, _cells: &[GridPos]) -> Result<Array2<T>> {
        self.0.encode(obs)
    }

    fn rollout(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        self.0.rollout_batch(z0, actions)
    }

    fn fit(&mut self, buffer: &EpisodeBuffer<T>, steps: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.0.train_step(&buffer.sample_transitions(batch, rng)?)?.total;
        }
        Ok(total / steps.max(1) as f64)
    }
}

/// Recurrent dynamics; the context is the recurrent state advanced along the
/// executed trajectory, and every rollout starts from it.
pub struct RnnDynamics<T> {
    pub model: RnnModel<T>,
    context: Array2<T>,
}

impl<T: Scalar> RnnDynamics<T> {
    pub fn new(model: RnnModel<T>) -> Self {
        let context = model.initial_state(1);
        Self { model, context }
    }
}

impl<T: Scalar> PlanningDynamics<T> for RnnDynamics<T> {
    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn encode(&self, obs: &Array2<T>, _cells: &[GridPos]) -> Result<Array2<T>> {
        self.model.encode(obs)
    }

    fn rollout(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        self.model.rollout_batch(&self.context, z0, actions)
    }

    fn reset_context(&mut self) {
        self.context = self.model.initial_state(1);
    }

    fn advance_context(&mut self, z: ArrayView1<'_, T>, action: Action) -> Result<()> {
        let (h, _) = self.model.step(&self.context, &z.to_owned().insert_axis(Axis(0)), &[action])?;
        self.context = h;
        Ok(())
    }

    /// Trains on `batch / chunk_len` chunks per step, each starting from a reset state.
    fn fit(&mut self, buffer: &EpisodeBuffer<T>, steps: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let len = self.model.config().chunk_len;
        let chunks = (batch / len).max(1);
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.model.train_step(&buffer.sample_chunks(chunks, len, rng)?)?.total;
        }
        Ok(total / steps.max(1) as f64)
    }
}
