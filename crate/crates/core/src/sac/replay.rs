use ndarray::Array2;
use rand::Rng;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::model::TransitionBatch;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: Action,
    pub reward: T,
    pub next_obs: Vec<T>,
    pub done: bool,
}

/// Sampled rows of the buffer, one per transition.
#[derive(Clone, Debug)]
pub struct ReplayBatch<T> {
    pub obs: Array2<T>,
    pub actions: Vec<Action>,
    pub rewards: Vec<T>,
    pub next_obs: Array2<T>,
    pub dones: Vec<T>,
}

impl<T: Scalar> ReplayBatch<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn into_transitions(self) -> Result<TransitionBatch<T>> {
        TransitionBatch::new(self.obs, self.actions, self.next_obs)
    }
}

/// Fixed-capacity ring buffer; the oldest entry is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<Transition<T>>,
    next: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition<T>> {
        self.items.get(i)
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<ReplayBatch<T>> {
        if self.items.is_empty() || batch == 0 {
            return Err(Error::InvalidArgument("cannot sample from an empty buffer".into()));
        }
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.items.len())).collect();
        let width = self.items[0].obs.len();
        let rows = |f: &dyn Fn(&Transition<T>) -> &Vec<T>| {
            Array2::from_shape_fn((batch, width), |(r, c)| f(&self.items[idx[r]])[c])
        };
        Ok(ReplayBatch {
            obs: rows(&|t| &t.obs),
            actions: idx.iter().map(|&i| self.items[i].action).collect(),
            rewards: idx.iter().map(|&i| self.items[i].reward).collect(),
            next_obs: rows(&|t| &t.next_obs),
            dones: idx.iter().map(|&i| if self.items[i].done { T::one() } else { T::zero() }).collect(),
        })
    }
}
