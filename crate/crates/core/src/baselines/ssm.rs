use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::vae::breakdown;
use super::{affine_apply, affine_apply_graph, affine_param_count};
use crate::checkpoint::Checkpoint;
use crate::diffmath::nn::SIGMA_FLOOR;
use crate::diffmath::special::gaussian_kl_graph;
use crate::diffmath::{
    adam_step, collect_grads, Activation, AdamConfig, AdamState, BoundNet, FeedforwardNet, Graph, Parameters, Var,
};
use crate::envs::{one_hot_rows, Action};
use crate::error::{shape_err, Error, Result};
use crate::model::loss::contrastive_graph;
use crate::model::{parse_list, parse_value, LossBreakdown, TransitionBatch};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SsmConfig {
    pub latent_dim: usize,
    /// Weight of the KL between encoded and predicted next-latent distributions.
    pub beta: f64,
    pub hidden: Vec<usize>,
    pub tau_s: f64,
    pub tau_z: f64,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self { latent_dim: 15, beta: 1.0, hidden: vec![1200, 1200], tau_s: 100.0, tau_z: 0.1, lr: 1e-3, batch_size: 128 }
    }
}

impl SsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::Config("ssm: widths and batch size must be positive".into()));
        }
        if !(self.beta >= 0.0) || !(self.tau_s > 0.0 && self.tau_z > 0.0) {
            return Err(Error::Config("ssm: beta must be non-negative and taus positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("hidden".into(), hidden),
            ("tau_s".into(), self.tau_s.to_string()),
            ("tau_z".into(), self.tau_z.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "tau_s" => self.tau_s = parse_value(key, value)?,
            "tau_z" => self.tau_z = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "ssm config key", value: other.into() }),
        }
        Ok(())
    }
}

/// Gaussian latent states with an affine mean transition and a learned
/// predictive scale; the contrastive term stands in for reconstruction.
#[derive(Clone, Debug)]
pub struct SsmModel<T> {
    cfg: SsmConfig,
    obs_width: usize,
    encoder: FeedforwardNet<T>,
    transition: FeedforwardNet<T>,
    adam: AdamState<T>,
}

impl<T: Scalar> SsmModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: SsmConfig, obs_width: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let sizes = |i: usize, o: usize| -> Vec<usize> {
            std::iter::once(i).chain(cfg.hidden.iter().copied()).chain(std::iter::once(o)).collect()
        };
        let encoder = FeedforwardNet::new(&sizes(obs_width, 2 * d), Activation::Identity, rng)?;
        let mut transition =
            FeedforwardNet::new(&sizes(d + Action::COUNT, affine_param_count(d) + d), Activation::Identity, rng)?;
        transition.scale_output_layer(T::lit(0.1));
        Ok(Self { cfg, obs_width, encoder, transition, adam: AdamState::new() })
    }

    pub fn config(&self) -> &SsmConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    /// Posterior means and standard deviations.
    pub fn encode_gaussian(&self, obs: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
        if obs.ncols() != self.obs_width {
            return Err(shape_err(format!("ssm: observation width {} expected {}", obs.ncols(), self.obs_width)));
        }
        let out = self.encoder.forward(obs)?;
        let d = self.cfg.latent_dim;
        let std = out.slice(s![.., d..]).mapv(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p() + T::lit(SIGMA_FLOOR));
        Ok((out.slice(s![.., ..d]).to_owned(), std))
    }

    pub fn encode(&self, obs: &Array2<T>) -> Result<Array2<T>> {
        Ok(self.encode_gaussian(obs)?.0)
    }

    /// Mean of the predicted next-latent distribution.
    pub fn predict(&self, z: &Array2<T>, actions: &[Action]) -> Result<Array2<T>> {
        if z.nrows() != actions.len() {
            return Err(shape_err("ssm predict: latent/action mismatch"));
        }
        let input = ndarray::concatenate![Axis(1), *z, one_hot_rows::<T>(actions)];
        Ok(affine_apply(&self.transition.forward(&input)?, z, self.cfg.latent_dim))
    }

    pub fn rollout_batch(&self, z0: &Array2<T>, actions: &[Vec<Action>]) -> Result<Vec<Array2<T>>> {
        let horizon = actions.first().map_or(0, |a| a.len());
        if horizon == 0 || actions.len() != z0.nrows() || actions.iter().any(|a| a.len() != horizon) {
            return Err(Error::InvalidArgument("ssm rollout: action sequences must share a positive length".into()));
        }
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let acts: Vec<Action> = actions.iter().map(|s| s[t]).collect();
            z = self.predict(&z, &acts)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    fn gaussian(&self, g: &mut Graph<T>, enc: &BoundNet, obs: &Array2<T>) -> (Var, Var) {
        let d = self.cfg.latent_dim;
        let x = g.constant(obs.clone());
        let out = enc.forward(g, x);
        let mean = g.slice_cols(out, 0, d);
        let raw = g.slice_cols(out, d, 2 * d);
        let sp = g.softplus(raw);
        (mean, g.offset(sp, T::lit(SIGMA_FLOOR)))
    }

    fn loss_graph(&self, g: &mut Graph<T>, batch: &TransitionBatch<T>) -> Result<([Var; 4], Vec<Var>)> {
        if batch.obs.ncols() != self.obs_width || batch.len() < 2 {
            return Err(shape_err("ssm: batch width or size"));
        }
        let d = self.cfg.latent_dim;
        let p = affine_param_count(d);
        let enc = self.encoder.bind(g);
        let tr = self.transition.bind(g);
        let (mean, _) = self.gaussian(g, &enc, &batch.obs);
        let (next_mean, next_std) = self.gaussian(g, &enc, &batch.next_obs);
        let onehot = g.constant(one_hot_rows(&batch.actions));
        let input = g.concat(&[mean, onehot]);
        let out = tr.forward(g, input);
        let affine = g.slice_cols(out, 0, p);
        let pred = affine_apply_graph(g, affine, mean, d);
        let raw = g.slice_cols(out, p, p + d);
        let sp = g.softplus(raw);
        let pred_std = g.offset(sp, T::lit(SIGMA_FLOOR));
        let kl = gaussian_kl_graph(g, next_mean, next_std, pred, pred_std);
        let kl = g.mean(kl);
        let transition = g.scale(kl, T::lit(self.cfg.beta));
        let contrastive = contrastive_graph(g, &batch.obs, mean, self.cfg.tau_s, self.cfg.tau_z);
        let parsimony = g.scalar_constant(T::zero());
        let total = g.add(transition, contrastive);
        Ok(([total, transition, parsimony, contrastive], [enc.vars(), tr.vars()].concat()))
    }

    pub fn loss(&self, batch: &TransitionBatch<T>) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let (v, _) = self.loss_graph(&mut g, batch)?;
        g.check()?;
        Ok(breakdown(&g, v))
    }

    pub fn gradients(&self, batch: &TransitionBatch<T>) -> Result<(LossBreakdown, Vec<Array2<T>>)> {
        let mut g = Graph::new();
        let (v, vars) = self.loss_graph(&mut g, batch)?;
        let grads = g.backward(v[0])?;
        Ok((breakdown(&g, v), collect_grads(&g, &grads, &vars)))
    }

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
        Checkpoint::new("ssm", config, self.param_names().into_iter().zip(self.params().into_iter().cloned()))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_kind("ssm")?;
        let mut cfg = SsmConfig::default();
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

impl<T: Scalar> Parameters<T> for SsmModel<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        let mut v = self.encoder.params();
        v.extend(self.transition.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.transition.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        let enc = self.encoder.param_names().into_iter().map(|n| format!("encoder.{n}"));
        enc.chain(self.transition.param_names().into_iter().map(|n| format!("transition.{n}"))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::GaussianParams;
    use crate::model::loss::stochastic_state_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small(beta: f64) -> SsmModel<f64> {
        let cfg = SsmConfig { latent_dim: 3, beta, hidden: vec![8], ..Default::default() };
        SsmModel::new(cfg, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn batch(seed: u64) -> TransitionBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = || Array2::from_shape_simple_fn((5, 4), || StandardNormal.sample(&mut rng));
        let (a, b) = (obs(), obs());
        TransitionBatch::new(a, (0..5).map(|i| Action::ALL[i]).collect(), b).unwrap()
    }

    #[test]
    fn matches_state_loss_without_code_term() {
        let m = small(0.8);
        let b = batch(1);
        let parts = m.loss(&b).unwrap();
        let (mean, _) = m.encode_gaussian(&b.obs).unwrap();
        let (nm, ns) = m.encode_gaussian(&b.next_obs).unwrap();
        let input = ndarray::concatenate![Axis(1), mean, one_hot_rows::<f64>(&b.actions)];
        let out = m.transition.forward(&input).unwrap();
        let pred = affine_apply(&out, &mean, 3);
        let post: Vec<_> =
            (0..5).map(|i| GaussianParams::new(nm.row(i).to_vec(), ns.row(i).to_vec()).unwrap()).collect();
        let prior: Vec<_> = (0..5)
            .map(|i| {
                let std = out.slice(s![i, 12..15]).iter().map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p() + SIGMA_FLOOR).collect();
                GaussianParams::new(pred.row(i).to_vec(), std).unwrap()
            })
            .collect();
        // Contrastive on the current means, KL on the next-step distributions.
        let kl_only = stochastic_state_loss(&nm, &post, &prior, 0.8, 100.0, 0.1).unwrap()
            - stochastic_state_loss(&nm, &post, &post, 0.0, 100.0, 0.1).unwrap();
        assert!((parts.transition - kl_only).abs() < 1e-10);
        assert_eq!(parts.parsimony, 0.0);
        let doubled = SsmModel { cfg: SsmConfig { beta: 1.6, ..m.cfg.clone() }, ..m.clone() }.loss(&b).unwrap();
        assert!((doubled.transition - 2.0 * parts.transition).abs() < 1e-12);
        assert_eq!(doubled.representation, parts.representation);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = small(1.0);
        let b = batch(2);
        let (_, grads) = m.gradients(&b).unwrap();
        for (k, g) in grads.iter().enumerate() {
            for idx in [0, g.len() - 1] {
                let orig = m.params()[k].as_slice().unwrap()[idx];
                let mut eval = |x: f64| {
                    m.params_mut()[k].as_slice_mut().unwrap()[idx] = x;
                    m.loss(&b).unwrap().total
                };
                let fd = (eval(orig + 1e-6) - eval(orig - 1e-6)) / 2e-6;
                eval(orig);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-3, "param {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small(0.5);
        let back = SsmModel::<f64>::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.params(), m.params());
    }
}
