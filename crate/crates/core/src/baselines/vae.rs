use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{affine_apply, affine_apply_graph, affine_param_count, mean_sq_error};
use crate::checkpoint::Checkpoint;
use crate::diffmath::nn::SIGMA_FLOOR;
use crate::diffmath::special::{gaussian_kl_graph, reparam_graph};
use crate::diffmath::{adam_step, collect_grads, Activation, AdamConfig, AdamState, FeedforwardNet, Graph, Parameters, Var};
use crate::envs::{one_hot_rows, Action};
use crate::error::{shape_err, Error, Result};
use crate::model::{parse_value, LossBreakdown, TransitionBatch};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    /// Weight of the `KL[q(z|s) || N(0, I)]` term.
    pub beta: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { latent_dim: 15, beta: 1.0, hidden: vec![1200, 1200], lr: 1e-3, batch_size: 128 }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::Config("vae: widths and batch size must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("vae: beta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("hidden".into(), hidden),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "hidden" => self.hidden = crate::model::parse_list(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "vae config key", value: other.into() }),
        }
        Ok(())
    }
}

/// Gaussian encoder, observation decoder and an affine next-latent head.
#[derive(Clone, Debug)]
pub struct VaeModel<T> {
    cfg: VaeConfig,
    obs_width: usize,
    encoder: FeedforwardNet<T>,
    decoder: FeedforwardNet<T>,
    transition: FeedforwardNet<T>,
    adam: AdamState<T>,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl<T: Scalar> VaeModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: VaeConfig, obs_width: usize, rng: &mut R) -> Result<Self> {
        Self::build(cfg, obs_width, |s, a| FeedforwardNet::new(s, a, rng))
    }

    fn build(
        cfg: VaeConfig,
        obs_width: usize,
        mut make: impl FnMut(&[usize], Activation) -> Result<FeedforwardNet<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let encoder = make(&sizes(obs_width, &cfg.hidden, 2 * d), Activation::Identity)?;
        let decoder = make(&sizes(d, &cfg.hidden, obs_width), Activation::Identity)?;
        let mut transition = make(&sizes(d + Action::COUNT, &cfg.hidden, affine_param_count(d)), Activation::Identity)?;
        transition.scale_output_layer(T::lit(0.1));
        Ok(Self { cfg, obs_width, encoder, decoder, transition, adam: AdamState::new() })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    /// Latent means.
    pub fn encode(&self, obs: &Array2<T>) -> Result<Array2<T>> {
        if obs.ncols() != self.obs_width {
            return Err(shape_err(format!("vae: observation width {} expected {}", obs.ncols(), self.obs_width)));
        }
        Ok(self.encoder.forward(obs)?.slice(s![.., ..self.cfg.latent_dim]).to_owned())
    }

    pub fn reconstruct(&self, z: &Array2<T>) -> Result<Array2<T>> {
        self.decoder.forward(z)
    }

    /// Affine next-latent prediction from latent means.
    pub fn predict(&self, z: &Array2<T>, actions: &[Action]) -> Result<Array2<T>> {
        let input = ndarray::concatenate![Axis(1), *z, one_hot_rows::<T>(actions)];
        Ok(affine_apply(&self.transition.forward(&input)?, z, self.cfg.latent_dim))
    }

    fn gaussian(&self, g: &mut Graph<T>, enc: &crate::diffmath::BoundNet, obs: &Array2<T>) -> (Var, Var) {
        let d = self.cfg.latent_dim;
        let x = g.constant(obs.clone());
        let out = enc.forward(g, x);
        let mean = g.slice_cols(out, 0, d);
        let raw = g.slice_cols(out, d, 2 * d);
        let sp = g.softplus(raw);
        (mean, g.offset(sp, T::lit(SIGMA_FLOOR)))
    }

    /// Loss on `batch` with reparameterisation noise `noise` (`batch×d`).
    fn loss_graph(&self, g: &mut Graph<T>, batch: &TransitionBatch<T>, noise: &Array2<T>) -> Result<([Var; 4], Vec<Var>)> {
        let d = self.cfg.latent_dim;
        if batch.obs.ncols() != self.obs_width || noise.dim() != (batch.len(), d) {
            return Err(shape_err("vae: batch or noise shape mismatch"));
        }
        let enc = self.encoder.bind(g);
        let dec = self.decoder.bind(g);
        let tr = self.transition.bind(g);
        let (mean, std) = self.gaussian(g, &enc, &batch.obs);
        let eps = g.constant(noise.clone());
        let z = reparam_graph(g, mean, std, eps);
        let recon = dec.forward(g, z);
        let target = g.constant(batch.obs.clone());
        let recon_err = mean_sq_error(g, recon, target);
        let zeros = g.constant(Array2::zeros((batch.len(), d)));
        let ones = g.constant(Array2::ones((batch.len(), d)));
        let kl = gaussian_kl_graph(g, mean, std, zeros, ones);
        let kl = g.mean(kl);
        let kl = g.scale(kl, T::lit(self.cfg.beta));
        let representation = g.add(recon_err, kl);
        let (next_mean, _) = self.gaussian(g, &enc, &batch.next_obs);
        let onehot = g.constant(one_hot_rows(&batch.actions));
        let head_in = g.concat(&[mean, onehot]);
        let head = tr.forward(g, head_in);
        let pred = affine_apply_graph(g, head, mean, d);
        let transition = mean_sq_error(g, pred, next_mean);
        let parsimony = g.scalar_constant(T::zero());
        let total = g.add(representation, transition);
        let vars = [enc.vars(), dec.vars(), tr.vars()].concat();
        Ok(([total, transition, parsimony, representation], vars))
    }

    /// Loss components for explicit noise (zero noise evaluates at the means).
    pub fn loss_with_noise(&self, batch: &TransitionBatch<T>, noise: &Array2<T>) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let (v, _) = self.loss_graph(&mut g, batch, noise)?;
        g.check()?;
        Ok(breakdown(&g, v))
    }

    pub fn gradients_with_noise(
        &self,
        batch: &TransitionBatch<T>,
        noise: &Array2<T>,
    ) -> Result<(LossBreakdown, Vec<Array2<T>>)> {
        let mut g = Graph::new();
        let (v, vars) = self.loss_graph(&mut g, batch, noise)?;
        let grads = g.backward(v[0])?;
        Ok((breakdown(&g, v), collect_grads(&g, &grads, &vars)))
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch<T>, rng: &mut R) -> Result<LossBreakdown> {
        let noise = Array2::from_shape_simple_fn((batch.len(), self.cfg.latent_dim), || {
            T::lit(StandardNormal.sample(rng))
        });
        let (parts, grads) = self.gradients_with_noise(batch, &noise)?;
        let cfg = AdamConfig::with_lr(self.cfg.lr);
        let mut adam = std::mem::take(&mut self.adam);
        let res = adam_step(self.params_mut(), &grads, &mut adam, &cfg);
        self.adam = adam;
        res.map(|_| parts)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut config = self.cfg.to_pairs();
        config.push(("obs_width".into(), self.obs_width.to_string()));
        Checkpoint::new("vae", config, self.param_names().into_iter().zip(self.params().into_iter().cloned()))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_kind("vae")?;
        let mut cfg = VaeConfig::default();
        let mut obs_width = None;
        for (k, v) in &ckpt.config {
            if k == "obs_width" {
                obs_width = Some(parse_value(k, v)?);
            } else {
                cfg.set(k, v)?;
            }
        }
        let obs_width = obs_width.ok_or_else(|| Error::Checkpoint("missing obs_width".into()))?;
        let mut m = Self::build(cfg, obs_width, FeedforwardNet::zeros)?;
        ckpt.restore_into(&mut m)?;
        Ok(m)
    }
}

pub(crate) fn breakdown<T: Scalar>(g: &Graph<T>, v: [Var; 4]) -> LossBreakdown {
    LossBreakdown {
        total: g.scalar(v[0]).as_f64(),
        transition: g.scalar(v[1]).as_f64(),
        parsimony: g.scalar(v[2]).as_f64(),
        representation: g.scalar(v[3]).as_f64(),
    }
}

impl<T: Scalar> Parameters<T> for VaeModel<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        [&self.encoder, &self.decoder, &self.transition].into_iter().flat_map(|n| n.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v.extend(self.transition.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        [("encoder", &self.encoder), ("decoder", &self.decoder), ("transition", &self.transition)]
            .into_iter()
            .flat_map(|(p, n)| n.param_names().into_iter().map(move |s| format!("{p}.{s}")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{diag_gaussian_kl, GaussianParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(seed: u64) -> TransitionBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = || Array2::from_shape_simple_fn((6, 4), || StandardNormal.sample(&mut rng));
        let (a, b) = (obs(), obs());
        TransitionBatch::new(a, (0..6).map(|i| Action::ALL[i % 5]).collect(), b).unwrap()
    }

    fn small(beta: f64) -> VaeModel<f64> {
        let cfg = VaeConfig { latent_dim: 3, beta, hidden: vec![8], ..Default::default() };
        VaeModel::new(cfg, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn beta_zero_drops_the_kl() {
        let b = batch(2);
        let noise = Array2::zeros((6, 3));
        let with = small(1.0).loss_with_noise(&b, &noise).unwrap();
        let without = small(0.0).loss_with_noise(&b, &noise).unwrap();
        assert!(with.representation > without.representation);
        assert_eq!(with.transition, without.transition);
        assert_eq!(without.parsimony, 0.0);
        assert!((without.total - without.representation - without.transition).abs() < 1e-12);
    }

    #[test]
    fn kl_term_matches_closed_form() {
        let b = batch(3);
        let m = small(1.0);
        let noise = Array2::zeros((6, 3));
        let with = m.loss_with_noise(&b, &noise).unwrap();
        let zero_beta = VaeModel { cfg: VaeConfig { beta: 0.0, ..m.cfg.clone() }, ..m.clone() };
        let without = zero_beta.loss_with_noise(&b, &noise).unwrap();
        let out = m.encoder.forward(&b.obs).unwrap();
        let mut expected = 0.0;
        for r in out.rows() {
            let mean = r.slice(s![..3]).to_vec();
            let std = r.slice(s![3..]).iter().map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p() + SIGMA_FLOOR).collect();
            let q = GaussianParams::new(mean, std).unwrap();
            let p = GaussianParams::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
            expected += diag_gaussian_kl(&q, &p).unwrap() / 6.0;
        }
        assert!((with.representation - without.representation - expected).abs() < 1e-12);
    }

    #[test]
    fn memorises_a_small_batch() {
        let b = batch(4);
        let cfg = VaeConfig { latent_dim: 4, beta: 0.0, hidden: vec![32], lr: 3e-3, batch_size: 6 };
        let mut m: VaeModel<f64> = VaeModel::new(cfg, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let first = m.loss_with_noise(&b, &Array2::zeros((6, 4))).unwrap().representation;
        for _ in 0..1500 {
            m.train_step(&b, &mut rng).unwrap();
        }
        let last = m.loss_with_noise(&b, &Array2::zeros((6, 4))).unwrap().representation;
        assert!(last < 0.05 * first, "reconstruction {first} -> {last}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = batch(7);
        let mut m = small(0.7);
        let noise = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let (_, grads) = m.gradients_with_noise(&b, &noise).unwrap();
        for (k, g) in grads.iter().enumerate() {
            for idx in [0, g.len() - 1] {
                let orig = m.params()[k].as_slice().unwrap()[idx];
                let mut eval = |x: f64| {
                    m.params_mut()[k].as_slice_mut().unwrap()[idx] = x;
                    m.loss_with_noise(&b, &noise).unwrap().total
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
        let m = small(0.3);
        let back = VaeModel::<f64>::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }
}
