use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{
    bernoulli_kl, determinant, diag_gaussian_kl, matrix_exp, skew_from_params, skew_param_count, BernoulliVec,
    GaussianParams, Parameters,
};
use crate::envs::{Action, EnvInstance, EnvKind};
use crate::error::Result;
use crate::model::{ParsimonyConfig, ParsimonyModel, TransformFamily, TransitionBatch};
use crate::sac::{run_policy_experiment, PolicyExperimentConfig, PolicyModel, SacConfig};

/// Outcome of one quick property check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

fn rotations() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 15;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p: Vec<f64> = (0..skew_param_count(d)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = matrix_exp(&skew_from_params(&p, d)?)?;
        let rtr = r.t().dot(&r) - Array2::<f64>::eye(d);
        worst = worst.max(rtr.iter().fold(0.0, |a, v| a.max(v.abs()))).max((determinant(&r) - 1.0).abs());
    }
    Ok((worst < 1e-8, format!("max orthogonality/determinant error {worst:.2e}")))
}

fn expm_series() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p: Vec<f64> = (0..skew_param_count(d)).map(|_| rng.random_range(-0.1..0.1)).collect();
        let s = skew_from_params(&p, d)?;
        let mut term = Array2::<f64>::eye(d);
        let mut sum = term.clone();
        for k in 1..200 {
            term = term.dot(&s) / k as f64;
            sum += &term;
        }
        let e = matrix_exp(&s)?;
        worst = worst.max((&e - &sum).iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    Ok((worst < 1e-10, format!("max deviation from the series {worst:.2e}")))
}

fn kl_identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for _ in 0..1000 {
        let q = BernoulliVec::new((0..4).map(|_| rng.random_range(0.0..1.0)).collect())?;
        let p = BernoulliVec::new((0..4).map(|_| rng.random_range(0.0..1.0)).collect())?;
        ok &= bernoulli_kl(&q, &p)? >= 0.0 && bernoulli_kl(&q, &q)? == 0.0;
        let g = |rng: &mut ChaCha8Rng| {
            GaussianParams::new(
                (0..3).map(|_| StandardNormal.sample(rng)).collect(),
                (0..3).map(|_| rng.random_range(0.1..3.0)).collect(),
            )
        };
        let (a, b) = (g(&mut rng)?, g(&mut rng)?);
        ok &= diag_gaussian_kl(&a, &b)? >= 0.0 && diag_gaussian_kl(&a, &a)? == 0.0;
    }
    let half: f64 = diag_gaussian_kl(&GaussianParams::new(vec![1.0], vec![1.0])?, &GaussianParams::new(vec![0.0], vec![1.0])?)?;
    Ok((ok && (half - 0.5).abs() < 1e-12, format!("KL(N(1,1)|N(0,1)) = {half}")))
}

fn env_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    for kind in EnvKind::ALL {
        let env = EnvInstance::new(kind, 0, 4)?;
        let cells: Vec<_> = env.cells().collect();
        for _ in 0..50 {
            let (s, g) = (cells[rng.random_range(0..cells.len())], cells[rng.random_range(0..cells.len())]);
            let task = env.with_endpoints(s, g)?;
            let mut pos = s;
            let mut ret = 0.0;
            for a in task.optimal_actions(s, g, 50)? {
                let step = task.step(pos, a)?;
                ret += step.reward;
                pos = step.next;
            }
            ok &= ret == 50.0 - 2.0 * env.shortest_path(s, g)? as f64;
        }
    }
    Ok((ok, "optimal returns equal N - 2d".into()))
}

fn model_gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ParsimonyConfig { latent_dim: 3, code_dim: 2, hidden: vec![6], family: TransformFamily::Translation, ..Default::default() };
    let mut m = ParsimonyModel::<f64>::new(cfg, 4, &mut rng)?;
    let obs = Array2::from_shape_simple_fn((5, 4), || StandardNormal.sample(&mut rng));
    let next = Array2::from_shape_simple_fn((5, 4), || StandardNormal.sample(&mut rng));
    let batch = TransitionBatch::new(obs, Action::ALL.to_vec(), next)?;
    let (_, grads) = m.gradients(&batch)?;
    // Encoder weights only: the code path is piecewise constant.
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let base = m.params_mut()[0][[i, 0]];
        m.params_mut()[0][[i, 0]] = base + h;
        let up = m.loss(&batch)?.total;
        m.params_mut()[0][[i, 0]] = base - h;
        let down = m.loss(&batch)?.total;
        m.params_mut()[0][[i, 0]] = base;
        let fd = (up - down) / (2.0 * h);
        let an = grads[0][[i, 0]];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
    }
    Ok((worst < 1e-2, format!("max relative error {worst:.2e}")))
}

fn determinism() -> Result<(bool, String)> {
    let mut cfg = PolicyExperimentConfig::new(EnvKind::Gridworld, PolicyModel::Parsimony);
    cfg.episodes = 2;
    cfg.obs_dim = 6;
    cfg.sac = SacConfig { hidden: vec![8], episode_len: 20, batch_size: 8, policy_steps: 1, dynamics_steps: 1, ..cfg.sac };
    cfg.parsimony.hidden = vec![8];
    cfg.parsimony.batch_size = 8;
    let a = run_policy_experiment::<f64>(&cfg, 9)?;
    let b = run_policy_experiment::<f64>(&cfg, 9)?;
    Ok((a == b, "identical seeds give identical episodes".into()))
}

/// A fast subset of the property suite.
pub fn selftest() -> Vec<Check> {
    vec![
        check("rotation validity", rotations),
        check("matrix exponential vs series", expm_series),
        check("KL identities", kl_identities),
        check("environment oracle", env_oracle),
        check("model gradients", model_gradients),
        check("determinism", determinism),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
