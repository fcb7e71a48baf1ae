use super::*;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> SacConfig {
    SacConfig { hidden: vec![8], batch_size: 6, lr: 1e-2, ..SacConfig::default() }
}

fn batch(rng: &mut ChaCha8Rng, n: usize, width: usize) -> ReplayBatch<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut draw = |r, c| Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut *rng));
    let obs = draw(n, width);
    let next_obs = draw(n, width);
    ReplayBatch {
        obs,
        next_obs,
        actions: (0..n).map(|i| Action::ALL[i % Action::COUNT]).collect(),
        rewards: (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect(),
        dones: (0..n).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect(),
    }
}

#[test]
fn policy_distribution_basics() {
    let p = softmax_rows(&Array2::<f64>::zeros((1, 5)));
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let logits: Array2<f64> = array![[0.3, -1.0, 2.0, 0.0, 5.0], [1.0, 1.0, 1.0, 1.0, -40.0]];
    let p = softmax_rows(&logits);
    let lp = log_softmax_rows(&logits);
    for r in 0..2 {
        assert!((p.row(r).sum() - 1.0).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let i = sample_index(p.row(0), &mut rng);
        assert!((lp[[0, i]] - p[[0, i]].ln()).abs() < 1e-12);
    }
}

#[test]
fn sampling_follows_probabilities() {
    let p = array![0.1, 0.0, 0.6, 0.3, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 5];
    for _ in 0..20_000 {
        counts[sample_index(p.view(), &mut rng)] += 1;
    }
    assert_eq!(counts[1] + counts[4], 0);
    assert!((counts[2] as f64 / 20_000.0 - 0.6).abs() < 0.02);
}

#[test]
fn critic_target_cases() {
    let probs = Array2::from_elem((1, 5), 0.2);
    let logp = probs.mapv(f64::ln);
    let q1 = array![[1.0, 2.0, 3.0, 4.0, 5.0]];
    let q2 = array![[2.0, 1.0, 3.0, 0.0, 6.0]];
    let done = critic_target(&[0.7], &[1.0], &probs, &logp, &q1, &q2, 0.99, 0.5).unwrap();
    assert_eq!(done, vec![0.7]);
    let no_discount = critic_target(&[0.7], &[0.0], &probs, &logp, &q1, &q2, 0.0, 0.5).unwrap();
    assert_eq!(no_discount, vec![0.7]);
    // min(Q) = [1, 1, 3, 0, 5], mean 2; entropy bonus -0.5 ln 0.2.
    let y = critic_target(&[-1.0], &[0.0], &probs, &logp, &q1, &q2, 0.9, 0.5).unwrap();
    let hand = -1.0 + 0.9 * (2.0 + 0.5 * 5f64.ln());
    assert!((y[0] - hand).abs() < 1e-12);
    assert!(critic_target(&[0.0, 1.0], &[0.0], &probs, &logp, &q1, &q2, 0.9, 0.5).is_err());
}

#[test]
fn critic_loss_zero_on_exact_targets() {
    let q = array![[1.0, 2.0, 3.0, 4.0, 5.0], [0.0, -1.0, 0.0, 0.0, 0.0]];
    let mut g = Graph::new();
    let (a, b) = (g.constant(q.clone()), g.constant(q));
    let l = critic_loss_graph(&mut g, a, b, &[Action::ALL[2], Action::ALL[1]], &[3.0, -1.0]);
    assert_eq!(g.scalar(l), 0.0);
}

#[test]
fn actor_loss_prefers_greedy_when_alpha_zero() {
    // Two states, each with one action worth 1 and the rest 0.
    let q = array![[0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0]];
    let eval = |logits: Array2<f64>| {
        let mut g = Graph::new();
        let v = g.constant(logits);
        let l = actor_loss_graph(&mut g, v, &q, 0.0);
        g.scalar(l)
    };
    let uniform = eval(Array2::zeros((2, 5)));
    assert!((uniform + 0.2).abs() < 1e-12);
    let mut greedy = Array2::zeros((2, 5));
    greedy[[0, 1]] = 40.0;
    greedy[[1, 4]] = 40.0;
    assert!((eval(greedy) + 1.0).abs() < 1e-12);
    // The gradient on the greedy logit is negative everywhere, so descent raises it.
    let mut g = Graph::new();
    let v = g.param(Array2::zeros((2, 5)));
    let l = actor_loss_graph(&mut g, v, &q, 0.0);
    let grads = g.backward(l).unwrap();
    let gv = grads.get(v).unwrap();
    assert!(gv[[0, 1]] < 0.0 && gv[[1, 4]] < 0.0);
    assert!(gv[[0, 0]] > 0.0);
}

#[test]
fn soft_update_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let src = FeedforwardNet::<f64>::new(&[2, 3, 1], Activation::Identity, &mut rng).unwrap();
    let orig = FeedforwardNet::<f64>::zeros(&[2, 3, 1], Activation::Identity).unwrap();
    let mut t = orig.clone();
    soft_update(&mut t, &src, 0.0).unwrap();
    assert_eq!(t.params(), orig.params());
    soft_update(&mut t, &src, 0.1).unwrap();
    for (a, b) in t.params().iter().zip(src.params()) {
        assert!((*a - &(b * 0.1)).iter().all(|v| v.abs() < 1e-15));
    }
    soft_update(&mut t, &src, 1.0).unwrap();
    assert_eq!(t.params(), src.params());
    let mut wrong = FeedforwardNet::<f64>::zeros(&[2, 4, 1], Activation::Identity).unwrap();
    assert!(soft_update(&mut wrong, &src, 0.5).is_err());
}

fn nudge(agent: &mut SacAgent<f64>, actor: bool, p: usize, idx: usize, delta: f64) {
    let mut ps: Vec<&mut Array2<f64>> = if actor {
        agent.actor_mut().params_mut()
    } else {
        let [c1, c2] = agent.critics_mut();
        let mut v = c1.params_mut();
        v.extend(c2.params_mut());
        v
    };
    let arr = &mut ps[p];
    let i = idx % arr.len();
    arr.as_slice_mut().unwrap()[i] += delta;
}

fn fd_check(agent: &mut SacAgent<f64>, b: &ReplayBatch<f64>, latents: Option<(&Array2<f64>, &Array2<f64>)>, actor: bool) {
    let eval = |a: &SacAgent<f64>| {
        if actor {
            a.actor_gradients(b, latents).unwrap().0
        } else {
            a.critic_gradients(b, latents).unwrap().0
        }
    };
    let (_, grads, _) = if actor { agent.actor_gradients(b, latents) } else { agent.critic_gradients(b, latents) }.unwrap();
    let h = 1e-5;
    for (p, grad) in grads.iter().enumerate() {
        for idx in [0usize, 3] {
            nudge(agent, actor, p, idx, h);
            let up = eval(agent);
            nudge(agent, actor, p, idx, -2.0 * h);
            let down = eval(agent);
            nudge(agent, actor, p, idx, h);
            let fd = (up - down) / (2.0 * h);
            let an = grad.as_slice().unwrap()[idx % grad.len()];
            let err = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-6));
            assert!(err < 1e-4 || (fd - an).abs() < 1e-8, "param {p}[{idx}]: fd {fd} vs {an}");
        }
    }
}

#[test]
fn sac_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batch(&mut rng, 6, 4);
    let mut agent = SacAgent::new(small_cfg(), 4, None, &mut rng).unwrap();
    let (z, nz) = (b.obs.clone(), b.next_obs.clone());
    fd_check(&mut agent, &b, Some((&z, &nz)), false);
    fd_check(&mut agent, &b, Some((&z, &nz)), true);
}

#[test]
fn baseline_encoder_receives_policy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = batch(&mut rng, 6, 7);
    let enc = FeedforwardNet::new(&[7, 5, 3], Activation::Identity, &mut rng).unwrap();
    let mut agent = SacAgent::new(small_cfg(), 3, Some(enc.clone()), &mut rng).unwrap();
    let (_, _, ce) = agent.critic_gradients(&b, None).unwrap();
    let (_, _, ae) = agent.actor_gradients(&b, None).unwrap();
    assert_eq!(ce.len(), 4);
    assert!(ce.iter().chain(&ae).any(|g| g.iter().any(|v| v.abs() > 0.0)));
    agent.update(&b, None).unwrap();
    assert_ne!(agent.encoder().unwrap().params(), enc.params());

    let detached = SacConfig { attach_encoder: false, ..small_cfg() };
    let mut frozen = SacAgent::new(detached, 3, Some(enc.clone()), &mut rng).unwrap();
    frozen.update(&b, None).unwrap();
    assert_eq!(frozen.encoder().unwrap().params(), enc.params());
}

#[test]
fn update_keeps_actor_and_critic_gradients_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = batch(&mut rng, 6, 4);
    let agent = SacAgent::new(small_cfg(), 4, None, &mut rng).unwrap();
    let (z, nz) = (b.obs.clone(), b.next_obs.clone());

    let mut full = agent.clone();
    full.update(&b, Some((&z, &nz))).unwrap();

    // Rebuild the same step by hand, each network only from its own loss.
    let mut manual = agent.clone();
    let adam = AdamConfig::with_lr(manual.cfg.lr);
    let (_, cg, _) = manual.critic_gradients(&b, Some((&z, &nz))).unwrap();
    let (_, ag, _) = manual.actor_gradients(&b, Some((&z, &nz))).unwrap();
    let [c1, c2] = &mut manual.critics;
    let mut ps = c1.params_mut();
    ps.extend(c2.params_mut());
    adam_step(ps, &cg, &mut manual.critic_adam, &adam).unwrap();
    adam_step(manual.actor.params_mut(), &ag, &mut manual.actor_adam, &adam).unwrap();
    assert_eq!(full.actor.params(), manual.actor.params());
    assert_eq!(full.critics[0].params(), manual.critics[0].params());
    assert_eq!(full.critics[1].params(), manual.critics[1].params());

    // Perturbing the actor leaves the critic gradients' parameter set untouched
    // and vice versa: each gradient list matches its own network's shapes.
    assert_eq!(ag.iter().map(|g| g.dim()).collect::<Vec<_>>(), agent.actor.param_shapes());
    assert_eq!(cg.len(), 2 * agent.critics[0].params().len());
}

#[test]
fn targets_move_only_by_soft_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = batch(&mut rng, 6, 4);
    let mut agent = SacAgent::new(small_cfg(), 4, None, &mut rng).unwrap();
    let (z, nz) = (b.obs.clone(), b.next_obs.clone());
    let before = agent.targets.clone();
    agent.critic_gradients(&b, Some((&z, &nz))).unwrap();
    agent.actor_gradients(&b, Some((&z, &nz))).unwrap();
    assert_eq!(agent.targets[0].params(), before[0].params());
    agent.update(&b, Some((&z, &nz))).unwrap();
    let tau = agent.cfg.tau;
    for k in 0..2 {
        for ((t, old), src) in agent.targets[k].params().iter().zip(before[k].params()).zip(agent.critics[k].params()) {
            let expect = src * tau + old * (1.0 - tau);
            assert!((*t - &expect).iter().all(|v| v.abs() < 1e-14));
        }
    }
}

#[test]
fn config_pairs_round_trip() {
    let mut cfg = SacConfig::for_env(EnvKind::FourRooms);
    assert_eq!(cfg.batch_size, 350);
    let pairs = cfg.to_pairs();
    let mut back = SacConfig::default();
    for (k, v) in &pairs {
        back.set(k, v).unwrap();
    }
    assert_eq!(back, cfg);
    cfg.tau = 0.0;
    assert!(cfg.validate().is_err());
    assert!(back.set("nope", "1").is_err());
}

#[test]
fn short_policy_run_is_deterministic() {
    let mut cfg = PolicyExperimentConfig::new(EnvKind::Gridworld, PolicyModel::Parsimony);
    cfg.episodes = 2;
    cfg.obs_dim = 8;
    cfg.sac = SacConfig { hidden: vec![16], episode_len: 40, batch_size: 16, policy_steps: 2, dynamics_steps: 2, ..cfg.sac };
    cfg.parsimony.hidden = vec![16];
    cfg.parsimony.batch_size = 16;
    let a = run_policy_experiment::<f64>(&cfg, 11).unwrap();
    let b = run_policy_experiment::<f64>(&cfg, 11).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    for row in &a {
        assert!(row.ret <= 40.0 && row.ret >= -40.0);
    }
    for model in [PolicyModel::Vae, PolicyModel::Baseline] {
        let c = PolicyExperimentConfig { model, vae: crate::baselines::VaeConfig { hidden: vec![16], batch_size: 16, ..Default::default() }, ..cfg.clone() };
        let rows = run_policy_experiment::<f32>(&c, 1).unwrap();
        assert_eq!(rows.len(), 2);
        if model == PolicyModel::Baseline {
            assert!(rows.iter().all(|r| r.dyn_loss_total == 0.0));
        }
    }
}
