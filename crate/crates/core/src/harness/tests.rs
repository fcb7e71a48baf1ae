use super::*;
use crate::envs::EnvKind;

fn tiny(kind: ExperimentKind, model: ModelKind, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind, EnvKind::Gridworld, model);
    cfg.out = out.to_path_buf();
    cfg.seeds = vec![0, 1];
    cfg.obs_dim = 6;
    cfg.episodes = 2;
    cfg.tasks = 2;
    cfg.steps = 6;
    cfg.dynamics_steps = 1;
    cfg.dynamics_batch = 8;
    cfg.sac.hidden = vec![8];
    cfg.sac.episode_len = 12;
    cfg.sac.batch_size = 8;
    cfg.sac.policy_steps = 1;
    cfg.sac.dynamics_steps = 1;
    cfg.cem.samples = 10;
    cfg.cem.elites = 2;
    cfg.cem.iterations = 2;
    cfg.cem.horizon = 3;
    cfg.parsimony.hidden = vec![8];
    cfg.parsimony.batch_size = 8;
    cfg.vae.hidden = vec![8];
    cfg.vae.batch_size = 8;
    cfg
}

#[test]
fn runs_write_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, model) in [(ExperimentKind::Policy, ModelKind::Baseline), (ExperimentKind::Planning, ModelKind::Parsimony)] {
        let a = dir.path().join(format!("{}_a", kind.as_str()));
        let b = dir.path().join(format!("{}_b", kind.as_str()));
        run_experiment(&tiny(kind, model, &a), &mut |_| {}).unwrap();
        run_experiment(&tiny(kind, model, &b), &mut |_| {}).unwrap();
        for seed in [0, 1] {
            let x = std::fs::read(seed_csv_path(&a, seed)).unwrap();
            let y = std::fs::read(seed_csv_path(&b, seed)).unwrap();
            assert_eq!(x, y);
        }
        let summary = std::fs::read_to_string(a.join(SUMMARY_FILE)).unwrap();
        let rows = summary.lines().count() - 1;
        assert_eq!(rows, 2, "one summary row per episode or task");
        assert!(a.join(PLOT_FILE).exists());
        // The snapshot reruns the same experiment.
        let text = std::fs::read_to_string(a.join(CONFIG_FILE)).unwrap();
        let again = ExperimentConfig::from_pairs(kind, &ExperimentConfig::parse_file_text(&text).unwrap()).unwrap();
        assert_eq!(again, tiny(kind, model, &a));
    }
}

#[test]
fn aggregation_rejects_mixed_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    let q = dir.path().join("q");
    run_experiment(&tiny(ExperimentKind::Policy, ModelKind::Parsimony, &p), &mut |_| {}).unwrap();
    run_experiment(&tiny(ExperimentKind::Planning, ModelKind::Oracle, &q), &mut |_| {}).unwrap();
    assert!(aggregate_and_plot(&[p.clone(), q.clone()], dir.path()).is_err());
    let s = aggregate_and_plot(&[p.clone(), p.clone()], &dir.path().join("agg")).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].seeds, 2);
    std::fs::write(p.join("seed_9.csv"), "a,b\n1,2\n").unwrap();
    assert!(summarize_dir(&p).is_err());
}

#[test]
fn sweep_marks_one_best_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::Policy, ModelKind::Parsimony, dir.path());
    cfg.seeds = vec![0];
    let rows = sweep_beta(&cfg, &[0.0, 0.5], &mut |_| {}).unwrap();
    assert_eq!(rows.len(), 4);
    for m in [ModelKind::Parsimony, ModelKind::Vae] {
        assert_eq!(rows.iter().filter(|r| r.model == m && r.best).count(), 1);
    }
    assert!(dir.path().join("sweep.csv").exists());
    assert!(dir.path().join("vae_beta_0.5").join("seed_0.csv").exists());
}
