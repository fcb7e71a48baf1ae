use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ExperimentConfig, ExperimentKind, ModelKind, Precision};
use super::plot::{gaussian_filter, mean_std, svg_plot, Curve, SMOOTHING_SIGMA};
use crate::error::{Error, Result};
use crate::planner::{run_planning_experiment_with, TaskRow};
use crate::sac::{run_policy_experiment_with, EpisodeRow};
use crate::scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.svg";
pub const SUMMARY_HEADER: &str = "index,mean,std,smoothed_mean,smoothed_std,n";

/// Result of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// The config file text that reproduces this run.
    pub config_snapshot: String,
    pub header: &'static str,
    pub rows: Vec<String>,
    /// Episode returns or task scores, in row order.
    pub values: Vec<f64>,
    pub wall_clock_secs: f64,
    pub version: &'static str,
}

impl RunRecord {
    pub fn csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

fn run_seed<T: Scalar>(cfg: &ExperimentConfig, seed: u64, log: &mut dyn FnMut(&str)) -> Result<RunRecord> {
    let started = Instant::now();
    let (header, rows, values) = match cfg.kind {
        ExperimentKind::Policy => {
            let pc = cfg.policy()?;
            let mut cb = |r: &EpisodeRow| {
                if (r.episode + 1) % 10 == 0 {
                    log(&format!("seed {seed} episode {} return {}", r.episode + 1, r.ret));
                }
            };
            let rows = run_policy_experiment_with::<T>(&pc, seed, &mut cb)?;
            (EpisodeRow::HEADER, rows.iter().map(EpisodeRow::to_csv).collect(), rows.iter().map(|r| r.ret).collect())
        }
        ExperimentKind::Planning => {
            let pc = cfg.planning()?;
            let mut cb = |r: &TaskRow| log(&format!("seed {seed} task {} score {}", r.task, r.score));
            let rows = run_planning_experiment_with::<T>(&pc, seed, &mut cb)?;
            (TaskRow::HEADER, rows.iter().map(TaskRow::to_csv).collect(), rows.iter().map(|r| r.score).collect())
        }
    };
    Ok(RunRecord {
        seed,
        config_snapshot: cfg.snapshot(),
        header,
        rows,
        values,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        version: VERSION,
    })
}

/// Runs every seed, writing `config.txt`, `seed_<k>.csv` (plus a meta file
/// with timing), then `summary.csv` and `plot.svg` in `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.snapshot())?;
    let mut records = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let rec = match cfg.precision {
            Precision::F64 => run_seed::<f64>(cfg, seed, log)?,
            Precision::F32 => run_seed::<f32>(cfg, seed, log)?,
        };
        fs::write(seed_csv_path(&cfg.out, seed), rec.csv())?;
        fs::write(
            cfg.out.join(format!("meta_seed_{seed}.txt")),
            format!("version = {}\nwall_clock_secs = {:.3}\n", rec.version, rec.wall_clock_secs),
        )?;
        log(&format!("seed {seed} done: total {:.1}", rec.values.iter().sum::<f64>()));
        records.push(rec);
    }
    aggregate_and_plot(std::slice::from_ref(&cfg.out), &cfg.out)?;
    Ok(records)
}

/// Per-index statistics of one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub header: String,
    pub raw: Curve,
    pub smoothed: Curve,
    pub seeds: usize,
}

impl Summary {
    pub fn csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for i in 0..self.raw.mean.len() {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{}\n",
                i + 1,
                self.raw.mean[i],
                self.raw.std[i],
                self.smoothed.mean[i],
                self.smoothed.std[i],
                self.seeds
            ));
        }
        s
    }
}

fn dir_label(dir: &Path) -> String {
    let from_config = fs::read_to_string(dir.join(CONFIG_FILE)).ok().and_then(|text| {
        let pairs = ExperimentConfig::parse_file_text(&text).ok()?;
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
        let model = get("model")?;
        Some(match (model.parse::<ModelKind>().ok(), get("parsimony.beta"), get("vae.beta")) {
            (Some(ModelKind::Parsimony), Some(b), _) | (Some(ModelKind::Vae), _, Some(b)) => format!("{model} (beta {b})"),
            _ => model,
        })
    });
    from_config.unwrap_or_else(|| dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into()))
}

/// Reads every `seed_*.csv` in `dir` and averages the value column across seeds.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no seed CSVs in {}", dir.display())));
    }
    let mut header = None;
    let mut runs = Vec::with_capacity(files.len());
    for f in &files {
        let text = fs::read_to_string(f)?;
        let mut lines = text.lines();
        let h = lines.next().unwrap_or_default().to_string();
        if *header.get_or_insert_with(|| h.clone()) != h {
            return Err(Error::InvalidArgument(format!("{}: header differs from the other runs", f.display())));
        }
        // Both schemas keep their value (return or score) in the third column.
        if h != EpisodeRow::HEADER && h != TaskRow::HEADER {
            return Err(Error::InvalidArgument(format!("{}: unknown CSV schema", f.display())));
        }
        let col = 2;
        let values = lines
            .map(|l| {
                l.split(',')
                    .nth(col)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("{}: malformed row `{l}`", f.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        runs.push(values);
    }
    let (mean, std) = mean_std(&runs)?;
    let smoothed_runs: Vec<Vec<f64>> = runs.iter().map(|r| gaussian_filter(r, SMOOTHING_SIGMA)).collect();
    let (smean, sstd) = mean_std(&smoothed_runs)?;
    let label = dir_label(dir);
    Ok(Summary {
        label: label.clone(),
        header: header.unwrap_or_default(),
        raw: Curve { label: label.clone(), mean, std },
        smoothed: Curve { label, mean: smean, std: sstd },
        seeds: runs.len(),
    })
}

/// Summarises each run directory and draws all of them on one plot. Writes
/// `summary.csv` (one directory) or `summary_<k>.csv` (several) and `plot.svg` into `out`.
pub fn aggregate_and_plot(dirs: &[PathBuf], out: &Path) -> Result<Vec<Summary>> {
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("no run directories given".into()));
    }
    let summaries = dirs.iter().map(|d| summarize_dir(d)).collect::<Result<Vec<_>>>()?;
    if summaries.iter().any(|s| s.header != summaries[0].header) {
        return Err(Error::InvalidArgument("run directories mix experiment kinds".into()));
    }
    fs::create_dir_all(out)?;
    for (k, s) in summaries.iter().enumerate() {
        let name = if summaries.len() == 1 { SUMMARY_FILE.to_string() } else { format!("summary_{k}.csv") };
        fs::write(out.join(name), s.csv())?;
    }
    let policy = summaries[0].header == EpisodeRow::HEADER;
    let (title, x, y) = if policy {
        ("Policy learning", "episode", "return")
    } else {
        ("Planning", "task", "score")
    };
    let curves: Vec<Curve> = summaries.iter().map(|s| s.smoothed.clone()).collect();
    fs::write(out.join(PLOT_FILE), svg_plot(title, x, y, &curves))?;
    Ok(summaries)
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: ModelKind,
    pub beta: f64,
    /// Mean over seeds of the summed episode returns.
    pub mean_total: f64,
    pub best: bool,
}

pub const DEFAULT_BETAS: [f64; 4] = [0.0, 0.1, 0.5, 1.0];

/// Policy runs for the parsimony model and the VAE at every beta; each run
/// lands in `<out>/<model>_beta_<beta>`. Marks the best beta per model.
pub fn sweep_beta(base: &ExperimentConfig, betas: &[f64], log: &mut dyn FnMut(&str)) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for model in [ModelKind::Parsimony, ModelKind::Vae] {
        let start = rows.len();
        for &beta in betas {
            let mut cfg = base.clone();
            cfg.kind = ExperimentKind::Policy;
            cfg.model = model;
            cfg.set_beta(beta)?;
            cfg.out = base.out.join(format!("{model}_beta_{beta}"));
            log(&format!("sweep: {model} beta {beta}"));
            let recs = run_experiment(&cfg, log)?;
            let mean_total = recs.iter().map(|r| r.values.iter().sum::<f64>()).sum::<f64>() / recs.len() as f64;
            rows.push(SweepRow { model, beta, mean_total, best: false });
        }
        let best = (start..rows.len())
            .max_by(|&a, &b| rows[a].mean_total.total_cmp(&rows[b].mean_total).then(b.cmp(&a)))
            .expect("at least one beta");
        rows[best].best = true;
    }
    let mut csv = String::from("model,beta,mean_total_return,best\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.6},{}\n", r.model, r.beta, r.mean_total, r.best));
    }
    fs::create_dir_all(&base.out)?;
    fs::write(base.out.join("sweep.csv"), csv)?;
    Ok(rows)
}
