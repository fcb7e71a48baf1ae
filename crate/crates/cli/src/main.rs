use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parsimony::harness::{
    aggregate_and_plot, run_experiment, selftest, sweep_beta, ExperimentConfig, ExperimentKind, DEFAULT_BETAS,
};

#[derive(Parser, Debug)]
#[command(name = "parsimony", version, about = "Parsimonious latent dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discrete SAC on top of a learned representation.
    TrainPolicy(RunArgs),
    /// CEM planning through a learned (or the true) dynamics model.
    Plan {
        #[command(flatten)]
        run: RunArgs,
        /// Plan with the true environment dynamics.
        #[arg(long)]
        oracle_dynamics: bool,
    },
    /// Policy runs for the parsimony model and the VAE over several betas.
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated betas.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Summarise run directories into one plot.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quick property checks.
    Selftest,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// `a..b` (inclusive) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// Flat `key = value` file; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

enum Failure {
    Usage(String),
    Invariant(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Usage(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
            Failure::Invariant(m) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
        }
    }
}

fn build_config(kind: ExperimentKind, args: &RunArgs, forced_model: Option<&str>) -> Result<ExperimentConfig, Failure> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        pairs = ExperimentConfig::parse_file_text(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    pairs.push(("kind".into(), kind.as_str().into()));
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.into(), v));
        }
    };
    push("env", args.env.clone());
    if let (Some(forced), Some(m)) = (forced_model, &args.model) {
        if m != forced {
            return Err(Failure::Usage(format!("--model {m} conflicts with --oracle-dynamics")));
        }
    }
    push("model", forced_model.map(String::from).or_else(|| args.model.clone()));
    push("seeds", args.seeds.clone());
    push("out", args.out.as_ref().map(|p| p.display().to_string()));
    push("beta", args.beta.map(|b| b.to_string()));
    for s in &args.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    ExperimentConfig::from_pairs(kind, &pairs).map_err(|e| Failure::Usage(e.to_string()))
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    let invariant = |e: parsimony::Error| Failure::Invariant(e.to_string());
    match cli.command {
        Command::TrainPolicy(args) => {
            let cfg = build_config(ExperimentKind::Policy, &args, None)?;
            run_experiment(&cfg, &mut log).map_err(invariant)?;
            println!("wrote {}", cfg.out.display());
        }
        Command::Plan { run: args, oracle_dynamics } => {
            let cfg = build_config(ExperimentKind::Planning, &args, oracle_dynamics.then_some("oracle"))?;
            run_experiment(&cfg, &mut log).map_err(invariant)?;
            println!("wrote {}", cfg.out.display());
        }
        Command::SweepBeta { run: args, betas } => {
            if args.beta.is_some() {
                return Err(Failure::Usage("sweep-beta takes --betas, not --beta".into()));
            }
            // The sweep picks the models itself; the base config only needs a policy-capable one.
            let cfg = build_config(ExperimentKind::Policy, &args, None)?;
            let betas = betas.unwrap_or_else(|| DEFAULT_BETAS.to_vec());
            for r in sweep_beta(&cfg, &betas, &mut log).map_err(invariant)? {
                println!("{} beta {}: mean total {:.3}{}", r.model, r.beta, r.mean_total, if r.best { " (best)" } else { "" });
            }
        }
        Command::Plot { dirs, out } => {
            let summaries = aggregate_and_plot(&dirs, &out).map_err(|e| Failure::Usage(e.to_string()))?;
            println!("plotted {} run(s) into {}", summaries.len(), out.display());
        }
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(Failure::Invariant("selftest failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
