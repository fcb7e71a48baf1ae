use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::{RnnConfig, SsmConfig, VaeConfig};
use crate::envs::{EnvKind, DEFAULT_OBS_DIM};
use crate::error::{Error, Result};
use crate::model::{parse_value, ParsimonyConfig};
use crate::planner::{CemConfig, PlanningExperimentConfig, PlanningModel, EPSILON_POWER};
use crate::sac::{default_episodes, PolicyExperimentConfig, PolicyModel, SacConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Policy,
    Planning,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Policy => "policy",
            ExperimentKind::Planning => "planning",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(ExperimentKind::Policy),
            "planning" => Ok(ExperimentKind::Planning),
            other => Err(Error::Unknown { what: "experiment kind", value: other.into() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Parsimony,
    Vae,
    Baseline,
    Rnn,
    Ssm,
    Oracle,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::Parsimony, ModelKind::Vae, ModelKind::Baseline, ModelKind::Rnn, ModelKind::Ssm, ModelKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Parsimony => "parsimony",
            ModelKind::Vae => "vae",
            ModelKind::Baseline => "baseline",
            ModelKind::Rnn => "rnn",
            ModelKind::Ssm => "ssm",
            ModelKind::Oracle => "oracle",
        }
    }

    /// The policy-learning roster.
    pub fn policy_model(self) -> Option<PolicyModel> {
        match self {
            ModelKind::Parsimony => Some(PolicyModel::Parsimony),
            ModelKind::Vae => Some(PolicyModel::Vae),
            ModelKind::Baseline => Some(PolicyModel::Baseline),
            _ => None,
        }
    }

    /// The planning roster.
    pub fn planning_model(self) -> Option<PlanningModel> {
        match self {
            ModelKind::Parsimony => Some(PlanningModel::Parsimony),
            ModelKind::Rnn => Some(PlanningModel::Rnn),
            ModelKind::Ssm => Some(PlanningModel::Ssm),
            ModelKind::Oracle => Some(PlanningModel::Oracle),
            _ => None,
        }
    }

    pub fn valid_for(self, kind: ExperimentKind) -> bool {
        match kind {
            ExperimentKind::Policy => self.policy_model().is_some(),
            ExperimentKind::Planning => self.planning_model().is_some(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown { what: "model kind", value: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Unknown { what: "precision", value: other.into() }),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Parses `a..b` (inclusive) or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (parse_value("seeds", a)?, parse_value("seeds", b.trim_start_matches('='))?);
        if b < a {
            return Err(Error::Config(format!("empty seed range `{s}`")));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|p| parse_value("seeds", p)).collect::<Result<Vec<u64>>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    match (contiguous, seeds.first(), seeds.last()) {
        (true, Some(a), Some(b)) if seeds.len() > 1 => format!("{a}..{b}"),
        _ => seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    }
}

/// Everything needed to rerun an experiment. Serialises to a flat
/// `key = value` file; module settings use `section.key`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub env: EnvKind,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub precision: Precision,
    pub obs_dim: usize,
    /// Policy episodes.
    pub episodes: usize,
    /// Planning tasks and steps per task.
    pub tasks: usize,
    pub steps: usize,
    pub epsilon_power: f64,
    pub epsilon_override: Option<f64>,
    pub dynamics_steps: usize,
    pub dynamics_batch: usize,
    pub sac: SacConfig,
    pub cem: CemConfig,
    pub parsimony: ParsimonyConfig,
    pub vae: VaeConfig,
    pub rnn: RnnConfig,
    pub ssm: SsmConfig,
}

const HEAD_KEYS: [&str; 3] = ["kind", "env", "model"];

impl ExperimentConfig {
    /// Defaults for the given experiment, environment and model.
    pub fn new(kind: ExperimentKind, env: EnvKind, model: ModelKind) -> Self {
        Self {
            kind,
            env,
            model,
            seeds: vec![0],
            out: PathBuf::from("results"),
            precision: Precision::F64,
            obs_dim: DEFAULT_OBS_DIM,
            episodes: default_episodes(env),
            tasks: 30,
            steps: 50,
            epsilon_power: EPSILON_POWER,
            epsilon_override: None,
            dynamics_steps: 50,
            dynamics_batch: 128,
            sac: SacConfig::for_env(env),
            cem: CemConfig::default(),
            parsimony: ParsimonyConfig::default(),
            vae: VaeConfig::default(),
            rnn: RnnConfig::default(),
            ssm: SsmConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model.valid_for(self.kind) {
            return Err(Error::Config(format!(
                "model `{}` is not available for {} experiments",
                self.model,
                self.kind.as_str()
            )));
        }
        if self.seeds.is_empty() || self.obs_dim == 0 {
            return Err(Error::Config("need at least one seed and a positive obs_dim".into()));
        }
        if let Some(e) = self.epsilon_override {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config("epsilon must lie in [0, 1]".into()));
            }
        }
        self.sac.validate()?;
        self.cem.validate()?;
        self.parsimony.validate()?;
        self.vae.validate()?;
        self.rnn.validate()?;
        self.ssm.validate()
    }

    /// Sets the regularisation weight of whichever model is selected.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        match self.model {
            ModelKind::Parsimony => self.parsimony.beta = beta,
            ModelKind::Vae => self.vae.beta = beta,
            ModelKind::Ssm => self.ssm.beta = beta,
            other => return Err(Error::Config(format!("model `{other}` has no beta"))),
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some((section, sub)) = key.split_once('.') {
            return match section {
                "sac" => self.sac.set(sub, value),
                "cem" => self.cem.set(sub, value),
                "parsimony" => self.parsimony.set(sub, value),
                "vae" => self.vae.set(sub, value),
                "rnn" => self.rnn.set(sub, value),
                "ssm" => self.ssm.set(sub, value),
                other => Err(Error::Unknown { what: "config section", value: other.into() }),
            };
        }
        match key {
            "kind" => self.kind = value.parse()?,
            "env" => self.env = value.parse()?,
            "model" => self.model = value.parse()?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "out" => self.out = PathBuf::from(value),
            "precision" => self.precision = value.parse()?,
            "obs_dim" => self.obs_dim = parse_value(key, value)?,
            "episodes" => self.episodes = parse_value(key, value)?,
            "tasks" => self.tasks = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "epsilon_power" => self.epsilon_power = parse_value(key, value)?,
            "epsilon" => {
                self.epsilon_override = if value == "schedule" { None } else { Some(parse_value(key, value)?) }
            }
            "dynamics_steps" => self.dynamics_steps = parse_value(key, value)?,
            "dynamics_batch" => self.dynamics_batch = parse_value(key, value)?,
            "beta" => self.set_beta(parse_value(key, value)?)?,
            other => return Err(Error::Unknown { what: "config key", value: other.into() }),
        }
        Ok(())
    }

    /// Builds a config from ordered settings. `kind`, `env` and `model` are
    /// applied first so the per-environment defaults are in place before the
    /// rest; later settings win.
    pub fn from_pairs(base_kind: ExperimentKind, pairs: &[(String, String)]) -> Result<Self> {
        let pick = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.trim());
        let kind = pick("kind").map_or(Ok(base_kind), str::parse)?;
        let env = pick("env").map_or(Ok(EnvKind::Gridworld), str::parse)?;
        let model = pick("model").map_or(Ok(ModelKind::Parsimony), str::parse)?;
        let mut cfg = Self::new(kind, env, model);
        for (k, v) in pairs.iter().filter(|(k, _)| !HEAD_KEYS.contains(&k.as_str())) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a flat config file: `key = value` lines, `#` comments.
    pub fn parse_file_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("kind".into(), self.kind.as_str().into()),
            ("env".into(), self.env.as_str().into()),
            ("model".into(), self.model.as_str().into()),
            ("seeds".into(), format_seeds(&self.seeds)),
            ("out".into(), self.out.display().to_string()),
            ("precision".into(), self.precision.to_string()),
            ("obs_dim".into(), self.obs_dim.to_string()),
            ("episodes".into(), self.episodes.to_string()),
            ("tasks".into(), self.tasks.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("epsilon_power".into(), self.epsilon_power.to_string()),
            ("epsilon".into(), self.epsilon_override.map_or("schedule".into(), |e| e.to_string())),
            ("dynamics_steps".into(), self.dynamics_steps.to_string()),
            ("dynamics_batch".into(), self.dynamics_batch.to_string()),
        ];
        let sections: [(&str, Vec<(String, String)>); 6] = [
            ("sac", self.sac.to_pairs()),
            ("cem", self.cem.to_pairs()),
            ("parsimony", self.parsimony.to_pairs()),
            ("vae", self.vae.to_pairs()),
            ("rnn", self.rnn.to_pairs()),
            ("ssm", self.ssm.to_pairs()),
        ];
        for (name, pairs) in sections {
            out.extend(pairs.into_iter().map(|(k, v)| (format!("{name}.{k}"), v)));
        }
        out
    }

    /// The config file text; parsing it back gives an equal config.
    pub fn snapshot(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn policy(&self) -> Result<PolicyExperimentConfig> {
        let model = self.model.policy_model().ok_or_else(|| {
            Error::Config(format!("model `{}` cannot drive a policy experiment", self.model))
        })?;
        Ok(PolicyExperimentConfig {
            env: self.env,
            obs_dim: self.obs_dim,
            model,
            episodes: self.episodes,
            sac: self.sac.clone(),
            parsimony: self.parsimony.clone(),
            vae: self.vae.clone(),
        })
    }

    pub fn planning(&self) -> Result<PlanningExperimentConfig> {
        let model = self.model.planning_model().ok_or_else(|| {
            Error::Config(format!("model `{}` cannot drive a planning experiment", self.model))
        })?;
        Ok(PlanningExperimentConfig {
            env: self.env,
            obs_dim: self.obs_dim,
            model,
            tasks: self.tasks,
            steps: self.steps,
            cem: self.cem,
            epsilon_power: self.epsilon_power,
            epsilon_override: self.epsilon_override,
            dynamics_steps: self.dynamics_steps,
            dynamics_batch: self.dynamics_batch,
            parsimony: self.parsimony.clone(),
            rnn: self.rnn.clone(),
            ssm: self.ssm.clone(),
        })
    }
}
