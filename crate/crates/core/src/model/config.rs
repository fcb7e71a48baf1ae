use std::fmt;
use std::str::FromStr;

use crate::diffmath::skew_param_count;
use crate::error::{Error, Result};

/// Which affine maps the transform decoder can express.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformFamily {
    Rotation,
    Translation,
    /// Rotation followed by translation: `z' = R z + v`.
    Affine,
}

impl TransformFamily {
    pub fn has_rotation(self) -> bool {
        matches!(self, TransformFamily::Rotation | TransformFamily::Affine)
    }

    pub fn has_translation(self) -> bool {
        matches!(self, TransformFamily::Translation | TransformFamily::Affine)
    }

    /// Decoder output width for latent dimension `d`.
    pub fn param_count(self, d: usize) -> usize {
        let rot = if self.has_rotation() { skew_param_count(d) } else { 0 };
        let trans = if self.has_translation() { d } else { 0 };
        rot + trans
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransformFamily::Rotation => "rotation",
            TransformFamily::Translation => "translation",
            TransformFamily::Affine => "affine",
        }
    }
}

impl fmt::Display for TransformFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(TransformFamily::Rotation),
            "translation" => Ok(TransformFamily::Translation),
            "affine" => Ok(TransformFamily::Affine),
            other => Err(Error::Unknown { what: "transform family", value: other.into() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Deterministic,
    Stochastic,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Variant::Deterministic),
            "stochastic" => Ok(Variant::Stochastic),
            other => Err(Error::Unknown { what: "model variant", value: other.into() }),
        }
    }
}

/// Hyperparameters of the parsimonious dynamics model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsimonyConfig {
    /// Latent state dimension `d`.
    pub latent_dim: usize,
    /// Transition code dimension `n`.
    pub code_dim: usize,
    /// Weight of the code KL (parsimony) term.
    pub beta: f64,
    pub family: TransformFamily,
    pub variant: Variant,
    /// Decay of observation similarity targets.
    pub tau_s: f64,
    /// Decay of latent similarities.
    pub tau_z: f64,
    /// Hidden layer widths shared by encoder, code networks and decoder.
    pub hidden: Vec<usize>,
    /// Drop the `exp(-|error|)` term of the deterministic transition loss.
    pub mse_only: bool,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ParsimonyConfig {
    fn default() -> Self {
        Self {
            latent_dim: 15,
            code_dim: 15,
            beta: 0.5,
            family: TransformFamily::Affine,
            variant: Variant::Deterministic,
            tau_s: 100.0,
            tau_z: 0.1,
            hidden: vec![1200, 1200],
            mse_only: false,
            lr: 1e-3,
            batch_size: 128,
        }
    }
}

impl ParsimonyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.code_dim == 0 {
            return Err(Error::Config("latent and code dimensions must be positive".into()));
        }
        if self.code_dim > 32 {
            return Err(Error::Config("code dimension is limited to 32 bits".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if !(self.tau_s > 0.0 && self.tau_z > 0.0) {
            return Err(Error::Config("tau_s and tau_z must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Flat `key=value` pairs, as stored in checkpoints and run snapshots.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("code_dim".into(), self.code_dim.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("family".into(), self.family.to_string()),
            ("variant".into(), self.variant.to_string()),
            ("tau_s".into(), self.tau_s.to_string()),
            ("tau_z".into(), self.tau_z.to_string()),
            ("hidden".into(), hidden),
            ("mse_only".into(), self.mse_only.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
        ]
    }

    /// Sets one field from its `key=value` text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "code_dim" => self.code_dim = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "family" => self.family = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "tau_s" => self.tau_s = parse_value(key, value)?,
            "tau_z" => self.tau_z = parse_value(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "mse_only" => self.mse_only = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            other => return Err(Error::Unknown { what: "model config key", value: other.into() }),
        }
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

/// Comma-separated list; empty text gives an empty list.
pub(crate) fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_value(key, s)).collect()
}
