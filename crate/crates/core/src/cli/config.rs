//! Flat `section.key=value` configuration merged from a file and flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Text,
    Number,
    /// Must exist when set.
    InputPath,
    OutputPath,
    Flag,
}

/// Every accepted key, its kind, and its default (if any).
pub const KEYS: &[(&str, Kind, Option<&str>)] = &[
    ("gen.out", Kind::OutputPath, None),
    ("gen.count", Kind::Number, Some("100")),
    ("gen.seed", Kind::Number, Some("0")),
    ("gen.families", Kind::Text, Some("walk,turn,squat,reach,idle")),
    ("gen.min_frames", Kind::Number, Some("160")),
    ("gen.max_frames", Kind::Number, Some("160")),
    ("gen.height_min", Kind::Number, Some("0.85")),
    ("gen.height_max", Kind::Number, Some("1.15")),
    ("gen.arm_min", Kind::Number, Some("0.9")),
    ("gen.arm_max", Kind::Number, Some("1.1")),
    ("gen.hands", Kind::Flag, Some("false")),
    ("gen.points", Kind::Flag, Some("false")),
    ("hands.depth_scale", Kind::Number, Some("1")),
    ("hands.noise_px", Kind::Number, Some("0")),
    ("hands.dropout", Kind::Number, Some("0")),
    ("train.data", Kind::InputPath, None),
    ("train.out", Kind::OutputPath, None),
    ("train.loss_csv", Kind::OutputPath, None),
    ("train.variant", Kind::Text, Some("egoallo")),
    ("train.steps", Kind::Number, Some("2000")),
    ("train.batch", Kind::Number, Some("8")),
    ("train.lr", Kind::Number, Some("0.001")),
    ("train.seed", Kind::Number, Some("0")),
    ("train.crop_min", Kind::Number, Some("32")),
    ("train.crop_max", Kind::Number, Some("128")),
    ("train.width", Kind::Number, Some("64")),
    ("train.heads", Kind::Number, Some("4")),
    ("train.ff", Kind::Number, Some("256")),
    ("train.enc_blocks", Kind::Number, Some("2")),
    ("train.dec_blocks", Kind::Number, Some("2")),
    ("train.diffusion_steps", Kind::Number, Some("1000")),
    ("train.grad_clip", Kind::Number, Some("1")),
    ("train.max_sequences", Kind::Number, Some("0")),
    ("estimate.checkpoint", Kind::InputPath, None),
    ("estimate.input", Kind::InputPath, None),
    ("estimate.observations", Kind::InputPath, None),
    ("estimate.points", Kind::InputPath, None),
    ("estimate.truth", Kind::InputPath, None),
    ("estimate.out", Kind::OutputPath, None),
    ("estimate.metrics", Kind::OutputPath, None),
    ("estimate.steps", Kind::Number, Some("30")),
    ("estimate.seed", Kind::Number, Some("0")),
    ("guidance.hands3d", Kind::Number, Some("1")),
    ("guidance.reproj", Kind::Number, Some("0.002")),
    ("guidance.skate", Kind::Number, Some("10")),
    ("guidance.prior_abs", Kind::Number, Some("1")),
    ("guidance.prior_vel", Kind::Number, Some("10")),
    ("guidance.prior_fk", Kind::Number, Some("1")),
    ("guidance.final_steps", Kind::Number, Some("10")),
    ("guidance.max_iterations", Kind::Number, Some("8")),
    ("eval.checkpoint", Kind::InputPath, None),
    ("eval.data", Kind::InputPath, None),
    ("eval.out", Kind::OutputPath, None),
    ("eval.count", Kind::Number, Some("200")),
    ("eval.seqlens", Kind::Text, Some("32,128")),
    ("eval.steps", Kind::Number, Some("30")),
    ("eval.seed", Kind::Number, Some("0")),
    ("ablate.data", Kind::InputPath, None),
    ("ablate.out", Kind::OutputPath, None),
    ("ablate.variants", Kind::Text, Some("egoallo,abs-local-rel,abs-global-deltas,seq-canonical,absolute")),
    ("ablate.quick", Kind::Flag, Some("false")),
    ("floor.points", Kind::InputPath, None),
    ("floor.tau", Kind::Number, Some("0.01")),
    ("floor.iterations", Kind::Number, Some("1000")),
    ("floor.confidence", Kind::Number, Some("0.5")),
    ("floor.min_points", Kind::Number, Some("50")),
    ("floor.seed", Kind::Number, Some("0")),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, kind, _)| *kind)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(path, i + 1, format!("expected key=value, got '{line}'")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if kind_of(key).is_none() {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Sets `key` if `value` is present.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// `other` wins on conflicts.
    pub fn merged(mut self, other: &RunConfig) -> Self {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(kind_of(key).is_some(), "undeclared key {key}");
        self.values.get(key).map(String::as_str).or_else(|| KEYS.iter().find(|(k, _, _)| *k == key).and_then(|(_, _, d)| *d))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
        raw.parse().map_err(|e| Error::Config(format!("{key}={raw}: {e}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<PathBuf>(key)
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") | None => Ok(false),
            Some(v) => Err(Error::Config(format!("{key}={v}: expected true or false"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        let raw = self.raw(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
        Ok(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    /// Checks that the listed keys are present and that every set input
    /// path exists.
    pub fn validate(&self, required: &[&str]) -> Result<()> {
        for key in required {
            if self.raw(key).is_none() {
                return Err(Error::Config(format!("missing required key '{key}'")));
            }
        }
        for (k, v) in &self.values {
            if kind_of(k) == Some(Kind::InputPath) && !Path::new(v).exists() {
                return Err(Error::Config(format!("{k}: path '{v}' does not exist")));
            }
            if kind_of(k) == Some(Kind::Number) && v.parse::<f64>().is_err() {
                return Err(Error::Config(format!("{k}={v}: not a number")));
            }
        }
        Ok(())
    }
}
