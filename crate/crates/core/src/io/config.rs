//! Run configuration as a plain `key = value` file.
//!
//! `#` starts a comment; blank lines are ignored; later assignments win.
//! Unknown keys are errors. `phases` and `spatial_dim` set both the TCN and
//! the aggregation head so the two always agree.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::read_text;
use crate::aggregation::{AggregationConfig, QueryKeyMode};
use crate::error::{Error, Result};
use crate::linalg::RngSeed;
use crate::metrics::Averaging;
use crate::tcn::TcnConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub model: AggregationConfig,
    pub tcn: TcnConfig,
    pub mode: QueryKeyMode,
    pub train: TrainConfig,
    pub tcn_train: TrainConfig,
    pub averaging: Averaging,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: AggregationConfig::default(),
            tcn: TcnConfig::default(),
            mode: QueryKeyMode::HYBRID,
            train: TrainConfig {
                stage_supervision: false,
                ..TrainConfig::default()
            },
            tcn_train: TrainConfig::default(),
            averaging: Averaging::Pooled,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn set_train(t: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "learning_rate" => t.learning_rate = parse(key, value)?,
        "optimizer" => t.optimizer = value.parse()?,
        "beta1" => t.beta1 = parse(key, value)?,
        "beta2" => t.beta2 = parse(key, value)?,
        "adam_eps" => t.adam_eps = parse(key, value)?,
        "epochs" => t.epochs = parse(key, value)?,
        "seed" => t.seed = RngSeed(parse(key, value)?),
        "stage_supervision" => t.stage_supervision = parse_bool(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn write_train(out: &mut String, prefix: &str, t: &TrainConfig) {
    let _ = writeln!(out, "{prefix}.learning_rate = {}", t.learning_rate);
    let _ = writeln!(out, "{prefix}.optimizer = {}", t.optimizer);
    let _ = writeln!(out, "{prefix}.beta1 = {}", t.beta1);
    let _ = writeln!(out, "{prefix}.beta2 = {}", t.beta2);
    let _ = writeln!(out, "{prefix}.adam_eps = {}", t.adam_eps);
    let _ = writeln!(out, "{prefix}.epochs = {}", t.epochs);
    let _ = writeln!(out, "{prefix}.seed = {}", t.seed.0);
    let _ = writeln!(out, "{prefix}.stage_supervision = {}", t.stage_supervision);
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "phases" => {
                self.model.phases = parse(key, value)?;
                self.tcn.out_dim = self.model.phases;
            }
            "spatial_dim" => {
                self.model.spatial_dim = parse(key, value)?;
                self.tcn.spatial_dim = self.model.spatial_dim;
            }
            "window" => self.model.window = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "d_k" => self.model.d_k = parse(key, value)?,
            "d_ff" => self.model.d_ff = parse(key, value)?,
            "layer_norm_eps" => self.model.eps = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "eval.averaging" => self.averaging = value.parse()?,
            "tcn.stages" => self.tcn.stages = parse(key, value)?,
            "tcn.layers_per_stage" => self.tcn.layers_per_stage = parse(key, value)?,
            "tcn.kernel_size" => self.tcn.kernel_size = parse(key, value)?,
            "tcn.hidden_channels" => self.tcn.hidden_channels = parse(key, value)?,
            "tcn.reduced_dim" => self.tcn.reduced_dim = parse(key, value)?,
            "tcn.softmax_between_stages" => self.tcn.softmax_between_stages = parse_bool(key, value)?,
            _ => {
                let handled = match key.split_once('.') {
                    Some(("train", field)) => set_train(&mut self.train, key, field, value)?,
                    Some(("tcn_train", field)) => set_train(&mut self.tcn_train, key, field, value)?,
                    _ => false,
                };
                if !handled {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// `key=value` or `key = value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Every key, in a form [`Config::parse_text`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.tcn;
        let mut out = String::new();
        let _ = writeln!(out, "phases = {}", m.phases);
        let _ = writeln!(out, "spatial_dim = {}", m.spatial_dim);
        let _ = writeln!(out, "window = {}", m.window);
        let _ = writeln!(out, "heads = {}", m.heads);
        let _ = writeln!(out, "d_k = {}", m.d_k);
        let _ = writeln!(out, "d_ff = {}", m.d_ff);
        let _ = writeln!(out, "layer_norm_eps = {}", m.eps);
        let _ = writeln!(out, "mode = {}", self.mode);
        let _ = writeln!(out, "eval.averaging = {}", self.averaging);
        let _ = writeln!(out, "tcn.stages = {}", t.stages);
        let _ = writeln!(out, "tcn.layers_per_stage = {}", t.layers_per_stage);
        let _ = writeln!(out, "tcn.kernel_size = {}", t.kernel_size);
        let _ = writeln!(out, "tcn.hidden_channels = {}", t.hidden_channels);
        let _ = writeln!(out, "tcn.reduced_dim = {}", t.reduced_dim);
        let _ = writeln!(out, "tcn.softmax_between_stages = {}", t.softmax_between_stages);
        write_train(&mut out, "train", &self.train);
        write_train(&mut out, "tcn_train", &self.tcn_train);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tcn.validate()?;
        self.train.validate()?;
        self.tcn_train.validate()?;
        if self.tcn.out_dim != self.model.phases || self.tcn.spatial_dim != self.model.spatial_dim {
            return Err(Error::Config("TCN and aggregation widths disagree".into()));
        }
        Ok(())
    }
}
