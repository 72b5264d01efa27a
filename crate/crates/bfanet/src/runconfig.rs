//! Flat `key = value` run configuration covering the model and the trainer.

use std::fmt::Write as _;
use std::path::Path;

use bfanet_core::data::DEFAULT_MEANS_RGB;
use bfanet_core::{LossWeights, ModelConfig, Preprocess, TrainConfig};

use crate::error::{Error, Result};

/// Brings mean-subtracted 8-bit values to roughly unit spread.
pub const DEFAULT_INPUT_SCALE: f64 = 0.017;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: usize,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Stop early once the epoch loss stops improving.
    pub plateau: bool,
    /// Channel means in B, G, R order.
    pub means_bgr: [f64; 3],
    pub input_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            epochs: 50,
            checkpoint_every: 0,
            plateau: false,
            means_bgr: [DEFAULT_MEANS_RGB[2], DEFAULT_MEANS_RGB[1], DEFAULT_MEANS_RGB[0]],
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }
}

pub const KEYS: &[&str] = &[
    "input_size",
    "base_channels",
    "boundary_channels",
    "agg_channels",
    "rcu_count",
    "ablation",
    "fpm_subset",
    "seed",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs",
    "lambda_boundary",
    "supervise_stages",
    "boundary_pos_weight",
    "checkpoint_every",
    "plateau",
    "means_bgr",
    "input_scale",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config("cli", format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(
            "cli",
            format!("{key}: expected true or false, got {v:?}"),
        )),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "input_size" => {
                let s: usize = num(key, v)?;
                self.model.input_h = s;
                self.model.input_w = s;
            }
            "base_channels" => self.model.base_channels = num(key, v)?,
            "boundary_channels" => self.model.boundary_channels = num(key, v)?,
            "agg_channels" => self.model.agg_channels = num(key, v)?,
            "rcu_count" => self.model.rcu_count = num(key, v)?,
            "ablation" => {
                self.model.ablation = v
                    .parse()
                    .map_err(|_| Error::config("cli", format!("ablation: unknown variant {v:?}")))?
            }
            "fpm_subset" => {
                self.model.fpm_subset = v
                    .parse()
                    .map_err(|_| Error::config("cli", format!("fpm_subset: bad subset {v:?}")))?
            }
            "seed" => self.model.seed = num(key, v)?,
            "lr" => self.train.base_lr = num(key, v)?,
            "momentum" => self.train.momentum = num(key, v)?,
            "weight_decay" => self.train.weight_decay = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lambda_boundary" => self.train.loss.lambda_boundary = num(key, v)?,
            "supervise_stages" => self.train.loss.supervise_stages = flag(key, v)?,
            "boundary_pos_weight" => self.train.loss.boundary_pos_weight = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "plateau" => self.plateau = flag(key, v)?,
            "means_bgr" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::config(
                        "cli",
                        format!("means_bgr: expected three values, got {v:?}"),
                    ));
                }
                for (slot, p) in self.means_bgr.iter_mut().zip(parts) {
                    *slot = num(key, p)?;
                }
            }
            "input_scale" => self.input_scale = num(key, v)?,
            _ => return Err(Error::config("cli", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config("cli", format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::config("cli", format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { module, msg } => Error::config(module, format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.input_h != self.model.input_w {
            return Err(Error::config("cli", "input must be square"));
        }
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("trainer", "batch_size must be at least 1"));
        }
        if !(t.base_lr >= 0.0 && t.momentum >= 0.0 && t.weight_decay >= 0.0) {
            return Err(Error::config(
                "trainer",
                "lr, momentum and weight_decay must be non-negative",
            ));
        }
        if !(t.loss.lambda_boundary >= 0.0 && t.loss.boundary_pos_weight > 0.0) {
            return Err(Error::config(
                "trainer",
                "lambda_boundary must be >= 0 and boundary_pos_weight > 0",
            ));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::config("data-io", "input_scale must be positive"));
        }
        Ok(())
    }

    /// Every key in canonical order; `parse(to_text())` returns an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("input_size", m.input_h.to_string());
        kv("base_channels", m.base_channels.to_string());
        kv("boundary_channels", m.boundary_channels.to_string());
        kv("agg_channels", m.agg_channels.to_string());
        kv("rcu_count", m.rcu_count.to_string());
        kv("ablation", m.ablation.to_string());
        kv("fpm_subset", m.fpm_subset.to_string());
        kv("seed", m.seed.to_string());
        kv("lr", t.base_lr.to_string());
        kv("momentum", t.momentum.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lambda_boundary", t.loss.lambda_boundary.to_string());
        kv("supervise_stages", t.loss.supervise_stages.to_string());
        kv("boundary_pos_weight", t.loss.boundary_pos_weight.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("plateau", self.plateau.to_string());
        kv(
            "means_bgr",
            format!("{},{},{}", self.means_bgr[0], self.means_bgr[1], self.means_bgr[2]),
        );
        kv("input_scale", self.input_scale.to_string());
        s
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            height: self.model.input_h,
            width: self.model.input_w,
            means_rgb: [self.means_bgr[2], self.means_bgr[1], self.means_bgr[0]],
            scale: self.input_scale,
        }
    }

    pub fn loss(&self) -> LossWeights {
        self.train.loss
    }
}
