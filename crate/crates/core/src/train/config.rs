use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::{HeadInit, LossConfig, SpanMaskConfig, ViewMode};
use crate::tensor::AdamWConfig;

/// How the learning rate evolves from `optimizer.lr` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over `warmup_steps`, then linear decay to 0 at the
    /// last step.
    #[default]
    LinearDecay,
}

/// Everything a pre-training run needs. Defaults are desk-scale: `N = 16`
/// and `lr = 1e-4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub encoder: EncoderConfig,
    /// Distinct samples per batch (`N`); half labeled, half unlabeled.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: usize,
    pub head_init: HeadInit,
    pub view_mode: ViewMode,
    pub loss: LossConfig,
    pub span: SpanMaskConfig,
    pub min_freq: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Also checkpoint every this many steps; 0 writes only at the end.
    pub checkpoint_interval: usize,
    pub metrics_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            labeled: None,
            unlabeled: None,
            encoder: EncoderConfig::default(),
            batch_size: 16,
            steps: 200,
            seed: 0,
            optimizer: AdamWConfig::default(),
            lr_schedule: LrSchedule::LinearDecay,
            warmup_steps: 0,
            head_init: HeadInit::Identity,
            view_mode: ViewMode::Multi,
            loss: LossConfig::default(),
            span: SpanMaskConfig::default(),
            min_freq: 1,
            checkpoint_dir: None,
            checkpoint_interval: 0,
            metrics_path: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be a positive even number, got {}", self.batch_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.warmup_steps >= self.steps && self.lr_schedule == LrSchedule::LinearDecay {
            return Err(Error::Config(format!(
                "warmup_steps ({}) must be below steps ({})",
                self.warmup_steps, self.steps
            )));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        if self.loss.temperature.is_nan() || self.loss.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.loss.temperature)));
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        self.span.validate()
    }

    /// Learning rate of 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.optimizer.lr;
        match self.lr_schedule {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay => {
                if step <= self.warmup_steps {
                    return base * step as f64 / self.warmup_steps as f64;
                }
                let span = (self.steps - self.warmup_steps) as f64;
                base * (self.steps + 1 - step) as f64 / span
            }
        }
    }

    /// Reads a config file: a JSON object, or `key = value` lines with
    /// dotted keys such as `encoder.hidden = 32`. Missing keys keep their
    /// defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let overrides: Vec<(String, String)> = if trimmed.starts_with('{') {
            let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            let mut cfg = to_value(&RunConfig::default());
            merge(&mut cfg, value);
            return from_value(cfg);
        } else {
            parse_key_values(text)?
        };
        RunConfig::default().with_overrides(&overrides)
    }

    /// Applies `key=value` overrides. Values are read as JSON when they
    /// parse as JSON and as plain strings otherwise.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = to_value(self);
        for (key, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let mut node = &mut cfg;
            let parts: Vec<&str> = key.split('.').collect();
            for (depth, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}`: `{}` is not a section", parts[..depth].join("."))))?;
                if !obj.contains_key(*part) {
                    return Err(Error::Config(format!("unknown configuration key `{key}`")));
                }
                node = obj.get_mut(*part).expect("checked");
            }
            *node = value;
        }
        from_value(cfg)
    }
}

fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn to_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn from_value(v: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::NegativeScope;

    #[test]
    fn key_value_and_json_agree() {
        let kv = "# desk run\nencoder.hidden = 32\noptimizer.lr = 0.001\nview_mode = single\nloss.negatives = full_batch\n";
        let json = r#"{"encoder": {"hidden": 32}, "optimizer": {"lr": 0.001}, "view_mode": "single", "loss": {"negatives": "full_batch"}}"#;
        let a = RunConfig::from_text(kv).unwrap();
        let b = RunConfig::from_text(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.encoder.hidden, 32);
        assert_eq!(a.encoder.layers, 2);
        assert_eq!(a.view_mode, ViewMode::Single);
        assert_eq!(a.loss.negatives, NegativeScope::FullBatch);
        assert_eq!(a.optimizer.beta2, 0.999);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(matches!(RunConfig::from_text("encoder.width = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text(r#"{"stepz": 3}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("steps = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("steps"), Err(Error::Config(_))));
    }

    #[test]
    fn paths_accept_bare_strings() {
        let cfg = RunConfig::from_text("labeled = data/l.jsonl\nsteps = 3").unwrap();
        assert_eq!(cfg.labeled.unwrap(), PathBuf::from("data/l.jsonl"));
        assert_eq!(cfg.steps, 3);
    }

    #[test]
    fn linear_decay_reaches_base_then_falls() {
        let cfg = RunConfig { steps: 10, warmup_steps: 2, ..Default::default() };
        let lrs: Vec<f64> = (1..=10).map(|s| cfg.lr_at(s) / cfg.optimizer.lr).collect();
        assert_eq!(lrs[0], 0.5);
        assert_eq!(lrs[1], 1.0);
        assert_eq!(lrs[2], 1.0);
        assert_eq!(lrs[9], 1.0 / 8.0);
        assert!(lrs[2..].windows(2).all(|w| w[1] < w[0]));
        let flat = RunConfig { lr_schedule: LrSchedule::Constant, ..cfg };
        assert!((1..=10).all(|s| flat.lr_at(s) == flat.optimizer.lr));
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { batch_size: 3, ..Default::default() }.validate().is_err());
        assert!(RunConfig { steps: 0, ..Default::default() }.validate().is_err());
    }
}
