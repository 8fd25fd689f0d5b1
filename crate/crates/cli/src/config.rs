use std::fmt;
use std::path::Path;

use clap::Args;
use gwdial::trainer::{TrainError, TrainerConfig};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// One σ arm of a noise comparison: a constant level, or the configured
/// increasing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSetting {
    Constant(f64),
    Schedule,
}

impl SigmaSetting {
    pub fn label(&self) -> String {
        match self {
            SigmaSetting::Constant(s) => format!("sigma-{s}"),
            SigmaSetting::Schedule => "sigma-schedule".into(),
        }
    }

    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "schedule" {
            return Ok(SigmaSetting::Schedule);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(SigmaSetting::Constant)
            .ok_or_else(|| format!("{s:?} is neither a non-negative number nor \"schedule\""))
    }
}

impl Serialize for SigmaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SigmaSetting::Constant(v) => s.serialize_f64(*v),
            SigmaSetting::Schedule => s.serialize_str("schedule"),
        }
    }
}

impl<'de> Deserialize<'de> for SigmaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = SigmaSetting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"schedule\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<SigmaSetting, E> {
                SigmaSetting::parse(&v.to_string()).map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<SigmaSetting, E> {
                Ok(SigmaSetting::Constant(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<SigmaSetting, E> {
                SigmaSetting::parse(&v.to_string()).map_err(E::custom)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<SigmaSetting, E> {
                SigmaSetting::parse(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Trainer settings plus run orchestration, stored as one flat object.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub out_dir: String,
    /// One run per seed; empty means just `seed`.
    pub seeds: Vec<u64>,
    /// Noise comparison: one run directory per setting.
    pub sigma_grid: Vec<SigmaSetting>,
    /// Paired runs with and without the answerer zero-state ablation.
    pub ablation_grid: bool,
    /// Analyses to run on each finished checkpoint.
    pub analyses: Vec<String>,
    /// Checkpoint every this many epochs (and at the end); 0 only at the end.
    pub checkpoint_every: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Extras {
    out_dir: String,
    seeds: Vec<u64>,
    sigma_grid: Vec<SigmaSetting>,
    ablation_grid: bool,
    analyses: Vec<String>,
    checkpoint_every: usize,
}

impl Default for Extras {
    fn default() -> Self {
        Self {
            out_dir: "runs".into(),
            seeds: Vec::new(),
            sigma_grid: Vec::new(),
            ablation_grid: false,
            analyses: Vec::new(),
            checkpoint_every: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(TrainerConfig::default(), Extras::default())
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("structs serialize to objects"),
    }
}

fn trainer_keys() -> Vec<String> {
    object(serde_json::to_value(TrainerConfig::default()).expect("config serializes"))
        .into_iter()
        .map(|(k, _)| k)
        .collect()
}

impl RunConfig {
    fn from_parts(trainer: TrainerConfig, e: Extras) -> Self {
        Self {
            trainer,
            out_dir: e.out_dir,
            seeds: e.seeds,
            sigma_grid: e.sigma_grid,
            ablation_grid: e.ablation_grid,
            analyses: e.analyses,
            checkpoint_every: e.checkpoint_every,
        }
    }

    fn extras(&self) -> Extras {
        Extras {
            out_dir: self.out_dir.clone(),
            seeds: self.seeds.clone(),
            sigma_grid: self.sigma_grid.clone(),
            ablation_grid: self.ablation_grid,
            analyses: self.analyses.clone(),
            checkpoint_every: self.checkpoint_every,
        }
    }
}

impl Serialize for RunConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = object(serde_json::to_value(&self.trainer).map_err(serde::ser::Error::custom)?);
        m.extend(object(serde_json::to_value(self.extras()).map_err(serde::ser::Error::custom)?));
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RunConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let all = Map::<String, Value>::deserialize(d)?;
        let keys = trainer_keys();
        let (t, e): (Map<String, Value>, Map<String, Value>) = all.into_iter().partition(|(k, _)| keys.contains(k));
        let trainer = serde_json::from_value(Value::Object(t)).map_err(de::Error::custom)?;
        let extras = serde_json::from_value(Value::Object(e)).map_err(de::Error::custom)?;
        Ok(Self::from_parts(trainer, extras))
    }
}

pub const ANALYSES: [&str; 5] = ["protocols", "partition", "distances", "embed", "homograph"];

/// `--kebab-case` overrides for every config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ask_vocab: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_vocab: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_period: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_start: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_end: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_answerer_state: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_dir: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gru_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_wall_time: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detach_messages: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated σ settings, numbers or `schedule`.
    #[arg(long, value_delimiter = ',', value_parser = SigmaSetting::parse)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_grid: Option<Vec<SigmaSetting>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation_grid: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analyses: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>, source: &str) -> Result<()> {
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(usage(format!("unknown config key {k:?} in {source}")));
        }
        let mut probe = base.clone();
        probe.insert(k.clone(), v.clone());
        if let Err(e) = serde_json::from_value::<RunConfig>(Value::Object(probe)) {
            return Err(usage(format!("config key {k:?} in {source}: {e}")));
        }
        base.insert(k, v);
    }
    Ok(())
}

/// Defaults, then the file, then flags; the rightmost source wins.
/// `env_seed` (from `GWDIAL_SEED`) replaces the default seed only.
pub fn parse_config(file: Option<&Path>, flags: &ConfigFlags, env_seed: Option<u64>) -> Result<RunConfig> {
    let mut defaults = RunConfig::default();
    if let Some(s) = env_seed {
        defaults.trainer.seed = s;
    }
    let Value::Object(mut merged) = serde_json::to_value(&defaults).expect("config serializes") else {
        unreachable!("config is an object");
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let Value::Object(obj) = value else {
            return Err(usage(format!("{}: config must be a JSON object", path.display())));
        };
        overlay(&mut merged, obj, &path.display().to_string())?;
    }
    let Value::Object(flag_map) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flags are an object");
    };
    overlay(&mut merged, flag_map, "flags")?;
    let cfg: RunConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| usage(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate().map_err(|e| match e {
            TrainError::Config { key, reason } => usage(format!("config key {key:?}: {reason}")),
            other => usage(other.to_string()),
        })?;
        if !self.sigma_grid.is_empty() && self.ablation_grid {
            return Err(usage("choose one grid axis: sigma_grid or ablation_grid"));
        }
        for a in &self.analyses {
            if !ANALYSES.contains(&a.as_str()) {
                return Err(usage(format!("config key \"analyses\": unknown analysis {a:?}")));
            }
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.trainer.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_settings_parse_and_label() {
        assert_eq!(SigmaSetting::parse("schedule"), Ok(SigmaSetting::Schedule));
        assert_eq!(SigmaSetting::parse(" 0.5 "), Ok(SigmaSetting::Constant(0.5)));
        assert!(SigmaSetting::parse("-1").is_err());
        assert!(SigmaSetting::parse("loud").is_err());
        assert_eq!(SigmaSetting::Constant(1.0).label(), "sigma-1");
        assert_eq!(SigmaSetting::Constant(0.1).label(), "sigma-0.1");
        assert_eq!(SigmaSetting::Schedule.label(), "sigma-schedule");
    }

    #[test]
    fn run_config_round_trips_through_flat_json() {
        let cfg = RunConfig {
            seeds: vec![3, 4],
            sigma_grid: vec![SigmaSetting::Constant(0.0), SigmaSetting::Schedule],
            analyses: vec!["embed".into()],
            ..RunConfig::default()
        };
        let v: Value = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(v["sigma_grid"], serde_json::json!([0.0, "schedule"]));
        assert_eq!(v["epochs"], serde_json::json!(10000));
        assert_eq!(serde_json::from_value::<RunConfig>(v).unwrap(), cfg);
        assert_eq!(cfg.seed_list(), vec![3, 4]);
        assert_eq!(RunConfig::default().seed_list(), vec![0]);
    }

    #[test]
    fn unset_flags_serialize_to_nothing() {
        let v = serde_json::to_value(ConfigFlags::default()).unwrap();
        assert_eq!(v, serde_json::json!({}));
    }
}
