//! Experiment configuration: per-task defaults at two scales, JSON files and
//! dotted `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::OptimizerConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::odeint::SystemSpec;
use crate::student::StudentLossWeights;
use crate::teacher::ContrastiveConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PendulumNumeric,
    DuffingNumeric,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PendulumNumeric => "pendulum_numeric",
            Task::DuffingNumeric => "duffing_numeric",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Teacher,
    Student,
    Onestage,
    Supervised,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Teacher => "teacher",
            Mode::Student => "student",
            Mode::Onestage => "onestage",
            Mode::Supervised => "supervised",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub causal_encoder: bool,
}

/// Encoder + latent field training (teacher, one-stage and supervised).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSettings {
    /// Also the schedule length: `optimizer.total_steps` follows it.
    pub steps: usize,
    pub batch_size: usize,
    pub field_hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Learn `R = LᵀL`; otherwise `L` is held at zero.
    pub dissipative: bool,
    pub weights: StudentLossWeights,
    pub optimizer: OptimizerConfig,
    pub log_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub horizon: usize,
    pub anchor_stride: usize,
    pub anchor_cap: usize,
    pub energy_steps: usize,
    pub energy_rollouts: usize,
    pub monotone_slack: f64,
    pub grid_resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub scale: Scale,
    pub mode: Mode,
    pub dataset: SystemSpec,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub teacher: TeacherSettings,
    pub student: StudentSettings,
    pub eval: EvalSettings,
    pub ablation: Ablation,
}

impl ExperimentConfig {
    pub fn defaults(task: Task, scale: Scale) -> Self {
        let full = scale == Scale::Full;
        let mut dataset = match task {
            Task::PendulumNumeric => SystemSpec::pendulum(),
            Task::DuffingNumeric => SystemSpec::duffing(),
        };
        let (temperature, exclusion) = match task {
            Task::PendulumNumeric => (0.05, 10),
            Task::DuffingNumeric => (0.07, 15),
        };
        let mut contrastive = ContrastiveConfig { temperature, exclusion, ..ContrastiveConfig::default() };
        let (encoder, teacher, student, eval) = if full {
            (
                EncoderConfig::default(),
                TeacherSettings {
                    steps: 50_000,
                    batch_size: 256,
                    field_hidden: vec![64, 64],
                    optimizer: OptimizerConfig {
                        warmup_steps: 1000,
                        total_steps: 50_000,
                        ..OptimizerConfig::default()
                    },
                    log_every: 100,
                    checkpoint_every: 5000,
                },
                StudentSettings {
                    steps: 50_000,
                    batch_size: 256,
                    hidden: vec![64, 64],
                    dissipative: task == Task::DuffingNumeric,
                    weights: StudentLossWeights::default(),
                    optimizer: OptimizerConfig {
                        warmup_steps: 1000,
                        total_steps: 50_000,
                        ..OptimizerConfig::default()
                    },
                    log_every: 100,
                },
                EvalSettings {
                    horizon: 20,
                    anchor_stride: 5,
                    anchor_cap: 2000,
                    energy_steps: 300,
                    energy_rollouts: 32,
                    monotone_slack: 1e-6,
                    grid_resolution: 41,
                },
            )
        } else {
            dataset.n_traj = 100;
            // Same batch-to-bank mix of negatives as the full profile: with a
            // quarter of the batch, most of a 2048 quota would come from the
            // bank, and on Duffing that drives the latent cloud to run from
            // its own recent past.
            contrastive.n_local_negatives = 512;
            (
                EncoderConfig { layers: 1, hidden: 32, ..EncoderConfig::default() },
                TeacherSettings {
                    steps: 1500,
                    batch_size: 64,
                    field_hidden: vec![64, 64],
                    optimizer: OptimizerConfig {
                        lr: 2e-3,
                        warmup_steps: 100,
                        total_steps: 1500,
                        ..OptimizerConfig::default()
                    },
                    log_every: 50,
                    checkpoint_every: 0,
                },
                StudentSettings {
                    steps: 5000,
                    batch_size: 256,
                    hidden: vec![64, 64],
                    dissipative: task == Task::DuffingNumeric,
                    weights: StudentLossWeights {
                        mag_warmup_start: 2000,
                        mag_warmup_end: 4000,
                        ..StudentLossWeights::default()
                    },
                    optimizer: OptimizerConfig {
                        lr: 2e-3,
                        warmup_steps: 200,
                        total_steps: 5000,
                        ..OptimizerConfig::default()
                    },
                    log_every: 100,
                },
                EvalSettings {
                    horizon: 20,
                    anchor_stride: 5,
                    anchor_cap: 500,
                    energy_steps: 300,
                    energy_rollouts: 16,
                    monotone_slack: 1e-6,
                    grid_resolution: 41,
                },
            )
        };
        ExperimentConfig {
            task,
            seed: 0,
            scale,
            mode: Mode::Teacher,
            dataset,
            encoder,
            contrastive,
            teacher,
            student,
            eval,
            ablation: Ablation::default(),
        }
    }

    /// Defaults for the task and scale named in `overrides` (falling back to
    /// pendulum/desk), then the file, then each `key=value` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Some(serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        let pairs = overrides.iter().map(|s| split_override(s)).collect::<Result<Vec<_>>>()?;
        let pick = |key: &str| -> Result<Option<Value>> {
            if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k == key) {
                return Ok(Some(v.clone()));
            }
            Ok(file_value.as_ref().and_then(|f| f.get(key).cloned()))
        };
        let task: Task = match pick("task")? {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::Config(format!("task: {e}")))?,
            None => Task::PendulumNumeric,
        };
        let scale: Scale = match pick("scale")? {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::Config(format!("scale: {e}")))?,
            None => Scale::Desk,
        };
        let mut value = serde_json::to_value(Self::defaults(task, scale))?;
        if let Some(f) = file_value {
            merge(&mut value, f, "")?;
            let causal = value["ablation"]["causal_encoder"] == Value::Bool(true)
                || value["encoder"]["causal_mode"] == Value::Bool(true);
            value["ablation"]["causal_encoder"] = Value::Bool(causal);
            value["encoder"]["causal_mode"] = Value::Bool(causal);
        }
        for (k, v) in pairs {
            set_path(&mut value, &k, v)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync_schedules();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Each schedule spans its run: `total_steps` follows `steps` and warmup
    /// is clipped below it.
    fn sync_schedules(&mut self) {
        for (steps, opt) in
            [(self.teacher.steps, &mut self.teacher.optimizer), (self.student.steps, &mut self.student.optimizer)]
        {
            opt.total_steps = steps;
            opt.warmup_steps = opt.warmup_steps.min(steps.saturating_sub(1));
        }
    }

    /// Applies one more `key=value` to an already resolved config.
    pub fn with_override(&self, kv: &str) -> Result<Self> {
        let (k, v) = split_override(kv)?;
        let mut value = serde_json::to_value(self)?;
        set_path(&mut value, &k, v)?;
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync_schedules();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(|e| Error::Config(format!("dataset: {e}")))?;
        self.encoder.validate()?;
        self.contrastive.validate()?;
        self.teacher.optimizer.validate()?;
        self.student.optimizer.validate()?;
        self.student.weights.validate()?;
        if self.teacher.steps == 0 || self.student.steps == 0 {
            return Err(Error::Config("training steps must be ≥ 1".into()));
        }
        if self.teacher.batch_size == 0 || self.student.batch_size == 0 {
            return Err(Error::Config("batch sizes must be ≥ 1".into()));
        }
        if self.eval.horizon == 0 || self.eval.anchor_stride == 0 || self.eval.grid_resolution < 2 {
            return Err(Error::Config(format!("invalid eval settings {:?}", self.eval)));
        }
        let need = self.encoder.window + self.contrastive.max_horizon().max(self.eval.horizon) + 1;
        let need = if self.encoder.causal_mode { need } else { need + self.encoder.window };
        if self.dataset.traj_len < need {
            return Err(Error::Config(format!(
                "traj_len {} too short for window {} and horizons (needs ≥ {need})",
                self.dataset.traj_len, self.encoder.window
            )));
        }
        if self.ablation.causal_encoder != self.encoder.causal_mode {
            return Err(Error::Config("ablation.causal_encoder and encoder.causal_mode disagree".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_override(kv: &str) -> Result<(String, Value)> {
    let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
    if k.is_empty() {
        return Err(Error::Config(format!("override {kv:?} has an empty key")));
    }
    // Bare words are strings; everything else is JSON.
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), v))
}

fn set_path(root: &mut Value, path: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = &mut *root;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {} is not a section", parts[..i].join("."))))?;
        cur = obj.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
    }
    *cur = v;
    // The causal ablation flips exactly one encoder flag.
    if path == "ablation.causal_encoder" || path == "encoder.causal_mode" {
        let flag = cur.clone();
        root["ablation"]["causal_encoder"] = flag.clone();
        root["encoder"]["causal_mode"] = flag;
    }
    Ok(())
}

fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<()> {
    match patch {
        Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                let slot = base.get_mut(&k).ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
                if v.is_object() && slot.is_object() {
                    merge(slot, v, &path)?;
                } else {
                    *slot = v;
                }
            }
            Ok(())
        }
        other => Err(Error::Config(format!("config file must be a JSON object, got {other}"))),
    }
}
