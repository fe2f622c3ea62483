//! Experiment configuration: flat `key = value` text with dotted sections.
//!
//! ```text
//! framework = "proposed_serial"
//! num_devices = 10
//! scheduler.policy = "best_channel"
//! scheduler.ratio = 0.5
//! ```
//!
//! Every key is optional; missing keys take their defaults and unknown keys
//! are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gan::GanShape;
use crate::nn::{Activation, MlpSpec, OutputActivation, DEFAULT_LEAKY_SLOPE};
use crate::net::NetworkConfig;
use crate::scheduler::{Policy, DEFAULT_PF_SMOOTHING};

/// Generator and discriminator parameter counts of the DCGAN used in the
/// original experiments; usable as payload overrides.
pub const DCGAN_GENERATOR_PARAMS: u64 = 3_576_704;
pub const DCGAN_DISCRIMINATOR_PARAMS: u64 = 2_765_568;

pub const DATA_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Framework {
    ProposedParallel,
    ProposedSerial,
    FedGan,
    Centralized,
}

impl Framework {
    pub const ALL: [Framework; 4] = [
        Framework::ProposedParallel,
        Framework::ProposedSerial,
        Framework::FedGan,
        Framework::Centralized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::ProposedParallel => "proposed_parallel",
            Framework::ProposedSerial => "proposed_serial",
            Framework::FedGan => "fedgan",
            Framework::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Framework {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Framework::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                format!("unknown framework `{s}` (expected proposed_parallel, proposed_serial, fedgan or centralized)")
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiddenKind {
    Tanh,
    Relu,
    LeakyRelu,
}

impl HiddenKind {
    fn as_str(self) -> &'static str {
        match self {
            HiddenKind::Tanh => "tanh",
            HiddenKind::Relu => "relu",
            HiddenKind::LeakyRelu => "leaky_relu",
        }
    }
}

impl FromStr for HiddenKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(HiddenKind::Tanh),
            "relu" => Ok(HiddenKind::Relu),
            "leaky_relu" => Ok(HiddenKind::LeakyRelu),
            other => Err(format!("unknown activation `{other}` (expected tanh, relu or leaky_relu)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub ratio: f64,
    pub pf_smoothing: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PayloadConfig {
    /// Parameter counts charged on the air; 0 means the model's own count.
    pub generator_params: u64,
    pub discriminator_params: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComputeConfig {
    pub device_step_s: f64,
    pub server_step_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub hidden_activation: HiddenKind,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_d: usize,
    pub n_g: usize,
    pub eta_d: f64,
    pub eta_g: f64,
    /// m_k, the per-device mini-batch size.
    pub batch_size: usize,
    /// M, the server generator batch in the serial schedule and baselines.
    pub generator_batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    pub points_per_device: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub every: u64,
    pub samples: usize,
    pub holdout: usize,
    /// 0 means three mode standard deviations.
    pub coverage_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub master_seed: u64,
    pub max_rounds: u64,
    /// Stop once the Fréchet metric is at or below this value; 0 disables.
    pub target_metric: f64,
    /// Stop once cumulative simulated time reaches this value; 0 disables.
    pub max_sim_time_s: f64,
    pub p_fail: f64,
    /// Worker threads for device updates; 0 lets the runtime decide.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub framework: Framework,
    pub num_devices: usize,
    pub scheduler: SchedulerConfig,
    pub network: NetworkConfig,
    pub payload: PayloadConfig,
    pub compute: ComputeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            framework: Framework::ProposedSerial,
            num_devices: 10,
            scheduler: SchedulerConfig {
                policy: Policy::All,
                ratio: 1.0,
                pf_smoothing: DEFAULT_PF_SMOOTHING,
            },
            network: NetworkConfig::default(),
            payload: PayloadConfig {
                generator_params: 0,
                discriminator_params: 0,
            },
            compute: ComputeConfig {
                device_step_s: 0.005,
                server_step_s: 0.005,
            },
            model: ModelConfig {
                noise_dim: 2,
                generator_hidden: vec![16, 16],
                discriminator_hidden: vec![16, 16],
                hidden_activation: HiddenKind::LeakyRelu,
                leaky_slope: DEFAULT_LEAKY_SLOPE,
            },
            train: TrainConfig {
                n_d: 5,
                n_g: 5,
                eta_d: 0.01,
                eta_g: 0.01,
                batch_size: 128,
                generator_batch: 128,
            },
            dataset: DatasetConfig {
                modes: 8,
                radius: 2.0,
                std: 0.05,
                points_per_device: 4000,
            },
            eval: EvalConfig {
                every: 10,
                samples: 2000,
                holdout: 2000,
                coverage_radius: 0.0,
            },
            run: RunConfig {
                master_seed: 1,
                max_rounds: 2000,
                target_metric: 0.0,
                max_sim_time_s: 0.0,
                p_fail: 0.0,
                workers: 0,
            },
            output_dir: "out".into(),
        }
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "framework",
    "num_devices",
    "scheduler.policy",
    "scheduler.ratio",
    "scheduler.pf_smoothing",
    "network.cell_radius_km",
    "network.pathloss_a",
    "network.pathloss_b",
    "network.noise_psd_dbm_hz",
    "network.device_tx_dbm",
    "network.server_tx_dbm",
    "network.bandwidth_hz",
    "network.bits_per_param",
    "network.shadowing_sigma_db",
    "payload.generator_params",
    "payload.discriminator_params",
    "compute.device_step_s",
    "compute.server_step_s",
    "model.noise_dim",
    "model.generator_hidden",
    "model.discriminator_hidden",
    "model.hidden_activation",
    "model.leaky_slope",
    "train.n_d",
    "train.n_g",
    "train.eta_d",
    "train.eta_g",
    "train.batch_size",
    "train.generator_batch",
    "dataset.modes",
    "dataset.radius",
    "dataset.std",
    "dataset.points_per_device",
    "eval.every",
    "eval.samples",
    "eval.holdout",
    "eval.coverage_radius",
    "run.master_seed",
    "run.max_rounds",
    "run.target_metric",
    "run.max_sim_time_s",
    "run.p_fail",
    "run.workers",
    "output.dir",
];

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::config(key, format!("expected a number, got {}", other.type_str()))),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::Integer(i) => Err(Error::config(key, format!("must be non-negative, got {i}"))),
        other => Err(Error::config(key, format!("expected an integer, got {}", other.type_str()))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::config(key, format!("expected a string, got {}", v.type_str())))
}

fn as_sizes(key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::config(key, format!("expected an array of integers, got {}", v.type_str())))?;
    arr.iter().map(|x| as_usize(key, x)).collect()
}

fn parse_enum<T: FromStr<Err = String>>(key: &str, v: &toml::Value) -> Result<T> {
    as_str(key, v)?.parse().map_err(|e: String| Error::config(key, e))
}

fn flatten_table(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten_table(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.to_string().trim().to_string()))?;
        let mut entries = Vec::new();
        flatten_table("", &table, &mut entries);
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &entries {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Sets one key from its textual value. Bare words are read as strings,
    /// so `framework=fedgan` works from a command line.
    pub fn set_from_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = raw
            .trim()
            .parse::<toml::Value>()
            .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));
        self.apply(key, &value)?;
        self.validate()
    }

    pub fn apply(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "framework" => self.framework = parse_enum(key, v)?,
            "num_devices" => self.num_devices = as_usize(key, v)?,
            "scheduler.policy" => self.scheduler.policy = parse_enum(key, v)?,
            "scheduler.ratio" => self.scheduler.ratio = as_f64(key, v)?,
            "scheduler.pf_smoothing" => self.scheduler.pf_smoothing = as_f64(key, v)?,
            "network.cell_radius_km" => self.network.cell_radius_km = as_f64(key, v)?,
            "network.pathloss_a" => self.network.pathloss_a = as_f64(key, v)?,
            "network.pathloss_b" => self.network.pathloss_b = as_f64(key, v)?,
            "network.noise_psd_dbm_hz" => self.network.noise_psd_dbm_hz = as_f64(key, v)?,
            "network.device_tx_dbm" => self.network.device_tx_dbm = as_f64(key, v)?,
            "network.server_tx_dbm" => self.network.server_tx_dbm = as_f64(key, v)?,
            "network.bandwidth_hz" => self.network.bandwidth_hz = as_f64(key, v)?,
            "network.bits_per_param" => self.network.bits_per_param = as_u64(key, v)?,
            "network.shadowing_sigma_db" => self.network.shadowing_sigma_db = as_f64(key, v)?,
            "payload.generator_params" => self.payload.generator_params = as_u64(key, v)?,
            "payload.discriminator_params" => self.payload.discriminator_params = as_u64(key, v)?,
            "compute.device_step_s" => self.compute.device_step_s = as_f64(key, v)?,
            "compute.server_step_s" => self.compute.server_step_s = as_f64(key, v)?,
            "model.noise_dim" => self.model.noise_dim = as_usize(key, v)?,
            "model.generator_hidden" => self.model.generator_hidden = as_sizes(key, v)?,
            "model.discriminator_hidden" => self.model.discriminator_hidden = as_sizes(key, v)?,
            "model.hidden_activation" => self.model.hidden_activation = parse_enum(key, v)?,
            "model.leaky_slope" => self.model.leaky_slope = as_f64(key, v)?,
            "train.n_d" => self.train.n_d = as_usize(key, v)?,
            "train.n_g" => self.train.n_g = as_usize(key, v)?,
            "train.eta_d" => self.train.eta_d = as_f64(key, v)?,
            "train.eta_g" => self.train.eta_g = as_f64(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.generator_batch" => self.train.generator_batch = as_usize(key, v)?,
            "dataset.modes" => self.dataset.modes = as_usize(key, v)?,
            "dataset.radius" => self.dataset.radius = as_f64(key, v)?,
            "dataset.std" => self.dataset.std = as_f64(key, v)?,
            "dataset.points_per_device" => self.dataset.points_per_device = as_usize(key, v)?,
            "eval.every" => self.eval.every = as_u64(key, v)?,
            "eval.samples" => self.eval.samples = as_usize(key, v)?,
            "eval.holdout" => self.eval.holdout = as_usize(key, v)?,
            "eval.coverage_radius" => self.eval.coverage_radius = as_f64(key, v)?,
            "run.master_seed" => self.run.master_seed = as_u64(key, v)?,
            "run.max_rounds" => self.run.max_rounds = as_u64(key, v)?,
            "run.target_metric" => self.run.target_metric = as_f64(key, v)?,
            "run.max_sim_time_s" => self.run.max_sim_time_s = as_f64(key, v)?,
            "run.p_fail" => self.run.p_fail = as_f64(key, v)?,
            "run.workers" => self.run.workers = as_usize(key, v)?,
            "output.dir" => self.output_dir = as_str(key, v)?.to_string(),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        check(self.num_devices >= 1, "num_devices", "must be at least 1")?;
        check(
            self.scheduler.ratio > 0.0 && self.scheduler.ratio <= 1.0,
            "scheduler.ratio",
            &format!("must be in (0, 1], got {}", self.scheduler.ratio),
        )?;
        check(
            self.scheduler.pf_smoothing > 0.0 && self.scheduler.pf_smoothing <= 1.0,
            "scheduler.pf_smoothing",
            "must be in (0, 1]",
        )?;
        check(finite_pos(self.network.cell_radius_km), "network.cell_radius_km", "must be positive")?;
        check(finite_pos(self.network.bandwidth_hz), "network.bandwidth_hz", "must be positive")?;
        check(self.network.bits_per_param >= 1, "network.bits_per_param", "must be at least 1")?;
        for (key, v) in [
            ("network.pathloss_a", self.network.pathloss_a),
            ("network.pathloss_b", self.network.pathloss_b),
            ("network.noise_psd_dbm_hz", self.network.noise_psd_dbm_hz),
            ("network.device_tx_dbm", self.network.device_tx_dbm),
            ("network.server_tx_dbm", self.network.server_tx_dbm),
        ] {
            check(v.is_finite(), key, "must be finite")?;
        }
        check(
            self.network.shadowing_sigma_db.is_finite() && self.network.shadowing_sigma_db >= 0.0,
            "network.shadowing_sigma_db",
            "must be non-negative",
        )?;
        for (key, v) in [
            ("compute.device_step_s", self.compute.device_step_s),
            ("compute.server_step_s", self.compute.server_step_s),
        ] {
            check(v.is_finite() && v >= 0.0, key, "must be non-negative")?;
        }
        check(self.model.noise_dim >= 1, "model.noise_dim", "must be at least 1")?;
        check(
            self.model.generator_hidden.iter().all(|&h| h >= 1),
            "model.generator_hidden",
            "layer sizes must be at least 1",
        )?;
        check(
            self.model.discriminator_hidden.iter().all(|&h| h >= 1),
            "model.discriminator_hidden",
            "layer sizes must be at least 1",
        )?;
        check(self.model.leaky_slope.is_finite(), "model.leaky_slope", "must be finite")?;
        check(self.train.n_d >= 1, "train.n_d", "must be at least 1")?;
        check(self.train.n_g >= 1, "train.n_g", "must be at least 1")?;
        check(
            self.train.eta_d.is_finite() && self.train.eta_d >= 0.0,
            "train.eta_d",
            "must be non-negative",
        )?;
        check(
            self.train.eta_g.is_finite() && self.train.eta_g >= 0.0,
            "train.eta_g",
            "must be non-negative",
        )?;
        check(self.train.batch_size >= 1, "train.batch_size", "must be at least 1")?;
        check(self.train.generator_batch >= 1, "train.generator_batch", "must be at least 1")?;
        check(self.dataset.modes >= 1, "dataset.modes", "must be at least 1")?;
        check(
            self.dataset.radius.is_finite() && self.dataset.radius >= 0.0,
            "dataset.radius",
            "must be non-negative",
        )?;
        check(finite_pos(self.dataset.std), "dataset.std", "must be positive")?;
        check(
            self.dataset.points_per_device >= 1,
            "dataset.points_per_device",
            "must be at least 1",
        )?;
        check(self.eval.every >= 1, "eval.every", "must be at least 1")?;
        check(self.eval.samples >= 3, "eval.samples", "must be at least 3")?;
        check(self.eval.holdout >= 3, "eval.holdout", "must be at least 3")?;
        check(
            self.eval.coverage_radius.is_finite() && self.eval.coverage_radius >= 0.0,
            "eval.coverage_radius",
            "must be non-negative",
        )?;
        check(
            self.run.target_metric.is_finite() && self.run.target_metric >= 0.0,
            "run.target_metric",
            "must be non-negative",
        )?;
        check(
            self.run.max_sim_time_s.is_finite() && self.run.max_sim_time_s >= 0.0,
            "run.max_sim_time_s",
            "must be non-negative",
        )?;
        check(
            (0.0..=1.0).contains(&self.run.p_fail),
            "run.p_fail",
            &format!("must be in [0, 1], got {}", self.run.p_fail),
        )?;
        Ok(())
    }

    fn hidden_activation(&self) -> Activation {
        match self.model.hidden_activation {
            HiddenKind::Tanh => Activation::Tanh,
            HiddenKind::Relu => Activation::Relu,
            HiddenKind::LeakyRelu => Activation::LeakyRelu(self.model.leaky_slope),
        }
    }

    pub fn gan_shape(&self) -> Result<GanShape> {
        let mut g = vec![self.model.noise_dim];
        g.extend(&self.model.generator_hidden);
        g.push(DATA_DIM);
        let mut d = vec![DATA_DIM];
        d.extend(&self.model.discriminator_hidden);
        d.push(1);
        GanShape::new(
            MlpSpec::new(g, self.hidden_activation(), OutputActivation::Identity)?,
            MlpSpec::new(d, self.hidden_activation(), OutputActivation::Sigmoid)?,
        )
    }

    pub fn coverage_radius(&self) -> f64 {
        if self.eval.coverage_radius > 0.0 {
            self.eval.coverage_radius
        } else {
            3.0 * self.dataset.std
        }
    }

    fn value_of(&self, key: &str) -> toml::Value {
        use toml::Value as V;
        let int = |x: u64| V::Integer(x as i64);
        let sizes = |s: &[usize]| V::Array(s.iter().map(|&x| V::Integer(x as i64)).collect());
        match key {
            "framework" => V::String(self.framework.as_str().into()),
            "num_devices" => int(self.num_devices as u64),
            "scheduler.policy" => V::String(self.scheduler.policy.as_str().into()),
            "scheduler.ratio" => V::Float(self.scheduler.ratio),
            "scheduler.pf_smoothing" => V::Float(self.scheduler.pf_smoothing),
            "network.cell_radius_km" => V::Float(self.network.cell_radius_km),
            "network.pathloss_a" => V::Float(self.network.pathloss_a),
            "network.pathloss_b" => V::Float(self.network.pathloss_b),
            "network.noise_psd_dbm_hz" => V::Float(self.network.noise_psd_dbm_hz),
            "network.device_tx_dbm" => V::Float(self.network.device_tx_dbm),
            "network.server_tx_dbm" => V::Float(self.network.server_tx_dbm),
            "network.bandwidth_hz" => V::Float(self.network.bandwidth_hz),
            "network.bits_per_param" => int(self.network.bits_per_param),
            "network.shadowing_sigma_db" => V::Float(self.network.shadowing_sigma_db),
            "payload.generator_params" => int(self.payload.generator_params),
            "payload.discriminator_params" => int(self.payload.discriminator_params),
            "compute.device_step_s" => V::Float(self.compute.device_step_s),
            "compute.server_step_s" => V::Float(self.compute.server_step_s),
            "model.noise_dim" => int(self.model.noise_dim as u64),
            "model.generator_hidden" => sizes(&self.model.generator_hidden),
            "model.discriminator_hidden" => sizes(&self.model.discriminator_hidden),
            "model.hidden_activation" => V::String(self.model.hidden_activation.as_str().into()),
            "model.leaky_slope" => V::Float(self.model.leaky_slope),
            "train.n_d" => int(self.train.n_d as u64),
            "train.n_g" => int(self.train.n_g as u64),
            "train.eta_d" => V::Float(self.train.eta_d),
            "train.eta_g" => V::Float(self.train.eta_g),
            "train.batch_size" => int(self.train.batch_size as u64),
            "train.generator_batch" => int(self.train.generator_batch as u64),
            "dataset.modes" => int(self.dataset.modes as u64),
            "dataset.radius" => V::Float(self.dataset.radius),
            "dataset.std" => V::Float(self.dataset.std),
            "dataset.points_per_device" => int(self.dataset.points_per_device as u64),
            "eval.every" => int(self.eval.every),
            "eval.samples" => int(self.eval.samples as u64),
            "eval.holdout" => int(self.eval.holdout as u64),
            "eval.coverage_radius" => V::Float(self.eval.coverage_radius),
            "run.master_seed" => int(self.run.master_seed),
            "run.max_rounds" => int(self.run.max_rounds),
            "run.target_metric" => V::Float(self.run.target_metric),
            "run.max_sim_time_s" => V::Float(self.run.max_sim_time_s),
            "run.p_fail" => V::Float(self.run.p_fail),
            "run.workers" => int(self.run.workers as u64),
            "output.dir" => V::String(self.output_dir.clone()),
            other => unreachable!("key list out of sync: {other}"),
        }
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.value_of(k)))
            .collect()
    }

    /// Effective value of `key`, formatted as in [`to_text`](Self::to_text).
    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.contains(&key).then(|| self.value_of(key).to_string())
    }
}
