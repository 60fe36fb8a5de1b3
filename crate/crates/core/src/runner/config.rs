use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::dynamics::NoiseModel;
use crate::error::{Error, Result};
use crate::linkfn::LinkFunction;
use crate::schedules::{ScheduleConfig, ScheduleKind, SwitchRule};

/// How the first iterate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on the sphere.
    Random,
    /// Uniform direction, then projected to correlation m1 with θ*.
    Correlation(f64),
    /// Uniform draw certified by comparing rewards at ±θ with this many pulls.
    Certified(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Uniform,
}

/// Everything needed to reproduce a batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    /// Catalog id or path to a knot file.
    pub link: String,
    /// `d` and `gamma0` are overwritten from the run when the schedule is built.
    pub schedule: ScheduleConfig,
    pub noise_kind: NoiseKind,
    pub noise_std: f64,
    pub horizon: u64,
    pub n_runs: usize,
    pub seed: u64,
    /// Pins θ* across runs.
    pub theta_star_seed: Option<u64>,
    pub init: Init,
    /// Stop a run at the first step whose correlation reaches this value.
    pub stop_at: Option<f64>,
    /// Keep every k-th row (plus the first and last).
    pub record_every: u64,
    /// Keep half-step correlations for the martingale monitor.
    pub log_half_step: bool,
    pub monitor: bool,
    /// Recompute each update through the full projection form.
    pub verify_projection: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 20,
            link: "cubic".into(),
            schedule: ScheduleConfig::new(ScheduleKind::Fig1Threshold, 20, 0.1),
            noise_kind: NoiseKind::Gaussian,
            noise_std: 1.0,
            horizon: 10_000,
            n_runs: 1,
            seed: 0,
            theta_star_seed: None,
            init: Init::Random,
            stop_at: None,
            record_every: 1,
            log_half_step: false,
            monitor: false,
            verify_projection: false,
            out: None,
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "d",
    "link",
    "schedule.kind",
    "schedule.c",
    "schedule.C",
    "schedule.delta",
    "schedule.epsilon",
    "schedule.eta",
    "schedule.sigma",
    "schedule.sigma_lo",
    "schedule.threshold",
    "schedule.then",
    "schedule.switch",
    "schedule.iota",
    "noise",
    "noise_std",
    "horizon",
    "n_runs",
    "seed",
    "theta_star_seed",
    "init.m1",
    "init.certify",
    "stop_at",
    "record_every",
    "log_half_step",
    "monitor",
    "verify_projection",
    "out",
];

fn bad(key: &str, v: &Value, want: &str) -> Error {
    Error::Config(format!("`{key}` expects {want}, got {v}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| bad(key, v, "a number")),
        Value::String(s) => s.trim().parse().map_err(|_| bad(key, v, "a number")),
        _ => Err(bad(key, v, "a number")),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    if let Value::Number(n) = v {
        if let Some(u) = n.as_u64() {
            return Ok(u);
        }
    }
    let x = as_f64(key, v).map_err(|_| bad(key, v, "a non-negative integer"))?;
    if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 {
        Ok(x as u64)
    } else {
        Err(bad(key, v, "a non-negative integer"))
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::String(s) => match s.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad(key, v, "a boolean")),
        },
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn as_string(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(bad(key, v, "a string")),
    }
}

fn flatten(prefix: &str, map: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in map {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl RunConfig {
    /// Sets one key. `null` clears optional keys.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let null = v.is_null();
        let opt_f64 = |v: &Value| -> Result<Option<f64>> {
            if null {
                Ok(None)
            } else {
                as_f64(key, v).map(Some)
            }
        };
        match key {
            "d" => self.d = as_u64(key, v)? as usize,
            "link" => self.link = as_string(key, v)?,
            "schedule.kind" => self.schedule.kind = as_string(key, v)?.parse()?,
            "schedule.c" => self.schedule.c_small = as_f64(key, v)?,
            "schedule.C" => self.schedule.c_big = as_f64(key, v)?,
            "schedule.delta" => self.schedule.delta = as_f64(key, v)?,
            "schedule.epsilon" => self.schedule.epsilon = opt_f64(v)?,
            "schedule.eta" => self.schedule.eta = opt_f64(v)?,
            "schedule.sigma" => self.schedule.sigma = opt_f64(v)?,
            "schedule.sigma_lo" => self.schedule.sigma_lo = opt_f64(v)?,
            "schedule.threshold" => self.schedule.threshold = opt_f64(v)?,
            "schedule.iota" => self.schedule.iota_override = opt_f64(v)?,
            "schedule.then" => {
                self.schedule.then = if null {
                    None
                } else {
                    Some(as_string(key, v)?.parse::<ScheduleKind>()?)
                }
            }
            "schedule.switch" => {
                self.schedule.switch = match as_string(key, v)?.as_str() {
                    "time" => SwitchRule::Time,
                    "state" => SwitchRule::State,
                    _ => return Err(bad(key, v, "`time` or `state`")),
                }
            }
            "noise" => {
                self.noise_kind = match as_string(key, v)?.as_str() {
                    "gaussian" => NoiseKind::Gaussian,
                    "uniform" => NoiseKind::Uniform,
                    _ => return Err(bad(key, v, "`gaussian` or `uniform`")),
                }
            }
            "noise_std" => self.noise_std = as_f64(key, v)?,
            "horizon" => self.horizon = as_u64(key, v)?,
            "n_runs" => self.n_runs = as_u64(key, v)? as usize,
            "seed" => self.seed = as_u64(key, v)?,
            "theta_star_seed" => {
                self.theta_star_seed = if null { None } else { Some(as_u64(key, v)?) }
            }
            "init.m1" => {
                self.init = match opt_f64(v)? {
                    Some(m) => Init::Correlation(m),
                    None => Init::Random,
                }
            }
            "init.certify" => {
                self.init = if null {
                    Init::Random
                } else {
                    Init::Certified(as_u64(key, v)? as usize)
                }
            }
            "stop_at" => self.stop_at = opt_f64(v)?,
            "record_every" => self.record_every = as_u64(key, v)?,
            "log_half_step" => self.log_half_step = as_bool(key, v)?,
            "monitor" => self.monitor = as_bool(key, v)?,
            "verify_projection" => self.verify_projection = as_bool(key, v)?,
            "out" => {
                self.out = if null {
                    None
                } else {
                    Some(PathBuf::from(as_string(key, v)?))
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key `{key}` (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Sets a key from command-line text; numbers and booleans are parsed
    /// from their JSON spelling, anything else is taken as a string.
    pub fn set_str(&mut self, key: &str, text: &str) -> Result<()> {
        let v =
            serde_json::from_str::<Value>(text).unwrap_or_else(|_| Value::String(text.to_string()));
        self.set(key, &v)
    }

    /// Applies every key of a JSON object. Nested objects are flattened with
    /// dotted keys, so `{"schedule": {"kind": ...}}` equals `{"schedule.kind": ...}`.
    pub fn merge_json(&mut self, text: &str) -> Result<()> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut pairs = Vec::new();
        flatten("", &map, &mut pairs);
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_json(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Flat JSON rendering of the configuration.
    pub fn to_json(&self) -> Value {
        let s = &self.schedule;
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("d", self.d.into());
        put("link", self.link.clone().into());
        put("schedule.kind", s.kind.id().into());
        put("schedule.c", s.c_small.into());
        put("schedule.C", s.c_big.into());
        put("schedule.delta", s.delta.into());
        put("schedule.epsilon", s.epsilon.into());
        put("schedule.eta", s.eta.into());
        put("schedule.sigma", s.sigma.into());
        put("schedule.sigma_lo", s.sigma_lo.into());
        put("schedule.threshold", s.threshold.into());
        put("schedule.iota", s.iota_override.into());
        put("schedule.then", s.then.map(|k| k.id()).into());
        put(
            "schedule.switch",
            match s.switch {
                SwitchRule::Time => "time",
                SwitchRule::State => "state",
            }
            .into(),
        );
        put(
            "noise",
            match self.noise_kind {
                NoiseKind::Gaussian => "gaussian",
                NoiseKind::Uniform => "uniform",
            }
            .into(),
        );
        put("noise_std", self.noise_std.into());
        put("horizon", self.horizon.into());
        put("n_runs", self.n_runs.into());
        put("seed", self.seed.into());
        put("theta_star_seed", self.theta_star_seed.into());
        match self.init {
            Init::Random => {}
            Init::Correlation(m1) => put("init.m1", m1.into()),
            Init::Certified(n) => put("init.certify", n.into()),
        }
        put("stop_at", self.stop_at.into());
        put("record_every", self.record_every.into());
        put("log_half_step", self.log_half_step.into());
        put("monitor", self.monitor.into());
        put("verify_projection", self.verify_projection.into());
        put(
            "out",
            self.out.as_ref().map(|p| p.display().to_string()).into(),
        );
        Value::Object(m)
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        match self.noise_kind {
            NoiseKind::Gaussian => NoiseModel::gaussian(self.noise_std),
            NoiseKind::Uniform => NoiseModel::uniform(self.noise_std),
        }
    }

    pub fn resolve_link(&self) -> Result<LinkFunction> {
        LinkFunction::resolve(&self.link)
    }

    /// Schedule configuration with the run's dimension and the link's γ0.
    pub fn schedule_for(&self, link: &LinkFunction) -> ScheduleConfig {
        ScheduleConfig {
            d: self.d,
            gamma0: link.gamma0,
            ..self.schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("d = {} must be at least 2", self.d)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.n_runs < 1 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.record_every < 1 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if let Init::Correlation(m) = self.init {
            if !(-1.0..=1.0).contains(&m) {
                return Err(Error::Config(format!("init.m1 = {m} outside [-1, 1]")));
            }
        }
        if let Init::Certified(n) = self.init {
            if n < 2 {
                return Err(Error::Config(
                    "init.certify needs at least 2 samples".into(),
                ));
            }
        }
        self.noise()?;
        let link = self.resolve_link()?;
        let sched = self.schedule_for(&link);
        sched.validate()?;
        if self.d < 3 && !matches!(sched.kind, ScheduleKind::Constant) {
            return Err(Error::Config(format!(
                "d = {} is below 3; only constant schedules are allowed",
                self.d
            )));
        }
        Ok(())
    }
}
