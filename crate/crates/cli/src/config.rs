//! Experiment configuration: a TOML file with top-level `experiment`,
//! `seed` and `output_dir` keys and one table per concern.
//!
//! ```toml
//! experiment = "speed"
//! seed = 7
//!
//! [params]
//! c = 1.0
//! c_prime = 1.0
//!
//! [speed]
//! window_start = 20.0
//! window_end = 40.0
//! ```
//!
//! Unknown keys are errors. Every default is materialised in the parsed
//! config, and [`ExperimentConfig::to_toml`] writes it back out in a form
//! that parses to an equal value.

use std::fmt;
use std::path::{Path, PathBuf};

use seedbank_core::dual::{default_eps, Marker, DEFAULT_CAP, DEFAULT_DUAL_DT};
use seedbank_core::model::{InitialCondition, Lattice, ModelParams, TablePoint};
use seedbank_core::spde::NoiseScheme;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingRequired(String),
    #[error("`{key}` should be {expected}, found {found}")]
    TypeMismatch { key: String, expected: &'static str, found: String },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Model(#[from] seedbank_core::Error),
    #[error("cannot parse TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Spde,
    Dual,
    Duality,
    MaxCdf,
    Speed,
    Bounds,
    CalibrateLocaltime,
    Counts,
}

impl Experiment {
    const ALL: [Self; 8] = [
        Self::Spde,
        Self::Dual,
        Self::Duality,
        Self::MaxCdf,
        Self::Speed,
        Self::Bounds,
        Self::CalibrateLocaltime,
        Self::Counts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spde => "spde",
            Self::Dual => "dual",
            Self::Duality => "duality",
            Self::MaxCdf => "max-cdf",
            Self::Speed => "speed",
            Self::Bounds => "bounds",
            Self::CalibrateLocaltime => "calibrate-localtime",
            Self::Counts => "counts",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Particle-system discretisation shared by the dual-based experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSettings {
    pub dt: f64,
    pub eps: f64,
    pub cap: usize,
    pub prune_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Spde { horizon: f64, record_every: usize, theta: f64, initial: InitialCondition, scheme: NoiseScheme },
    Speed { horizon: f64, window: (f64, f64), record_every: usize, theta: f64, scheme: NoiseScheme },
    Dual { horizon: f64, record_every: usize, start: Vec<(f64, Marker)> },
    Duality { horizon: f64, n_spde: usize, n_dual: usize, allowance: f64, start: Vec<(f64, Marker)>, initial: InitialCondition },
    MaxCdf { horizon: f64, probes: Vec<f64>, n_dual: usize, allowance: f64 },
    Bounds { lambda: f64, times: Vec<f64> },
    Counts { times: Vec<f64>, lambda: Option<f64> },
    Localtime { horizon: f64, dt: f64, eps: f64, replicates: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub params: ModelParams,
    pub lattice: Option<Lattice>,
    pub dual: Option<DualSettings>,
    pub task: Task,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let mut root = Reader::new("", text.parse::<Table>()?);
    let name = root.string("experiment", None)?;
    let experiment = Experiment::parse(&name).ok_or_else(|| ConfigError::Invalid {
        key: "experiment".into(),
        reason: format!(
            "unknown experiment `{name}`, expected one of {}",
            Experiment::ALL.map(Experiment::as_str).join(", ")
        ),
    })?;
    let seed = root.seed()?;
    let output_dir = PathBuf::from(root.string("output_dir", Some(format!("out/{experiment}")))?);

    let params = if experiment == Experiment::CalibrateLocaltime {
        ModelParams::default()
    } else {
        let mut s = root.section("params")?;
        let d = ModelParams::default();
        let p = ModelParams {
            c: s.f64("c", Some(d.c))?,
            c_prime: s.f64("c_prime", Some(d.c_prime))?,
            s: s.f64("s", Some(d.s))?,
            m1: s.f64("m1", Some(d.m1))?,
            m2: s.f64("m2", Some(d.m2))?,
            nu: s.f64("nu", Some(d.nu))?,
        };
        s.finish()?;
        p.validate()?;
        p
    };

    let lattice = match experiment {
        Experiment::Spde | Experiment::Speed => Some(lattice_section(&mut root, (-20.0, 80.0))?),
        Experiment::Duality | Experiment::MaxCdf => Some(lattice_section(&mut root, (-10.0, 10.0))?),
        _ => None,
    };
    let dual = match experiment {
        Experiment::Dual | Experiment::Duality | Experiment::MaxCdf => {
            Some(dual_section(&mut root, experiment == Experiment::Dual)?)
        }
        _ => None,
    };

    let task = match experiment {
        Experiment::Spde => {
            let l = lattice.as_ref().expect("spde has a lattice");
            let mut s = root.section("spde")?;
            let task = Task::Spde {
                horizon: s.f64("horizon", Some(10.0))?,
                record_every: s.usize("record_every", Some(steps_per(1.0, l.dt)))?,
                theta: s.f64("theta", Some(0.5))?,
                initial: initial_condition(&mut s)?,
                scheme: scheme(&mut s)?,
            };
            s.finish()?;
            task
        }
        Experiment::Speed => {
            let l = lattice.as_ref().expect("speed has a lattice");
            let mut s = root.section("speed")?;
            let task = Task::Speed {
                horizon: s.f64("horizon", Some(40.0))?,
                window: (s.f64("window_start", Some(20.0))?, s.f64("window_end", Some(40.0))?),
                record_every: s.usize("record_every", Some(steps_per(0.1, l.dt)))?,
                theta: s.f64("theta", Some(0.5))?,
                scheme: scheme(&mut s)?,
            };
            s.finish()?;
            task
        }
        Experiment::Dual => {
            let dt = dual.expect("dual has settings").dt;
            let mut s = root.section("run")?;
            let task = Task::Dual {
                horizon: s.f64("horizon", Some(10.0))?,
                record_every: s.usize("record_every", Some(steps_per(0.1, dt)))?,
                start: particles(&mut s, &[0.0], &["active"])?,
            };
            s.finish()?;
            task
        }
        Experiment::Duality => {
            let mut s = root.section("duality")?;
            let task = Task::Duality {
                horizon: s.f64("horizon", Some(1.0))?,
                n_spde: s.usize("n_spde", Some(200))?,
                n_dual: s.usize("n_dual", Some(100_000))?,
                allowance: s.f64("allowance", Some(0.03))?,
                start: particles(&mut s, &[-0.5, 0.5], &["active", "active"])?,
                initial: initial_condition(&mut s)?,
            };
            s.finish()?;
            task
        }
        Experiment::MaxCdf => {
            let mut s = root.section("max_cdf")?;
            let task = Task::MaxCdf {
                horizon: s.f64("horizon", Some(1.0))?,
                probes: s.f64_array("probes", Some(vec![-1.0, 0.0, 0.5, 1.0, 2.0]))?,
                n_dual: s.usize("n_dual", Some(100_000))?,
                allowance: s.f64("allowance", Some(0.02))?,
            };
            s.finish()?;
            task
        }
        Experiment::Bounds => {
            let mut s = root.section("bounds")?;
            let task = Task::Bounds {
                lambda: s.f64("lambda", Some(1.2))?,
                times: s.f64_array("times", Some(vec![1.0, 2.0, 5.0, 10.0, 20.0, 40.0]))?,
            };
            s.finish()?;
            task
        }
        Experiment::Counts => {
            let mut s = root.section("counts")?;
            let task = Task::Counts {
                times: s.f64_array("times", Some(vec![0.0, 1.0, 2.0]))?,
                lambda: s.optional_f64("lambda")?,
            };
            s.finish()?;
            task
        }
        Experiment::CalibrateLocaltime => {
            let mut s = root.section("localtime")?;
            let dt = s.f64("dt", Some(1e-4))?;
            let task = Task::Localtime {
                horizon: s.f64("horizon", Some(1.0))?,
                dt,
                eps: s.f64("eps", Some(default_eps(dt)))?,
                replicates: s.usize("replicates", Some(10_000))?,
            };
            s.finish()?;
            task
        }
    };
    root.finish()?;
    Ok(ExperimentConfig { experiment, seed, output_dir, params, lattice, dual, task })
}

fn steps_per(interval: f64, dt: f64) -> usize {
    ((interval / dt).round() as usize).max(1)
}

fn lattice_section(root: &mut Reader, domain: (f64, f64)) -> Result<Lattice> {
    let mut s = root.section("lattice")?;
    let x_min = s.f64("x_min", Some(domain.0))?;
    let x_max = s.f64("x_max", Some(domain.1))?;
    let dx = s.f64("dx", Some(0.1))?;
    let dt = s.f64("dt", Some(dx * dx / 4.0))?;
    s.finish()?;
    Ok(Lattice::new(x_min, x_max, dx, dt)?)
}

fn dual_section(root: &mut Reader, allow_pruning: bool) -> Result<DualSettings> {
    let mut s = root.section("dual")?;
    let dt = s.f64("dt", Some(DEFAULT_DUAL_DT))?;
    let eps = s.f64("eps", Some(default_eps(dt)))?;
    let cap = s.usize("cap", Some(DEFAULT_CAP))?;
    let prune_gap = if allow_pruning { s.optional_f64("prune_gap")? } else { None };
    s.finish()?;
    Ok(DualSettings { dt, eps, cap, prune_gap })
}

fn scheme(s: &mut Reader) -> Result<NoiseScheme> {
    match s.string("scheme", Some("two-point".into()))?.as_str() {
        "two-point" => Ok(NoiseScheme::TwoPoint),
        "gaussian-clamp" => Ok(NoiseScheme::GaussianClamp),
        other => Err(s.invalid("scheme", format!("unknown scheme `{other}`, expected two-point or gaussian-clamp"))),
    }
}

fn initial_condition(s: &mut Reader) -> Result<InitialCondition> {
    let ic = match s.string("initial", Some("heaviside_right".into()))?.as_str() {
        "heaviside_right" => InitialCondition::HeavisideRight,
        "heaviside_left" => InitialCondition::HeavisideLeft,
        "constant" => InitialCondition::Constant { u: s.f64("u0", None)?, v: s.f64("v0", None)? },
        "table" => {
            let x = s.f64_array("table_x", None)?;
            let u = s.f64_array("table_u", None)?;
            let v = s.f64_array("table_v", None)?;
            if x.len() != u.len() || x.len() != v.len() {
                return Err(s.invalid("table_x", "table_x, table_u and table_v must have equal length".into()));
            }
            InitialCondition::Table(
                x.into_iter().zip(u).zip(v).map(|((x, u), v)| TablePoint { x, u, v }).collect(),
            )
        }
        other => {
            return Err(s.invalid(
                "initial",
                format!("unknown initial condition `{other}`, expected heaviside_right, heaviside_left, constant or table"),
            ))
        }
    };
    ic.check()?;
    Ok(ic)
}

fn particles(s: &mut Reader, positions: &[f64], states: &[&str]) -> Result<Vec<(f64, Marker)>> {
    let pos = s.f64_array("positions", Some(positions.to_vec()))?;
    let states = s.string_array("states", Some(states.iter().map(|x| x.to_string()).collect()))?;
    if pos.len() != states.len() {
        return Err(s.invalid("states", "positions and states must have equal length".into()));
    }
    if pos.is_empty() {
        return Err(seedbank_core::Error::EmptyInitial.into());
    }
    pos.into_iter()
        .zip(states)
        .map(|(x, st)| match st.as_str() {
            "active" => Ok((x, Marker::Active)),
            "dormant" => Ok((x, Marker::Dormant)),
            other => Err(s.invalid("states", format!("unknown state `{other}`, expected active or dormant"))),
        })
        .collect()
}

/// Consumes keys from one table so that leftovers can be reported.
struct Reader {
    prefix: String,
    table: Table,
}

fn type_name(v: &Value) -> String {
    v.type_str().to_string()
}

impl Reader {
    fn new(prefix: &str, table: Table) -> Self {
        Self { prefix: prefix.to_string(), table }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn invalid(&self, key: &str, reason: String) -> ConfigError {
        ConfigError::Invalid { key: self.path(key), reason }
    }

    fn mismatch(&self, key: &str, expected: &'static str, found: &Value) -> ConfigError {
        ConfigError::TypeMismatch { key: self.path(key), expected, found: type_name(found) }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn required<T>(&self, key: &str, default: Option<T>) -> Result<T> {
        default.ok_or_else(|| ConfigError::MissingRequired(self.path(key)))
    }

    fn section(&mut self, name: &str) -> Result<Reader> {
        match self.take(name) {
            None => Ok(Reader::new(name, Table::new())),
            Some(Value::Table(t)) => Ok(Reader::new(name, t)),
            Some(other) => Err(self.mismatch(name, "a table", &other)),
        }
    }

    fn as_f64(&self, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(self.mismatch(key, "a number", other)),
        }
    }

    fn f64(&mut self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.take(key) {
            Some(v) => self.as_f64(key, &v),
            None => self.required(key, default),
        }
    }

    fn optional_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|v| self.as_f64(key, &v)).transpose()
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.take(key) {
            Some(Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(Value::Integer(i)) => Err(self.invalid(key, format!("must be >= 0, got {i}"))),
            Some(other) => Err(self.mismatch(key, "a non-negative integer", &other)),
            None => self.required(key, default),
        }
    }

    fn string(&mut self, key: &str, default: Option<String>) -> Result<String> {
        match self.take(key) {
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(self.mismatch(key, "a string", &other)),
            None => self.required(key, default),
        }
    }

    fn f64_array(&mut self, key: &str, default: Option<Vec<f64>>) -> Result<Vec<f64>> {
        match self.take(key) {
            Some(Value::Array(items)) => items.iter().map(|v| self.as_f64(key, v)).collect(),
            Some(other) => Err(self.mismatch(key, "an array of numbers", &other)),
            None => self.required(key, default),
        }
    }

    fn string_array(&mut self, key: &str, default: Option<Vec<String>>) -> Result<Vec<String>> {
        match self.take(key) {
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    other => Err(self.mismatch(key, "an array of strings", &other)),
                })
                .collect(),
            Some(other) => Err(self.mismatch(key, "an array of strings", &other)),
            None => self.required(key, default),
        }
    }

    /// Seeds are 64-bit; TOML integers stop at 2^63, so larger seeds may
    /// be given as decimal strings.
    fn seed(&mut self) -> Result<u64> {
        match self.take("seed") {
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(Value::Integer(i)) => Err(self.invalid("seed", format!("must be >= 0, got {i}"))),
            Some(Value::String(s)) => s
                .trim()
                .parse()
                .map_err(|_| self.invalid("seed", format!("`{s}` is not a 64-bit unsigned integer"))),
            Some(other) => Err(self.mismatch("seed", "an integer", &other)),
            None => Err(ConfigError::MissingRequired("seed".into())),
        }
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(key) => Err(ConfigError::UnknownKey(self.path(key))),
            None => Ok(()),
        }
    }
}

fn float_array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn put_particles(t: &mut Table, start: &[(f64, Marker)]) {
    t.insert("positions".into(), float_array(&start.iter().map(|p| p.0).collect::<Vec<_>>()));
    t.insert(
        "states".into(),
        Value::Array(start.iter().map(|p| Value::String(p.1.as_str().into())).collect()),
    );
}

fn put_initial(t: &mut Table, ic: &InitialCondition) {
    let name = match ic {
        InitialCondition::HeavisideRight => "heaviside_right",
        InitialCondition::HeavisideLeft => "heaviside_left",
        InitialCondition::Constant { u, v } => {
            t.insert("u0".into(), Value::Float(*u));
            t.insert("v0".into(), Value::Float(*v));
            "constant"
        }
        InitialCondition::Table(points) => {
            t.insert("table_x".into(), float_array(&points.iter().map(|p| p.x).collect::<Vec<_>>()));
            t.insert("table_u".into(), float_array(&points.iter().map(|p| p.u).collect::<Vec<_>>()));
            t.insert("table_v".into(), float_array(&points.iter().map(|p| p.v).collect::<Vec<_>>()));
            "table"
        }
    };
    t.insert("initial".into(), Value::String(name.into()));
}

fn scheme_name(s: NoiseScheme) -> &'static str {
    match s {
        NoiseScheme::TwoPoint => "two-point",
        NoiseScheme::GaussianClamp => "gaussian-clamp",
    }
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

impl ExperimentConfig {
    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("experiment".into(), Value::String(self.experiment.as_str().into()));
        root.insert(
            "seed".into(),
            match i64::try_from(self.seed) {
                Ok(i) => Value::Integer(i),
                Err(_) => Value::String(self.seed.to_string()),
            },
        );
        root.insert("output_dir".into(), Value::String(self.output_dir.display().to_string()));

        if self.experiment != Experiment::CalibrateLocaltime {
            let p = &self.params;
            let mut t = Table::new();
            for (k, v) in [("c", p.c), ("c_prime", p.c_prime), ("s", p.s), ("m1", p.m1), ("m2", p.m2), ("nu", p.nu)] {
                t.insert(k.into(), Value::Float(v));
            }
            root.insert("params".into(), Value::Table(t));
        }
        if let Some(l) = &self.lattice {
            let mut t = Table::new();
            for (k, v) in [("x_min", l.x_min), ("x_max", l.x_max), ("dx", l.dx), ("dt", l.dt)] {
                t.insert(k.into(), Value::Float(v));
            }
            root.insert("lattice".into(), Value::Table(t));
        }
        if let Some(d) = &self.dual {
            let mut t = Table::new();
            t.insert("dt".into(), Value::Float(d.dt));
            t.insert("eps".into(), Value::Float(d.eps));
            t.insert("cap".into(), int(d.cap));
            if let Some(g) = d.prune_gap {
                t.insert("prune_gap".into(), Value::Float(g));
            }
            root.insert("dual".into(), Value::Table(t));
        }

        let mut t = Table::new();
        let section = match &self.task {
            Task::Spde { horizon, record_every, theta, initial, scheme } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("record_every".into(), int(*record_every));
                t.insert("theta".into(), Value::Float(*theta));
                put_initial(&mut t, initial);
                t.insert("scheme".into(), Value::String(scheme_name(*scheme).into()));
                "spde"
            }
            Task::Speed { horizon, window, record_every, theta, scheme } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("window_start".into(), Value::Float(window.0));
                t.insert("window_end".into(), Value::Float(window.1));
                t.insert("record_every".into(), int(*record_every));
                t.insert("theta".into(), Value::Float(*theta));
                t.insert("scheme".into(), Value::String(scheme_name(*scheme).into()));
                "speed"
            }
            Task::Dual { horizon, record_every, start } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("record_every".into(), int(*record_every));
                put_particles(&mut t, start);
                "run"
            }
            Task::Duality { horizon, n_spde, n_dual, allowance, start, initial } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("n_spde".into(), int(*n_spde));
                t.insert("n_dual".into(), int(*n_dual));
                t.insert("allowance".into(), Value::Float(*allowance));
                put_particles(&mut t, start);
                put_initial(&mut t, initial);
                "duality"
            }
            Task::MaxCdf { horizon, probes, n_dual, allowance } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("probes".into(), float_array(probes));
                t.insert("n_dual".into(), int(*n_dual));
                t.insert("allowance".into(), Value::Float(*allowance));
                "max_cdf"
            }
            Task::Bounds { lambda, times } => {
                t.insert("lambda".into(), Value::Float(*lambda));
                t.insert("times".into(), float_array(times));
                "bounds"
            }
            Task::Counts { times, lambda } => {
                t.insert("times".into(), float_array(times));
                if let Some(l) = lambda {
                    t.insert("lambda".into(), Value::Float(*l));
                }
                "counts"
            }
            Task::Localtime { horizon, dt, eps, replicates } => {
                t.insert("horizon".into(), Value::Float(*horizon));
                t.insert("dt".into(), Value::Float(*dt));
                t.insert("eps".into(), Value::Float(*eps));
                t.insert("replicates".into(), int(*replicates));
                "localtime"
            }
        };
        root.insert(section.into(), Value::Table(t));
        toml::to_string(&root).expect("a TOML table always serialises")
    }
}
