//! Run configuration: a flat `key = value` file, overridden by `--set`
//! flags. Repeated `input` keys add inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wbary_core::gaussian::GaussianInit;
use wbary_core::mirror::GaussianObjective;
use wbary_core::semidiscrete::{ColdStart, SolverOptions, StepScaling};
use wbary_core::{FrbaryOptions, Schedule, ScheduleKind};

use crate::error::{CliError, Result};
use crate::formats::InputKind;

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub kind: InputKind,
    pub path: PathBuf,
    /// Relative weight; inputs without one count as 1.
    pub weight: Option<f64>,
}

impl FromStr for InputSpec {
    type Err = String;

    /// `kind,path[,weight]`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(2..=3).contains(&parts.len()) || parts[1].is_empty() {
            return Err(format!("input must be `kind,path[,weight]`, found `{s}`"));
        }
        let weight = match parts.get(2) {
            Some(w) => Some(parse_number::<f64>(w).filter(|w| *w >= 0.0 && w.is_finite()).ok_or_else(|| format!("invalid weight `{w}`"))?),
            None => None,
        };
        Ok(Self {
            kind: parts[0].parse()?,
            path: PathBuf::from(parts[1]),
            weight,
        })
    }
}

impl std::fmt::Display for InputSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.kind, self.path.display())?;
        if let Some(w) = self.weight {
            write!(f, ",{w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    /// Bounding box of the inputs grown by `margin` of the extent per side.
    Auto,
    Explicit { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    pub grid: Vec<usize>,
    pub domain: DomainSpec,
    pub margin: f64,
    pub schedule: ScheduleKind,
    pub eta_c: f64,
    pub eta_alpha: f64,
    pub iterations: usize,
    pub tol_grad: f64,
    pub max_iters: usize,
    pub min_step: f64,
    pub momentum: f64,
    pub scaling: StepScaling,
    pub cold_start: ColdStart,
    pub seed: u64,
    pub gaussian_samples: usize,
    pub gaussian_objective: GaussianObjective,
    pub gaussian_init: GaussianInit,
    pub out_density: PathBuf,
    pub out_trace: PathBuf,
    pub out_summary: PathBuf,
    pub out_covariance: PathBuf,
    /// Log progress every this many outer iterations; 0 disables.
    pub eval_every: usize,
    pub strict: bool,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    /// Record wall-clock times in the trace. Off by default so that traces
    /// are byte-for-byte reproducible.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            grid: vec![64, 64],
            domain: DomainSpec::Auto,
            margin: 0.25,
            schedule: ScheduleKind::Power,
            eta_c: 0.1,
            eta_alpha: 0.3,
            iterations: 100,
            tol_grad: 1e-6,
            max_iters: 50,
            min_step: 1e-12,
            momentum: 0.0,
            scaling: StepScaling::LocalDensity,
            cold_start: ColdStart::Moments,
            seed: 0,
            gaussian_samples: 2000,
            gaussian_objective: GaussianObjective::Sampled,
            gaussian_init: GaussianInit::Identity,
            out_density: PathBuf::from("barycenter.txt"),
            out_trace: PathBuf::from("trace.csv"),
            out_summary: PathBuf::from("summary.txt"),
            out_covariance: PathBuf::from("covariance.txt"),
            eval_every: 10,
            strict: false,
            threads: 0,
            timing: false,
        }
    }
}

fn parse_number<T: FromStr>(s: &str) -> Option<T> {
    s.trim().parse().ok()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, found `{s}`")),
    }
}

fn parse_list<T: FromStr>(s: &str, sep: &[char]) -> std::result::Result<Vec<T>, String> {
    s.split(sep)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_number(t).ok_or_else(|| format!("invalid entry `{t}`")))
        .collect()
}

fn schedule_name(k: ScheduleKind) -> &'static str {
    match k {
        ScheduleKind::ConstantOverSqrtT => "constant_over_sqrt_t",
        ScheduleKind::InverseSqrtK => "inverse_sqrt_k",
        ScheduleKind::Power => "power",
    }
}

fn scaling_name(s: StepScaling) -> &'static str {
    match s {
        StepScaling::Uniform => "uniform",
        StepScaling::LocalDensity => "local_density",
    }
}

fn cold_start_name(c: ColdStart) -> &'static str {
    match c {
        ColdStart::Zero => "zero",
        ColdStart::Moments => "moments",
    }
}

fn objective_name(o: GaussianObjective) -> &'static str {
    match o {
        GaussianObjective::Sampled => "sampled",
        GaussianObjective::MomentMatchedBures => "bures",
    }
}

fn init_name(i: GaussianInit) -> &'static str {
    match i {
        GaussianInit::Identity => "identity",
        GaussianInit::ArithmeticMean => "arithmetic_mean",
    }
}

fn choose<T: Copy>(value: &str, options: &[T], name: fn(T) -> &'static str) -> std::result::Result<T, String> {
    options.iter().copied().find(|&o| name(o) == value).ok_or_else(|| {
        let names: Vec<_> = options.iter().map(|&o| name(o)).collect();
        format!("expected one of {}, found `{value}`", names.join(", "))
    })
}

fn positive(v: f64) -> std::result::Result<f64, String> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, found {v}"))
    }
}

impl RunConfig {
    /// Applies one `key = value` pair. `input` appends.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        let num = |v: &str| parse_number::<f64>(v).ok_or_else(|| format!("expected a number, found `{v}`"));
        let count = |v: &str| parse_number::<usize>(v).ok_or_else(|| format!("expected a nonnegative integer, found `{v}`"));
        match key.trim() {
            "input" => self.inputs.push(value.parse()?),
            "grid" => {
                let shape: Vec<usize> = parse_list(value, &['x', ','])?;
                if !(2..=3).contains(&shape.len()) || shape.contains(&0) {
                    return Err(format!("grid must be like 64x64 or 32x32x32, found `{value}`"));
                }
                self.grid = shape;
            }
            "domain" => {
                self.domain = if value == "auto" {
                    DomainSpec::Auto
                } else {
                    let b: Vec<f64> = parse_list(value, &[',', ' '])?;
                    if b.is_empty() || !b.len().is_multiple_of(2) {
                        return Err(format!("domain must be `auto` or `lo1,hi1,lo2,hi2[,lo3,hi3]`, found `{value}`"));
                    }
                    DomainSpec::Explicit {
                        lo: b.iter().step_by(2).copied().collect(),
                        hi: b.iter().skip(1).step_by(2).copied().collect(),
                    }
                }
            }
            "margin" => {
                let m = num(value)?;
                if !(m >= 0.0 && m.is_finite()) {
                    return Err(format!("margin must be nonnegative, found {m}"));
                }
                self.margin = m;
            }
            "schedule" => {
                self.schedule = choose(
                    value,
                    &[ScheduleKind::ConstantOverSqrtT, ScheduleKind::InverseSqrtK, ScheduleKind::Power],
                    schedule_name,
                )?
            }
            "eta_c" => self.eta_c = positive(num(value)?)?,
            "eta_alpha" => self.eta_alpha = num(value)?,
            "iterations" => self.iterations = count(value)?,
            "tol_grad" => self.tol_grad = num(value)?,
            "max_iters" => self.max_iters = count(value)?,
            "min_step" => self.min_step = positive(num(value)?)?,
            "momentum" => self.momentum = num(value)?,
            "scaling" => self.scaling = choose(value, &[StepScaling::Uniform, StepScaling::LocalDensity], scaling_name)?,
            "cold_start" => self.cold_start = choose(value, &[ColdStart::Zero, ColdStart::Moments], cold_start_name)?,
            "seed" => self.seed = parse_number(value).ok_or_else(|| format!("invalid seed `{value}`"))?,
            "gaussian_samples" => self.gaussian_samples = count(value)?,
            "gaussian_objective" => {
                self.gaussian_objective = choose(
                    value,
                    &[GaussianObjective::Sampled, GaussianObjective::MomentMatchedBures],
                    objective_name,
                )?
            }
            "gaussian_init" => {
                self.gaussian_init = choose(value, &[GaussianInit::Identity, GaussianInit::ArithmeticMean], init_name)?
            }
            "out_density" => self.out_density = PathBuf::from(value),
            "out_trace" => self.out_trace = PathBuf::from(value),
            "out_summary" => self.out_summary = PathBuf::from(value),
            "out_covariance" => self.out_covariance = PathBuf::from(value),
            "eval_every" => self.eval_every = count(value)?,
            "strict" => self.strict = parse_bool(value)?,
            "threads" => self.threads = count(value)?,
            "timing" => self.timing = parse_bool(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies a config file; errors cite the offending line.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(path, i + 1, format!("expected `key = value`, found `{line}`")))?;
            self.set(key, value).map_err(|msg| CliError::parse(path, i + 1, msg))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, found `{o}`")))?;
            if key.trim() == "input" {
                return Err(CliError::Usage("inputs are given with --input".into()));
            }
            self.set(key, value).map_err(|msg| CliError::Usage(format!("{}: {msg}", key.trim())))?;
        }
        Ok(())
    }

    /// Every key with its current value, in the config file syntax.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for input in &self.inputs {
            let _ = writeln!(out, "input = {input}");
        }
        let grid: Vec<String> = self.grid.iter().map(|n| n.to_string()).collect();
        let domain = match &self.domain {
            DomainSpec::Auto => "auto".to_string(),
            DomainSpec::Explicit { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| format!("{l},{h}"))
                .collect::<Vec<_>>()
                .join(","),
        };
        let pairs = [
            ("grid", grid.join("x")),
            ("domain", domain),
            ("margin", self.margin.to_string()),
            ("schedule", schedule_name(self.schedule).into()),
            ("eta_c", self.eta_c.to_string()),
            ("eta_alpha", self.eta_alpha.to_string()),
            ("iterations", self.iterations.to_string()),
            ("tol_grad", self.tol_grad.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("min_step", self.min_step.to_string()),
            ("momentum", self.momentum.to_string()),
            ("scaling", scaling_name(self.scaling).into()),
            ("cold_start", cold_start_name(self.cold_start).into()),
            ("seed", self.seed.to_string()),
            ("gaussian_samples", self.gaussian_samples.to_string()),
            ("gaussian_objective", objective_name(self.gaussian_objective).into()),
            ("gaussian_init", init_name(self.gaussian_init).into()),
            ("out_density", self.out_density.display().to_string()),
            ("out_trace", self.out_trace.display().to_string()),
            ("out_summary", self.out_summary.display().to_string()),
            ("out_covariance", self.out_covariance.display().to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("strict", self.strict.to_string()),
            ("threads", self.threads.to_string()),
            ("timing", self.timing.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.schedule, self.eta_c, self.eta_alpha, self.iterations).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol_grad: self.tol_grad,
            max_iters: self.max_iters,
            min_step: self.min_step,
            momentum: self.momentum,
            initial_step: None,
            scaling: self.scaling,
            cold_start: self.cold_start,
        }
    }

    pub fn frbary_options(&self) -> FrbaryOptions {
        FrbaryOptions {
            inner: self.solver_options(),
            gaussian_samples: self.gaussian_samples,
            seed: self.seed,
            strict: self.strict,
            store_best: true,
            gaussian_objective: self.gaussian_objective,
        }
    }
}
