//! Experiment configuration: a single JSON document, validated up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmSpec, Init};
use crate::dynamics::{stability_bound, MhbParams};
use crate::error::{invalid, Error, Result};
use crate::operators::{pressure_satisfied, MutationOp, SelectionSpec};

/// Moving Hamming ball parameters as written in a config. `theta: null`
/// (or absent) means a static ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionConfig {
    pub n: usize,
    pub b: f64,
    #[serde(default = "one")]
    pub l: usize,
    #[serde(default)]
    pub theta: Option<f64>,
}

fn one() -> usize {
    1
}

impl FunctionConfig {
    pub fn params(&self) -> Result<MhbParams> {
        MhbParams::with_fraction(self.n, self.b, self.l, self.theta.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Single {
        #[serde(default)]
        mutation: MutationOp,
    },
    /// Either `lambda` or the pair `(c, d)` giving `lambda = floor(c n / (2 (1 + d)))`.
    Population {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<f64>,
        selection: SelectionSpec,
        #[serde(default)]
        mutation: MutationOp,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub label: String,
    pub algorithm: AlgorithmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Tracking window; defaults to lambda for populations and 100 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// First window start; defaults to the window length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<usize>,
    #[serde(default = "half")]
    pub gamma0: f64,
    #[serde(default = "quarter")]
    pub c_prime: f64,
    /// Fraction of the run, counted from the end, used for the tail hit rate.
    #[serde(default = "half")]
    pub tail: f64,
}

fn half() -> f64 {
    0.5
}

fn quarter() -> f64 {
    0.25
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            window: None,
            t0: None,
            gamma0: 0.5,
            c_prime: 0.25,
            tail: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PressureCheck {
    #[default]
    Warn,
    Enforce,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub function: FunctionConfig,
    pub arms: Vec<ArmConfig>,
    /// Evaluations per run.
    pub budget: u64,
    #[serde(default = "one_u32")]
    pub replicates: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub pressure_check: PressureCheck,
    /// `delta` in the selection-pressure condition.
    #[serde(default = "tenth")]
    pub pressure_delta: f64,
    /// Write a per-query trace CSV for every run.
    #[serde(default)]
    pub write_trace: bool,
    /// Keep generations whose clock is a multiple of this many evaluations.
    #[serde(default = "one_u64")]
    pub summary_stride: u64,
    #[serde(default)]
    pub init: Init,
}

fn default_name() -> String {
    "experiment".into()
}

fn one_u32() -> u32 {
    1
}

fn one_u64() -> u64 {
    1
}

fn tenth() -> f64 {
    0.1
}

/// Selection-pressure diagnostics for one population arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureReport {
    pub rho: f64,
    pub delta: f64,
    pub pressure: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

/// One arm with its derived quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedArm {
    pub label: String,
    pub spec: AlgorithmSpec,
    pub window: usize,
    pub t0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pressure: Option<PressureReport>,
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub params: MhbParams,
    pub arms: Vec<ResolvedArm>,
    pub warnings: Vec<String>,
}

fn field<T>(path: &str, msg: impl std::fmt::Display) -> Result<T> {
    invalid(format!("{path}: {msg}"))
}

fn prefix<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{path}: {m}")),
        other => other,
    })
}

/// `floor(c n / (2 (1 + d)))`.
pub fn scaled_lambda(c: f64, n: usize, d: f64) -> Result<usize> {
    if !(c > 0.0 && d > 0.0) {
        return invalid(format!("c and d must be positive, got c={c}, d={d}"));
    }
    Ok((c * n as f64 / (2.0 * (1.0 + d)) + 1e-9).floor() as usize)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config, or the config embedded in a manifest written by a
    /// previous run.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("config") {
            Some(inner) if value.get("arms").is_some() && value.get("function").is_none() => {
                Ok(serde_json::from_value(inner.clone())?)
            }
            _ => Ok(serde_json::from_value(value)?),
        }
    }

    /// Checks every field and derives per-arm quantities. Errors name the
    /// offending field.
    pub fn resolve(&self) -> Result<Resolved> {
        let params = prefix("function", self.function.params())?;
        if self.arms.is_empty() {
            return field("arms", "at least one arm is required");
        }
        if self.budget == 0 {
            return field("budget", "must be positive");
        }
        if self.replicates == 0 {
            return field("replicates", "must be positive");
        }
        if self.summary_stride == 0 {
            return field("summary_stride", "must be positive");
        }
        let rep = &self.report;
        if !(rep.gamma0 > 0.0 && rep.gamma0 <= 1.0) {
            return field("report.gamma0", format!("must lie in (0, 1], got {}", rep.gamma0));
        }
        if !(0.0..=1.0).contains(&rep.c_prime) {
            return field("report.c_prime", format!("must lie in [0, 1], got {}", rep.c_prime));
        }
        if !(rep.tail > 0.0 && rep.tail <= 1.0) {
            return field("report.tail", format!("must lie in (0, 1], got {}", rep.tail));
        }
        if !(self.pressure_delta > 0.0) {
            return field("pressure_delta", "must be positive");
        }
        let mut warnings = Vec::new();
        let mut arms = Vec::with_capacity(self.arms.len());
        for (i, arm) in self.arms.iter().enumerate() {
            let path = format!("arms[{i}]");
            if arm.label.is_empty()
                || !arm.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return field(&format!("{path}.label"), "must be nonempty and use only [A-Za-z0-9_-]");
            }
            if self.arms[..i].iter().any(|a| a.label == arm.label) {
                return field(&format!("{path}.label"), format!("duplicate label `{}`", arm.label));
            }
            let (spec, d) = match &arm.algorithm {
                AlgorithmConfig::Single { mutation } => (AlgorithmSpec::Single { mutation: *mutation }, 1.0),
                AlgorithmConfig::Population {
                    lambda,
                    c,
                    d,
                    selection,
                    mutation,
                } => {
                    let lambda = match (lambda, c, d) {
                        (Some(l), None, None) => *l,
                        (None, Some(c), Some(d)) => prefix(&format!("{path}.algorithm"), scaled_lambda(*c, params.n, *d))?,
                        _ => {
                            return field(
                                &format!("{path}.algorithm"),
                                "give either `lambda` or both `c` and `d`",
                            )
                        }
                    };
                    if lambda == 0 {
                        return field(&format!("{path}.algorithm.lambda"), "must be positive");
                    }
                    let spec = AlgorithmSpec::Population {
                        lambda,
                        selection: *selection,
                        mutation: *mutation,
                    };
                    prefix(&format!("{path}.algorithm.selection"), spec.validate())?;
                    (spec, d.unwrap_or(1.0))
                }
            };
            prefix(&format!("{path}.algorithm.mutation"), spec.mutation().check_length(params.n))?;
            let block = spec.block();
            if self.budget < block {
                return field("budget", format!("{} is smaller than one block of arm `{}` ({block})", self.budget, arm.label));
            }
            let evaluations = self.budget - self.budget % block;
            let window = rep.window.unwrap_or(match spec {
                AlgorithmSpec::Population { lambda, .. } => lambda,
                AlgorithmSpec::Single { .. } => 100,
            });
            let t0 = rep.t0.unwrap_or(window);
            if window == 0 || (t0 + window) as u64 > evaluations {
                return field(
                    "report.window",
                    format!("window {window} from t0 {t0} does not fit {evaluations} evaluations of arm `{}`", arm.label),
                );
            }
            let pressure = match &spec {
                AlgorithmSpec::Population { lambda, selection, mutation } if self.pressure_check != PressureCheck::Off => {
                    let chi = mutation.chi();
                    let report = if params.r == 0 || chi >= params.n as f64 {
                        None
                    } else {
                        let bound = stability_bound(&params, chi, None, d).ok();
                        bound.map(|b| PressureReport {
                            rho: b.rho,
                            delta: self.pressure_delta,
                            pressure: selection.pressure(*lambda),
                            threshold: (1.0 + self.pressure_delta) / b.rho,
                            satisfied: pressure_satisfied(selection, *lambda, b.rho, self.pressure_delta),
                        })
                    };
                    match &report {
                        Some(p) if !p.satisfied => {
                            let msg = format!(
                                "arm `{}`: selection pressure {:.4} is below (1+delta)/rho = {:.4}",
                                arm.label, p.pressure, p.threshold
                            );
                            if self.pressure_check == PressureCheck::Enforce {
                                return field(&format!("{path}.algorithm.selection"), msg);
                            }
                            warnings.push(msg);
                        }
                        None => warnings.push(format!("arm `{}`: no stability bound for these parameters", arm.label)),
                        _ => {}
                    }
                    report
                }
                _ => None,
            };
            arms.push(ResolvedArm {
                label: arm.label.clone(),
                spec,
                window,
                t0,
                pressure,
            });
        }
        Ok(Resolved { params, arms, warnings })
    }
}

/// Built-in experiment configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "moving-ball-contrast" => Ok(ExperimentConfig {
            name: name.into(),
            function: FunctionConfig {
                n: 100,
                b: 0.1,
                l: 1,
                theta: Some(500.0),
            },
            arms: vec![
                ArmConfig {
                    label: "one-plus-one".into(),
                    algorithm: AlgorithmConfig::Single {
                        mutation: MutationOp::default(),
                    },
                },
                population_arm("tournament", SelectionSpec::Tournament { k: 33 }),
                population_arm("mu-comma-lambda", SelectionSpec::MuCommaLambda { mu: 3 }),
                population_arm("exponential-ranking", SelectionSpec::ExponentialRanking { eta: 33.0 }),
            ],
            budget: 1_000_000,
            replicates: 30,
            seed: 20_240_901,
            out_dir: None,
            report: ReportConfig::default(),
            pressure_check: PressureCheck::Warn,
            pressure_delta: 0.1,
            write_trace: false,
            summary_stride: 1,
            init: Init::Center,
        }),
        _ => invalid(format!("unknown preset `{name}` (available: moving-ball-contrast)")),
    }
}

fn population_arm(label: &str, selection: SelectionSpec) -> ArmConfig {
    ArmConfig {
        label: label.into(),
        algorithm: AlgorithmConfig::Population {
            lambda: None,
            c: Some(5.0),
            d: Some(1.0),
            selection,
            mutation: MutationOp::default(),
        },
    }
}
