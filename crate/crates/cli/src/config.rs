//! Run configuration: one JSON file, with a section per command.

use crate::{CliError, Command};
use nphgsd_core::design::{DesignSpec, LogrankMethod, SpendingFraction, SpendingFunction};
use nphgsd_core::model::validate;
use nphgsd_core::scenario::{LateHazard, Scenario};
use nphgsd_core::wlr::{DriftForm, Hypothesis};
use nphgsd_core::{AnalysisSchedule, TestSpec, TrialModel};
use nphgsd_sim::{SimTest, StudyConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<TrialModel>,
    /// A reference scenario in place of an explicit model.
    #[serde(default)]
    pub scenario: Option<ScenarioModel>,
    #[serde(default)]
    pub design: Option<DesignSection>,
    #[serde(default)]
    pub expect: Option<ExpectSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub scenarios: Option<ScenariosSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioModel {
    pub name: Scenario,
    pub n: f64,
    #[serde(default)]
    pub late_hazard: LateHazard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMethod {
    /// Events first, through the average hazard ratio (logrank only).
    Dn,
    /// Search over N.
    Nd,
}

fn default_alpha_spending() -> SpendingFunction {
    SpendingFunction::obf(0.025)
}

fn default_local() -> Hypothesis {
    Hypothesis::Local
}

fn default_points() -> usize {
    1 << 13
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub schedule: AnalysisSchedule,
    pub tests: Vec<TestSpec>,
    #[serde(default = "default_alpha_spending")]
    pub alpha: SpendingFunction,
    #[serde(default)]
    pub beta: Option<SpendingFunction>,
    #[serde(default)]
    pub spending_fraction: SpendingFraction,
    #[serde(default = "default_local")]
    pub info_scale: Hypothesis,
    #[serde(default)]
    pub logrank_method: LogrankMethod,
    #[serde(default)]
    pub drift_form: DriftForm,
    #[serde(default = "default_points")]
    pub mvn_points: usize,
    /// Target power for `design`.
    #[serde(default)]
    pub power: Option<f64>,
    /// Sample size for `power`; the model's planned enrollment when absent.
    #[serde(default)]
    pub sample_size: Option<f64>,
    /// Sample-size route; `dn` for all-logrank designs, `nd` otherwise.
    #[serde(default)]
    pub method: Option<SizeMethod>,
    /// Round the solved sample size up and report the design there.
    #[serde(default)]
    pub ceiling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectSection {
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<Grid>,
}

fn default_seed() -> u64 {
    1
}

fn default_level() -> f64 {
    0.025
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub schedule: AnalysisSchedule,
    pub tests: Vec<SimTest>,
    #[serde(default = "default_level")]
    pub alpha: f64,
    #[serde(default)]
    pub bounds: Option<Vec<f64>>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub keep_z: bool,
}

fn default_n() -> f64 {
    698.0
}

fn default_time() -> f64 {
    36.0
}

fn all_scenarios() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}

fn default_replicates() -> usize {
    100_000
}

fn grid_logrank() -> LogrankMethod {
    LogrankMethod::Wlr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenariosSection {
    #[serde(default = "default_n")]
    pub n: f64,
    #[serde(default = "default_time")]
    pub analysis_time: f64,
    #[serde(default = "default_level")]
    pub alpha: f64,
    #[serde(default)]
    pub late_hazard: LateHazard,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<Scenario>,
    pub tests: Vec<SimTest>,
    #[serde(default = "default_local")]
    pub info_scale: Hypothesis,
    #[serde(default)]
    pub drift_form: DriftForm,
    #[serde(default = "grid_logrank")]
    pub logrank_method: LogrankMethod,
    #[serde(default = "default_points")]
    pub mvn_points: usize,
    #[serde(default)]
    pub simulate: bool,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub path: Option<String>,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn check_late(late: LateHazard) -> Result<(), CliError> {
    match late {
        LateHazard::Lower { factor } if !(factor >= 0.0 && factor.is_finite()) => {
            Err(invalid(format!("late_hazard factor must be finite and >= 0, got {factor}")))
        }
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// The trial model from `model` or `scenario`.
    pub fn trial_model(&self) -> Result<TrialModel, CliError> {
        match (&self.model, &self.scenario) {
            (Some(m), None) => Ok(m.clone()),
            (None, Some(s)) => {
                check_late(s.late_hazard)?;
                if !(s.n > 0.0 && s.n.is_finite()) {
                    return Err(invalid(format!("scenario n must be positive, got {}", s.n)));
                }
                Ok(s.name.model(s.n, s.late_hazard))
            }
            (Some(_), Some(_)) => Err(invalid("give either `model` or `scenario`, not both")),
            (None, None) => Err(invalid("a `model` or `scenario` section is required")),
        }
    }

    fn design_section(&self) -> Result<&DesignSection, CliError> {
        self.design.as_ref().ok_or_else(|| invalid("a `design` section is required"))
    }

    pub fn design_spec(&self) -> Result<DesignSpec, CliError> {
        let d = self.design_section()?;
        Ok(DesignSpec {
            model: self.trial_model()?,
            schedule: d.schedule.clone(),
            tests: d.tests.clone(),
            alpha: d.alpha.clone(),
            beta: d.beta.clone(),
            spending_fraction: d.spending_fraction,
            info_scale: d.info_scale,
            logrank_method: d.logrank_method,
            drift_form: d.drift_form,
            mvn_points: d.mvn_points,
        })
    }

    /// Sample-size route for `design`.
    pub fn size_method(&self) -> Result<SizeMethod, CliError> {
        let d = self.design_section()?;
        let all_logrank = d
            .tests
            .iter()
            .all(|t| t.components().iter().all(|w| w.normalized() == nphgsd_core::WeightSpec::Logrank));
        match d.method {
            Some(SizeMethod::Dn) if !all_logrank => Err(invalid("method `dn` applies to logrank-only designs")),
            Some(m) => Ok(m),
            None if all_logrank => Ok(SizeMethod::Dn),
            None => Ok(SizeMethod::Nd),
        }
    }

    /// Analysis times for `expect`.
    pub fn expect_times(&self) -> Result<Vec<f64>, CliError> {
        let e = self.expect.as_ref().ok_or_else(|| invalid("an `expect` section is required"))?;
        let times = match (&e.times, &e.grid) {
            (Some(t), None) => t.clone(),
            (None, Some(g)) => {
                if !(g.step > 0.0 && g.from >= 0.0 && g.to >= g.from && g.to.is_finite()) {
                    return Err(invalid("grid needs 0 <= from <= to and step > 0"));
                }
                let n = ((g.to - g.from) / g.step + 1e-9).floor() as usize;
                (0..=n).map(|i| g.from + i as f64 * g.step).collect()
            }
            _ => return Err(invalid("`expect` needs exactly one of `times` or `grid`")),
        };
        if times.is_empty() {
            return Err(invalid("`expect` has no times"));
        }
        Ok(times)
    }

    pub fn study_config(&self, ov: Overrides) -> Result<(Vec<SimTest>, StudyConfig), CliError> {
        let s = self.simulation.as_ref().ok_or_else(|| invalid("a `simulation` section is required"))?;
        let cfg = StudyConfig {
            n: s.n,
            replicates: s.replicates,
            seed: ov.seed.unwrap_or(s.seed),
            schedule: s.schedule.clone(),
            alpha: s.alpha,
            bounds: s.bounds.clone(),
            workers: ov.workers.or(s.workers),
            keep_z: s.keep_z,
        };
        Ok((s.tests.clone(), cfg))
    }

    fn scenarios_section(&self) -> Result<&ScenariosSection, CliError> {
        self.scenarios.as_ref().ok_or_else(|| invalid("a `scenarios` section is required"))
    }

    /// Every check a full run of `cmd` performs before computing. Returns
    /// advisory warnings.
    pub fn validate(&self, cmd: Command, ov: Overrides) -> Result<Vec<String>, CliError> {
        if ov.workers == Some(0) {
            return Err(invalid("--workers must be at least 1"));
        }
        let mut warnings = Vec::new();
        match cmd {
            Command::Design | Command::Power => {
                let spec = self.design_spec()?;
                spec.alpha.check()?;
                if let Some(b) = &spec.beta {
                    b.check()?;
                }
                warnings.extend(validate(&spec.model, &spec.schedule).into_result()?);
                spec.check()?;
                let d = self.design_section()?;
                if cmd == Command::Design {
                    let p = d.power.ok_or_else(|| invalid("`design.power` is required for `design`"))?;
                    if !(p > spec.alpha.total && p < 1.0) {
                        return Err(invalid(format!("target power must lie in (alpha, 1), got {p}")));
                    }
                    self.size_method()?;
                } else if let Some(n) = d.sample_size {
                    if !(n > 0.0 && n.is_finite()) {
                        return Err(invalid(format!("sample_size must be positive, got {n}")));
                    }
                }
            }
            Command::Expect => {
                let m = self.trial_model()?;
                let times = self.expect_times()?;
                warnings.extend(validate(&m, &AnalysisSchedule::Times(vec![m.total_duration])).into_result()?);
                if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= m.total_duration)) {
                    return Err(invalid(format!("time {t} lies outside [0, {}]", m.total_duration)));
                }
            }
            Command::Simulate => {
                let m = self.trial_model()?;
                let (tests, cfg) = self.study_config(ov)?;
                cfg.check()?;
                if tests.is_empty() {
                    return Err(invalid("`simulation.tests` is empty"));
                }
                for t in &tests {
                    t.check()?;
                }
                if !m.strata.is_empty() {
                    return Err(invalid("simulation supports single-stratum models only"));
                }
                warnings.extend(validate(&m, &cfg.schedule).into_result()?);
            }
            Command::Scenarios => {
                let s = self.scenarios_section()?;
                check_late(s.late_hazard)?;
                if s.tests.is_empty() {
                    return Err(invalid("`scenarios.tests` is empty"));
                }
                if s.scenarios.is_empty() {
                    return Err(invalid("`scenarios.scenarios` is empty"));
                }
                if !(s.n >= 1.0 && s.n.fract() == 0.0) {
                    return Err(invalid(format!("scenarios n must be a positive integer, got {}", s.n)));
                }
                if !(s.analysis_time > 0.0 && s.analysis_time <= 36.0) {
                    return Err(invalid(format!("analysis_time must lie in (0, 36], got {}", s.analysis_time)));
                }
                if !(s.alpha > 0.0 && s.alpha < 1.0) {
                    return Err(invalid(format!("alpha must lie in (0, 1), got {}", s.alpha)));
                }
                for t in &s.tests {
                    t.check()?;
                    if !s.simulate && matches!(t, SimTest::Rmst { .. } | SimTest::Milestone { .. }) {
                        return Err(invalid(format!(
                            "{} is simulation-only: no asymptotic power is available; set `simulate: true`",
                            t.label()
                        )));
                    }
                }
                if s.simulate && s.replicates == 0 {
                    return Err(invalid("replicates must be at least 1"));
                }
            }
        }
        Ok(warnings)
    }
}
