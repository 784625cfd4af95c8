//! Library side of the `nphgsd` command: configuration, validation and the
//! five commands, each producing in-memory output files.

pub mod config;
mod report;

use config::{Overrides, RunConfig, SizeMethod};
use nphgsd_core::ahr::ahr_lr;
use nphgsd_core::design::{sample_size_dn, sample_size_nd, DesignSpec};
use nphgsd_core::expect::expected_events;
use nphgsd_core::{AnalysisSchedule, TestSpec};
use nphgsd_sim::{run_study, SimTest, StudyConfig};
use serde::Serialize;

pub use config::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] nphgsd_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::Core(nphgsd_core::Error::Invalid(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Design,
    Power,
    Expect,
    Simulate,
    Scenarios,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Power => "power",
            Command::Expect => "expect",
            Command::Simulate => "simulate",
            Command::Scenarios => "scenarios",
        }
    }
}

/// One output file: the first CSV of a command is its main report.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub format: Format,
    pub contents: String,
}

fn csv_file(name: String, contents: String) -> OutputFile {
    OutputFile { name: format!("{name}.csv"), format: Format::Csv, contents }
}

fn json_file<T: Serialize>(name: &str, value: &T) -> Result<OutputFile, CliError> {
    let mut contents = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    contents.push('\n');
    Ok(OutputFile { name: format!("{name}.json"), format: Format::Json, contents })
}

/// Validate and run `cmd`.
pub fn run(cmd: Command, cfg: &RunConfig, ov: Overrides) -> Result<Vec<OutputFile>, CliError> {
    cfg.validate(cmd, ov)?;
    match cmd {
        Command::Design => design(cfg),
        Command::Power => power(cfg),
        Command::Expect => expect(cfg),
        Command::Simulate => simulate(cfg, ov),
        Command::Scenarios => scenarios(cfg, ov),
    }
}

fn design(cfg: &RunConfig) -> Result<Vec<OutputFile>, CliError> {
    let spec = cfg.design_spec()?;
    let d = cfg.design.as_ref().expect("validated");
    let target = d.power.expect("validated");
    let mut summary = match cfg.size_method()? {
        SizeMethod::Dn => sample_size_dn(&spec, target)?,
        SizeMethod::Nd => sample_size_nd(&spec, target)?,
    };
    if d.ceiling {
        summary = spec.evaluate(summary.sample_size.ceil())?;
    }
    Ok(vec![csv_file("design".into(), report::design_csv(&summary)), json_file("design", &summary)?])
}

fn power(cfg: &RunConfig) -> Result<Vec<OutputFile>, CliError> {
    let spec = cfg.design_spec()?;
    let n = cfg.design.as_ref().and_then(|d| d.sample_size).unwrap_or_else(|| spec.model.planned_n());
    let summary = spec.evaluate(n)?;
    Ok(vec![csv_file("power".into(), report::design_csv(&summary)), json_file("power", &summary)?])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectRow {
    pub time: f64,
    pub ahr: f64,
    pub expected_events: f64,
}

/// Time at which the AHR is evaluated for `t = 0`, where it is defined as
/// the limit.
const AHR_ORIGIN: f64 = 1e-6;

pub fn expect_rows(model: &nphgsd_core::TrialModel, times: &[f64]) -> Result<Vec<ExpectRow>, CliError> {
    times
        .iter()
        .map(|&t| {
            let mut events = 0.0;
            if t > 0.0 {
                for s in model.strata_or_self() {
                    events += expected_events(&model.stratum_model(&s), t)?.pooled();
                }
            }
            let ahr = ahr_lr(model, t.max(AHR_ORIGIN))?.ahr;
            Ok(ExpectRow { time: t, ahr, expected_events: events })
        })
        .collect()
}

fn expect(cfg: &RunConfig) -> Result<Vec<OutputFile>, CliError> {
    let model = cfg.trial_model()?;
    let rows = expect_rows(&model, &cfg.expect_times()?)?;
    Ok(vec![csv_file("expect".into(), report::expect_csv(&rows)), json_file("expect", &rows)?])
}

fn simulate(cfg: &RunConfig, ov: Overrides) -> Result<Vec<OutputFile>, CliError> {
    let model = cfg.trial_model()?;
    let (tests, study) = cfg.study_config(ov)?;
    let rep = run_study(&model, &tests, &study)?;
    let mut out = vec![
        csv_file("simulate".into(), rep.to_csv(4)),
        csv_file("simulate_moments".into(), rep.moments_csv(4)),
    ];
    if let Some(z) = rep.z_dump_csv() {
        out.push(csv_file("simulate_z".into(), z));
    }
    out.push(json_file("simulate", &rep)?);
    Ok(out)
}

/// One cell of a scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioCell {
    pub scenario: String,
    pub test: String,
    /// Asymptotic rejection probability; absent for simulation-only tests.
    pub asymptotic: Option<f64>,
    pub simulated: Option<f64>,
    pub mc_se: Option<f64>,
}

fn asymptotic_test(t: &SimTest) -> Option<TestSpec> {
    match t {
        SimTest::Wlr { weight } => Some(TestSpec::Wlr(*weight)),
        SimTest::MaxCombo { weights } => Some(TestSpec::MaxCombo(weights.clone())),
        SimTest::Rmst { .. } | SimTest::Milestone { .. } => None,
    }
}

pub fn scenario_grid(cfg: &RunConfig, ov: Overrides) -> Result<Vec<ScenarioCell>, CliError> {
    let s = cfg.scenarios.as_ref().ok_or_else(|| CliError::Invalid("a `scenarios` section is required".into()))?;
    let mut cells = Vec::new();
    for sc in &s.scenarios {
        let model = sc.model(s.n, s.late_hazard);
        let sim = if s.simulate {
            let study = StudyConfig {
                n: s.n as usize,
                replicates: s.replicates,
                seed: ov.seed.unwrap_or(s.seed),
                schedule: AnalysisSchedule::Times(vec![s.analysis_time]),
                alpha: s.alpha,
                bounds: None,
                workers: ov.workers.or(s.workers),
                keep_z: false,
            };
            Some(run_study(&model, &s.tests, &study)?)
        } else {
            None
        };
        for (i, t) in s.tests.iter().enumerate() {
            let asymptotic = match asymptotic_test(t) {
                Some(test) => {
                    let spec = DesignSpec {
                        alpha: nphgsd_core::design::SpendingFunction::obf(s.alpha),
                        info_scale: s.info_scale,
                        logrank_method: s.logrank_method,
                        drift_form: s.drift_form,
                        mvn_points: s.mvn_points,
                        ..DesignSpec::new(model.clone(), AnalysisSchedule::Times(vec![s.analysis_time]), vec![test])
                    };
                    Some(spec.evaluate(s.n)?.power)
                }
                None => None,
            };
            let r = sim.as_ref().map(|r| &r.tests[i]);
            cells.push(ScenarioCell {
                scenario: sc.label().to_string(),
                test: t.label(),
                asymptotic,
                simulated: r.map(|r| r.rejection),
                mc_se: r.map(|r| r.mc_se),
            });
        }
    }
    Ok(cells)
}

fn scenarios(cfg: &RunConfig, ov: Overrides) -> Result<Vec<OutputFile>, CliError> {
    let cells = scenario_grid(cfg, ov)?;
    Ok(vec![csv_file("scenarios".into(), report::scenarios_csv(&cells)), json_file("scenarios", &cells)?])
}
