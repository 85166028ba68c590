//! Batch runner for the `polmem` simulator.
//!
//! An experiment is a configuration file plus command-line overrides. Flags
//! take precedence over file values, which take precedence over built-in
//! defaults. Results go to an output directory:
//!
//! - `summary.json`: configuration echo, tool version, seed, the exact and/or
//!   Monte Carlo sections, and their per-class differences;
//! - `trials.jsonl`: one trial record per line (Monte Carlo modes, `json`
//!   format);
//! - `summary.csv`: flat table of the headline numbers (`csv` format).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use polmem::analysis::{aggregate, chi_square_test, exact_report, ChiSquareResult, ExactReport, RunStatistics};
use polmem::config::{read_config_text, to_config_text, validate, validate_model, Diagnostic};
use polmem::protocol::{PatternClass, ProtocolConfig, Simulator, TrialRecord};
use serde::{Deserialize, Serialize};

pub const TOOL_NAME: &str = "polmem";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Significance of the pattern goodness-of-fit test in `both` mode.
pub const CHI_SQUARE_SIGNIFICANCE: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Montecarlo,
    Both,
}

impl Mode {
    pub fn exact(self) -> bool {
        self != Mode::Montecarlo
    }

    pub fn montecarlo(self) -> bool {
        self != Mode::Exact
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub config: ProtocolConfig,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub report_formats: BTreeSet<ReportFormat>,
}

/// Command-line values that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub report_formats: Option<Vec<ReportFormat>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", render(.0))]
    Config(Vec<Diagnostic>),
    #[error("{stage}: {source}")]
    Runtime {
        stage: &'static str,
        #[source]
        source: polmem::Error,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn render(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime { .. } | CliError::Io { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Diagnostics for a configuration file; empty means it can be run.
pub fn validate_config(path: &Path) -> Vec<Diagnostic> {
    match fs::read_to_string(path) {
        Ok(text) => {
            let (config, mut diagnostics) = read_config_text(&text);
            diagnostics.extend(validate(&config));
            diagnostics
        }
        Err(e) => vec![Diagnostic {
            key: "config".into(),
            line: None,
            message: format!("{}: {e}", path.display()),
            severity: polmem::config::Severity::Error,
        }],
    }
}

/// Reads `path`, applies `overrides` and validates the result for the
/// chosen mode. Exact mode does not look at `trials` or `seed`.
pub fn build_spec(path: &Path, overrides: &Overrides) -> Result<ExperimentSpec, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (mut config, mut diagnostics) = read_config_text(&text);
    if let Some(t) = overrides.trials {
        config.trials = t;
    }
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    let mode = overrides.mode.unwrap_or(Mode::Both);
    diagnostics.extend(if mode.montecarlo() { validate(&config) } else { validate_model(&config) });
    if !diagnostics.is_empty() {
        return Err(CliError::Config(diagnostics));
    }
    let report_formats = match &overrides.report_formats {
        Some(f) => f.iter().copied().collect(),
        None => BTreeSet::from([ReportFormat::Json]),
    };
    Ok(ExperimentSpec {
        config,
        mode,
        output_dir: overrides.output_dir.clone().unwrap_or_else(|| PathBuf::from("results")),
        report_formats,
    })
}

/// Monte Carlo minus exact, per class and for acceptance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub class_abs_diff: BTreeMap<PatternClass, f64>,
    pub acceptance_abs_diff: f64,
    /// Sampled click patterns against their exact probabilities.
    pub pattern_chi_square: ChiSquareResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub mode: Mode,
    /// Absent in exact mode, which uses no randomness.
    pub seed: Option<u64>,
    pub config: ProtocolConfig,
    /// The effective configuration in config-file form.
    pub config_text: String,
    pub exact: Option<ExactReport>,
    pub montecarlo: Option<RunStatistics>,
    pub comparison: Option<Comparison>,
}

/// Result of [`run_experiment`]: the summary and, in Monte Carlo modes,
/// every trial record in trial order.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub trials: Vec<TrialRecord>,
}

fn runtime(stage: &'static str) -> impl FnOnce(polmem::Error) -> CliError {
    move |source| CliError::Runtime { stage, source }
}

/// Runs the experiment and writes its reports into `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let output = simulate(spec)?;
    write_reports(spec, &output)?;
    Ok(output)
}

/// Runs the experiment without touching the filesystem.
pub fn simulate(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let cfg = &spec.config;
    let exact = spec.mode.exact().then(|| exact_report(cfg)).transpose().map_err(runtime("exact enumeration"))?;
    let trials = if spec.mode.montecarlo() {
        Simulator::new(cfg).and_then(|s| s.run()).map_err(runtime("monte carlo trials"))?
    } else {
        Vec::new()
    };
    let montecarlo = spec.mode.montecarlo().then(|| aggregate(&trials)).transpose().map_err(runtime("aggregation"))?;
    let comparison = match (&exact, &montecarlo) {
        (Some(e), Some(m)) => Some(compare(e, m).map_err(runtime("comparison"))?),
        _ => None,
    };
    let summary = Summary {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        mode: spec.mode,
        seed: spec.mode.montecarlo().then_some(cfg.seed),
        config: cfg.clone(),
        config_text: to_config_text(cfg),
        exact,
        montecarlo,
        comparison,
    };
    Ok(ExperimentOutput { summary, trials })
}

fn compare(exact: &ExactReport, mc: &RunStatistics) -> polmem::Result<Comparison> {
    let class_abs_diff = PatternClass::ALL
        .iter()
        .map(|c| (*c, (mc.class_rates[c].estimate - exact.class_probabilities[c]).abs()))
        .collect();
    Ok(Comparison {
        class_abs_diff,
        acceptance_abs_diff: (mc.acceptance.estimate - exact.acceptance).abs(),
        pattern_chi_square: chi_square_test(&mc.pattern_counts, &exact.pattern_probabilities, CHI_SQUARE_SIGNIFICANCE)?,
    })
}

/// One line per record, fields in declaration order.
pub fn trials_jsonl(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trial records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    section: &'a str,
    quantity: String,
    value: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    count: Option<u64>,
}

fn csv_rows(summary: &Summary) -> Vec<CsvRow<'static>> {
    let row =
        |section, quantity: String, value| CsvRow { section, quantity, value, lower: None, upper: None, count: None };
    let mut rows = Vec::new();
    if let Some(e) = &summary.exact {
        for (c, p) in &e.class_probabilities {
            rows.push(row("exact", format!("{c:?}"), *p));
        }
        rows.push(row("exact", "acceptance".into(), e.acceptance));
        for (name, v) in [
            ("stored_fidelity_on_accept", e.stored_fidelity_on_accept),
            ("readout_fidelity_on_accept", e.readout_fidelity_on_accept),
            ("postselected_fidelity", e.postselected_fidelity),
        ] {
            if let Some(v) = v {
                rows.push(row("exact", name.into(), v));
            }
        }
    }
    if let Some(m) = &summary.montecarlo {
        let rate = |quantity: String, p: &polmem::analysis::Proportion| CsvRow {
            section: "montecarlo",
            quantity,
            value: p.estimate,
            lower: Some(p.lower),
            upper: Some(p.upper),
            count: Some(p.successes),
        };
        for (c, p) in &m.class_rates {
            rows.push(rate(format!("{c:?}"), p));
        }
        rows.push(rate("acceptance".into(), &m.acceptance));
        for (name, v) in [
            ("stored_fidelity_on_accept", &m.stored_fidelity_on_accept),
            ("readout_fidelity_on_accept", &m.readout_fidelity_on_accept),
            ("postselected_fidelity", &m.postselected_fidelity),
            ("prep_attempts", &m.mean_prep_attempts),
        ] {
            if let Some(v) = v {
                rows.push(CsvRow {
                    section: "montecarlo",
                    quantity: name.into(),
                    value: v.mean,
                    lower: Some(v.mean - v.std_error),
                    upper: Some(v.mean + v.std_error),
                    count: Some(v.count),
                });
            }
        }
    }
    if let Some(c) = &summary.comparison {
        for (class, d) in &c.class_abs_diff {
            rows.push(row("abs_diff", format!("{class:?}"), *d));
        }
        rows.push(row("abs_diff", "acceptance".into(), c.acceptance_abs_diff));
    }
    rows
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in csv_rows(summary) {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(contents.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_reports(spec: &ExperimentSpec, output: &ExperimentOutput) -> Result<(), CliError> {
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &(json + "\n"))?;
    if spec.mode.montecarlo() && spec.report_formats.contains(&ReportFormat::Json) {
        write_file(&dir.join("trials.jsonl"), &trials_jsonl(&output.trials))?;
    }
    if spec.report_formats.contains(&ReportFormat::Csv) {
        write_file(&dir.join("summary.csv"), &summary_csv(&output.summary))?;
    }
    Ok(())
}
