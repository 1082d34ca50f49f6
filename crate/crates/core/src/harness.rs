//! Monte-Carlo sweeps over the experiment axes.
//!
//! Every trial draws its own environment and data from a seed derived from
//! the master seed and the trial index, so all axis values and baselines of
//! a trial see the same channel, synchronization errors and noise. Trials
//! run in the rayon pool; rows are sorted before they are written, which
//! keeps the CSV independent of scheduling.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ckm::CkmEntry;
use crate::error::{Error, Result};
use crate::manifold::{nmse_db, wrap_signed};
use crate::seeds::derive_seed;
use crate::sim::{synthesize_measurements, GroundTruth, MeasurementSet, ScenarioConfig, SynthesisRequest};
use crate::stage1::{gauge_offset, representation_nmse_db, run_stage1, CoefficientMode, InitMode, Stage1Options, Stage1Output, SyncMode};
use crate::stage2::{run_stage2, Stage2Options};

pub const CSV_HEADER: [&str; 9] = [
    "axis",
    "value",
    "baseline",
    "trial",
    "seed",
    "nmse_db",
    "sync_rmse_rad",
    "runtime_ms",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "L_s")]
    Ls,
    #[serde(rename = "iterations")]
    Iterations,
    #[serde(rename = "pilot_ratio")]
    PilotRatio,
    #[serde(rename = "L_d")]
    Ld,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Ls => "L_s",
            Axis::Iterations => "iterations",
            Axis::PilotRatio => "pilot_ratio",
            Axis::Ld => "L_d",
        }
    }

    /// Whether the axis evaluates the table estimator rather than the
    /// single-symbol estimator.
    pub fn is_stage1(&self) -> bool {
        matches!(self, Axis::Ls)
    }

    fn label(&self) -> &'static str {
        match self {
            Axis::Ls => "number of quasi-static paths",
            Axis::Iterations => "iteration",
            Axis::PilotRatio => "N/P",
            Axis::Ld => "number of dynamic paths",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Full,
    NoSyncCal,
    NoDynamicEst,
    NoPrior,
    SeparateEst,
    OmpInit,
    IdealPrior,
}

impl Baseline {
    pub const ALL: [Baseline; 7] = [
        Baseline::Full,
        Baseline::NoSyncCal,
        Baseline::NoDynamicEst,
        Baseline::NoPrior,
        Baseline::SeparateEst,
        Baseline::OmpInit,
        Baseline::IdealPrior,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Full => "full",
            Baseline::NoSyncCal => "no_sync_cal",
            Baseline::NoDynamicEst => "no_dynamic_est",
            Baseline::NoPrior => "no_prior",
            Baseline::SeparateEst => "separate_est",
            Baseline::OmpInit => "omp_init",
            Baseline::IdealPrior => "ideal_prior",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Baseline::ALL.iter().map(Baseline::name).collect();
                Error::Config(vec![format!("unknown baseline `{s}` (expected one of {})", known.join(", "))])
            })
    }

    /// Whether the baseline is defined for the table estimator.
    pub fn applies_to_stage1(&self) -> bool {
        matches!(
            self,
            Baseline::Full | Baseline::NoSyncCal | Baseline::SeparateEst | Baseline::OmpInit
        )
    }
}

/// Settings of a cell; the swept axis overrides its own field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSettings {
    pub l_s: usize,
    pub l_d: usize,
    pub pilot_ratio: f64,
    pub iterations: usize,
    /// Slots of the table-building data.
    pub slots: usize,
    pub grid: usize,
}

impl Default for CellSettings {
    fn default() -> Self {
        CellSettings {
            l_s: 12,
            l_d: 4,
            pilot_ratio: 1.0,
            iterations: 10,
            slots: 8,
            grid: 0,
        }
    }
}

impl CellSettings {
    /// Copy with the axis field set to `value`.
    pub fn at(&self, axis: Axis, value: f64) -> Self {
        let mut s = *self;
        match axis {
            Axis::Ls => s.l_s = value as usize,
            Axis::Iterations => s.iterations = value as usize,
            Axis::PilotRatio => s.pilot_ratio = value,
            Axis::Ld => s.l_d = value as usize,
        }
        s
    }
}

/// A sweep: scenario, axis values, baselines and trial count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Named preset used when `scenario` is absent.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub n_trials: usize,
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub settings: CellSettings,
    /// Default CSV path for the command-line driver.
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Scenario of the sweep: the explicit one, else the preset, else
    /// `los-desk`.
    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        match (&self.scenario, &self.preset) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(p)) => ScenarioConfig::preset(p),
            (None, None) => Ok(ScenarioConfig::los_desk()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let cfg = match self.scenario_config() {
            Ok(c) => Some(c),
            Err(e) => {
                bad.push(e.to_string());
                None
            }
        };
        if let Some(c) = &cfg {
            if let Err(Error::Config(v)) = c.validate() {
                bad.extend(v);
            }
            if self.settings.grid >= c.n_grids {
                bad.push(format!("settings.grid {} outside 0..{}", self.settings.grid, c.n_grids));
            }
        }
        if self.n_trials == 0 {
            bad.push("n_trials must be at least 1".into());
        }
        if self.values.is_empty() {
            bad.push("values must not be empty".into());
        }
        for &v in &self.values {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("axis value {v} must be positive"));
            } else if self.axis != Axis::PilotRatio && v.fract() != 0.0 {
                bad.push(format!("axis {} takes integer values (got {v})", self.axis.name()));
            } else if self.axis == Axis::PilotRatio && v < 1.0 {
                bad.push(format!("pilot_ratio N/P must be at least 1 (got {v})"));
            }
        }
        if self.baselines.is_empty() {
            bad.push("baselines must not be empty".into());
        }
        for (i, b) in self.baselines.iter().enumerate() {
            if self.baselines[..i].contains(b) {
                bad.push(format!("baseline {} listed twice", b.name()));
            }
            if self.axis.is_stage1() && !b.applies_to_stage1() {
                bad.push(format!("baseline {} is not defined for axis L_s", b.name()));
            }
        }
        let s = &self.settings;
        if s.slots == 0 || s.iterations == 0 {
            bad.push("settings.slots and settings.iterations must be at least 1".into());
        }
        if !(s.pilot_ratio.is_finite() && s.pilot_ratio >= 1.0) {
            bad.push(format!("settings.pilot_ratio must be at least 1 (got {})", s.pilot_ratio));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// SHA-256 of the resolved spec.
    pub fn config_hash(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.scenario = Some(self.scenario_config()?);
        resolved.preset = None;
        resolved.output = None;
        let digest = Sha256::digest(serde_json::to_vec(&resolved)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Metrics of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub nmse_db: f64,
    pub sync_rmse_rad: f64,
    pub runtime_ms: f64,
    pub iterations: usize,
    /// NMSE after each iteration when recorded.
    pub history_db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TableVariant {
    Full,
    NoSync,
    Separate,
    Omp,
}

impl TableVariant {
    fn of(baseline: Baseline, stage1_axis: bool) -> Self {
        match baseline {
            Baseline::NoSyncCal if stage1_axis => TableVariant::NoSync,
            Baseline::SeparateEst => TableVariant::Separate,
            Baseline::OmpInit => TableVariant::Omp,
            _ => TableVariant::Full,
        }
    }

    fn options(&self, budget: usize) -> Stage1Options {
        let mut o = Stage1Options::new(budget);
        match self {
            TableVariant::Full => {}
            TableVariant::NoSync => o.sync = SyncMode::Zero,
            TableVariant::Separate => o.coefficients = CoefficientMode::Separate,
            TableVariant::Omp => o.init = InitMode::Omp,
        }
        o
    }
}

/// Seed shared by every cell of a trial.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &["trial", &trial.to_string()])
}

/// Environment and data of one Monte-Carlo trial, with table-building runs
/// cached across cells.
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub grid: usize,
    pub stage1_data: (MeasurementSet, GroundTruth),
    tables: RefCell<HashMap<(TableVariant, usize), (Stage1Output, f64)>>,
}

impl Trial {
    pub fn new(scenario: &ScenarioConfig, master: u64, index: usize, settings: &CellSettings) -> Result<Self> {
        let seed = trial_seed(master, index);
        let mut config = scenario.clone();
        config.rng_seed = derive_seed(seed, &["environment"]);
        let req = SynthesisRequest::stage1(settings.slots, settings.grid, derive_seed(seed, &["stage1"]));
        let stage1_data = synthesize_measurements(&config, &req)?;
        Ok(Trial {
            index,
            seed,
            config,
            grid: settings.grid,
            stage1_data,
            tables: RefCell::new(HashMap::new()),
        })
    }

    /// Single-symbol data at pilot ratio `N/P`.
    pub fn stage2_data(&self, pilot_ratio: f64) -> Result<(MeasurementSet, GroundTruth)> {
        let req = SynthesisRequest::stage2(1.0 / pilot_ratio, self.grid, derive_seed(self.seed, &["stage2"]));
        synthesize_measurements(&self.config, &req)
    }

    fn table(&self, variant: TableVariant, l_s: usize) -> Result<(Stage1Output, f64)> {
        if let Some(hit) = self.tables.borrow().get(&(variant, l_s)) {
            return Ok(hit.clone());
        }
        let start = Instant::now();
        let out = run_stage1(&self.stage1_data.0, &variant.options(l_s))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        self.tables.borrow_mut().insert((variant, l_s), (out.clone(), ms));
        Ok((out, ms))
    }

    /// Table-estimator cell: representation NMSE of the quasi-static channel
    /// and synchronization RMSE after removing the common delay offset.
    pub fn stage1_cell(&self, baseline: Baseline, l_s: usize) -> Result<CellResult> {
        if !baseline.applies_to_stage1() {
            return Err(Error::Config(vec![format!(
                "baseline {} is not defined for the table estimator",
                baseline.name()
            )]));
        }
        let (out, ms) = self.table(TableVariant::of(baseline, true), l_s)?;
        let truth = &self.stage1_data.1;
        let dims = self.config.dims();
        let sync_hat = out.state.sync_means();
        let nmse = representation_nmse_db(
            &out.state.path_means(),
            &sync_hat,
            &truth.sync_error,
            &truth.static_channels,
            dims,
        )?;
        let c = gauge_offset(&sync_hat, &truth.sync_error);
        let mse = sync_hat
            .iter()
            .zip(&truth.sync_error)
            .map(|(h, e)| wrap_signed(h + c - e).powi(2))
            .sum::<f64>()
            / sync_hat.len() as f64;
        Ok(CellResult {
            nmse_db: nmse,
            sync_rmse_rad: mse.sqrt(),
            runtime_ms: ms,
            iterations: out.state.iterations,
            history_db: Vec::new(),
        })
    }

    /// Single-symbol cell: NMSE of the full-band channel and the absolute
    /// synchronization error relative to the table's delay offset.
    pub fn stage2_cell(&self, baseline: Baseline, settings: &CellSettings, record_history: bool) -> Result<CellResult> {
        let (meas, truth) = self.stage2_data(settings.pilot_ratio)?;
        let mut opts = Stage2Options::new(settings.l_d);
        opts.max_iters = settings.iterations;
        opts.record_history = record_history;
        let mut table_ms = 0.0;
        let (entry, offset) = match baseline {
            Baseline::NoPrior => {
                opts.budget = settings.l_s + settings.l_d;
                (CkmEntry::empty(self.grid), 0.0)
            }
            Baseline::IdealPrior => {
                opts.sync = SyncMode::Known(vec![truth.sync_error[0]]);
                let powers: Vec<f64> = truth.static_coeffs[0].iter().map(|c| c.norm_sqr()).collect();
                (CkmEntry::from_paths(self.grid, &truth.static_paths[0], &powers), 0.0)
            }
            _ => {
                let (out, ms) = self.table(TableVariant::of(baseline, false), settings.l_s)?;
                table_ms = ms;
                let c = gauge_offset(&out.state.sync_means(), &self.stage1_data.1.sync_error);
                (out.entry, c)
            }
        };
        match baseline {
            Baseline::NoSyncCal => opts.sync = SyncMode::Zero,
            Baseline::NoDynamicEst => opts.budget = 0,
            _ => {}
        }
        let start = Instant::now();
        let out = run_stage2(&meas, &entry, &opts)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let h = &truth.channels[0];
        let history_db = out
            .history
            .iter()
            .map(|r| nmse_db(r, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(CellResult {
            nmse_db: nmse_db(&out.reconstruction, h)?,
            sync_rmse_rad: wrap_signed(out.state.sync.mu + offset - truth.sync_error[0]).abs(),
            runtime_ms: ms + table_ms,
            iterations: out.state.iterations,
            history_db,
        })
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub axis: Axis,
    pub value: f64,
    pub baseline: Baseline,
    pub trial: usize,
    pub seed: u64,
    pub nmse_db: f64,
    pub sync_rmse_rad: f64,
    pub runtime_ms: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BenchOptions {
    /// Record wall-clock times; off by default so that CSVs are
    /// reproducible byte for byte.
    pub record_runtime: bool,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
}

fn failed_row(axis: Axis, value: f64, baseline: Baseline, trial: &Trial, err: &Error) -> MetricsRow {
    MetricsRow {
        axis,
        value,
        baseline,
        trial: trial.index,
        seed: trial.seed,
        nmse_db: f64::NAN,
        sync_rmse_rad: f64::NAN,
        runtime_ms: 0.0,
        iterations: 0,
        error: Some(err.to_string()),
    }
}

fn trial_rows(spec: &ExperimentSpec, scenario: &ScenarioConfig, index: usize, opts: BenchOptions) -> Vec<MetricsRow> {
    let axis = spec.axis;
    let trial = match Trial::new(scenario, spec.master_seed, index, &spec.settings) {
        Ok(t) => t,
        Err(e) => {
            let seed = trial_seed(spec.master_seed, index);
            let msg = e.to_string();
            return spec
                .values
                .iter()
                .flat_map(|&v| {
                    let msg = msg.clone();
                    spec.baselines.iter().map(move |&b| MetricsRow {
                        axis,
                        value: v,
                        baseline: b,
                        trial: index,
                        seed,
                        nmse_db: f64::NAN,
                        sync_rmse_rad: f64::NAN,
                        runtime_ms: 0.0,
                        iterations: 0,
                        error: Some(msg.clone()),
                    })
                })
                .collect();
        }
    };
    let runtime = |ms: f64| if opts.record_runtime { ms } else { 0.0 };
    let mut rows = Vec::new();
    for &b in &spec.baselines {
        if axis == Axis::Iterations {
            // one run to the largest count; its history gives every smaller
            // count, and a run that converged early stays at its final value
            let top = spec.values.iter().fold(0.0f64, |m, &v| m.max(v));
            let settings = spec.settings.at(axis, top);
            match trial.stage2_cell(b, &settings, true) {
                Ok(r) => {
                    for &v in &spec.values {
                        let k = (v as usize).min(r.history_db.len()).max(1);
                        rows.push(MetricsRow {
                            axis,
                            value: v,
                            baseline: b,
                            trial: index,
                            seed: trial.seed,
                            nmse_db: r.history_db.get(k - 1).copied().unwrap_or(r.nmse_db),
                            sync_rmse_rad: r.sync_rmse_rad,
                            runtime_ms: runtime(r.runtime_ms),
                            iterations: k.min(r.iterations),
                            error: None,
                        });
                    }
                }
                Err(e) => rows.extend(spec.values.iter().map(|&v| failed_row(axis, v, b, &trial, &e))),
            }
            continue;
        }
        for &v in &spec.values {
            let settings = spec.settings.at(axis, v);
            let cell = if axis.is_stage1() {
                trial.stage1_cell(b, settings.l_s)
            } else {
                trial.stage2_cell(b, &settings, false)
            };
            rows.push(match cell {
                Ok(r) => MetricsRow {
                    axis,
                    value: v,
                    baseline: b,
                    trial: index,
                    seed: trial.seed,
                    nmse_db: r.nmse_db,
                    sync_rmse_rad: r.sync_rmse_rad,
                    runtime_ms: runtime(r.runtime_ms),
                    iterations: r.iterations,
                    error: None,
                },
                Err(e) => failed_row(axis, v, b, &trial, &e),
            });
        }
    }
    rows
}

/// Runs every (axis value, baseline, trial) cell in the current rayon pool.
/// Cell failures become rows with `NaN` metrics and an error message.
pub fn run_bench(spec: &ExperimentSpec, opts: BenchOptions) -> Result<BenchReport> {
    spec.validate()?;
    let scenario = spec.scenario_config()?;
    let mut rows: Vec<MetricsRow> = (0..spec.n_trials)
        .into_par_iter()
        .flat_map_iter(|t| trial_rows(spec, &scenario, t, opts))
        .collect();
    let value_rank = |v: f64| spec.values.iter().position(|&x| x == v).unwrap_or(usize::MAX);
    let baseline_rank = |b: Baseline| spec.baselines.iter().position(|&x| x == b).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (value_rank(r.value), baseline_rank(r.baseline), r.trial));
    Ok(BenchReport {
        spec: spec.clone(),
        config_hash: spec.config_hash()?,
        rows,
    })
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.6}")
    }
}

/// Writes the metrics CSV.
pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            format!("{}", r.value),
            r.baseline.name().to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_f64(r.nmse_db),
            fmt_f64(r.sync_rmse_rad),
            format!("{:.3}", r.runtime_ms),
            r.iterations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregate of one (axis value, baseline) pair over the successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub value: f64,
    pub baseline: Baseline,
    pub mean_nmse_db: f64,
    pub stderr_nmse_db: f64,
    pub mean_sync_rmse_rad: f64,
    pub mean_runtime_ms: f64,
    pub max_runtime_ms: f64,
    pub trials: usize,
    pub failures: usize,
    pub seeds: Vec<u64>,
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per (value, baseline) means in spec order.
pub fn summarize(report: &BenchReport) -> Vec<MetricsRecord> {
    let spec = &report.spec;
    let mut out = Vec::new();
    for &v in &spec.values {
        for &b in &spec.baselines {
            let cell: Vec<&MetricsRow> = report.rows.iter().filter(|r| r.value == v && r.baseline == b).collect();
            let ok: Vec<&&MetricsRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let nmse: Vec<f64> = ok.iter().map(|r| r.nmse_db).collect();
            let sync: Vec<f64> = ok.iter().map(|r| r.sync_rmse_rad).collect();
            let rt: Vec<f64> = ok.iter().map(|r| r.runtime_ms).collect();
            let (mean, stderr) = mean_stderr(&nmse);
            out.push(MetricsRecord {
                value: v,
                baseline: b,
                mean_nmse_db: mean,
                stderr_nmse_db: stderr,
                mean_sync_rmse_rad: mean_stderr(&sync).0,
                mean_runtime_ms: mean_stderr(&rt).0,
                max_runtime_ms: rt.iter().fold(0.0f64, |m, &x| m.max(x)),
                trials: ok.len(),
                failures: cell.len() - ok.len(),
                seeds: cell.iter().map(|r| r.seed).collect(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Plot data for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub figure_id: String,
    pub x_label: String,
    pub y_label: String,
    pub config_hash: String,
    pub series: Vec<Series>,
    pub records: Vec<MetricsRecord>,
}

pub fn plot_data(report: &BenchReport) -> PlotData {
    let records = summarize(report);
    let spec = &report.spec;
    let series = spec
        .baselines
        .iter()
        .map(|&b| {
            let rs: Vec<&MetricsRecord> = records.iter().filter(|r| r.baseline == b).collect();
            Series {
                name: b.name().to_string(),
                x: rs.iter().map(|r| r.value).collect(),
                mean: rs.iter().map(|r| r.mean_nmse_db).collect(),
                stderr: rs.iter().map(|r| r.stderr_nmse_db).collect(),
            }
        })
        .collect();
    PlotData {
        figure_id: format!("nmse_vs_{}", spec.axis.name()),
        x_label: spec.axis.label().to_string(),
        y_label: "NMSE (dB)".to_string(),
        config_hash: report.config_hash.clone(),
        series,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        ExperimentSpec::from_toml(
            r#"
            axis = "L_d"
            values = [1]
            n_trials = 1
            baselines = ["full"]
            [settings]
            l_s = 2
            slots = 2
            iterations = 2
            "#,
        )
        .unwrap()
    }

    #[test]
    fn spec_parses_with_defaults() {
        let s = tiny();
        assert_eq!(s.settings.l_d, 4);
        assert_eq!(s.master_seed, 0);
        assert_eq!(s.scenario_config().unwrap(), ScenarioConfig::los_desk());
    }

    #[test]
    fn invalid_specs_list_every_problem() {
        let err = ExperimentSpec::from_toml(
            r#"
            axis = "L_s"
            values = [0, 2.5]
            n_trials = 0
            baselines = ["no_prior", "full", "full"]
            "#,
        )
        .unwrap_err()
        .to_string();
        for needle in ["n_trials", "positive", "integer", "no_prior", "twice"] {
            assert!(err.contains(needle), "{needle} missing in {err}");
        }
        assert!(Baseline::parse("bogus").is_err());
        assert_eq!(Baseline::parse("omp_init").unwrap(), Baseline::OmpInit);
    }

    #[test]
    fn single_cell_gives_one_row() {
        let r = run_bench(&tiny(), BenchOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].error.is_none());
        let mut buf = Vec::new();
        write_csv(&mut buf, &r.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let p = plot_data(&r);
        assert_eq!(p.series.len(), 1);
        assert_eq!(p.series[0].x, vec![1.0]);
        assert_eq!(p.records[0].trials, 1);
    }

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(mean_stderr(&[]).0.is_nan());
    }

    #[test]
    fn axis_overrides_its_setting() {
        let s = CellSettings::default();
        assert_eq!(s.at(Axis::Ls, 7.0).l_s, 7);
        assert_eq!(s.at(Axis::PilotRatio, 4.0).pilot_ratio, 4.0);
        assert_eq!(s.at(Axis::Ld, 2.0).l_d, 2);
        assert_eq!(s.at(Axis::Iterations, 3.0).iterations, 3);
    }
}
