//! `dckm`: generate synthetic datasets, build and use channel knowledge map
//! tables, and run Monte-Carlo sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dckm_core::ckm::{read_table, write_table, CkmEntry, CkmTable};
use dckm_core::harness::{plot_data, run_bench, summarize, write_csv, Baseline, BenchOptions, ExperimentSpec};
use dckm_core::manifold::{nmse_db, wrap_signed, PathParams};
use dckm_core::sim::dataset::{read_dataset, sidecar_path, write_dataset, Dataset};
use dckm_core::sim::{ScenarioConfig, SynthesisRequest};
use dckm_core::stage1::{
    gauge_offset, representation_nmse_db, run_stage1, CoefficientMode, InitMode, Stage1Options, SyncMode,
};
use dckm_core::stage2::{run_stage2, Stage2Options};

#[derive(Parser, Debug)]
#[command(name = "dckm", version, about = "Dynamic channel knowledge map construction")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset and its ground-truth sidecar.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Named scenario (los-desk, nlos-desk).
        #[arg(long, default_value = "los-desk")]
        preset: String,
        /// Scenario TOML file; overrides the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the measurement-side randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seed of the environment; defaults to the scenario's own.
        #[arg(long)]
        env_seed: Option<u64>,
        /// 1 builds table data over several slots, 2 a single symbol.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long, default_value_t = 8)]
        slots: usize,
        /// Fraction P/N of subcarriers carrying pilots.
        #[arg(long, default_value_t = 1.0)]
        pilot_fraction: f64,
        #[arg(long, default_value_t = 0)]
        grid: usize,
        /// Override the SNR of the generated stage.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Generate without noise.
        #[arg(long, conflicts_with = "snr_db")]
        noiseless: bool,
    },
    /// Estimate the quasi-static paths of a grid and store them in a table.
    Stage1 {
        #[arg(long)]
        data: PathBuf,
        /// Output table; an existing table at `--table` is extended.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Number of paths; defaults to the scenario's static path count.
        #[arg(long)]
        budget: Option<usize>,
        /// full, no_sync_cal, separate_est or omp_init.
        #[arg(long, default_value = "full")]
        baseline: String,
        /// Iteration cap; defaults to the budget plus ten.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Estimate the channel of a single symbol using a table as prior.
    Stage2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Result JSON.
        #[arg(long)]
        out: PathBuf,
        /// Number of dynamic paths.
        #[arg(long, default_value_t = 4)]
        budget: usize,
        /// full, no_sync_cal, no_dynamic_est, no_prior or ideal_prior.
        #[arg(long, default_value = "full")]
        baseline: String,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
    },
    /// Run a sweep described by an experiment TOML file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Metrics CSV; defaults to the experiment file's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot-data JSON; defaults to the CSV path with a `.json` extension.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write wall-clock times instead of zeros.
        #[arg(long)]
        record_runtime: bool,
    },
    /// Summarize a dataset or table file.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            out,
            preset,
            config,
            seed,
            env_seed,
            stage,
            slots,
            pilot_fraction,
            grid,
            snr_db,
            noiseless,
        } => {
            let mut cfg = match config {
                Some(p) => load_scenario(&p)?,
                None => ScenarioConfig::preset(&preset)?,
            };
            if let Some(s) = env_seed {
                cfg.rng_seed = s;
            }
            let snr = if noiseless { Some(None) } else { snr_db.map(Some) };
            if let Some(s) = snr {
                match stage {
                    1 => cfg.stage1_snr_db = s,
                    _ => cfg.snr_db = s,
                }
            }
            cfg.validate()?;
            let req = if stage == 1 {
                if pilot_fraction != 1.0 {
                    bail!("table data uses every subcarrier; --pilot-fraction applies to --stage 2");
                }
                SynthesisRequest::stage1(slots, grid, seed)
            } else {
                SynthesisRequest::stage2(pilot_fraction, grid, seed)
            };
            let ds = Dataset::generate(cfg, req)?;
            write_dataset(&out, &ds).with_context(|| format!("writing {}", out.display()))?;
            print_dataset(&ds);
            println!("wrote {} and {}", out.display(), sidecar_path(&out).display());
            Ok(())
        }
        Command::Stage1 {
            data,
            out,
            table,
            budget,
            baseline,
            max_iters,
        } => stage1(&data, &out, table.as_deref(), budget, &baseline, max_iters),
        Command::Stage2 {
            data,
            table,
            out,
            budget,
            baseline,
            max_iters,
        } => stage2(&data, table.as_deref(), &out, budget, &baseline, max_iters),
        Command::Bench {
            config,
            out,
            plot,
            seed,
            record_runtime,
        } => bench(&config, out, plot, seed, record_runtime),
        Command::Inspect { path } => inspect(&path),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn snr_label(ds: &Dataset) -> String {
    let snr = match ds.measurements.stage {
        dckm_core::sim::Stage::I => ds.config.stage1_snr_db,
        dckm_core::sim::Stage::II => ds.config.snr_db,
    };
    snr.map_or("inf (noiseless)".to_string(), |s| format!("{s} dB"))
}

fn print_dataset(ds: &Dataset) {
    let m = &ds.measurements;
    println!(
        "dataset: stage {:?}, grid {}, N = {}, M = {} ({} x {}), T = {}, P = {}, SNR = {}",
        m.stage,
        m.grid_index,
        m.dims.n,
        m.dims.m(),
        m.dims.m1,
        m.dims.m2,
        m.n_slots(),
        m.pilots.len(),
        snr_label(ds)
    );
    println!(
        "truth: {} static paths, {} active dynamic paths in slot 0, noise variance {:.3e}",
        ds.truth.static_paths.first().map_or(0, Vec::len),
        ds.truth
            .dynamic_paths
            .first()
            .map_or(0, |d| d.iter().filter(|p| p.active).count()),
        ds.truth.noise_variance
    );
}

fn stage1(
    data: &Path,
    out: &Path,
    table: Option<&Path>,
    budget: Option<usize>,
    baseline: &str,
    max_iters: Option<usize>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let meas = &ds.measurements;
    let mut opts = Stage1Options::new(budget.unwrap_or_else(|| ds.config.n_static_paths()));
    opts.max_iters = max_iters;
    match Baseline::parse(baseline)? {
        Baseline::Full => {}
        Baseline::NoSyncCal => opts.sync = SyncMode::Zero,
        Baseline::SeparateEst => opts.coefficients = CoefficientMode::Separate,
        Baseline::OmpInit => opts.init = InitMode::Omp,
        other => bail!("baseline {} does not apply to table building", other.name()),
    }
    let mut tab = match table {
        Some(p) => read_table(p).with_context(|| format!("reading table {}", p.display()))?,
        None => CkmTable::new(meas.dims),
    };
    if tab.dims != meas.dims {
        bail!(
            "table dimensions {:?} do not match dataset dimensions {:?}",
            tab.dims,
            meas.dims
        );
    }
    let res = run_stage1(meas, &opts)?;
    print_dataset(&ds);
    let sync_hat = res.state.sync_means();
    let truth = &ds.truth;
    let nmse = representation_nmse_db(
        &res.state.path_means(),
        &sync_hat,
        &truth.sync_error,
        &truth.static_channels,
        meas.dims,
    )?;
    let c = gauge_offset(&sync_hat, &truth.sync_error);
    let rmse = (sync_hat
        .iter()
        .zip(&truth.sync_error)
        .map(|(h, e)| wrap_signed(h + c - e).powi(2))
        .sum::<f64>()
        / sync_hat.len() as f64)
        .sqrt();
    println!(
        "stage1: {} paths after {} iterations, noise variance {:.3e}",
        res.entry.l_s, res.state.iterations, res.state.noise_variance
    );
    println!("representation NMSE = {nmse:.2} dB, sync RMSE = {rmse:.3e} rad");
    tab.insert(res.entry);
    write_table(out, &tab).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct DynamicOut {
    params: PathParams,
    activity: f64,
    coeff: [f64; 2],
}

#[derive(Serialize)]
struct Stage2Out {
    baseline: String,
    nmse_db: Option<f64>,
    sync_error: f64,
    iterations: usize,
    converged: bool,
    noise_variance: f64,
    static_paths: Vec<PathParams>,
    static_coeffs: Vec<[f64; 2]>,
    dynamic_paths: Vec<DynamicOut>,
    /// Full-band channel, row-major `N x M`, interleaved (re, im).
    reconstruction: Vec<f64>,
}

fn stage2(data: &Path, table: Option<&Path>, out: &Path, budget: usize, baseline: &str, max_iters: usize) -> Result<()> {
    let ds = load_dataset(data)?;
    let meas = &ds.measurements;
    if meas.n_slots() != 1 {
        bail!("single-symbol estimation needs a one-slot dataset (got {} slots)", meas.n_slots());
    }
    let baseline = Baseline::parse(baseline)?;
    let mut opts = Stage2Options::new(budget);
    opts.max_iters = max_iters;
    let table_entry = |path: Option<&Path>| -> Result<CkmEntry> {
        let path = path.ok_or_else(|| anyhow!("--table is required unless --baseline no_prior or ideal_prior"))?;
        let tab = read_table(path).with_context(|| format!("reading table {}", path.display()))?;
        if tab.dims != meas.dims {
            bail!(
                "table dimensions {:?} do not match dataset dimensions {:?}",
                tab.dims,
                meas.dims
            );
        }
        tab.entry(meas.grid_index)
            .cloned()
            .ok_or_else(|| anyhow!("table has no entry for grid {}", meas.grid_index))
    };
    let entry = match baseline {
        Baseline::Full => table_entry(table)?,
        Baseline::NoSyncCal => {
            opts.sync = SyncMode::Zero;
            table_entry(table)?
        }
        Baseline::NoDynamicEst => {
            opts.budget = 0;
            table_entry(table)?
        }
        Baseline::NoPrior => CkmEntry::empty(meas.grid_index),
        Baseline::IdealPrior => {
            opts.sync = SyncMode::Known(vec![ds.truth.sync_error[0]]);
            let powers: Vec<f64> = ds.truth.static_coeffs[0].iter().map(|c| c.norm_sqr()).collect();
            CkmEntry::from_paths(meas.grid_index, &ds.truth.static_paths[0], &powers)
        }
        other => bail!(
            "baseline {} changes table building; build the table with `stage1 --baseline {}`",
            other.name(),
            other.name()
        ),
    };
    let res = run_stage2(meas, &entry, &opts)?;
    print_dataset(&ds);
    let nmse = ds.truth.channels.first().map(|h| nmse_db(&res.reconstruction, h)).transpose()?;
    let st = &res.state;
    println!(
        "stage2 ({}): {} static + {} dynamic paths, {} iterations{}, sync estimate {:.4} rad",
        baseline.name(),
        st.static_paths.len(),
        st.dynamic.len(),
        st.iterations,
        if res.converged { "" } else { " (iteration cap)" },
        st.sync.mu
    );
    if let Some(v) = nmse {
        println!("NMSE = {v:.2} dB");
    }
    let result = Stage2Out {
        baseline: baseline.name().to_string(),
        nmse_db: nmse,
        sync_error: st.sync.mu,
        iterations: st.iterations,
        converged: res.converged,
        noise_variance: st.noise_variance,
        static_paths: st.static_paths.clone(),
        static_coeffs: st.static_coeffs.mean.iter().map(|c| [c.re, c.im]).collect(),
        dynamic_paths: st
            .dynamic
            .iter()
            .map(|d| {
                let c = d.posterior.estimate();
                DynamicOut {
                    params: d.params(),
                    activity: d.posterior.lambda,
                    coeff: [c.re, c.im],
                }
            })
            .collect(),
        reconstruction: res
            .reconstruction
            .transpose()
            .iter()
            .flat_map(|c| [c.re, c.im])
            .collect(),
    };
    fs::write(out, serde_json::to_string_pretty(&result)?).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn bench(config: &Path, out: Option<PathBuf>, plot: Option<PathBuf>, seed: Option<u64>, record_runtime: bool) -> Result<()> {
    let mut spec = ExperimentSpec::from_file(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    let csv_path = out
        .or_else(|| spec.output.clone())
        .ok_or_else(|| anyhow!("no output path: pass --out or set `output` in the experiment file"))?;
    let plot_path = plot.unwrap_or_else(|| csv_path.with_extension("json"));
    let report = run_bench(&spec, BenchOptions { record_runtime })?;
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(std::io::BufWriter::new(file), &report.rows)?;
    fs::write(&plot_path, serde_json::to_string_pretty(&plot_data(&report))?)
        .with_context(|| format!("writing {}", plot_path.display()))?;
    println!("axis {} ({} trials, config {})", spec.axis.name(), spec.n_trials, &report.config_hash[..12]);
    println!("{:>10}  {:<16} {:>10} {:>8} {:>6}", "value", "baseline", "NMSE dB", "stderr", "failed");
    for r in summarize(&report) {
        println!(
            "{:>10}  {:<16} {:>10.2} {:>8.2} {:>6}",
            r.value,
            r.baseline.name(),
            r.mean_nmse_db,
            r.stderr_nmse_db,
            r.failures
        );
    }
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "cell failed: {} = {}, {}, trial {}: {}",
            r.axis.name(),
            r.value,
            r.baseline.name(),
            r.trial,
            r.error.as_deref().unwrap_or_default()
        );
    }
    println!("wrote {} and {}", csv_path.display(), plot_path.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(dckm_core::sim::dataset::MAGIC) {
        let ds = load_dataset(path)?;
        print_dataset(&ds);
        println!(
            "scenario: {} static clusters x {} subpaths, {} dynamic scatterers, carrier {:.2} GHz, spacing {} kHz",
            ds.config.n_static_clusters,
            ds.config.subpaths_per_cluster,
            ds.config.n_dynamic_scatterers,
            ds.config.carrier_frequency_hz / 1e9,
            ds.config.subcarrier_spacing_hz / 1e3
        );
        return Ok(());
    }
    let tab = read_table(path).with_context(|| format!("{} is neither a dataset nor a table", path.display()))?;
    println!(
        "table: N = {}, M = {} ({} x {}), {} grids",
        tab.dims.n,
        tab.dims.m(),
        tab.dims.m1,
        tab.dims.m2,
        tab.grids.len()
    );
    for e in &tab.grids {
        let total: f64 = e.powers().iter().sum();
        println!("  grid {}: {} paths, total power {:.3e}", e.grid_id, e.l_s, total);
    }
    Ok(())
}
