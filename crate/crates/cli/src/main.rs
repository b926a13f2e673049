//! Command-line entry point: validate scenario files, run simulations,
//! produce plot-ready report data.
//!
//! Exit codes: 0 success, 1 domain error (invariant violations, simulation
//! failures, missing artifacts), 2 usage or parse errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dmuso_core::config::{load_scenario, ConfigError};
use dmuso_core::harness::{
    build_scenario, read_metrics_csv, read_summary, run, write_artifacts, HarnessError, MetricsRow,
    SummaryFile,
};
use dmuso_core::model::validate_scenario;

const LONG_RUN_TTIS: usize = 10_000;

#[derive(Parser)]
#[command(
    name = "dmuso",
    about = "Per-TTI 5G slice scheduling simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against every invariant.
    Validate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a simulation and write the metric artifacts.
    Run {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Random seed; the (config, seed) pair determines every output byte.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulated TTIs (1 ms each).
        #[arg(long, default_value_t = 1000)]
        tti: usize,
        /// Output directory for the artifacts.
        #[arg(long, default_value = "./out")]
        out: PathBuf,
        /// Full-length run (10000 TTIs), overriding --tti.
        #[arg(long)]
        long: bool,
    },
    /// Summarize run artifacts and write plot data under figs/.
    Report {
        /// Directory holding a run's artifacts.
        #[arg(long, default_value = "./out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run {
            config,
            seed,
            tti,
            out,
            long,
        } => {
            let ttis = if long { LONG_RUN_TTIS } else { tti };
            cmd_run(&config, seed, ttis, &out)
        }
        Command::Report { out } => cmd_report(&out),
    }
}

fn load_and_validate(path: &Path) -> Result<dmuso_core::ScenarioConfig, ExitCode> {
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(err @ (ConfigError::Parse(_) | ConfigError::BadChannelTag { .. })) => {
            eprintln!("parse error: {err}");
            return Err(ExitCode::from(2));
        }
        Err(err) => {
            eprintln!("{err}");
            return Err(ExitCode::from(2));
        }
    };
    if let Err(violations) = validate_scenario(&scenario) {
        for v in &violations {
            eprintln!("invalid: {v}");
        }
        return Err(ExitCode::from(1));
    }
    Ok(scenario)
}

fn cmd_validate(config: &Path) -> ExitCode {
    match load_and_validate(config) {
        Ok(_) => {
            println!("ok");
            ExitCode::SUCCESS
        }
        Err(code) => code,
    }
}

const ARTIFACTS: [&str; 4] = [
    "metrics_per_tti.csv",
    "pareto_trace.csv",
    "snr_curve.csv",
    "summary.json",
];

fn cmd_run(config: &Path, seed: u64, ttis: usize, out: &Path) -> ExitCode {
    let scenario = match load_and_validate(config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if ttis == 0 {
        eprintln!("--tti must be at least 1");
        return ExitCode::from(2);
    }
    let mut world = match build_scenario(&scenario, seed) {
        Ok(w) => w,
        Err(err) => {
            eprintln!("build failed: {err}");
            return ExitCode::from(1);
        }
    };
    let metrics = match run(&mut world, ttis) {
        Ok(m) => m,
        Err(err) => {
            eprintln!("simulation failed: {err}");
            return ExitCode::from(1);
        }
    };
    if let Err(err) = write_artifacts(&metrics, seed, ttis, out) {
        eprintln!("artifact write failed: {err}");
        // No partial run should remain observable.
        for name in ARTIFACTS {
            let _ = std::fs::remove_file(out.join(name));
        }
        return ExitCode::from(1);
    }
    for s in &metrics.summaries {
        println!(
            "slice {}: S={} delta={} capacity={} weighted_mean={:.3} Mbps thr_delta={:.3} Mbps",
            s.slice_id,
            s.category_count,
            s.additional,
            s.total_capacity,
            s.weighted_mean_mbps,
            s.thr_delta_mbps,
        );
    }
    ExitCode::SUCCESS
}

fn cmd_report(out: &Path) -> ExitCode {
    let rows = match read_metrics_csv(&out.join("metrics_per_tti.csv")) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("missing or unreadable artifacts: {err}");
            return ExitCode::from(1);
        }
    };
    let summary = match read_summary(&out.join("summary.json")) {
        Ok(s) => s,
        Err(err) => {
            eprintln!("missing or unreadable artifacts: {err}");
            return ExitCode::from(1);
        }
    };
    if rows.is_empty() {
        eprintln!("metrics_per_tti.csv holds no records");
        return ExitCode::from(1);
    }
    if let Err(msg) = check_consistency(&rows, &summary) {
        eprintln!("artifact mismatch: {msg}");
        return ExitCode::from(1);
    }

    println!("slice    S  delta  weighted_mean_mbps  thr_delta_mbps");
    for s in &summary.slices {
        println!(
            "{:>5} {:>4} {:>6} {:>19.3} {:>15.3}",
            s.slice_id, s.category_count, s.additional, s.weighted_mean_mbps, s.thr_delta_mbps,
        );
    }

    match write_figs(out, &rows) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("could not write plot data: {err}");
            ExitCode::from(1)
        }
    }
}

/// The report recomputes what it can from the raw records and requires it to
/// match the summary.
fn check_consistency(rows: &[MetricsRow], summary: &SummaryFile) -> Result<(), String> {
    for s in &summary.slices {
        let slice_rows: Vec<&MetricsRow> =
            rows.iter().filter(|r| r.slice_id == s.slice_id).collect();
        if slice_rows.is_empty() {
            return Err(format!("slice {} absent from metrics csv", s.slice_id));
        }
        let last = slice_rows.last().unwrap();
        if last.category_count != s.category_count || last.additional != s.additional {
            return Err(format!(
                "slice {}: final S/delta {}/{} vs summary {}/{}",
                s.slice_id, last.category_count, last.additional, s.category_count, s.additional,
            ));
        }
        let mean: f64 =
            slice_rows.iter().map(|r| r.thr_mbps).sum::<f64>() / slice_rows.len() as f64;
        // The csv carries 6 fixed decimals; allow that rounding.
        if (mean - s.unweighted_mean_mbps).abs() > 1e-3 + 1e-6 * mean.abs() {
            return Err(format!(
                "slice {}: unweighted mean {mean} vs summary {}",
                s.slice_id, s.unweighted_mean_mbps,
            ));
        }
    }
    Ok(())
}

fn write_figs(out: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let figs = out.join("figs");
    std::fs::create_dir_all(&figs)?;

    // Interference function vs optimum transport share, straight from the
    // trace.
    let trace = std::fs::read_to_string(out.join("pareto_trace.csv"))?;
    let mut fig2a = String::from("b_star_hz,log1p_sinr,verdict\n");
    for line in trace.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 4 {
            fig2a.push_str(&format!("{},{},{}\n", f[1], f[2], f[3]));
        }
    }
    atomic(&figs.join("fig2a.csv"), &fig2a)?;

    // Radio vs transport totals per slice over time.
    let mut fig2b = String::from("slice,sum_b,sum_r\n");
    for r in rows {
        fig2b.push_str(&format!("{},{:.6},{:.9}\n", r.slice_id, r.sum_b, r.sum_r));
    }
    atomic(&figs.join("fig2b.csv"), &fig2b)?;

    // Mean cell throughput per served category count.
    let mut by: std::collections::BTreeMap<(usize, usize), (f64, usize)> =
        std::collections::BTreeMap::new();
    for r in rows {
        let e = by.entry((r.slice_id, r.category_count)).or_insert((0.0, 0));
        e.0 += r.thr_mbps;
        e.1 += 1;
    }
    let mut fig3 = String::from("slice,categories,mean_thr_mbps\n");
    for ((slice, cats), (sum, n)) in by {
        fig3.push_str(&format!("{},{},{:.6}\n", slice, cats, sum / n as f64));
    }
    atomic(&figs.join("fig3.csv"), &fig3)?;

    // SNR curve, as written by the run.
    let curve = std::fs::read_to_string(out.join("snr_curve.csv"))?;
    atomic(&figs.join("fig4.csv"), &curve)?;
    Ok(())
}

fn atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
