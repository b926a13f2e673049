//! Scenario build, the simulation loop, metric aggregation, and artifact
//! output.
//!
//! Slices are fully independent, so each runs its whole TTI loop on its own
//! worker; records are merged in (t, slice) order afterwards, which keeps
//! every output byte a pure function of (config, seed). `DMUSO_THREADS`
//! caps the worker count (default: one per slice).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_scenario, ScenarioConfig, Violation};
use crate::pareto::ParetoTag;
use crate::scheduler::{SliceState, TtiRecord};
use crate::utility::subcarrier_block_hz;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario invalid: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("no metrics to aggregate")]
    EmptyMetrics,
    #[error("artifact io: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact parse: {0}")]
    Parse(String),
}

/// The built world: validated scenario plus per-slice schedulers.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: ScenarioConfig,
    pub slices: Vec<SliceState>,
    pub seed: u64,
}

/// Build the world: validate, place UEs, seed initial categories.
pub fn build_scenario(scenario: &ScenarioConfig, seed: u64) -> Result<World, HarnessError> {
    validate_scenario(scenario).map_err(HarnessError::Invalid)?;
    let slices = scenario
        .slices
        .iter()
        .map(|s| SliceState::build(s, scenario, seed))
        .collect();
    Ok(World {
        scenario: scenario.clone(),
        slices,
        seed,
    })
}

/// One point of the Pareto trace: the final bandwidth solution of a service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub slice_id: usize,
    pub service_id: usize,
    pub b_star_hz: f64,
    pub log1p_sinr: f64,
    pub verdict: ParetoTag,
}

impl ParetoPoint {
    pub fn verdict_label(&self) -> &'static str {
        match self.verdict {
            ParetoTag::ParetoOptimal => "PO",
            ParetoTag::WeaklyParetoOptimal => "WPO",
            ParetoTag::Infeasible => "infeasible",
        }
    }
}

/// One 1-dB SNR bin of a slice's SNR/throughput/allocation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrBin {
    pub slice_id: usize,
    /// Lower edge of the [bin_db, bin_db + 1) bin.
    pub bin_db: i64,
    pub thr_mbps: f64,
    pub mean_r: f64,
    pub services: usize,
}

/// Final per-slice summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub slice_id: usize,
    pub category_count: usize,
    pub additional: usize,
    pub total_capacity: usize,
    pub thr_delta_mbps: f64,
    pub weighted_mean_mbps: f64,
    pub unweighted_mean_mbps: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    /// Records ordered by (t, slice).
    pub per_tti: Vec<TtiRecord>,
    /// Per-slice weighted mean cell throughput, Mbps (weights: scheduled
    /// services per tick).
    pub weighted_mean_cell_thr: BTreeMap<usize, f64>,
    pub unweighted_mean_cell_thr: BTreeMap<usize, f64>,
    /// Per slice: (category count, weighted mean Mbps while at that count).
    pub thr_vs_categories: BTreeMap<usize, Vec<(usize, f64)>>,
    pub pareto_trace: Vec<ParetoPoint>,
    pub snr_curve: Vec<SnrBin>,
    pub summaries: Vec<SliceSummary>,
}

/// Run the world for `t_max` TTIs and aggregate.
pub fn run(world: &mut World, t_max: usize) -> Result<SimMetrics, HarnessError> {
    debug_assert!(t_max >= 1);
    let threads = std::env::var("DMUSO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| world.slices.len().max(1))
        .min(world.slices.len().max(1));

    let slices = std::mem::take(&mut world.slices);
    let cells: Vec<Mutex<(SliceState, Vec<TtiRecord>)>> = slices
        .into_iter()
        .map(|s| Mutex::new((s, Vec::with_capacity(t_max))))
        .collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cells.len() {
                    break;
                }
                let mut cell = cells[idx].lock().expect("slice worker poisoned");
                let (state, records) = &mut *cell;
                for t in 1..=t_max {
                    state.evolve_environment();
                    records.push(state.run_tti(t));
                }
            });
        }
    });

    let mut per_slice: Vec<(SliceState, Vec<TtiRecord>)> = cells
        .into_iter()
        .map(|c| c.into_inner().expect("slice cell poisoned"))
        .collect();
    per_slice.sort_by_key(|(s, _)| s.config.slice_id);

    let mut per_tti: Vec<TtiRecord> = Vec::with_capacity(per_slice.len() * t_max);
    for t in 1..=t_max {
        for (_, records) in &per_slice {
            per_tti.push(records[t - 1].clone());
        }
    }

    let states: Vec<SliceState> = per_slice.into_iter().map(|(s, _)| s).collect();
    let metrics = aggregate(per_tti, &states)?;
    world.slices = states;
    Ok(metrics)
}

/// Aggregate records plus final slice states into the report products.
pub fn aggregate(
    per_tti: Vec<TtiRecord>,
    states: &[SliceState],
) -> Result<SimMetrics, HarnessError> {
    if per_tti.is_empty() {
        return Err(HarnessError::EmptyMetrics);
    }

    // Conservation is re-checked on the record stream, not just inside the
    // simulation step.
    for state in states {
        for rec in per_tti
            .iter()
            .filter(|r| r.slice_id == state.config.slice_id)
        {
            debug_assert!(
                rec.sum_r <= state.config.r_max * (1.0 + 1e-9),
                "t {} slice {}: radio sum {} over budget {}",
                rec.t,
                rec.slice_id,
                rec.sum_r,
                state.config.r_max
            );
            if rec.sum_r > state.config.r_max * (1.0 + 1e-9) {
                log::warn!(
                    "aggregation found a radio budget violation at t {} slice {}",
                    rec.t,
                    rec.slice_id
                );
            }
        }
    }

    let mut weighted: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut unweighted: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut by_count: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for rec in &per_tti {
        let w = rec.scheduled_services as f64;
        let e = weighted.entry(rec.slice_id).or_insert((0.0, 0.0));
        e.0 += w * rec.cell_thr_mbps;
        e.1 += w;
        let u = unweighted.entry(rec.slice_id).or_insert((0.0, 0));
        u.0 += rec.cell_thr_mbps;
        u.1 += 1;
        let c = by_count
            .entry((rec.slice_id, rec.category_count))
            .or_insert((0.0, 0.0));
        c.0 += w * rec.cell_thr_mbps;
        c.1 += w;
    }
    let weighted_mean_cell_thr: BTreeMap<usize, f64> = weighted
        .iter()
        .map(|(k, (num, den))| (*k, if *den > 0.0 { num / den } else { 0.0 }))
        .collect();
    let unweighted_mean_cell_thr: BTreeMap<usize, f64> = unweighted
        .iter()
        .map(|(k, (num, n))| (*k, num / *n as f64))
        .collect();
    let mut thr_vs_categories: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for ((slice, count), (num, den)) in by_count {
        if den > 0.0 {
            thr_vs_categories
                .entry(slice)
                .or_default()
                .push((count, num / den));
        }
    }

    let mut pareto_trace = Vec::new();
    let mut snr_curve = Vec::new();
    let mut summaries = Vec::new();
    for state in states {
        let fd = subcarrier_block_hz(state.config.numerology);
        for svc in &state.services {
            pareto_trace.push(ParetoPoint {
                slice_id: state.config.slice_id,
                service_id: svc.service.service_id,
                b_star_hz: svc.service.bandwidth_hz,
                log1p_sinr: svc.sinr.ln_1p(),
                verdict: svc.verdict,
            });
        }

        // 1-dB bins over the average SNR.
        let mut bins: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
        for svc in &state.services {
            if svc.service.avg_snr <= 0.0 {
                continue;
            }
            let db = 10.0 * svc.service.avg_snr.log10();
            let bin = db.floor() as i64;
            let u_mbps = fd
                * (state.beta * svc.service.radio_alloc * svc.service.avg_snr)
                    .min(state.optimizer.exponent_cap)
                    .exp()
                / 1e6;
            let e = bins.entry(bin).or_insert((0.0, 0.0, 0));
            e.0 += u_mbps;
            e.1 += svc.service.radio_alloc;
            e.2 += 1;
        }
        for (bin_db, (thr, r, n)) in bins {
            snr_curve.push(SnrBin {
                slice_id: state.config.slice_id,
                bin_db,
                thr_mbps: thr / n as f64,
                mean_r: r / n as f64,
                services: n,
            });
        }

        let report = state.capacity_report();
        summaries.push(SliceSummary {
            slice_id: state.config.slice_id,
            category_count: report.category_count,
            additional: report.additional,
            total_capacity: report.total_capacity,
            thr_delta_mbps: report.thr_delta_mbps,
            weighted_mean_mbps: *weighted_mean_cell_thr
                .get(&state.config.slice_id)
                .unwrap_or(&0.0),
            unweighted_mean_mbps: *unweighted_mean_cell_thr
                .get(&state.config.slice_id)
                .unwrap_or(&0.0),
        });
    }

    Ok(SimMetrics {
        per_tti,
        weighted_mean_cell_thr,
        unweighted_mean_cell_thr,
        thr_vs_categories,
        pareto_trace,
        snr_curve,
        summaries,
    })
}

/// Serialized summary file shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub seed: u64,
    pub ttis: usize,
    pub slices: Vec<SliceSummary>,
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// Write the four run artifacts into `out_dir` (created if missing), each
/// with write-then-rename so no partial file is ever observable.
///
/// Numeric formats: throughputs and bandwidth sums in fixed 6-decimal
/// notation, allocations in fixed 9-decimal notation, model-unit throughput
/// in 6-decimal scientific notation.
pub fn write_artifacts(
    metrics: &SimMetrics,
    seed: u64,
    ttis: usize,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;

    let mut csv = String::from("t,slice,S,delta,thr_paper,thr_mbps,sum_r,sum_b\n");
    for rec in &metrics.per_tti {
        csv.push_str(&format!(
            "{},{},{},{},{:.6e},{:.6},{:.9},{:.6}\n",
            rec.t,
            rec.slice_id,
            rec.category_count,
            rec.additional,
            rec.cell_thr_paper,
            rec.cell_thr_mbps,
            rec.sum_r,
            rec.sum_b,
        ));
    }
    write_atomic(&out_dir.join("metrics_per_tti.csv"), &csv)?;

    let mut csv = String::from("service,b_star_hz,log1p_sinr,verdict\n");
    for p in &metrics.pareto_trace {
        csv.push_str(&format!(
            "s{}-{},{:.6},{:.9},{}\n",
            p.slice_id,
            p.service_id,
            p.b_star_hz,
            p.log1p_sinr,
            p.verdict_label(),
        ));
    }
    write_atomic(&out_dir.join("pareto_trace.csv"), &csv)?;

    let mut csv = String::from("slice,bin_db,thr_mbps,mean_r\n");
    for b in &metrics.snr_curve {
        csv.push_str(&format!(
            "{},{},{:.6},{:.9}\n",
            b.slice_id, b.bin_db, b.thr_mbps, b.mean_r,
        ));
    }
    write_atomic(&out_dir.join("snr_curve.csv"), &csv)?;

    let summary = SummaryFile {
        seed,
        ttis,
        slices: metrics.summaries.clone(),
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::Parse(e.to_string()))?;
    write_atomic(&out_dir.join("summary.json"), &json)?;
    Ok(())
}

/// Minimal parsed row of `metrics_per_tti.csv`, for report recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    pub slice_id: usize,
    pub category_count: usize,
    pub additional: usize,
    pub thr_paper: f64,
    pub thr_mbps: f64,
    pub sum_r: f64,
    pub sum_b: f64,
}

/// Read back `metrics_per_tti.csv`.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(HarnessError::Parse(format!(
                "line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        let parse_u = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 1)))
        };
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 1)))
        };
        rows.push(MetricsRow {
            t: parse_u(fields[0])?,
            slice_id: parse_u(fields[1])?,
            category_count: parse_u(fields[2])?,
            additional: parse_u(fields[3])?,
            thr_paper: parse_f(fields[4])?,
            thr_mbps: parse_f(fields[5])?,
            sum_r: parse_f(fields[6])?,
            sum_b: parse_f(fields[7])?,
        });
    }
    Ok(rows)
}

/// Read back `summary.json`.
pub fn read_summary(path: &Path) -> Result<SummaryFile, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::table1();
        cfg.slices.truncate(2);
        for (i, s) in cfg.slices.iter_mut().enumerate() {
            s.ue_count = 20 + 10 * i;
            s.r_max = 10.0 + 5.0 * i as f64;
            s.initial_categories = 2;
            s.services_per_category = 2;
        }
        cfg
    }

    #[test]
    fn four_slice_reference_world_has_expected_shape() {
        let cfg = ScenarioConfig::table1();
        let world = build_scenario(&cfg, 1).unwrap();
        assert_eq!(world.slices.len(), 4);
        // Six categories of five services each per slice.
        assert_eq!(world.slices[0].services.len(), 30);
        assert_eq!(world.slices[0].groups.len(), 6);
        // The largest slice keeps its full pool available for growth.
        assert_eq!(world.slices[3].config.ue_count, 455);
        assert_eq!(world.slices[3].unused_pool_len(), 455 - 30);
    }

    #[test]
    fn single_tick_produces_one_record_per_slice() {
        let cfg = tiny_scenario();
        let mut world = build_scenario(&cfg, 1).unwrap();
        let metrics = run(&mut world, 1).unwrap();
        assert_eq!(metrics.per_tti.len(), cfg.slices.len());
        assert!(metrics.per_tti.iter().all(|r| r.t == 1));
    }

    #[test]
    fn identical_seeds_reproduce_metrics_exactly() {
        let cfg = tiny_scenario();
        let mut w1 = build_scenario(&cfg, 9).unwrap();
        let mut w2 = build_scenario(&cfg, 9).unwrap();
        let m1 = run(&mut w1, 25).unwrap();
        let m2 = run(&mut w2, 25).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn weighted_mean_matches_recomputation_from_records() {
        let cfg = tiny_scenario();
        let mut world = build_scenario(&cfg, 4).unwrap();
        let metrics = run(&mut world, 20).unwrap();
        for (slice, want) in &metrics.weighted_mean_cell_thr {
            let mut num = 0.0;
            let mut den = 0.0;
            for rec in metrics.per_tti.iter().filter(|r| r.slice_id == *slice) {
                num += rec.scheduled_services as f64 * rec.cell_thr_mbps;
                den += rec.scheduled_services as f64;
            }
            let got = num / den;
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "slice {slice}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn degenerate_single_service_mean_is_its_throughput() {
        let mut cfg = tiny_scenario();
        cfg.slices.truncate(1);
        cfg.slices[0].initial_categories = 1;
        cfg.slices[0].services_per_category = 1;
        cfg.slices[0].ue_count = 1;
        let mut world = build_scenario(&cfg, 2).unwrap();
        let metrics = run(&mut world, 1).unwrap();
        let rec = &metrics.per_tti[0];
        assert_eq!(rec.scheduled_services, 1);
        let mean = metrics.weighted_mean_cell_thr[&cfg.slices[0].slice_id];
        assert!((mean - rec.cell_thr_mbps).abs() <= 1e-12 * mean.abs());
    }

    #[test]
    fn snr_binning_uses_one_db_floors() {
        // A service at 7.4 dB lands in the [7, 8) bin.
        let s_linear = 10f64.powf(0.74);
        let db = 10.0 * s_linear.log10();
        assert_eq!(db.floor() as i64, 7);
    }

    #[test]
    fn empty_metrics_is_an_error() {
        assert!(matches!(
            aggregate(Vec::new(), &[]),
            Err(HarnessError::EmptyMetrics)
        ));
    }

    #[test]
    fn snr_curve_is_monotone_after_binning() {
        let mut cfg = tiny_scenario();
        cfg.slices.truncate(1);
        cfg.slices[0].ue_count = 60;
        cfg.slices[0].r_max = 30.0;
        let mut world = build_scenario(&cfg, 12).unwrap();
        let metrics = run(&mut world, 200).unwrap();
        let bins: Vec<&SnrBin> = metrics
            .snr_curve
            .iter()
            .filter(|b| b.slice_id == cfg.slices[0].slice_id)
            .collect();
        assert!(bins.len() >= 3, "too few bins to judge the trend");
        let inversions = bins
            .windows(2)
            .filter(|w| w[1].thr_mbps < w[0].thr_mbps)
            .count();
        assert!(
            inversions <= 1 + bins.len() / 10,
            "{inversions} inversions across {} bins",
            bins.len()
        );
    }

    #[test]
    fn artifacts_round_trip() {
        let cfg = tiny_scenario();
        let mut world = build_scenario(&cfg, 7).unwrap();
        let metrics = run(&mut world, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&metrics, 7, 10, dir.path()).unwrap();

        let rows = read_metrics_csv(&dir.path().join("metrics_per_tti.csv")).unwrap();
        assert_eq!(rows.len(), metrics.per_tti.len());
        assert_eq!(rows[0].t, 1);

        let summary = read_summary(&dir.path().join("summary.json")).unwrap();
        assert_eq!(summary.seed, 7);
        assert_eq!(summary.slices.len(), cfg.slices.len());

        // No stray temp files after the renames.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn byte_identical_artifacts_for_same_seed() {
        let cfg = tiny_scenario();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for dir in [&d1, &d2] {
            let mut world = build_scenario(&cfg, 31).unwrap();
            let metrics = run(&mut world, 15).unwrap();
            write_artifacts(&metrics, 31, 15, dir.path()).unwrap();
        }
        for name in [
            "metrics_per_tti.csv",
            "pareto_trace.csv",
            "snr_curve.csv",
            "summary.json",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
