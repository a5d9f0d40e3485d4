//! Aggregation of finished runs into plot-ready CSV tables, plus the price-
//! and SoC-granularity sensitivity sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::markov::{train_transitions, GridKind, NodeGrid, TransitionModel};
use crate::pricedata::{BiasSeries, PriceSeries};
use crate::simulate::{run_perfect_forecast, run_sdp, SimOptions};
use crate::storage::StorageSpec;
use crate::valuation::{backward_pass, DayChain};

/// One sweep point of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub p2e: f64,
    pub c: f64,
    pub revenue: f64,
    pub discharged_mwh: f64,
    pub revenue_per_mwh: f64,
    pub intervals: usize,
    pub skipped_days: usize,
}

/// Contents of a run directory's `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub zone: String,
    pub variant: Variant,
    pub soc_segments: usize,
    pub rows: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

/// All `metrics.json` files found one level below `runs_dir`.
pub fn load_run_summaries(runs_dir: &Path) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let metrics = dir.join("metrics.json");
        if metrics.is_file() {
            out.push(RunSummary::load(&metrics)?);
        }
    }
    Ok(out)
}

fn find_reference<'a>(
    summaries: &'a [RunSummary],
    zone: &str,
    p2e: f64,
    c: f64,
) -> Option<&'a MetricsRow> {
    summaries
        .iter()
        .filter(|s| s.variant == Variant::BenPf && s.zone == zone)
        .flat_map(|s| &s.rows)
        .find(|r| (r.p2e - p2e).abs() < 1e-9 && (r.c - c).abs() < 1e-9)
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

/// Profit-ratio table (one row per run/sweep point, ratio vs the BEN-PF
/// reference at the same zone, P2E and cost).
pub fn write_profit_ratio_csv(summaries: &[RunSummary], mut out: impl std::io::Write) -> Result<()> {
    let has_reference = summaries.iter().any(|s| s.variant == Variant::BenPf);
    if !has_reference {
        return Err(Error::MissingArtifact(
            "no BEN-PF reference run in the report directory".into(),
        ));
    }
    writeln!(out, "zone,variant,P2E,c,revenue,profit_ratio_pct")?;
    for s in summaries {
        if s.variant == Variant::BenPf {
            continue;
        }
        for row in &s.rows {
            let reference = find_reference(summaries, &s.zone, row.p2e, row.c).ok_or_else(|| {
                Error::MissingArtifact(format!(
                    "no BEN-PF reference for zone {} P2E {} c {}",
                    s.zone, row.p2e, row.c
                ))
            })?;
            if reference.intervals != row.intervals {
                log::warn!(
                    "{} {}: interval count differs from reference ({} vs {})",
                    s.zone,
                    s.variant,
                    row.intervals,
                    reference.intervals
                );
            }
            let ratio = row.revenue / reference.revenue * 100.0;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.zone,
                s.variant,
                row.p2e,
                row.c,
                fmt2(row.revenue),
                fmt2(ratio)
            )?;
        }
    }
    Ok(())
}

/// Sweep table shaped like the zone x P2E x cost comparison: profit ratio,
/// revenue (k$), discharged energy (GWh) and revenue per MWh discharged.
pub fn write_sweep_table_csv(summaries: &[RunSummary], mut out: impl std::io::Write) -> Result<()> {
    writeln!(
        out,
        "zone,variant,P2E,c,profit_ratio_pct,revenue_kusd,discharge_gwh,revenue_per_mwh"
    )?;
    for s in summaries {
        if s.variant == Variant::BenPf {
            continue;
        }
        for row in &s.rows {
            let reference = find_reference(summaries, &s.zone, row.p2e, row.c).ok_or_else(|| {
                Error::MissingArtifact(format!(
                    "no BEN-PF reference for zone {} P2E {} c {}",
                    s.zone, row.p2e, row.c
                ))
            })?;
            let ratio = row.revenue / reference.revenue * 100.0;
            writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.4},{}",
                s.zone,
                s.variant,
                row.p2e,
                row.c,
                fmt2(ratio),
                row.revenue / 1000.0,
                row.discharged_mwh / 1000.0,
                fmt2(row.revenue_per_mwh)
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SocSensitivityRow {
    pub soc_segments: usize,
    pub profit_ratio_pct: f64,
    pub wall_time_s: f64,
}

/// SoC-granularity sensitivity: profit ratio vs BEN-PF and valuation wall
/// time for each segment count. Wall time is the minimum of `timing_reps`
/// runs of a representative single-day backward pass, so the growth trend
/// is robust to scheduler noise at small M.
pub fn soc_sensitivity(
    model: &TransitionModel,
    rtp_test: &PriceSeries,
    dap_test: Option<&PriceSeries>,
    spec: &StorageSpec,
    m_values: &[usize],
    timing_reps: usize,
) -> Result<Vec<SocSensitivityRow>> {
    let pf = run_perfect_forecast(rtp_test, spec, &SimOptions::default())?;
    let pf_revenue = pf.trace.revenue();
    let t_stages = crate::simulate::stages_per_day(rtp_test.interval_min());
    let (first, _) = rtp_test.date_span().ok_or(Error::NoSimulableDay)?;

    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let opts = SimOptions {
            soc_segments: m,
            ..SimOptions::default()
        };
        let out = run_sdp(model, rtp_test, dap_test, spec, &opts)?;
        let ratio = out.trace.revenue() / pf_revenue * 100.0;

        let class = model.scheme.class_of_date(first);
        let chain = DayChain::from_model(
            model,
            class,
            dap_test,
            first,
            t_stages,
            rtp_test.interval_min(),
        )?;
        let mut best = f64::INFINITY;
        for _ in 0..timing_reps.max(1) {
            let start = Instant::now();
            let cube = backward_pass(&chain, spec, m)?;
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(cube.values().len());
            best = best.min(elapsed);
        }
        rows.push(SocSensitivityRow {
            soc_segments: m,
            profit_ratio_pct: ratio,
            wall_time_s: best,
        });
    }
    Ok(rows)
}

pub fn write_soc_sensitivity_csv(
    rows: &[SocSensitivityRow],
    mut out: impl std::io::Write,
) -> Result<()> {
    writeln!(out, "soc_segments,profit_ratio_pct,wall_time_s")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6}",
            r.soc_segments,
            fmt2(r.profit_ratio_pct),
            r.wall_time_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GapSensitivityRow {
    pub gap: f64,
    pub n_nodes: usize,
    pub profit_ratio_pct: f64,
    pub wall_time_s: f64,
}

/// Price-granularity sensitivity for bias-grid models: retrain the model at
/// each node gap on the fixed band, re-run the backtest, and report ratio
/// and valuation wall time.
#[allow(clippy::too_many_arguments)]
pub fn gap_sensitivity(
    bias_training: &BiasSeries,
    rtp_test: &PriceSeries,
    dap_test: &PriceSeries,
    spec: &StorageSpec,
    scheme: crate::pricedata::CalendarScheme,
    stage_independent: bool,
    band: (f64, f64),
    gaps: &[f64],
    soc_segments: usize,
) -> Result<Vec<GapSensitivityRow>> {
    let pf = run_perfect_forecast(rtp_test, spec, &SimOptions::default())?;
    let pf_revenue = pf.trace.revenue();
    let (low, high) = band;
    let mut rows = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        let interior = ((high - low) / gap).round() as usize;
        if interior == 0 {
            return Err(Error::InvalidGrid(format!("gap {gap} exceeds band width")));
        }
        let grid = NodeGrid::build(GridKind::Bias, interior, low, high, bias_training.series())?;
        let n_nodes = grid.n_nodes();
        let model = train_transitions(bias_training.series(), grid, scheme, stage_independent)?;
        let opts = SimOptions {
            soc_segments,
            ..SimOptions::default()
        };
        let out = run_sdp(&model, rtp_test, Some(dap_test), spec, &opts)?;
        rows.push(GapSensitivityRow {
            gap,
            n_nodes,
            profit_ratio_pct: out.trace.revenue() / pf_revenue * 100.0,
            wall_time_s: out.valuation_seconds,
        });
    }
    Ok(rows)
}

pub fn write_gap_sensitivity_csv(
    rows: &[GapSensitivityRow],
    mut out: impl std::io::Write,
) -> Result<()> {
    writeln!(out, "gap,n_nodes,profit_ratio_pct,wall_time_s")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6}",
            r.gap,
            r.n_nodes,
            fmt2(r.profit_ratio_pct),
            r.wall_time_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(zone: &str, variant: Variant, revenue: f64) -> RunSummary {
        RunSummary {
            zone: zone.into(),
            variant,
            soc_segments: 1000,
            rows: vec![MetricsRow {
                p2e: 0.5,
                c: 10.0,
                revenue,
                discharged_mwh: 100.0,
                revenue_per_mwh: revenue / 100.0,
                intervals: 288,
                skipped_days: 0,
            }],
        }
    }

    #[test]
    fn ratio_table_single_comparison() {
        let summaries = vec![
            summary("NYC", Variant::DbDep, 72.0),
            summary("NYC", Variant::BenPf, 100.0),
        ];
        let mut buf = Vec::new();
        write_profit_ratio_csv(&summaries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "zone,variant,P2E,c,revenue,profit_ratio_pct"
        );
        assert_eq!(lines.next().unwrap(), "NYC,DB-Dep,0.5,10,72.00,72.00");
        assert!(lines.next().is_none());
    }

    #[test]
    fn missing_reference_errors() {
        let summaries = vec![summary("NYC", Variant::DbDep, 72.0)];
        let mut buf = Vec::new();
        assert!(matches!(
            write_profit_ratio_csv(&summaries, &mut buf),
            Err(Error::MissingArtifact(_))
        ));
    }
}
