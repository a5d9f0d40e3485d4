//! Command pipeline: `train`, `value`, `simulate`, `benchmark`, `report`,
//! `oracle`. Every command takes a JSON run config; a few top-level fields
//! can be overridden by flags. Exit codes: 0 success, 1 validation error,
//! 2 runtime error.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::markov::{train_transitions, GridKind, NodeGrid, TransitionModel};
use crate::pricedata::{compute_bias, BiasSeries, PriceSeries};
use crate::report::{MetricsRow, RunSummary};
use crate::simulate::{run_mpc_dap, run_perfect_forecast, run_sdp, SimOutput, SimOptions};
use crate::storage::StorageSpec;
use crate::valuation::{backward_pass, DayChain};

#[derive(Parser, Debug)]
#[command(
    name = "esarb",
    about = "Energy storage arbitrage: Markov price models, analytical SDP valuation, backtests",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a Markov transition model from historical prices.
    Train(TrainArgs),
    /// Materialize a value cube for one operating day.
    Value(ValueArgs),
    /// Backtest a model variant or benchmark over the test data.
    Simulate(SimulateArgs),
    /// Run a benchmark variant (BEN-PF or BEN-DA).
    Benchmark(BenchmarkArgs),
    /// Aggregate finished runs into CSV tables.
    Report(ReportArgs),
    /// Deterministic grid-DP reference for one day, compared to BEN-PF.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the config's SoC segment count.
    #[arg(long)]
    pub soc_segments: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(v) = &self.variant {
            cfg.variant = v.parse()?;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(m) = self.soc_segments {
            cfg.soc_segments = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where to write the model JSON (default: <out_dir>/model.json).
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValueArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Operating day to value.
    #[arg(long)]
    pub date: NaiveDate,
    /// Where to write the cube (default: <out_dir>/cube_<date>.bin).
    #[arg(long)]
    pub cube_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write per-point trace CSVs for sweep runs.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory containing run directories (each with metrics.json).
    #[arg(long)]
    pub runs: PathBuf,
    /// Output directory for the CSV tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the price-gap and SoC-granularity sensitivity sweeps
    /// (needs a DB-variant config with train and test data).
    #[arg(long)]
    pub sensitivity: bool,
    /// Config for the sensitivity sweeps.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Operating day to solve.
    #[arg(long)]
    pub date: NaiveDate,
    /// Where to write the JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Value(args) => cmd_value(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Report(args) => cmd_report(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

// --- data loading ------------------------------------------------------------

fn load_merged(paths: &[PathBuf], interval_min: u32, zone: &str) -> Result<PriceSeries> {
    if paths.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no price files configured for zone {zone} ({interval_min}-min)"
        )));
    }
    let mut points = Vec::new();
    for path in paths {
        let series = PriceSeries::load_csv_path(path, interval_min, zone)?;
        points.extend(series.observed());
    }
    PriceSeries::new(zone, interval_min, points)
}

fn load_training(cfg: &RunConfig, kind: GridKind) -> Result<PriceSeries> {
    let rtp = load_merged(&cfg.data.rtp_train, cfg.data.interval_min, &cfg.zone)?;
    match kind {
        GridKind::Rtp => Ok(rtp),
        GridKind::Bias => {
            let dap = load_merged(&cfg.data.dap_train, 60, &cfg.zone)?;
            Ok(compute_bias(&rtp, &dap)?.into_series())
        }
    }
}

fn load_test(cfg: &RunConfig) -> Result<(PriceSeries, Option<PriceSeries>)> {
    let rtp = load_merged(&cfg.data.rtp_test, cfg.data.interval_min, &cfg.zone)?;
    let dap = if cfg.variant.needs_test_dap() {
        Some(load_merged(&cfg.data.dap_test, 60, &cfg.zone)?)
    } else {
        None
    };
    Ok((rtp, dap))
}

fn load_model(cfg: &RunConfig) -> Result<TransitionModel> {
    let path = cfg.model_file.as_ref().ok_or_else(|| {
        Error::MissingArtifact("config has no model_file for a model-based variant".into())
    })?;
    let file = std::fs::File::open(path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    let model = TransitionModel::load_json(std::io::BufReader::new(file))?;
    if let Some(kind) = cfg.variant.grid_kind() {
        if model.grid.kind != kind {
            return Err(Error::Config {
                field: "model_file".into(),
                reason: format!(
                    "model grid kind {:?} does not match variant {}",
                    model.grid.kind, cfg.variant
                ),
            });
        }
    }
    Ok(model)
}

// --- commands ----------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let grid_cfg = cfg.grid_config()?;
    let training = load_training(&cfg, grid_cfg.kind)?;
    if training.n_observed() == 0 {
        return Err(Error::EmptyTraining);
    }
    let grid = NodeGrid::build(
        grid_cfg.kind,
        grid_cfg.interior,
        grid_cfg.low,
        grid_cfg.high,
        &training,
    )?;
    let model = train_transitions(&training, grid, cfg.scheme(), cfg.stage_independent())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let model_path = args
        .model_out
        .or(cfg.model_file.clone())
        .unwrap_or_else(|| cfg.out_dir.join("model.json"));
    let file = std::fs::File::create(&model_path)?;
    model.save_json(std::io::BufWriter::new(file))?;
    println!(
        "trained {} model: {} nodes, {} classes x 24 hourly matrices",
        cfg.variant,
        model.n_nodes(),
        model.scheme.n_classes()
    );
    println!("row coverage: {:.1}% of (class, hour, node) rows observed", model.row_coverage() * 100.0);
    println!("model written to {}", model_path.display());
    Ok(())
}

fn cmd_value(args: ValueArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let model = load_model(&cfg)?;
    let (rtp_test, dap_test) = load_test(&cfg)?;
    let t_stages = crate::simulate::stages_per_day(rtp_test.interval_min());
    let class = model.scheme.class_of_date(args.date);
    let chain = DayChain::from_model(
        &model,
        class,
        dap_test.as_ref(),
        args.date,
        t_stages,
        rtp_test.interval_min(),
    )?;
    let spec = cfg.storage.to_spec(rtp_test.interval_min())?;
    let start = std::time::Instant::now();
    let cube = backward_pass(&chain, &spec, cfg.soc_segments)?;
    let elapsed = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let out_path = args
        .cube_out
        .unwrap_or_else(|| cfg.out_dir.join(format!("cube_{}.bin", args.date)));
    let file = std::fs::File::create(&out_path)?;
    cube.save_binary(std::io::BufWriter::new(file))?;
    println!(
        "valuation wall time: {elapsed:.4} s (T={}, N={}, M={})",
        cube.t_stages, cube.n_nodes, cube.m_segments
    );
    println!("cube written to {}", out_path.display());
    Ok(())
}

fn run_variant(
    cfg: &RunConfig,
    model: Option<&TransitionModel>,
    rtp_test: &PriceSeries,
    dap_test: Option<&PriceSeries>,
    spec: &StorageSpec,
) -> Result<SimOutput> {
    let opts = SimOptions {
        soc_segments: cfg.soc_segments,
        initial_soc: cfg.initial_soc,
        horizon: cfg.horizon,
    };
    match cfg.variant {
        Variant::BenPf => run_perfect_forecast(rtp_test, spec, &opts),
        Variant::BenDa => {
            let dap = dap_test.ok_or_else(|| {
                Error::MissingArtifact("BEN-DA requires day-ahead test prices".into())
            })?;
            run_mpc_dap(rtp_test, dap, spec, &opts)
        }
        _ => {
            let model = model.expect("model loaded for model-based variant");
            run_sdp(model, rtp_test, dap_test, spec, &opts)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let model = if cfg.variant.is_benchmark() {
        None
    } else {
        Some(load_model(&cfg)?)
    };
    let (rtp_test, dap_test) = load_test(&cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    // Sweep points: the config's base setting unless a sweep block is given.
    let points: Vec<(f64, f64)> = match &cfg.sweep {
        None => vec![(cfg.storage.p2e(), cfg.storage.cost_per_mwh)],
        Some(sweep) => sweep
            .p2e
            .iter()
            .flat_map(|&p2e| sweep.c.iter().map(move |&c| (p2e, c)))
            .collect(),
    };
    let single = points.len() == 1;

    let mut rows = Vec::with_capacity(points.len());
    let mut timings = Vec::with_capacity(points.len());
    for (p2e, c) in points {
        let storage = cfg.storage.with_p2e_and_cost(p2e, c);
        let spec = storage.to_spec(rtp_test.interval_min())?;
        let out = run_variant(&cfg, model.as_ref(), &rtp_test, dap_test.as_ref(), &spec)?;
        out.trace.validate(&spec)?;
        let m = crate::simulate::metrics(&out.trace, None)?;
        println!(
            "{} {} P2E={p2e} c={c}: revenue {:.2}, discharged {:.3} MWh over {} intervals ({} skipped days, valuation {:.3} s)",
            cfg.zone,
            cfg.variant,
            m.revenue,
            m.discharged_mwh,
            m.intervals,
            out.skipped_days.len(),
            out.valuation_seconds
        );
        if single {
            let file = std::fs::File::create(cfg.out_dir.join("trace.csv"))?;
            out.trace.write_csv(std::io::BufWriter::new(file))?;
        } else if args.traces {
            let name = format!("trace_p2e{p2e}_c{c}.csv");
            let file = std::fs::File::create(cfg.out_dir.join(name))?;
            out.trace.write_csv(std::io::BufWriter::new(file))?;
        }
        timings.push(serde_json::json!({
            "p2e": p2e, "c": c, "valuation_seconds": out.valuation_seconds,
        }));
        rows.push(MetricsRow {
            p2e,
            c,
            revenue: m.revenue,
            discharged_mwh: m.discharged_mwh,
            revenue_per_mwh: m.revenue_per_mwh,
            intervals: m.intervals,
            skipped_days: out.skipped_days.len(),
        });
    }

    let summary = RunSummary {
        zone: cfg.zone.clone(),
        variant: cfg.variant,
        soc_segments: cfg.soc_segments,
        rows,
    };
    summary.save(cfg.out_dir.join("metrics.json"))?;
    cfg.save(cfg.out_dir.join("config.json"))?;
    // Wall times are non-deterministic; they live outside the payload files.
    let timing_file = std::fs::File::create(cfg.out_dir.join("timing.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(timing_file), &timings)?;
    println!("run written to {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let cfg = args.config.load()?;
    if !cfg.variant.is_benchmark() {
        return Err(Error::Config {
            field: "variant".into(),
            reason: format!("benchmark expects BEN-PF or BEN-DA, got {}", cfg.variant),
        });
    }
    cmd_simulate(SimulateArgs {
        config: ConfigArgs {
            config: args.config.config,
            variant: args.config.variant,
            out_dir: args.config.out_dir,
            soc_segments: args.config.soc_segments,
        },
        traces: false,
    })
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let summaries = crate::report::load_run_summaries(&args.runs)?;
    if summaries.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no completed runs under {}",
            args.runs.display()
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    let ratio_file = std::fs::File::create(args.out.join("profit_ratio.csv"))?;
    crate::report::write_profit_ratio_csv(&summaries, std::io::BufWriter::new(ratio_file))?;
    let sweep_file = std::fs::File::create(args.out.join("sweep_table.csv"))?;
    crate::report::write_sweep_table_csv(&summaries, std::io::BufWriter::new(sweep_file))?;
    println!("tables written to {}", args.out.display());

    if args.sensitivity {
        let cfg_path = args.config.as_ref().ok_or_else(|| Error::Config {
            field: "config".into(),
            reason: "--sensitivity needs --config".into(),
        })?;
        let cfg = RunConfig::load(cfg_path)?;
        run_sensitivity(&cfg, &args.out)?;
    }
    Ok(())
}

/// SoC-granularity sweep (segment counts 10 through 1000) and price-gap sweep on the
/// bias band. Requires a DB-variant config with training and test data.
fn run_sensitivity(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.variant.grid_kind() != Some(GridKind::Bias) {
        return Err(Error::Config {
            field: "variant".into(),
            reason: "sensitivity sweeps are defined for DB-variant configs".into(),
        });
    }
    let (rtp_test, dap_test) = load_test(cfg)?;
    let dap = dap_test.expect("bias variant loads test DAP");
    let rtp_train = load_merged(&cfg.data.rtp_train, cfg.data.interval_min, &cfg.zone)?;
    let dap_train = load_merged(&cfg.data.dap_train, 60, &cfg.zone)?;
    let bias: BiasSeries = compute_bias(&rtp_train, &dap_train)?;
    let spec = cfg.storage.to_spec(rtp_test.interval_min())?;
    let grid_cfg = cfg.grid_config()?;

    let grid = NodeGrid::build(
        grid_cfg.kind,
        grid_cfg.interior,
        grid_cfg.low,
        grid_cfg.high,
        bias.series(),
    )?;
    let model = train_transitions(bias.series(), grid, cfg.scheme(), cfg.stage_independent())?;

    let m_values = [10, 25, 50, 100, 250, 500, 1000];
    let rows = crate::report::soc_sensitivity(&model, &rtp_test, Some(&dap), &spec, &m_values, 5)?;
    let file = std::fs::File::create(out.join("sens_soc.csv"))?;
    crate::report::write_soc_sensitivity_csv(&rows, std::io::BufWriter::new(file))?;

    let gaps = [5.0, 10.0, 20.0];
    let rows = crate::report::gap_sensitivity(
        &bias,
        &rtp_test,
        &dap,
        &spec,
        cfg.scheme(),
        cfg.stage_independent(),
        (grid_cfg.low, grid_cfg.high),
        &gaps,
        cfg.soc_segments,
    )?;
    let file = std::fs::File::create(out.join("sens_gap.csv"))?;
    crate::report::write_gap_sensitivity_csv(&rows, std::io::BufWriter::new(file))?;
    println!("sensitivity tables written to {}", out.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let (rtp_test, _) = load_test(&cfg)?;
    let prices: Option<Vec<f64>> = rtp_test.day_slots(args.date).into_iter().collect();
    let prices = prices.ok_or_else(|| {
        Error::MissingArtifact(format!("incomplete price data on {}", args.date))
    })?;
    let spec = cfg.storage.to_spec(rtp_test.interval_min())?;
    let start_soc = cfg.initial_soc.unwrap_or(spec.terminal_floor);

    let oracle = crate::oracle::grid_dp_variable_eff(&prices, &spec, start_soc, 201, 5)?;

    let day_points: Vec<_> = rtp_test
        .observed()
        .filter(|(ts, _)| ts.date() == args.date)
        .collect();
    let day_series = PriceSeries::new(&cfg.zone, rtp_test.interval_min(), day_points)?;
    let opts = SimOptions {
        soc_segments: cfg.soc_segments,
        initial_soc: Some(start_soc),
        horizon: None,
    };
    let pf = run_perfect_forecast(&day_series, &spec, &opts)?;
    let pf_revenue = pf.trace.revenue();
    let gap_pct = if oracle.cash_profit.abs() > 1e-12 {
        (pf_revenue - oracle.cash_profit) / oracle.cash_profit.abs() * 100.0
    } else {
        0.0
    };
    let report = serde_json::json!({
        "date": args.date.to_string(),
        "zone": cfg.zone,
        "grid_dp_cash_profit": oracle.cash_profit,
        "grid_dp_points": oracle.grid_points,
        "ben_pf_revenue": pf_revenue,
        "relative_gap_pct": gap_pct,
    });
    match args.out {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
