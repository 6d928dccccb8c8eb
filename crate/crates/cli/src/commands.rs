//! Subcommand implementations and their file formats.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use transient_exec::market_data::{
    self, write_quotes_csv, write_schedule_csv, write_series_csv, write_signed_trades_csv,
    write_trades_csv,
};
use transient_exec::{
    aggregate, almgren_chriss_frontier, almgren_chriss_schedule, bertsimas_lo_flat,
    classify_trades, default_lambda_grid, efficient_frontier, estimate_impact_function,
    estimate_noise_variance, estimate_spread, fit_kernel, mid_points, r_squared,
    regress_propagator, simulate_execution, simulate_execution_samples, simulate_market,
    simulate_tape, solve_closed_form, solve_with_spread, AggregationScheme, CalibratedModel,
    CalibrationError, CostModel, CostReport, ImpactForm, MarketDataError, MarketSpec, ModelError,
    NoiseConvention, OptimizationConfig, Schedule, Session, SimError, SolveDiagnostics,
    SolverError, TapeSpec, VolumeProfile, SCHEMA_VERSION,
};

/// Map the failing module to the documented exit code class.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<CalibrationError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<ModelError>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<SolverError>().is_some() {
            return 5;
        }
        if cause.downcast_ref::<SimError>().is_some() {
            return 6;
        }
        if cause.downcast_ref::<MarketDataError>().is_some() {
            return 2;
        }
    }
    2
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// Trades CSV: day_id,timestamp_us,price,size and an optional side.
    #[arg(long)]
    trades: PathBuf,
    /// Quotes CSV: day_id,timestamp_us,bid,ask.
    #[arg(long)]
    quotes: PathBuf,
    /// Output CSV of signed trades.
    #[arg(long, default_value = "signed_trades.csv")]
    out: PathBuf,
}

pub fn classify(args: ClassifyArgs) -> Result<()> {
    let trades = market_data::load_trades_csv(&args.trades)?;
    let quotes = market_data::load_quotes_csv(&args.quotes)?;
    let outcome = classify_trades(&trades, &quotes);
    write_signed_trades_csv(&outcome.trades, &args.out)?;
    println!(
        "classified {} trades ({} at mid dropped, {} without a prevailing quote) -> {}",
        outcome.trades.len(),
        outcome.undetermined,
        outcome.no_prevailing_quote,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    trades: PathBuf,
    #[arg(long)]
    quotes: PathBuf,
    /// Aggregation clock: rt (real time), tt (trade time), att (aggregated trades).
    #[arg(long, default_value = "rt")]
    scheme: String,
    /// Real-time interval length, seconds.
    #[arg(long, default_value_t = 300.0)]
    interval_secs: f64,
    /// Transactions per interval for the att scheme.
    #[arg(long, default_value_t = 8)]
    att_d: usize,
    /// Impact form: linear (on normalized imbalance) or arctan (on raw
    /// imbalance). Defaults to linear for rt/tt and arctan for att.
    #[arg(long)]
    form: Option<String>,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Propagator regression lags.
    #[arg(long, default_value_t = 50)]
    kmax: usize,
    /// Session open, seconds from the per-day timestamp origin.
    #[arg(long, default_value_t = 0.0)]
    session_open_secs: f64,
    /// Session close, seconds from the per-day timestamp origin (8.5 h default).
    #[arg(long, default_value_t = 30600.0)]
    session_close_secs: f64,
    /// Optional label stored in the model JSON.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_scheme(args: &CalibrateArgs) -> Result<AggregationScheme> {
    Ok(match args.scheme.as_str() {
        "rt" => AggregationScheme::RealTime {
            interval_secs: args.interval_secs,
        },
        "tt" => AggregationScheme::TradeTime,
        "att" => AggregationScheme::AggregatedTradeTime {
            trades_per_interval: args.att_d,
        },
        other => bail!("unknown scheme `{other}` (expected rt, tt, or att)"),
    })
}

fn parse_form(raw: Option<&str>, scheme: &AggregationScheme) -> Result<ImpactForm> {
    Ok(match raw {
        Some("linear") => ImpactForm::Linear,
        Some("arctan") => ImpactForm::Arctan,
        Some(other) => bail!("unknown impact form `{other}` (expected linear or arctan)"),
        None => match scheme {
            AggregationScheme::AggregatedTradeTime { .. } => ImpactForm::Arctan,
            _ => ImpactForm::Linear,
        },
    })
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let trades = market_data::load_trades_csv(&args.trades)?;
    if trades.is_empty() {
        return Err(MarketDataError::SchemaMismatch(format!(
            "{} contains no trade rows",
            args.trades.display()
        ))
        .into());
    }
    let quotes = market_data::load_quotes_csv(&args.quotes)?;
    let scheme = parse_scheme(&args)?;
    let form = parse_form(args.form.as_deref(), &scheme)?;
    let session = Session::new(
        (args.session_open_secs * 1e6).round() as i64,
        (args.session_close_secs * 1e6).round() as i64,
    )?;

    let outcome = classify_trades(&trades, &quotes);
    let mids = mid_points(&quotes);
    let series = aggregate(&outcome.trades, &mids, scheme, session)?;
    ensure_dir(&args.out_dir)?;
    write_series_csv(&series, args.out_dir.join("series.csv"))?;

    let impact = estimate_impact_function(&series, args.bins, form)?;
    write_bins_csv(&impact, &args.out_dir.join("impact_bins.csv"))?;
    let emp = regress_propagator(&series, &impact, args.kmax)?;
    write_propagator_csv(&emp, &args.out_dir.join("propagator.csv"))?;
    let kernel_fit = fit_kernel(&emp)?;
    let r2 = r_squared(&series, &impact, &emp)?;
    let noise = estimate_noise_variance(&series, &impact, &emp)?;
    let spread = estimate_spread(&quotes)?;

    let mut day_lens: Vec<usize> = series.day_ranges().iter().map(|r| r.len()).collect();
    day_lens.sort_unstable();
    let intervals_per_day = day_lens.get(day_lens.len() / 2).copied().unwrap_or(0);

    let model = CalibratedModel {
        schema_version: SCHEMA_VERSION,
        label: args.label,
        scheme,
        impact,
        kernel: kernel_fit,
        k_max: args.kmax,
        r_squared: r2,
        sigma2_bp2: noise.sigma2_bp2,
        delta_bp: spread.delta_bp,
        avg_interval_volume: series.mean_total_volume(),
        intervals_per_day,
    };
    let model_path = args.out_dir.join("model.json");
    fs::write(&model_path, model.to_json())
        .with_context(|| format!("writing {}", model_path.display()))?;

    println!(
        "calibrated {} intervals over {} days (scheme {:?})",
        series.len(),
        series.day_ranges().len(),
        scheme
    );
    println!(
        "  theta {:.4} bp | kernel (gamma0 {:.4}, l0 {:.4}, beta {:.4}){} | R^2 {:.4}",
        model.linear_theta_bp(),
        model.kernel.gamma0,
        model.kernel.l0,
        model.kernel.beta,
        if model.kernel.converged {
            ""
        } else {
            " [poor fit]"
        },
        r2,
    );
    println!(
        "  sigma^2 {:.3} bp^2 | delta {:.3} bp | avg interval volume {:.1} sh | {} intervals/day",
        model.sigma2_bp2, model.delta_bp, model.avg_interval_volume, model.intervals_per_day
    );
    if series.warnings != Default::default() {
        println!(
            "  warnings: {} days skipped, {} trades dropped, {} boundaries with stale mids",
            series.warnings.skipped_days,
            series.warnings.dropped_trades,
            series.warnings.unpriced_boundaries
        );
    }
    println!("  -> {}", model_path.display());
    Ok(())
}

fn write_bins_csv(impact: &transient_exec::ImpactFunctionFit, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_center", "mean_return_bp", "count"])?;
    for bin in impact.bins() {
        w.write_record(&[
            format!("{:.9e}", bin.center),
            format!("{:.9e}", bin.mean_return_bp),
            bin.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_propagator_csv(emp: &transient_exec::EmpiricalPropagator, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lag", "g", "g_se", "g0"])?;
    for k in 0..emp.k_max {
        w.write_record(&[
            k.to_string(),
            format!("{:.9e}", emp.g[k]),
            format!("{:.9e}", emp.g_se[k]),
            format!("{:.9e}", emp.g0_tab[k + 1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shared model/sizing flags for optimize, frontier, and compare.
#[derive(Args)]
pub struct TargetArgs {
    /// Calibrated model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Total signed shares to execute.
    #[arg(long, conflicts_with = "participation")]
    total_shares: Option<f64>,
    /// Average participation, percent of per-interval market volume.
    #[arg(long)]
    participation: Option<f64>,
    /// Override the schedule length (defaults to the model's intervals/day).
    #[arg(long)]
    intervals: Option<usize>,
    /// Override the half spread, bp.
    #[arg(long)]
    delta_bp: Option<f64>,
}

pub struct Target {
    pub cost_model: CostModel,
    pub total_shares: f64,
}

impl TargetArgs {
    fn resolve(&self) -> Result<Target> {
        let raw = fs::read_to_string(&self.model)
            .with_context(|| format!("reading {}", self.model.display()))?;
        let model = CalibratedModel::from_json(&raw)?;
        let n = self.intervals.unwrap_or(model.intervals_per_day);
        if n == 0 {
            bail!("model has no intervals per day; pass --intervals");
        }
        let w = model.avg_interval_volume;
        let total_shares = match (self.total_shares, self.participation) {
            (Some(x), _) => x,
            (None, Some(pct)) => pct / 100.0 * n as f64 * w,
            (None, None) => 0.01 * n as f64 * w,
        };
        let cost_model = CostModel::build(
            &model.propagator_kernel(),
            model.linear_theta_bp(),
            &VolumeProfile::Constant(w),
            model.sigma2_bp2,
            self.delta_bp.unwrap_or(model.delta_bp),
            n,
        )?;
        Ok(Target {
            cost_model,
            total_shares,
        })
    }
}

#[derive(Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Risk aversion.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Ignore the spread term and use the closed-form solution.
    #[arg(long)]
    no_spread: bool,
    /// Also write the impact and variance matrices as CSV.
    #[arg(long)]
    dump_matrices: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct OptimizeReport {
    schema_version: u32,
    lambda: f64,
    total_shares: f64,
    intervals: usize,
    cost: CostReport,
    diagnostics: Option<SolveDiagnostics>,
    mean_participation_pct: f64,
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    let target = args.target.resolve()?;
    let model = &target.cost_model;
    let (schedule, diagnostics) = if args.no_spread {
        let s = solve_closed_form(model, target.total_shares, args.lambda)?;
        let diag = SolveDiagnostics {
            iterations: 0,
            stationarity_norm: 0.0,
            objective: model.objective(&s, args.lambda)?,
            path: transient_exec::SolverPath::ClosedForm,
            converged: true,
        };
        (s, Some(diag))
    } else {
        let cfg = OptimizationConfig::new(target.total_shares, args.lambda);
        let (s, d) = solve_with_spread(model, &cfg)?;
        if !d.converged {
            eprintln!("warning: solver stopped before reaching tolerance (best iterate kept)");
        }
        (s, Some(d))
    };
    ensure_dir(&args.out_dir)?;
    let participation = transient_exec::to_participation(&schedule, model.w_series())?;
    write_schedule_csv(
        &schedule.volumes,
        &participation,
        args.out_dir.join("schedule.csv"),
    )?;
    let cost = model.cost_report(&schedule, args.lambda)?;
    let report = OptimizeReport {
        schema_version: SCHEMA_VERSION,
        lambda: args.lambda,
        total_shares: target.total_shares,
        intervals: model.n(),
        mean_participation_pct: 100.0 * participation.iter().sum::<f64>()
            / participation.len() as f64,
        cost,
        diagnostics,
    };
    fs::write(
        args.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if args.dump_matrices {
        fs::write(
            args.out_dir.join("impact_matrix.csv"),
            model.impact_matrix_csv(),
        )?;
        fs::write(
            args.out_dir.join("variance_matrix.csv"),
            model.variance_matrix_csv(),
        )?;
    }
    let per_share = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4} bp/sh"),
        None => "n/a".to_string(),
    };
    println!(
        "schedule over {} intervals, X = {:.1} sh: impact {}, spread {}",
        model.n(),
        target.total_shares,
        per_share(report.cost.impact_per_share),
        per_share(report.cost.spread_per_share),
    );
    println!("  -> {}", args.out_dir.join("schedule.csv").display());
    Ok(())
}

#[derive(Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Comma-separated risk aversions; defaults to 0 plus a log grid on
    /// [1e-8, 1e-2].
    #[arg(long)]
    lambdas: Option<String>,
    /// Also write one schedule CSV per lambda.
    #[arg(long)]
    write_schedules: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn frontier(args: FrontierArgs) -> Result<()> {
    let target = args.target.resolve()?;
    let lambdas = match &args.lambdas {
        Some(raw) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad lambda `{s}`"))
            })
            .collect::<Result<Vec<_>>>()?,
        None => default_lambda_grid(),
    };
    if lambdas.is_empty() {
        bail!("lambda list must be non-empty");
    }
    let model = &target.cost_model;
    let ours = efficient_frontier(model, target.total_shares, &lambdas)?;
    let baseline = almgren_chriss_frontier(model, target.total_shares, &lambdas)?;
    ensure_dir(&args.out_dir)?;

    let mut w = csv::Writer::from_path(args.out_dir.join("frontier.csv"))?;
    w.write_record([
        "curve",
        "lambda",
        "variance_per_share2_bp2",
        "cost_per_share_bp",
        "converged",
    ])?;
    for (name, points) in [("propagator", &ours), ("cosh_baseline", &baseline)] {
        for p in points {
            w.write_record(&[
                name.to_string(),
                format!("{:.6e}", p.lambda),
                format!("{:.9e}", p.variance_per_share2),
                format!("{:.9e}", p.cost_per_share_bp),
                p.converged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    for (file, points) in [
        ("propagator_frontier.csv", &ours),
        ("ac_frontier.csv", &baseline),
    ] {
        let mut w = csv::Writer::from_path(args.out_dir.join(file))?;
        w.write_record(["variance", "expected_cost"])?;
        for p in points {
            w.write_record(&[
                format!("{:.9e}", p.variance_per_share2),
                format!("{:.9e}", p.cost_per_share_bp),
            ])?;
        }
        w.flush()?;
    }
    #[derive(Serialize)]
    struct FrontierReport<'a> {
        schema_version: u32,
        total_shares: f64,
        propagator: &'a [transient_exec::FrontierPoint],
        cosh_baseline: &'a [transient_exec::FrontierPoint],
    }
    let report = FrontierReport {
        schema_version: SCHEMA_VERSION,
        total_shares: target.total_shares,
        propagator: &ours,
        cosh_baseline: &baseline,
    };
    fs::write(
        args.out_dir.join("frontier.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if args.write_schedules {
        let dir = args.out_dir.join("schedules");
        ensure_dir(&dir)?;
        for (i, p) in ours.iter().enumerate() {
            let x = transient_exec::to_participation(&p.schedule, model.w_series())?;
            write_schedule_csv(
                &p.schedule.volumes,
                &x,
                dir.join(format!("schedule_{i:02}_lambda_{:.3e}.csv", p.lambda)),
            )?;
        }
    }
    let unconverged = ours.iter().filter(|p| !p.converged).count();
    println!(
        "frontier with {} points written to {} ({} unconverged)",
        ours.len(),
        args.out_dir.join("frontier.csv").display(),
        unconverged
    );
    Ok(())
}

/// On-disk simulation spec: either an interval-level market or a trade tape.
#[derive(Serialize, Deserialize)]
struct SimFile {
    schema_version: u32,
    #[serde(flatten)]
    sim: SimKind,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SimKind {
    Intervals(MarketSpec),
    Tape(TapeSpec),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulation spec JSON (see README for the schema).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let raw = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let file: SimFile = serde_json::from_str(&raw)
        .map_err(|e| SimError::InvalidSpec(format!("bad spec JSON: {e}")))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(SimError::InvalidSpec(format!(
            "unsupported schema_version {} (expected {})",
            file.schema_version, SCHEMA_VERSION
        ))
        .into());
    }
    ensure_dir(&args.out_dir)?;
    match file.sim {
        SimKind::Intervals(spec) => {
            let series = simulate_market(&spec)?;
            let path = args.out_dir.join("series.csv");
            write_series_csv(&series, &path)?;
            println!("wrote {} intervals -> {}", series.len(), path.display());
        }
        SimKind::Tape(spec) => {
            let (trades, quotes) = simulate_tape(&spec)?;
            write_trades_csv(&trades, args.out_dir.join("trades.csv"))?;
            write_quotes_csv(&quotes, args.out_dir.join("quotes.csv"))?;
            println!(
                "wrote {} trades and {} quotes -> {}",
                trades.len(),
                quotes.len(),
                args.out_dir.display()
            );
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct CostMcArgs {
    #[arg(long)]
    model: PathBuf,
    /// Schedule CSV: interval,v and an optional participation column.
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise accrual convention: strictly_after (default) or inclusive.
    #[arg(long, default_value = "strictly_after")]
    convention: String,
    /// Optional CSV of raw per-path costs.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value = "mc-report.json")]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct McReport {
    schema_version: u32,
    n_paths: usize,
    analytic_mean: f64,
    analytic_variance: f64,
    simulated_mean: f64,
    simulated_variance: f64,
    se_mean: f64,
    se_variance: f64,
    z_mean: f64,
    z_variance: f64,
}

pub fn cost_mc(args: CostMcArgs) -> Result<()> {
    let raw = fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    let model = CalibratedModel::from_json(&raw)?;
    let volumes = market_data::read_schedule_csv(&args.schedule)?;
    if volumes.is_empty() {
        bail!("schedule {} has no rows", args.schedule.display());
    }
    let convention = match args.convention.as_str() {
        "strictly_after" => NoiseConvention::StrictlyAfter,
        "inclusive" => NoiseConvention::Inclusive,
        other => bail!("unknown convention `{other}`"),
    };
    let n = volumes.len();
    let cost_model = CostModel::build(
        &model.propagator_kernel(),
        model.linear_theta_bp(),
        &VolumeProfile::Constant(model.avg_interval_volume),
        model.sigma2_bp2,
        model.delta_bp,
        n,
    )?;
    let schedule = Schedule::new(volumes);
    let analytic_mean = cost_model.impact_cost(&schedule)? + cost_model.spread_cost(&schedule)?;
    let analytic_variance = match convention {
        NoiseConvention::StrictlyAfter => cost_model.cost_variance(&schedule)?,
        NoiseConvention::Inclusive => {
            let x = schedule.total();
            cost_model.cost_variance(&schedule)? + cost_model.sigma2_bp2() * x * x
        }
    };
    let sim = simulate_execution(&cost_model, &schedule, args.paths, args.seed, convention)?;
    if let Some(samples_path) = &args.samples {
        let samples =
            simulate_execution_samples(&cost_model, &schedule, args.paths, args.seed, convention)?;
        let mut w = csv::Writer::from_path(samples_path)?;
        w.write_record(["path", "cost"])?;
        for (i, c) in samples.iter().enumerate() {
            w.write_record(&[i.to_string(), format!("{c:.9e}")])?;
        }
        w.flush()?;
    }
    let report = McReport {
        schema_version: SCHEMA_VERSION,
        n_paths: sim.n_paths,
        analytic_mean,
        analytic_variance,
        simulated_mean: sim.mean,
        simulated_variance: sim.variance,
        se_mean: sim.se_mean,
        se_variance: sim.se_variance,
        z_mean: if sim.se_mean > 0.0 {
            (sim.mean - analytic_mean) / sim.se_mean
        } else {
            0.0
        },
        z_variance: if sim.se_variance > 0.0 {
            (sim.variance - analytic_variance) / sim.se_variance
        } else {
            0.0
        },
    };
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "mc over {} paths: mean {:.4} (analytic {:.4}, z {:+.2}), var {:.4e} (analytic {:.4e}, z {:+.2})",
        report.n_paths,
        report.simulated_mean,
        report.analytic_mean,
        report.z_mean,
        report.simulated_variance,
        report.analytic_variance,
        report.z_variance
    );
    println!("  -> {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let target = args.target.resolve()?;
    let model = &target.cost_model;
    let x = target.total_shares;
    let n = model.n();
    let lambda = args.lambda;

    let flat = bertsimas_lo_flat(x, n)?;
    let oscillating = solve_closed_form(model, x, lambda)?;
    let cfg = OptimizationConfig::new(x, lambda);
    let (with_spread, _) = solve_with_spread(model, &cfg)?;
    let rho = transient_exec::optimizer::ac_temporary_impact(model);
    let cosh = almgren_chriss_schedule(x, n, n as f64, lambda, model.sigma2_bp2(), rho)?;

    ensure_dir(&args.out_dir)?;
    let mut w = csv::Writer::from_path(args.out_dir.join("strategies.csv"))?;
    w.write_record([
        "strategy",
        "impact_per_share_bp",
        "spread_per_share_bp",
        "variance_per_share2_bp2",
        "objective",
    ])?;
    println!(
        "{:<14} {:>16} {:>16} {:>20} {:>14}",
        "strategy", "impact bp/sh", "spread bp/sh", "variance bp^2/sh^2", "objective"
    );
    for (name, schedule) in [
        ("flat", &flat),
        ("oscillating", &oscillating),
        ("with_spread", &with_spread),
        ("cosh", &cosh),
    ] {
        let rep = model.cost_report(schedule, lambda)?;
        let imp = rep.impact_per_share.unwrap_or(f64::NAN);
        let sp = rep.spread_per_share.unwrap_or(f64::NAN);
        let var = rep.variance / (x * x);
        w.write_record(&[
            name.to_string(),
            format!("{imp:.6}"),
            format!("{sp:.6}"),
            format!("{var:.6e}"),
            format!("{:.6e}", rep.objective),
        ])?;
        println!(
            "{name:<14} {imp:>16.4} {sp:>16.4} {var:>20.6} {:>14.4e}",
            rep.objective
        );
    }
    w.flush()?;
    println!("  -> {}", args.out_dir.join("strategies.csv").display());
    Ok(())
}
