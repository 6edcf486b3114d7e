//! `mixhull`: simulate, replicate, diagnose and estimate from the command line.

mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mixhull::diagnostics::{self, DiagnosticsReport, InterventionSpec, RSummary, TargetSet};
use mixhull::estimands::{self, EstimandError, FeasibleMethod, PairGeometry, WeightKind};
use mixhull::geometry::{HullConfig, HullEngine, PointSet, DEFAULT_EPS_MEMBER, DEFAULT_EPS_PHI};
use mixhull::ingest::{self, Dataset, ReadOptions};
use mixhull::replicate::{self, ReplicateConfig};
use mixhull::simulate::{self, SimConfig};
use mixhull::splinereg::{BasisSpec, Marginal, OutcomeModel};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "mixhull", version, about = "Convex-hull positivity diagnostics and mixture estimands")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MIXHULL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the bivariate simulation dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run the full simulation study and print the effect and weighting tables.
    Replicate(ReplicateArgs),
    /// Percent-in-hull and R distributions over reduction interventions.
    Diagnose(DiagnoseArgs),
    /// Fit an outcome model and report every estimand.
    Estimate(EstimateArgs),
}

#[derive(Args, Debug, Clone, serde::Serialize)]
struct Tolerances {
    /// Relative membership tolerance (multiplies the hull diameter).
    #[arg(long, default_value_t = DEFAULT_EPS_MEMBER)]
    eps_member: f64,
    /// Bisection tolerance for the segment fraction φ.
    #[arg(long, default_value_t = DEFAULT_EPS_PHI)]
    eps_phi: f64,
}

impl Tolerances {
    fn hull(&self) -> HullConfig {
        HullConfig {
            eps_member: self.eps_member,
            eps_phi: self.eps_phi,
            mode: None,
        }
    }
}

#[derive(Args, Debug, serde::Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct ReplicateArgs {
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated outcome models: linear, ns:K.
    #[arg(long, default_value = "linear,ns:3,ns:5", value_delimiter = ',', value_parser = parse_model)]
    models: Vec<BasisSpec>,
    /// Trimming threshold on R.
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[command(flatten)]
    tolerances: Tolerances,
    /// Write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct DiagnoseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated target sets: `each`, `all`, or names joined by `+`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    targets: Vec<String>,
    /// Reduction fraction; repeatable.
    #[arg(long)]
    rho: Vec<f64>,
    /// Reduction grid `start:stop:step`.
    #[arg(long)]
    sweep: Option<String>,
    /// Divide each exposure by its standard deviation before hull queries.
    #[arg(long)]
    standardize: bool,
    /// Accept negative exposure values.
    #[arg(long)]
    allow_negative: bool,
    #[command(flatten)]
    tolerances: Tolerances,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Long-format CSV (targets, rho, metric, value).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Metrics written to the CSV.
    #[arg(long, default_value = "percent_in_hull", value_delimiter = ',')]
    csv_metrics: Vec<String>,
    /// Directory for SVG charts.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Outcome model: linear or ns:K.
    #[arg(long, default_value = "linear", value_parser = parse_model)]
    model: BasisSpec,
    #[arg(long, default_value = "hull-projection")]
    feasible: FeasibleMethod,
    /// Trimming threshold on R; repeatable.
    #[arg(long)]
    trim: Vec<f64>,
    /// Extra weighting scheme.
    #[arg(long, value_parser = ["continuous"])]
    weights: Option<String>,
    /// Build the intervention from these targets when the file has no `_int` columns.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Treat a rank-deficient fit as an error.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    allow_negative: bool,
    #[command(flatten)]
    tolerances: Tolerances,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<BasisSpec, String> {
    let s = s.trim();
    if s == "linear" {
        return Ok(BasisSpec::Linear);
    }
    let k = s
        .strip_prefix("ns:")
        .or_else(|| s.strip_prefix("ns"))
        .ok_or_else(|| format!("unknown model `{s}` (linear | ns:K)"))?;
    let df: usize = k.parse().map_err(|_| format!("bad spline df in `{s}`"))?;
    if df == 0 {
        return Err("spline df must be at least 1".into());
    }
    Ok(BasisSpec::NaturalSpline { df })
}

/// Failure classes mapped to exit codes 1, 2 and 3.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Compute(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Compute(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Compute(e) => e,
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn compute<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Compute(e.into())
}

fn estimand_failure(e: EstimandError) -> Failure {
    match e {
        EstimandError::RowMismatch { .. }
        | EstimandError::DimensionMismatch { .. }
        | EstimandError::ObservedNotMember { .. }
        | EstimandError::Empty
        | EstimandError::Geometry(_) => data(e),
        EstimandError::InvalidThreshold(_) => usage(e.to_string()),
        EstimandError::EmptySubpopulation { .. } | EstimandError::DegenerateWeights => compute(e),
    }
}

fn check_output(path: &Path) -> Outcome<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(usage(format!("output directory {} does not exist", dir.display())));
    }
    Ok(())
}

fn check_input(path: &Path) -> Outcome<()> {
    if !path.is_file() {
        return Err(usage(format!("input file {} not found", path.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).map_err(compute)?;
    ingest::write_atomic(path, format!("{text}\n").as_bytes()).map_err(data)
}

fn provenance(command: &str, config: Value, tolerances: &Tolerances, report: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool": "mixhull",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "tolerances": { "eps_member": tolerances.eps_member, "eps_phi": tolerances.eps_phi },
        "report": report,
    })
}

fn read_dataset(path: &Path, allow_negative: bool) -> Outcome<Dataset> {
    check_input(path)?;
    ingest::read_csv(
        path,
        ReadOptions {
            nonnegative: !allow_negative,
        },
    )
    .with_context(|| format!("reading {}", path.display()))
    .map_err(Failure::Data)
}

fn cmd_simulate(args: &SimulateArgs) -> Outcome<()> {
    check_output(&args.out)?;
    let cfg = SimConfig {
        n: args.n as usize,
        seed: args.seed,
        ..SimConfig::default()
    };
    let d = simulate::generate(&cfg).map_err(compute)?;
    let dataset: Dataset = d.into();
    ingest::write_csv(&dataset, &args.out).map_err(data)?;
    eprintln!("wrote {} rows to {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_replicate(args: &ReplicateArgs) -> Outcome<()> {
    if let Some(p) = &args.json {
        check_output(p)?;
    }
    let cfg = ReplicateConfig {
        sim: SimConfig {
            n: args.n as usize,
            seed: args.seed,
            ..SimConfig::default()
        },
        models: args.models.clone(),
        tau: args.tau,
        hull: args.tolerances.hull(),
    };
    let rep = replicate::run(&cfg).map_err(|e| match e {
        replicate::ReplicateError::Geometry(g) => usage(g.to_string()),
        other => compute(other),
    })?;
    println!("{}", rep.render());
    if let Some(p) = &args.json {
        let report = serde_json::to_value(&rep).map_err(compute)?;
        let config = serde_json::to_value(args).map_err(compute)?;
        write_json(p, &provenance("replicate", config, &args.tolerances, report))?;
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Outcome<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("bad sweep `{spec}`; expected start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let (a, b, s) = (nums[0], nums[1], nums[2]);
    if !(a.is_finite() && b.is_finite() && s > 0.0 && a <= b) {
        return Err(bad());
    }
    let count = ((b - a) / s + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|k| ((a + k as f64 * s) * 1e12).round() / 1e12)
        .collect())
}

fn parse_targets(tokens: &[String], names: &[String]) -> Outcome<Vec<Vec<String>>> {
    let mut sets = Vec::new();
    for t in tokens {
        let set = match t.trim() {
            "each" => TargetSet::Each,
            "all" => TargetSet::All,
            named => TargetSet::Named(named.split('+').map(|s| s.trim().to_string()).collect()),
        };
        let expanded = set.expand(names);
        for e in &expanded {
            if let Some(bad) = e.iter().find(|n| !names.contains(n)) {
                return Err(data(anyhow!("unknown exposure `{bad}` (have {})", names.join(", "))));
            }
        }
        sets.extend(expanded);
    }
    if sets.is_empty() {
        return Err(usage("no target sets given"));
    }
    Ok(sets)
}

fn column_sd(w: &PointSet, j: usize) -> f64 {
    let col = w.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Column scaling by 1/sd; commutes with proportional reductions.
fn standardize(w: &PointSet) -> Outcome<(PointSet, Vec<f64>)> {
    let sds: Vec<f64> = (0..w.dim()).map(|j| column_sd(w, j)).collect();
    if let Some(j) = sds.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(data(anyhow!("exposure column {} is constant; cannot standardize", j + 1)));
    }
    let scaled = PointSet::new(
        w.dim(),
        w.rows().flat_map(|r| r.iter().zip(&sds).map(|(v, s)| v / s).collect::<Vec<_>>()).collect(),
    )
    .map_err(data)?;
    Ok((scaled, sds))
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Outcome<()> {
    for p in [&args.json, &args.csv].into_iter().flatten() {
        check_output(p)?;
    }
    if let Some(dir) = &args.svg {
        if !dir.is_dir() {
            return Err(usage(format!("SVG directory {} does not exist", dir.display())));
        }
    }
    let metrics: Vec<&str> = args.csv_metrics.iter().map(String::as_str).collect();
    if let Some(bad) = metrics.iter().find(|m| !diagnostics::CSV_METRICS.contains(m)) {
        return Err(usage(format!(
            "unknown CSV metric `{bad}` (available: {})",
            diagnostics::CSV_METRICS.join(", ")
        )));
    }
    let mut grid = args.rho.clone();
    if let Some(s) = &args.sweep {
        grid.extend(parse_grid(s)?);
    }
    if grid.is_empty() {
        return Err(usage("give --rho or --sweep"));
    }
    if let Some(r) = grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(usage(format!("reduction {r} is outside [0, 1]")));
    }

    let dataset = read_dataset(&args.input, args.allow_negative)?;
    if dataset.is_empty() {
        return Err(data(anyhow!("{} has no data rows", args.input.display())));
    }
    let names = dataset.exposure_names.clone();
    let sets = parse_targets(&args.targets, &names)?;
    let (w, scales) = if args.standardize {
        let (w, s) = standardize(&dataset.exposures)?;
        (w, Some(s))
    } else {
        (dataset.exposures.clone(), None)
    };
    let engine = HullEngine::with_config(w.clone(), args.tolerances.hull()).map_err(|e| usage(e.to_string()))?;
    let report = diagnostics::sweep(&engine, &w, &names, &sets, &grid).map_err(compute)?;

    print_diagnostics(&report);
    if let Some(p) = &args.csv {
        let text = report.to_long_csv(&metrics).map_err(usage)?;
        ingest::write_atomic(p, text.as_bytes()).map_err(data)?;
    }
    if let Some(dir) = &args.svg {
        write_svgs(dir, &report)?;
    }
    if let Some(p) = &args.json {
        let mut config = serde_json::to_value(args).map_err(compute)?;
        config["rho_grid"] = json!(grid);
        config["standardize_scales"] = json!(scales);
        config["dataset"] = serde_json::to_value(dataset.summary()).map_err(compute)?;
        let body = serde_json::to_value(&report).map_err(compute)?;
        write_json(p, &provenance("diagnose", config, &args.tolerances, body))?;
    }
    Ok(())
}

fn print_diagnostics(report: &DiagnosticsReport) {
    println!(
        "{:<24}{:>8}{:>12}{:>10}{:>10}{:>10}{:>14}",
        "targets", "rho", "% in hull", "R med", "R q95", "R max", "R<0.05 share"
    );
    for e in &report.entries {
        println!(
            "{:<24}{:>8}{:>12.2}{:>10.4}{:>10.4}{:>10.4}{:>14.4}",
            e.target_label(),
            e.rho,
            e.percent_in_hull,
            e.r.median,
            e.r.q95,
            e.r.max,
            e.r.first_bin_share()
        );
    }
}

fn file_tag(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn write_svgs(dir: &Path, report: &DiagnosticsReport) -> Outcome<()> {
    let mut series: Vec<svg::Series> = Vec::new();
    for e in &report.entries {
        let label = e.target_label();
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((e.rho, e.percent_in_hull)),
            None => series.push(svg::Series {
                label,
                points: vec![(e.rho, e.percent_in_hull)],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let chart = svg::line_chart(
        "Intervened exposures inside the observed hull",
        "reduction fraction rho",
        "percent in hull",
        &series,
        (0.0, 100.0),
    );
    ingest::write_atomic(&dir.join("percent_in_hull.svg"), chart.as_bytes()).map_err(data)?;
    for e in &report.entries {
        let title = format!("R for {} reduced by {}", e.target_label(), e.rho);
        let h = svg::histogram(&title, "R", &e.r.histogram);
        let name = format!("r_hist_{}_{}.svg", file_tag(&e.target_label()), file_tag(&e.rho.to_string()));
        ingest::write_atomic(&dir.join(name), h.as_bytes()).map_err(data)?;
    }
    Ok(())
}

fn knots_json(model: &OutcomeModel) -> Value {
    Value::Array(
        model
            .basis
            .marginals
            .iter()
            .map(|m| match m {
                Marginal::Identity => Value::Null,
                Marginal::Natural(s) => json!({ "boundary": s.boundary(), "interior": s.interior_knots() }),
            })
            .collect(),
    )
}

fn print_r_summary(r: &RSummary) {
    eprintln!(
        "R distribution: min {:.4}, 5% {:.4}, 25% {:.4}, median {:.4}, 75% {:.4}, 95% {:.4}, max {:.4}",
        r.min, r.q05, r.q25, r.median, r.q75, r.q95, r.max
    );
}

fn cmd_estimate(args: &EstimateArgs) -> Outcome<()> {
    if let Some(p) = &args.json {
        check_output(p)?;
    }
    if let Some(t) = args.trim.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(usage(format!("trimming threshold {t} must be finite and non-negative")));
    }
    let dataset = read_dataset(&args.input, args.allow_negative)?;
    let y = dataset
        .outcome
        .as_ref()
        .ok_or_else(|| data(anyhow!("{} has no outcome column `y`", args.input.display())))?;
    if dataset.is_empty() {
        return Err(data(anyhow!("{} has no data rows", args.input.display())));
    }
    let w = &dataset.exposures;
    let w_int = match (&dataset.interventions, args.rho) {
        (_, Some(rho)) => {
            let targets = if args.targets.is_empty() {
                dataset.exposure_names.clone()
            } else {
                args.targets.clone()
            };
            let spec = InterventionSpec::new(targets, rho).map_err(|e| usage(e.to_string()))?;
            diagnostics::apply_intervention(w, &dataset.exposure_names, &spec).map_err(data)?
        }
        (Some(wi), None) => wi.clone(),
        (None, None) => {
            return Err(data(anyhow!(
                "{} has no `_int` columns; give --rho (and optionally --targets)",
                args.input.display()
            )))
        }
    };

    let model = OutcomeModel::fit_spec(args.model, w, y).map_err(data)?;
    for warning in &model.warnings {
        eprintln!("warning: {warning}");
    }
    if args.strict && model.is_rank_deficient() {
        return Err(compute(anyhow!("rank-deficient fit in strict mode")));
    }
    let engine = HullEngine::with_config(w.clone(), args.tolerances.hull()).map_err(|e| usage(e.to_string()))?;
    let geometry = PairGeometry::compute(&engine, w, &w_int).map_err(estimand_failure)?;
    let mut weights: Vec<WeightKind> = args.trim.iter().map(|&tau| WeightKind::Trimmed { tau }).collect();
    if args.weights.is_some() {
        weights.push(WeightKind::Continuous);
    }
    let label = args.model.label();
    let report = estimands::estimate(&model, &label, &engine, w, &w_int, &geometry, args.feasible, &weights)
        .map_err(|e| {
            if matches!(e, EstimandError::EmptySubpopulation { .. }) {
                print_r_summary(&RSummary::from_values(&geometry.r));
            }
            estimand_failure(e)
        })?;
    println!("{report}");
    if let Some(p) = &args.json {
        let mut config = serde_json::to_value(args).map_err(compute)?;
        config["dataset"] = serde_json::to_value(dataset.summary()).map_err(compute)?;
        let mut body = serde_json::to_value(&report).map_err(compute)?;
        body["basis"] = json!({
            "spec": args.model,
            "width": model.basis.width(),
            "rank": model.rank,
            "knots": knots_json(&model),
            "warnings": model.warnings,
        });
        body["engine"] = serde_json::to_value(engine.info()).map_err(compute)?;
        write_json(p, &provenance("estimate", config, &args.tolerances, body))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Estimate(a) => cmd_estimate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
