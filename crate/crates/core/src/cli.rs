//! Command-line interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::DMatrix;

use crate::archive::Archive;
use crate::basis::Dataset;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fit::{fit_dataset, FitOptions};
use crate::inference::predict;
use crate::metrics::{askld, ase, ecp, pct_delta_ase, roc};
use crate::rng::RngStream;
use crate::sampler::SamplerSettings;
use crate::simgen::{generate, BenchmarkFunction};
use crate::study::{run_study, StudySpec};

pub const SEED_ENV: &str = "MIXPROBIT_SEED";

#[derive(Debug, Parser)]
#[command(name = "mixprobit", version, about = "Mixture-of-probit-splines binary regression")]
pub struct Cli {
    /// TOML configuration file; unset fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (falls back to MIXPROBIT_SEED, then the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Fit the mixture to a CSV dataset and write a model archive.
    Fit(FitArgs),
    /// Predict probabilities at new points from an archive.
    Predict(PredictArgs),
    /// Compare estimated probabilities with the truth.
    Evaluate(EvaluateArgs),
    /// Replicated simulation study: mixture against a single spline.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Benchmark function: a, b, c or d.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Use Gaussian bumps for the peak function.
    #[arg(long)]
    pub negate_b: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a header; the response is column `w` or else the last column.
    #[arg(long)]
    pub data: PathBuf,
    /// Archive path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Newline-delimited JSON, one record per retained draw.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub max_components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model archive written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of points with the training covariate columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV with `true_prob` and, for ROC, `w`.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV with `prob` and optionally `low`, `high` (as written by `predict`).
    #[arg(long)]
    pub estimate: PathBuf,
    /// Second estimate for a percentage ASE comparison.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub max_components: Option<usize>,
    #[arg(long)]
    pub negate_b: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// A headed numeric table read from CSV.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn values(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[col]).collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(Error::data(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("{}: line {line}: '{f}' is not a number", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

/// Split a training table into covariates and responses. The response is the
/// column named `w` if present, otherwise the last column; a `true_prob`
/// column is ignored.
pub fn dataset_from_table(table: &Table, path: &Path) -> Result<Dataset> {
    let w_col = table.column("w").unwrap_or(table.header.len() - 1);
    let skip = table.column("true_prob");
    let x_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != w_col && Some(c) != skip).collect();
    if x_cols.is_empty() {
        return Err(Error::data(format!("{}: no covariate columns", path.display())));
    }
    let mut w = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        match row[w_col] {
            v if v == 0.0 => w.push(false),
            v if v == 1.0 => w.push(true),
            v => {
                return Err(Error::data(format!(
                    "{}: line {}: response {v} is not 0 or 1",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    let x = DMatrix::from_fn(table.rows.len(), x_cols.len(), |i, k| table.rows[i][x_cols[k]]);
    let names = x_cols.iter().map(|&c| table.header[c].clone()).collect();
    Dataset::with_names(x, w, names)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seed precedence: flag, then environment, then config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("{SEED_ENV}='{v}' is not an unsigned integer")));
    }
    Ok(config)
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.seed = resolve_seed(cli.seed, env.as_deref(), cfg.seed)?;
    Ok(cfg)
}

fn fit_options(cfg: &RunConfig, n: usize) -> Result<FitOptions> {
    Ok(FitOptions {
        prior: cfg.prior.resolve(n)?,
        basis: cfg.basis.clone(),
        chain: cfg.chain.clone(),
        sampler: SamplerSettings::default(),
        level: cfg.level,
        seed: cfg.seed,
    })
}

fn cmd_simulate(cfg: &mut RunConfig, args: &SimulateArgs) -> Result<()> {
    if let Some(f) = &args.function {
        cfg.simulation.function = f.parse::<BenchmarkFunction>()?;
    }
    if let Some(n) = args.n {
        cfg.simulation.n = n;
    }
    cfg.simulation.b_negated_exponents |= args.negate_b;
    cfg.validate()?;
    let bench = cfg.simulation.benchmark();
    let mut rng = RngStream::new(cfg.seed);
    let sim = generate(&bench, cfg.simulation.n, cfg.simulation.design, &mut rng)?;
    let mut header: Vec<String> = (1..=bench.dimension()).map(|k| format!("x{k}")).collect();
    header.push("w".into());
    header.push("true_prob".into());
    let rows: Vec<Vec<String>> = (0..sim.truth.len())
        .map(|i| {
            let mut row: Vec<String> = sim.covariates.row(i).iter().map(|v| v.to_string()).collect();
            row.push(u8::from(sim.responses[i]).to_string());
            row.push(sim.truth[i].to_string());
            row
        })
        .collect();
    write_csv(&args.out, &header, &rows)?;
    info!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_fit(cfg: &mut RunConfig, args: &FitArgs) -> Result<()> {
    if let Some(level) = args.level {
        cfg.level = level;
    }
    if let Some(r) = args.max_components {
        cfg.prior.max_components = r;
        cfg.prior.model_prior = None;
    }
    cfg.validate()?;
    let table = read_table(&args.data)?;
    let data = dataset_from_table(&table, &args.data)?;
    let options = fit_options(cfg, data.n())?;

    let mut trace_writer = match &args.trace {
        Some(p) => Some((create(p)?, p.clone())),
        None => None,
    };
    let outcome = fit_dataset(&data, &options, |draw| {
        if let Some((w, p)) = trace_writer.as_mut() {
            let line = serde_json::to_string(draw).expect("draw serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&*p, e))?;
        }
        Ok(())
    })?;
    if let Some((mut w, p)) = trace_writer {
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    let archive = Archive::from_result(&outcome.result, data.names(), Some(outcome.report.clone()));
    archive.save(&args.out)?;

    let r = &outcome.report;
    println!("n = {}, knots = {}, spline rank = {}", r.n, r.knots, r.rank);
    for (k, p) in r.model_probs.iter().enumerate() {
        println!("Pr(r = {} | w) = {p:.4}", k + 1);
    }
    println!("jump acceptance = {:.4}", r.jump_acceptance);
    println!("gating acceptance = {:.4}", r.delta_acceptance);
    println!(
        "wall time: pilots {:.1}s, main chain {:.1}s ({} iterations)",
        r.pilot_seconds, r.chain_seconds, r.iterations
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let archive = Archive::load(&args.model)?;
    let result = archive.to_result()?;
    let table = read_table(&args.data)?;
    let cols: Vec<usize> = if archive.covariate_names.iter().all(|n| table.column(n).is_some()) {
        archive.covariate_names.iter().map(|n| table.column(n).unwrap()).collect()
    } else {
        (0..table.header.len()).collect()
    };
    let points = DMatrix::from_fn(table.rows.len(), cols.len(), |i, k| table.rows[i][cols[k]]);
    let pred = predict(&result, &points)?;
    let header = vec!["prob".to_string(), "low".into(), "high".into()];
    let rows: Vec<Vec<String>> = (0..pred.prob.len())
        .map(|i| vec![pred.prob[i].to_string(), pred.low[i].to_string(), pred.high[i].to_string()])
        .collect();
    write_csv(&args.out, &header, &rows)
}

fn required(table: &Table, name: &str, path: &Path) -> Result<Vec<f64>> {
    table
        .column(name)
        .map(|c| table.values(c))
        .ok_or_else(|| Error::data(format!("{}: missing column '{name}'", path.display())))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let truth_t = read_table(&args.data)?;
    let est_t = read_table(&args.estimate)?;
    if truth_t.rows.len() != est_t.rows.len() {
        return Err(Error::data(format!(
            "{} has {} rows but {} has {}",
            args.data.display(),
            truth_t.rows.len(),
            args.estimate.display(),
            est_t.rows.len()
        )));
    }
    let truth = required(&truth_t, "true_prob", &args.data)?;
    let est = required(&est_t, "prob", &args.estimate)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |metric: &str, value: f64| rows.push(vec![metric.to_string(), value.to_string()]);
    push("askld", askld(&truth, &est)?);
    let my_ase = ase(&truth, &est)?;
    push("ase", my_ase);
    if let Some(base) = &args.baseline {
        let bt = read_table(base)?;
        let other = required(&bt, "prob", base)?;
        push("pct_delta_ase", pct_delta_ase(ase(&truth, &other)?, my_ase)?);
    }
    if let (Some(lo), Some(hi)) = (est_t.column("low"), est_t.column("high")) {
        let hits = ecp(&truth, &est_t.values(lo), &est_t.values(hi))?;
        push("ecp", hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64);
    }
    if let Some(wc) = truth_t.column("w") {
        let labels: Vec<bool> = truth_t.values(wc).iter().map(|&v| v == 1.0).collect();
        let curve = roc(&labels, &est)?;
        push("auc", curve.auc);
        let roc_path = args.out.with_extension("roc.csv");
        let header = vec!["threshold".to_string(), "fpr".into(), "tpr".into()];
        let pts: Vec<Vec<String>> = (0..curve.tpr.len())
            .map(|i| vec![curve.thresholds[i].to_string(), curve.fpr[i].to_string(), curve.tpr[i].to_string()])
            .collect();
        write_csv(&roc_path, &header, &pts)?;
    }
    write_csv(&args.out, &["metric".to_string(), "value".into()], &rows)
}

fn cmd_study(cfg: &mut RunConfig, args: &StudyArgs) -> Result<()> {
    if let Some(f) = &args.function {
        cfg.simulation.function = f.parse()?;
    }
    if let Some(n) = args.n {
        cfg.simulation.n = n;
    }
    if let Some(k) = args.replications {
        cfg.simulation.replications = k;
    }
    if let Some(level) = args.level {
        cfg.level = level;
    }
    if let Some(r) = args.max_components {
        cfg.prior.max_components = r;
        cfg.prior.model_prior = None;
    }
    cfg.simulation.b_negated_exponents |= args.negate_b;
    cfg.validate()?;
    let spec = StudySpec {
        benchmark: cfg.simulation.benchmark(),
        n: cfg.simulation.n,
        replications: cfg.simulation.replications,
        design: cfg.simulation.design,
        fixed_design: cfg.simulation.fixed_design,
        options: fit_options(cfg, cfg.simulation.n)?,
        mixture_only: false,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(Error::usage("--jobs must be positive"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::usage(format!("could not start worker pool: {e}")))?;
    let result = pool.install(|| run_study(&spec))?;
    let (header, rows) = result.table(cfg.prior.max_components);
    write_csv(&args.out, &header, &rows)?;
    let s = &result.summary;
    println!("completed {} of {} replications", s.completed, spec.replications);
    for (rep, err) in &s.failed {
        println!("replication {rep} failed: {err}");
    }
    if let Some(d) = s.median_askld_diff {
        println!("median ASKLD(single) - ASKLD(mixture) = {d:.5}");
    }
    for (k, p) in s.mean_model_probs.iter().enumerate() {
        println!("mean Pr(r = {} | w) = {p:.3}", k + 1);
    }
    println!("%dAECP = {:.2}", s.pct_delta_aecp);
    Ok(())
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&mut cfg, a),
        Command::Fit(a) => cmd_fit(&mut cfg, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Study(a) => cmd_study(&mut cfg, a),
    }
}

/// Parse arguments and run, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
