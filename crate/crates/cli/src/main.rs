//! `lossdist` command-line front-end.

mod config;

use clap::{Args, Parser, Subcommand};
use config::ConfigFile;
use lossdist::bayes::uncertainty_comparison;
use lossdist::compound::{quantile, EngineOptions};
use lossdist::dist::{FrequencyParams, SeverityParams, TruncationSpec};
use lossdist::fitting::{fit, LossDataset, ModelKind};
use lossdist::study::{
    format_sig, run_bias_sweep, run_clt_comparison, run_diagnostic_curves, write_bias_csv, EngineChoice,
    table1_dataset, SweepGrid, Table1Config, STUDY_PSIS, STUDY_SIGMAS,
};
use lossdist::truncation::{adjust_lambda, bias_diagnostics, naive_params, shifted_params, MapKind};
use lossdist::{CompoundModel, Engine, Error, SeverityKind};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_ARGS: u8 = 2;
const EXIT_ENGINE: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_FIT: u8 = 5;

/// Compound Poisson-Lognormal annual-loss quantiles, truncation bias and parameter uncertainty.
#[derive(Debug, Parser)]
#[command(name = "lossdist", version, about)]
struct Cli {
    /// TOML file with one section per command; inline flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for simulation and sweeps (default: all cores).
    #[arg(long, global = true, env = "LOSSDIST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantile of the annual loss.
    Quantile(QuantileArgs),
    /// Parameters a shifted or naive fit converges to under truncation.
    Map(MapArgs),
    /// Fit a model to a year,loss CSV.
    Fit(FitArgs),
    /// Compare the three models with and without parameter uncertainty.
    Bayes(BayesArgs),
    /// Simulate a truncated year,loss CSV.
    Simulate(SimulateArgs),
    /// Bias sweeps, Normal-approximation comparison, or diagnostic curves to CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct QuantileArgs {
    /// Log-scale location μ.
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Log-scale shape σ > 0.
    #[arg(long)]
    sigma: Option<f64>,
    /// Poisson intensity λ > 0.
    #[arg(long)]
    lambda: Option<f64>,
    /// Quantile level in (0, 1) [default: 0.999].
    #[arg(long)]
    level: Option<f64>,
    /// cf, mc, panjer or clt [default: cf].
    #[arg(long)]
    engine: Option<String>,
    /// Shift the severity right by L.
    #[arg(long)]
    shift: Option<f64>,
    /// Monte Carlo seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample size [default: 1000000].
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct MapArgs {
    /// Log-scale location μ [default: 3].
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Log-scale shape σ [default: 1].
    #[arg(long)]
    sigma: Option<f64>,
    /// Truncated fraction Ψ in percent, [0, 100) [default: 0].
    #[arg(long)]
    psi: Option<f64>,
    /// Intensity of reported losses θ [default: 1].
    #[arg(long)]
    theta: Option<f64>,
    /// shifted or naive [default: shifted].
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with header `year,loss`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reporting threshold L.
    #[arg(long)]
    threshold: Option<f64>,
    /// unbiased, shifted or naive [default: unbiased].
    #[arg(long)]
    model: Option<String>,
    /// Observation years, when wider than the span of years in the file.
    #[arg(long)]
    years: Option<usize>,
}

#[derive(Debug, Args)]
struct BayesArgs {
    /// CSV with header `year,loss`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reporting threshold L.
    #[arg(long)]
    threshold: Option<f64>,
    /// Observation years, when wider than the span of years in the file.
    #[arg(long)]
    years: Option<usize>,
    /// Quantile level [default: 0.999].
    #[arg(long)]
    level: Option<f64>,
    /// Predictive draws [default: 1000000].
    #[arg(long = "K", alias = "k")]
    k: Option<usize>,
    /// Seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Log-scale location μ [default: 3].
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Log-scale shape σ [default: 2].
    #[arg(long)]
    sigma: Option<f64>,
    /// Intensity of all losses λ [default: 20].
    #[arg(long)]
    lambda: Option<f64>,
    /// Truncated fraction Ψ in percent, (0, 100) [default: 10].
    #[arg(long)]
    psi: Option<f64>,
    /// Observation years [default: 4].
    #[arg(long)]
    years: Option<usize>,
    /// Seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// bias, clt or diagnostics [default: bias].
    #[arg(long)]
    study: Option<String>,
    /// shifted, naive or both [default: both].
    #[arg(long)]
    model: Option<String>,
    /// Log-scale location μ [default: 3].
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Comma-separated σ values [default: 1,2].
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Comma-separated θ values [default: 0.01 … 1e4, or … 1e6 with --full].
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Comma-separated Ψ percentages [default: 0,1,5,10,20,…,70].
    #[arg(long, value_delimiter = ',')]
    psis: Option<Vec<f64>>,
    /// Quantile level [default: 0.999].
    #[arg(long)]
    level: Option<f64>,
    /// auto, cf, mc, panjer or clt [default: auto].
    #[arg(long)]
    engine: Option<String>,
    /// Use intensities up to 1e6 (slow).
    #[arg(long)]
    full: bool,
    /// Monte Carlo sample size when --engine mc [default: 1000000].
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Monte Carlo seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated α levels for diagnostics [default: 0.99,0.999].
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Step in t for diagnostics [default: 0.01].
    #[arg(long)]
    t_step: Option<f64>,
    /// Output prefix; files are `<prefix>_<model>.csv` or `<prefix>_diagnostics.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
    /// Report printed to stdout before the failure, if any.
    partial: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            partial: String::new(),
        }
    }

    fn args(message: impl Into<String>) -> Self {
        Self::new(EXIT_ARGS, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) | Error::Domain(_) | Error::DegenerateTruncation { .. } => EXIT_ARGS,
            Error::Data { .. } | Error::Io(_) => EXIT_DATA,
            Error::DegenerateData(_) | Error::NotConverged(_) | Error::NotPositiveDefinite { .. } => EXIT_FIT,
            Error::Accuracy { .. }
            | Error::BracketFailure { .. }
            | Error::DrawBudget { .. }
            | Error::Resolution { .. }
            | Error::Overflow(_)
            | Error::RejectionRate { .. } => EXIT_ENGINE,
        };
        Self::new(code, e.to_string())
    }
}

type CmdResult = Result<String, Failure>;

fn money(x: f64) -> String {
    format_sig(x, 10)
}

fn prob(x: f64) -> String {
    format_sig(x, 12)
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::args(format!("missing required argument --{flag}")))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(|e: Error| Failure::args(e.to_string()))
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "{key}={value}").expect("write to string");
}

fn cmd_quantile(a: QuantileArgs, f: config::QuantileSection) -> CmdResult {
    let mu = required(a.mu.or(f.mu), "mu")?;
    let sigma = required(a.sigma.or(f.sigma), "sigma")?;
    let lambda = required(a.lambda.or(f.lambda), "lambda")?;
    let level = a.level.or(f.level).unwrap_or(0.999);
    let engine: Engine = parse(a.engine.or(f.engine).as_deref().unwrap_or("cf"))?;
    let shift = a.shift.or(f.shift);
    let opts = EngineOptions {
        seed: a.seed.or(f.seed).unwrap_or(1),
        mc_samples: a.mc_samples.or(f.mc_samples).unwrap_or(1_000_000),
        ..EngineOptions::default()
    };
    let kind = match shift {
        Some(l) if l != 0.0 => SeverityKind::ShiftedBy(l),
        _ => SeverityKind::Plain,
    };
    let model = CompoundModel::new(kind, SeverityParams::new(mu, sigma)?, FrequencyParams::new(lambda)?)?;
    let r = quantile(engine, level, &model, &opts)?;
    let mut out = String::new();
    line(&mut out, "engine", r.engine);
    line(&mut out, "level", prob(r.level));
    line(&mut out, "value", money(r.value));
    line(&mut out, "err_estimate", money(r.err_estimate));
    for (k, v) in &r.diagnostics {
        line(&mut out, &format!("diag.{k}"), format_sig(*v, 12));
    }
    Ok(out)
}

fn cmd_map(a: MapArgs, f: config::MapSection) -> CmdResult {
    let mu = a.mu.or(f.mu).unwrap_or(3.0);
    let sigma = a.sigma.or(f.sigma).unwrap_or(1.0);
    let psi = a.psi.or(f.psi).unwrap_or(0.0);
    let theta = a.theta.or(f.theta).unwrap_or(1.0);
    let kind = match a.model.or(f.model).as_deref().unwrap_or("shifted") {
        "shifted" => MapKind::Shifted,
        "naive" => MapKind::Naive,
        other => return Err(Failure::args(format!("unknown model '{other}', expected shifted or naive"))),
    };
    if !(0.0..100.0).contains(&psi) {
        return Err(Failure::args(format!("--psi must lie in [0, 100), got {psi}")));
    }
    let p = SeverityParams::new(mu, sigma)?;
    let trunc = TruncationSpec::from_psi(psi, &p)?;
    let mapped = match kind {
        MapKind::Shifted => shifted_params(&p, &trunc)?,
        MapKind::Naive => naive_params(&p, &trunc)?,
    };
    let lambda = adjust_lambda(&FrequencyParams::new(theta)?, &trunc, &p)?;
    let mut out = String::new();
    line(&mut out, "model", lossdist::study::map_kind_name(kind));
    line(&mut out, "psi", prob(psi));
    line(&mut out, "threshold", money(trunc.level));
    line(&mut out, "mu_mapped", format_sig(mapped.mapped.mu, 12));
    line(&mut out, "sigma_mapped", format_sig(mapped.mapped.sigma, 12));
    line(&mut out, "theta", format_sig(theta, 12));
    line(&mut out, "lambda", format_sig(lambda.lambda, 12));
    line(&mut out, "quad_error", format_sig(mapped.quad_error, 3));
    if psi > 0.0 {
        let d = bias_diagnostics(p.standardize(trunc.level), &[0.99, 0.999])?;
        line(&mut out, "t", format_sig(d.t, 12));
        line(&mut out, "A", format_sig(d.a, 12));
        line(&mut out, "B", format_sig(d.b, 12));
        line(&mut out, "sigma_ratio", format_sig(d.sigma_ratio, 12));
        for (alpha, c) in &d.c_at_alpha {
            line(&mut out, &format!("C_{alpha}"), format_sig(*c, 12));
        }
    }
    Ok(out)
}

fn load_dataset(data: Option<PathBuf>, threshold: Option<f64>, years: Option<usize>) -> Result<LossDataset, Failure> {
    let path = required(data, "data")?;
    let threshold = required(threshold, "threshold")?;
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Failure::args(format!("--threshold must be finite and >= 0, got {threshold}")));
    }
    if !path.exists() {
        return Err(Failure::args(format!("data file {} does not exist", path.display())));
    }
    LossDataset::from_csv_path(&path, threshold, years).map_err(|e| match e {
        Error::InvalidParameter(m) => Failure::args(m),
        other => Failure::new(EXIT_DATA, format!("{}: {other}", path.display())),
    })
}

fn cmd_fit(a: FitArgs, f: config::FitSection) -> CmdResult {
    let kind: ModelKind = parse(a.model.or(f.model).as_deref().unwrap_or("unbiased"))?;
    let data = load_dataset(a.data.or(f.data), a.threshold.or(f.threshold), a.years.or(f.years))?;
    let r = fit(kind, &data)?;
    let mut out = String::new();
    line(&mut out, "model", r.model_kind);
    line(&mut out, "n_losses", data.n_losses());
    line(&mut out, "n_years", data.n_years());
    line(&mut out, "threshold", money(r.threshold));
    line(&mut out, "mu", format_sig(r.severity.mu, 10));
    line(&mut out, "sigma", format_sig(r.severity.sigma, 10));
    line(&mut out, "lambda", format_sig(r.frequency.lambda, 10));
    for (name, s) in ["mu", "sigma", "lambda"].iter().zip(r.stderr) {
        line(&mut out, &format!("stderr_{name}"), format_sig(s, 10));
    }
    line(&mut out, "corr_mu_sigma", format_sig(r.correlations[0][1], 10));
    line(&mut out, "corr_mu_lambda", format_sig(r.correlations[0][2], 10));
    line(&mut out, "corr_sigma_lambda", format_sig(r.correlations[1][2], 10));
    line(&mut out, "loglik", format_sig(r.loglik, 12));
    line(&mut out, "converged", r.converged);
    line(&mut out, "iterations", r.iterations);
    if !r.converged {
        return Err(Failure {
            partial: out,
            ..Failure::new(EXIT_FIT, "fit did not converge")
        });
    }
    Ok(out)
}

fn cmd_bayes(a: BayesArgs, f: config::BayesSection) -> CmdResult {
    let data = load_dataset(a.data.or(f.data), a.threshold.or(f.threshold), a.years.or(f.years))?;
    let level = a.level.or(f.level).unwrap_or(0.999);
    let k = a.k.or(f.k).unwrap_or(1_000_000);
    let seed = a.seed.or(f.seed).unwrap_or(1);
    let c = uncertainty_comparison(&data, level, k, seed)?;
    let mut out = String::new();
    writeln!(
        out,
        "{:<9} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>10}",
        "model", "mu", "sigma", "lambda", "q_hat", "q_hathat", "delta", "mc_stderr", "rejected"
    )
    .expect("write to string");
    for row in c.rows() {
        let (fr, r) = (&row.fit, &row.report);
        writeln!(
            out,
            "{:<9} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>10}",
            fr.model_kind.as_str(),
            format_sig(fr.severity.mu, 10),
            format_sig(fr.severity.sigma, 10),
            format_sig(fr.frequency.lambda, 10),
            money(r.q_hat),
            money(r.q_hathat),
            format_sig(r.delta, 10),
            money(r.mc_stderr),
            r.rejected_draws
        )
        .expect("write to string");
    }
    line(&mut out, "level", prob(level));
    line(&mut out, "K", k);
    line(&mut out, "n_losses", data.n_losses());
    line(&mut out, "point_ordering", c.point_ordering);
    line(&mut out, "predictive_ordering", c.predictive_ordering);
    Ok(out)
}

/// Writes `contents` to a sibling temporary file and renames it into place,
/// so a failed run never leaves a partial file.
fn write_atomically(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::args(format!("cannot write {}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::File::create(&tmp)
        .and_then(|mut fh| fh.write_all(contents).and_then(|_| fh.sync_all()))
        .map_err(fail)?;
    std::fs::rename(&tmp, path).map_err(fail)
}

fn cmd_simulate(a: SimulateArgs, f: config::SimulateSection) -> CmdResult {
    let mu = a.mu.or(f.mu).unwrap_or(3.0);
    let sigma = a.sigma.or(f.sigma).unwrap_or(2.0);
    let lambda = a.lambda.or(f.lambda).unwrap_or(20.0);
    let psi = a.psi.or(f.psi).unwrap_or(10.0);
    let years = a.years.or(f.years).unwrap_or(4);
    let seed = a.seed.or(f.seed).unwrap_or(1);
    let out_path = required(a.out.or(f.out), "out")?;
    if !(psi > 0.0 && psi < 100.0) {
        return Err(Failure::args(format!("--psi must lie in (0, 100), got {psi}")));
    }
    if years == 0 {
        return Err(Failure::args("--years must be >= 1"));
    }
    let cfg = Table1Config {
        mu,
        sigma,
        lambda,
        psi,
        years,
        seed,
        ..Table1Config::default()
    };
    let d = table1_dataset(&cfg)?;
    let threshold = d.threshold;
    let mut csv = Vec::new();
    d.write_csv(&mut csv)?;
    write_atomically(&out_path, &csv)?;
    let mut out = String::new();
    line(&mut out, "file", out_path.display());
    line(&mut out, "threshold", format_sig(threshold, 17));
    line(&mut out, "n_losses", d.n_losses());
    line(&mut out, "n_years", years);
    Ok(out)
}

fn cmd_sweep(a: SweepArgs, f: config::SweepSection) -> CmdResult {
    let study = a.study.or(f.study).unwrap_or_else(|| "bias".into());
    let prefix = required(a.out.or(f.out), "out")?;
    let out_file = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(format!("_{suffix}.csv"));
        PathBuf::from(s)
    };
    let mut out = String::new();
    if study == "diagnostics" {
        let alphas = a.alphas.or(f.alphas).unwrap_or_else(|| vec![0.99, 0.999]);
        let step = a.t_step.or(f.t_step).unwrap_or(0.01);
        let tab = run_diagnostic_curves(-6.0, 6.0, step, &alphas)?;
        let mut csv = String::from("t,f_n,b");
        for alpha in &alphas {
            write!(csv, ",c_{alpha}").expect("write to string");
        }
        csv.push('\n');
        for r in &tab.rows {
            write!(csv, "{},{},{}", format_sig(r.t, 10), prob(r.f_n), format_sig(r.b, 10)).expect("write to string");
            for (_, c) in &r.c {
                write!(csv, ",{}", format_sig(*c, 10)).expect("write to string");
            }
            csv.push('\n');
        }
        let path = out_file("diagnostics");
        write_atomically(&path, csv.as_bytes())?;
        line(&mut out, &path.display().to_string(), tab.rows.len());
        for (alpha, psi) in &tab.crossings {
            line(&mut out, &format!("crossing_psi_{alpha}"), format_sig(*psi, 10));
        }
        return Ok(out);
    }
    let full = a.full || f.full.unwrap_or(false);
    let base = if full { SweepGrid::full() } else { SweepGrid::desk() };
    let engine: EngineChoice = parse(a.engine.or(f.engine).as_deref().unwrap_or("auto"))?;
    let mut grid = SweepGrid {
        mu: a.mu.or(f.mu).unwrap_or(base.mu),
        sigmas: a.sigmas.or(f.sigmas).unwrap_or_else(|| STUDY_SIGMAS.to_vec()),
        thetas: a.thetas.or(f.thetas).unwrap_or(base.thetas),
        psis: a.psis.or(f.psis).unwrap_or_else(|| STUDY_PSIS.to_vec()),
        level: a.level.or(f.level).unwrap_or(base.level),
        engine,
        options: base.options,
    };
    grid.options.mc_samples = a.mc_samples.or(f.mc_samples).unwrap_or(grid.options.mc_samples);
    grid.options.seed = a.seed.or(f.seed).unwrap_or(grid.options.seed);
    if grid.thetas.iter().any(|&t| t > 1e4) {
        eprintln!("warning: intensities above 1e4 make the sweep take minutes");
    }
    let kinds = match a.model.or(f.model).as_deref().unwrap_or("both") {
        "shifted" => vec![MapKind::Shifted],
        "naive" => vec![MapKind::Naive],
        "both" => vec![MapKind::Shifted, MapKind::Naive],
        other => return Err(Failure::args(format!("unknown model '{other}'"))),
    };
    let mut files = Vec::new();
    for kind in kinds {
        let rows = match study.as_str() {
            "bias" => run_bias_sweep(kind, &grid)?,
            "clt" => run_clt_comparison(kind, &grid)?
                .into_iter()
                .flat_map(|c| [c.cf, c.clt])
                .collect(),
            other => return Err(Failure::args(format!("unknown study '{other}'"))),
        };
        let mut buf = Vec::new();
        write_bias_csv(&mut buf, &rows)?;
        let failed = rows.iter().filter(|r| r.failure.is_some()).count();
        files.push((out_file(lossdist::study::map_kind_name(kind)), buf, rows.len(), failed));
    }
    // Files are written only once every sweep has finished.
    for (path, buf, n, failed) in files {
        write_atomically(&path, &buf)?;
        line(&mut out, &path.display().to_string(), n);
        if failed > 0 {
            line(&mut out, &format!("{}.failed_cells", path.display()), failed);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(p) => config::load(p).map_err(Failure::args)?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::args("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::args(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Quantile(a) => cmd_quantile(a, file.quantile),
        Command::Map(a) => cmd_map(a, file.map),
        Command::Fit(a) => cmd_fit(a, file.fit),
        Command::Bayes(a) => cmd_bayes(a, file.bayes),
        Command::Simulate(a) => cmd_simulate(a, file.simulate),
        Command::Sweep(a) => cmd_sweep(a, file.sweep),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            print!("{}", f.partial);
            eprintln!("error: {}", f.message.trim_end());
            ExitCode::from(f.code)
        }
    }
}
