//! Bias sweeps of the shifted and naive models against the true annual-loss
//! quantile, the high-frequency Normal comparison, the standard-normal
//! diagnostic curves, and the small-sample parameter-uncertainty experiment.

use crate::bayes::{uncertainty_comparison, UncertaintyComparison};
use crate::compound::{quantile, CompoundModel, Engine, EngineOptions, QuantileReport};
use crate::dist::{lognormal_quantile, SeverityKind, SeverityParams, TruncationSpec};
use crate::error::{Error, Result};
use crate::fitting::LossDataset;
use crate::special::norm_cdf;
use crate::truncation::{bias_diagnostics, c_crossing_psi, naive_params, shifted_params, MapKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;

/// Intensities above this go to the Normal approximation under [`EngineChoice::Auto`].
pub const AUTO_CF_MAX_LAMBDA: f64 = 1e7;

/// How a sweep picks its quantile engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineChoice {
    /// CF inversion for `λ ≤ 10⁷`, the Normal approximation above.
    Auto,
    Fixed(Engine),
}

impl EngineChoice {
    pub fn for_lambda(&self, lambda: f64) -> Engine {
        match *self {
            EngineChoice::Fixed(e) => e,
            EngineChoice::Auto if lambda <= AUTO_CF_MAX_LAMBDA => Engine::Cf,
            EngineChoice::Auto => Engine::Clt,
        }
    }
}

impl std::str::FromStr for EngineChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(EngineChoice::Auto)
        } else {
            s.parse().map(EngineChoice::Fixed)
        }
    }
}

/// Cartesian grid of `σ × θ × Ψ` cells at fixed `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub mu: f64,
    pub sigmas: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Truncated fractions in percent.
    pub psis: Vec<f64>,
    pub level: f64,
    pub engine: EngineChoice,
    pub options: EngineOptions,
}

pub const STUDY_SIGMAS: [f64; 2] = [1.0, 2.0];
pub const STUDY_THETAS: [f64; 9] = [0.01, 0.1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6];
pub const STUDY_PSIS: [f64; 10] = [0.0, 1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0];

impl SweepGrid {
    /// Full study grid, reported intensities up to 10⁶.
    pub fn full() -> Self {
        Self {
            mu: 3.0,
            sigmas: STUDY_SIGMAS.to_vec(),
            thetas: STUDY_THETAS.to_vec(),
            psis: STUDY_PSIS.to_vec(),
            level: 0.999,
            engine: EngineChoice::Auto,
            options: EngineOptions::default(),
        }
    }

    /// Study grid with intensities capped at 10⁴ for quick runs.
    pub fn desk() -> Self {
        Self {
            thetas: STUDY_THETAS.iter().copied().filter(|&t| t <= 1e4).collect(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.thetas.is_empty() || self.psis.is_empty() {
            return Err(Error::InvalidParameter("sweep grid axes must be non-empty".into()));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {s}")));
        }
        if let Some(t) = self.thetas.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {t}")));
        }
        if let Some(p) = self.psis.iter().find(|p| !(0.0..100.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!("psi must lie in [0, 100), got {p}")));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut v = Vec::with_capacity(self.sigmas.len() * self.thetas.len() * self.psis.len());
        for &s in &self.sigmas {
            for &t in &self.thetas {
                for &p in &self.psis {
                    v.push((s, t, p));
                }
            }
        }
        v
    }
}

/// One sweep cell. On failure the quantities that could not be computed are NaN
/// and `failure` holds the error code.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRecord {
    pub model: MapKind,
    pub sigma: f64,
    pub theta: f64,
    pub psi: f64,
    pub lambda_true: f64,
    pub q_true: f64,
    pub q_model: f64,
    pub delta: f64,
    pub engine: Engine,
    /// Bound on the numerical error of `delta` from both quantiles' error estimates.
    pub err_estimate: f64,
    pub failure: Option<String>,
}

pub fn map_kind_name(kind: MapKind) -> &'static str {
    match kind {
        MapKind::Shifted => "shifted",
        MapKind::Naive => "naive",
    }
}

/// True and simplified annual-loss models for one cell: `(true λ, truth, simplified)`.
pub fn cell_models(kind: MapKind, mu: f64, sigma: f64, theta: f64, psi: f64) -> Result<(f64, CompoundModel, CompoundModel)> {
    let p = SeverityParams::new(mu, sigma)?;
    let trunc = TruncationSpec::from_psi(psi, &p)?;
    let lambda = theta / (1.0 - psi / 100.0);
    let truth = CompoundModel::plain(mu, sigma, lambda)?;
    let simplified = match kind {
        MapKind::Shifted => {
            let m = shifted_params(&p, &trunc)?.mapped;
            let sev = if trunc.level > 0.0 {
                SeverityKind::ShiftedBy(trunc.level)
            } else {
                SeverityKind::Plain
            };
            CompoundModel::new(sev, m, crate::dist::FrequencyParams::new(theta)?)?
        }
        MapKind::Naive => {
            let m = naive_params(&p, &trunc)?.mapped;
            CompoundModel::plain(m.mu, m.sigma, theta)?
        }
    };
    Ok((lambda, truth, simplified))
}

fn relative_error(a: &QuantileReport) -> f64 {
    if a.value > 0.0 {
        a.err_estimate / a.value
    } else {
        0.0
    }
}

/// Evaluates one cell with a given engine.
pub fn bias_cell(
    kind: MapKind,
    mu: f64,
    sigma: f64,
    theta: f64,
    psi: f64,
    level: f64,
    engine: EngineChoice,
    opts: &EngineOptions,
) -> BiasRecord {
    let lambda_true = theta / (1.0 - psi / 100.0);
    let eng = engine.for_lambda(lambda_true);
    let mut rec = BiasRecord {
        model: kind,
        sigma,
        theta,
        psi,
        lambda_true,
        q_true: f64::NAN,
        q_model: f64::NAN,
        delta: f64::NAN,
        engine: eng,
        err_estimate: f64::NAN,
        failure: None,
    };
    let run = || -> Result<(QuantileReport, QuantileReport)> {
        let (_, truth, simplified) = cell_models(kind, mu, sigma, theta, psi)?;
        let qt = quantile(eng, level, &truth, opts)?;
        let qm = quantile(eng, level, &simplified, opts)?;
        Ok((qt, qm))
    };
    match run() {
        Ok((qt, qm)) => {
            rec.q_true = qt.value;
            rec.q_model = qm.value;
            rec.delta = (qm.value - qt.value) / qt.value;
            rec.err_estimate = (qm.value / qt.value) * (relative_error(&qt) + relative_error(&qm));
        }
        Err(e) => rec.failure = Some(e.code().to_string()),
    }
    rec
}

fn sort_records(v: &mut [BiasRecord]) {
    v.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.theta.total_cmp(&b.theta))
            .then(a.psi.total_cmp(&b.psi))
    });
}

/// δ for every grid cell, sorted by `(σ, θ, Ψ)`. Per-cell failures are
/// recorded in the row; only an invalid grid is an error.
pub fn run_bias_sweep(kind: MapKind, grid: &SweepGrid) -> Result<Vec<BiasRecord>> {
    grid.validate()?;
    let mut out: Vec<BiasRecord> = grid
        .cells()
        .into_par_iter()
        .map(|(s, t, p)| bias_cell(kind, grid.mu, s, t, p, grid.level, grid.engine, &grid.options))
        .collect();
    sort_records(&mut out);
    Ok(out)
}

/// CF and Normal-approximation δ for the same cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CltComparison {
    pub cf: BiasRecord,
    pub clt: BiasRecord,
    /// `|δ_CF − δ_CLT|`.
    pub gap: f64,
}

/// CF against Normal-approximation δ on a high-intensity grid (`θ ≥ 10⁴`).
pub fn run_clt_comparison(kind: MapKind, grid: &SweepGrid) -> Result<Vec<CltComparison>> {
    grid.validate()?;
    if let Some(t) = grid.thetas.iter().find(|t| **t < 1e4) {
        return Err(Error::InvalidParameter(format!(
            "Normal comparison needs theta >= 1e4, got {t}"
        )));
    }
    let mut out: Vec<CltComparison> = grid
        .cells()
        .into_par_iter()
        .map(|(s, t, p)| {
            let cf = bias_cell(kind, grid.mu, s, t, p, grid.level, EngineChoice::Fixed(Engine::Cf), &grid.options);
            let clt = bias_cell(kind, grid.mu, s, t, p, grid.level, EngineChoice::Fixed(Engine::Clt), &grid.options);
            let gap = (cf.delta - clt.delta).abs();
            CltComparison { cf, clt, gap }
        })
        .collect();
    out.sort_by(|a, b| {
        a.cf.sigma
            .total_cmp(&b.cf.sigma)
            .then(a.cf.theta.total_cmp(&b.cf.theta))
            .then(a.cf.psi.total_cmp(&b.cf.psi))
    });
    Ok(out)
}

/// One row of the diagnostic table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    /// `F_N(t)`, the truncated fraction as a probability.
    pub f_n: f64,
    pub b: f64,
    pub c: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticTable {
    pub rows: Vec<DiagnosticRow>,
    /// `(α, Ψ%)` where `C(·, α)` changes sign.
    pub crossings: Vec<(f64, f64)>,
}

/// `B(t)` and `C(t, α)` on `t_lo, t_lo + step, …, t_hi` with located sign changes of `C`.
pub fn run_diagnostic_curves(t_lo: f64, t_hi: f64, step: f64, alphas: &[f64]) -> Result<DiagnosticTable> {
    if !(t_lo >= -6.0 && t_hi <= 6.0 && t_lo <= t_hi && step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diagnostic range must satisfy -6 <= t_lo <= t_hi <= 6 with step > 0, got [{t_lo}, {t_hi}] step {step}"
        )));
    }
    let n = ((t_hi - t_lo) / step + 1e-9).floor() as usize;
    let rows = (0..=n)
        .map(|i| {
            let t = t_lo + i as f64 * step;
            let d = bias_diagnostics(t, alphas)?;
            Ok(DiagnosticRow {
                t,
                f_n: norm_cdf(t),
                b: d.b,
                c: d.c_at_alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crossings = alphas
        .iter()
        .map(|&a| Ok((a, c_crossing_psi(a, 1e-10)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticTable { rows, crossings })
}

/// Settings of the small-sample parameter-uncertainty experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Config {
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub years: usize,
    pub seed: u64,
    pub k: usize,
    pub level: f64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            mu: 3.0,
            sigma: 2.0,
            lambda: 20.0,
            psi: 10.0,
            years: 4,
            seed: 1,
            k: 1_000_000,
            level: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Report {
    pub config: Table1Config,
    pub threshold: f64,
    pub n_losses: usize,
    pub comparison: UncertaintyComparison,
}

/// Simulated truncated dataset for `cfg`; uses a stream disjoint from the predictive draws.
pub fn table1_dataset(cfg: &Table1Config) -> Result<LossDataset> {
    if !(cfg.psi > 0.0 && cfg.psi < 100.0) {
        return Err(Error::InvalidParameter(format!("psi must lie in (0, 100), got {}", cfg.psi)));
    }
    let p = SeverityParams::new(cfg.mu, cfg.sigma)?;
    let threshold = lognormal_quantile(cfg.psi / 100.0, &p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    LossDataset::simulate(&p, cfg.lambda, threshold, cfg.years, &mut rng)
}

/// Simulates a dataset and compares the three models with and without parameter uncertainty.
pub fn run_table1_experiment(cfg: &Table1Config) -> Result<Table1Report> {
    let data = table1_dataset(cfg)?;
    let comparison = uncertainty_comparison(&data, cfg.level, cfg.k, cfg.seed)?;
    Ok(Table1Report {
        config: *cfg,
        threshold: data.threshold,
        n_losses: data.n_losses(),
        comparison,
    })
}

/// `x` with `digits` significant digits, `%g` style.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim(mant.to_string()), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    }
}

pub const BIAS_CSV_HEADER: [&str; 10] = [
    "model", "sigma", "theta", "psi", "lambda", "q_true", "q_model", "delta", "engine", "err",
];

/// Writes sweep rows; failed cells carry `engine:code` in the engine column.
pub fn write_bias_csv<W: Write>(out: W, records: &[BiasRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BIAS_CSV_HEADER)?;
    for r in records {
        let engine = match &r.failure {
            None => r.engine.as_str().to_string(),
            Some(code) => format!("{}:{code}", r.engine.as_str()),
        };
        let f = |x: f64| format_sig(x, 10);
        w.write_record([
            map_kind_name(r.model).to_string(),
            f(r.sigma),
            f(r.theta),
            f(r.psi),
            f(r.lambda_true),
            f(r.q_true),
            f(r.q_model),
            f(r.delta),
            engine,
            f(r.err_estimate),
        ])?;
    }
    w.flush()?;
    Ok(())
}
