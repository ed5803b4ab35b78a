//! Maximum-likelihood fits of the unbiased, shifted and naive models to
//! threshold-truncated loss data, with finite-difference Fisher information.

use crate::dist::{FrequencyParams, SeverityParams};
use crate::error::{Error, Result};
use crate::special::{ln_gamma, norm_hazard, norm_pdf, norm_sf};
use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path;

/// Smallest number of reported losses a fit accepts.
pub const MIN_LOSSES: usize = 5;

/// Reported losses above a threshold over `M` observation years.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDataset {
    pub threshold: f64,
    pub annual_counts: Vec<u64>,
    pub severities: Vec<f64>,
}

impl LossDataset {
    pub fn new(threshold: f64, annual_counts: Vec<u64>, severities: Vec<f64>) -> Result<Self> {
        let d = Self {
            threshold,
            annual_counts,
            severities,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be finite and >= 0, got {}",
                self.threshold
            )));
        }
        if self.annual_counts.is_empty() {
            return Err(Error::InvalidParameter("at least one observation year is required".into()));
        }
        let total: u64 = self.annual_counts.iter().sum();
        if total as usize != self.severities.len() {
            return Err(Error::InvalidParameter(format!(
                "annual counts sum to {total} but {} severities were given",
                self.severities.len()
            )));
        }
        for (j, &x) in self.severities.iter().enumerate() {
            if !x.is_finite() || x < self.threshold || x <= 0.0 {
                return Err(Error::Data {
                    row: j + 1,
                    message: format!("loss {x} is not a finite value >= threshold {}", self.threshold),
                });
            }
        }
        Ok(())
    }

    /// Builds a dataset from `(year, loss)` pairs.
    ///
    /// Observation years run from the smallest to the largest year present
    /// unless `years` widens the window; years without losses count as zero.
    pub fn from_records(threshold: f64, records: &[(i64, f64)], years: Option<usize>) -> Result<Self> {
        let mut per_year: BTreeMap<i64, u64> = BTreeMap::new();
        for &(y, _) in records {
            *per_year.entry(y).or_default() += 1;
        }
        let span = match (per_year.keys().next(), per_year.keys().next_back()) {
            (Some(a), Some(b)) => (b - a + 1) as usize,
            _ => 0,
        };
        let m = years.unwrap_or(span);
        if m < span.max(1) {
            return Err(Error::InvalidParameter(format!(
                "{m} observation years cannot hold losses spread over {span} years"
            )));
        }
        let mut counts = vec![0u64; m];
        if let Some(&first) = per_year.keys().next() {
            for (y, c) in &per_year {
                counts[(y - first) as usize] = *c;
            }
        }
        Self::new(threshold, counts, records.iter().map(|r| r.1).collect())
    }

    /// Reads `year,loss` CSV with a header row. Errors carry the file line number.
    pub fn from_csv_reader<R: Read>(reader: R, threshold: f64, years: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Data {
                    row: 1,
                    message: format!("missing '{name}' column in header"),
                })
        };
        let (iy, il) = (col("year")?, col("loss")?);
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map(|p| p.line() as usize).unwrap_or_default();
            let field = |i: usize| rec.get(i).unwrap_or("");
            let year: i64 = field(iy).parse().map_err(|_| Error::Data {
                row,
                message: format!("year '{}' is not an integer", field(iy)),
            })?;
            let loss: f64 = field(il).parse().map_err(|_| Error::Data {
                row,
                message: format!("loss '{}' is not a number", field(il)),
            })?;
            if !loss.is_finite() || loss <= 0.0 {
                return Err(Error::Data {
                    row,
                    message: format!("loss {loss} must be finite and > 0"),
                });
            }
            if loss < threshold {
                return Err(Error::Data {
                    row,
                    message: format!("loss {loss} is below the threshold {threshold}"),
                });
            }
            records.push((year, loss));
        }
        Self::from_records(threshold, &records, years)
    }

    pub fn from_csv_path(path: &Path, threshold: f64, years: Option<usize>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(f, threshold, years)
    }

    /// Simulates `years` of Poisson(λ) losses from a Lognormal and keeps those at or above `threshold`.
    pub fn simulate<R: Rng + ?Sized>(
        severity: &SeverityParams,
        lambda: f64,
        threshold: f64,
        years: usize,
        rng: &mut R,
    ) -> Result<Self> {
        severity.validate()?;
        let pois = Poisson::new(lambda)
            .map_err(|e| Error::InvalidParameter(format!("lambda {lambda}: {e}")))?;
        let mut counts = Vec::with_capacity(years);
        let mut sev = Vec::new();
        for _ in 0..years {
            let n = pois.sample(rng) as u64;
            let mut kept = 0;
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(rng);
                let x = (severity.mu + severity.sigma * z).exp();
                if x >= threshold {
                    sev.push(x);
                    kept += 1;
                }
            }
            counts.push(kept);
        }
        Self::new(threshold, counts, sev)
    }

    /// Writes `year,loss` CSV with years numbered from 1.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "loss"])?;
        let mut losses = self.severities.iter();
        for (y, &n) in self.annual_counts.iter().enumerate() {
            for x in losses.by_ref().take(n as usize) {
                w.write_record([(y + 1).to_string(), format!("{x:?}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn n_losses(&self) -> usize {
        self.severities.len()
    }

    pub fn n_years(&self) -> usize {
        self.annual_counts.len()
    }

    /// Per-dataset sums the log-likelihoods depend on.
    fn stats(&self) -> Stats {
        let j = self.severities.len() as f64;
        let ln_x: Vec<f64> = self.severities.iter().map(|x| x.ln()).collect();
        let ln_excess: Vec<f64> = self
            .severities
            .iter()
            .map(|x| (x - self.threshold).ln())
            .collect();
        Stats {
            j,
            m: self.annual_counts.len() as f64,
            ln_count_fact: self.annual_counts.iter().map(|&n| ln_gamma(n as f64 + 1.0)).sum(),
            ln_threshold: self.threshold.ln(),
            raw: Moments::of(&ln_x),
            excess: Moments::of(&ln_excess),
        }
    }
}

/// Sum, mean and centred sum of squares of a log-sample.
#[derive(Debug, Clone, Copy)]
struct Moments {
    sum: f64,
    mean: f64,
    ssq: f64,
}

impl Moments {
    fn of(v: &[f64]) -> Self {
        let n = v.len().max(1) as f64;
        let sum: f64 = v.iter().sum();
        let mean = sum / n;
        let ssq = v.iter().map(|y| (y - mean) * (y - mean)).sum();
        Self { sum, mean, ssq }
    }

    /// `Σ (y − μ)²` without forming large cancelling sums.
    fn sq_dev(&self, j: f64, mu: f64) -> f64 {
        self.ssq + j * (self.mean - mu) * (self.mean - mu)
    }
}

#[derive(Debug, Clone, Copy)]
struct Stats {
    j: f64,
    m: f64,
    ln_count_fact: f64,
    ln_threshold: f64,
    raw: Moments,
    excess: Moments,
}

impl Stats {
    /// `Σ ln f(e^{y} | μ, σ)` for the log-sample summarised by `s`.
    fn ln_density_sum(&self, s: &Moments, mu: f64, sigma: f64) -> f64 {
        -s.sum - self.j * (sigma.ln() + 0.5 * (2.0 * PI).ln()) - s.sq_dev(self.j, mu) / (2.0 * sigma * sigma)
    }

    /// `Σ_m ln p(N_m | rate)`.
    fn ln_poisson_sum(&self, rate: f64) -> f64 {
        if self.j == 0.0 {
            return -self.m * rate - self.ln_count_fact;
        }
        self.j * rate.ln() - self.m * rate - self.ln_count_fact
    }
}

/// Which of the three models a fit describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Unbiased,
    Shifted,
    Naive,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Unbiased, ModelKind::Shifted, ModelKind::Naive];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Unbiased => "unbiased",
            ModelKind::Shifted => "shifted",
            ModelKind::Naive => "naive",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unbiased" => Ok(ModelKind::Unbiased),
            "shifted" => Ok(ModelKind::Shifted),
            "naive" => Ok(ModelKind::Naive),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

/// Point estimates `(μ, σ, λ)` with Fisher-information errors.
///
/// For the unbiased model the intensity is that of all losses, above and below
/// the threshold; for the shifted and naive models it is the reported intensity θ.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model_kind: ModelKind,
    /// Reporting threshold of the fitted data; the shifted model's shift.
    pub threshold: f64,
    pub severity: SeverityParams,
    pub frequency: FrequencyParams,
    pub stderr: [f64; 3],
    pub correlations: [[f64; 3]; 3],
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn gamma(&self) -> [f64; 3] {
        [self.severity.mu, self.severity.sigma, self.frequency.lambda]
    }

    /// `Ĉ_ij = ρ_ij τ_i τ_j`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        covariance_from(&self.stderr, &self.correlations)
    }
}

pub(crate) fn covariance_from(stderr: &[f64; 3], corr: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = corr[i][j] * stderr[i] * stderr[j];
        }
    }
    c
}

/// `ln(1 − Φ(t))` without underflow for large `t`.
fn ln_norm_sf(t: f64) -> f64 {
    if t > 8.0 {
        norm_pdf(t).ln().max(-0.5 * t * t - 0.5 * (2.0 * PI).ln()) - norm_hazard(t).ln()
    } else {
        norm_sf(t).ln()
    }
}

/// Log-likelihood of `γ = (μ, σ, λ)` under `kind`; `-inf` outside `σ > 0, λ > 0`.
pub fn loglik(kind: ModelKind, gamma: [f64; 3], data: &LossDataset) -> f64 {
    loglik_stats(kind, gamma, &data.stats())
}

fn loglik_stats(kind: ModelKind, [mu, sigma, lambda]: [f64; 3], s: &Stats) -> f64 {
    if !(sigma > 0.0 && lambda > 0.0 && mu.is_finite() && sigma.is_finite() && lambda.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match kind {
        ModelKind::Naive => s.ln_density_sum(&s.raw, mu, sigma) + s.ln_poisson_sum(lambda),
        ModelKind::Shifted => s.ln_density_sum(&s.excess, mu, sigma) + s.ln_poisson_sum(lambda),
        ModelKind::Unbiased => {
            let ln_sf = if s.ln_threshold == f64::NEG_INFINITY {
                0.0
            } else {
                ln_norm_sf((s.ln_threshold - mu) / sigma)
            };
            // Σ ln[f/S] + Σ ln p(N | λS): the severity and count terms in S cancel to J ln λ − MλS.
            s.ln_density_sum(&s.raw, mu, sigma) - s.j * ln_sf + s.ln_poisson_sum(lambda * ln_sf.exp())
        }
    }
}

/// Log-likelihood of the unbiased model: truncated-Lognormal severities and
/// Poisson counts with rate `λ(1 − F(L))`.
pub fn loglik_unbiased(gamma: [f64; 3], data: &LossDataset) -> f64 {
    loglik(ModelKind::Unbiased, gamma, data)
}

/// Analytic gradient of [`loglik_unbiased`] in `(μ, σ, λ)`.
pub fn loglik_unbiased_gradient([mu, sigma, lambda]: [f64; 3], data: &LossDataset) -> Result<[f64; 3]> {
    if !(sigma > 0.0 && lambda > 0.0) {
        return Err(Error::Domain(format!(
            "gradient needs sigma > 0 and lambda > 0, got ({sigma}, {lambda})"
        )));
    }
    let s = data.stats();
    let s2 = sigma * sigma;
    let dev = s.raw.sq_dev(s.j, mu);
    let mut g = [
        (s.raw.sum - s.j * mu) / s2,
        -s.j / sigma + dev / (s2 * sigma),
        s.j / lambda,
    ];
    if s.ln_threshold == f64::NEG_INFINITY {
        g[2] -= s.m;
        return Ok(g);
    }
    let t = (s.ln_threshold - mu) / sigma;
    let sf = norm_sf(t);
    let pdf = norm_pdf(t);
    // ∂S/∂μ = φ(t)/σ, ∂S/∂σ = tφ(t)/σ.
    g[0] -= s.m * lambda * pdf / sigma;
    g[1] -= s.m * lambda * pdf * t / sigma;
    g[2] -= s.m * sf;
    Ok(g)
}

/// Closed-form fit of the shifted or naive model (maximum-likelihood variance, divisor `J`).
fn fit_closed_form(kind: ModelKind, s: &Stats) -> Result<[f64; 3]> {
    let mom = match kind {
        ModelKind::Shifted => s.excess,
        _ => s.raw,
    };
    if !mom.mean.is_finite() {
        return Err(Error::DegenerateData(
            "a loss equal to the threshold has zero excess; the shifted model cannot be fitted".into(),
        ));
    }
    let var = mom.ssq / s.j;
    if var <= 0.0 || var < 1e-24 * (1.0 + mom.mean * mom.mean) {
        return Err(Error::DegenerateData("all log-losses are equal".into()));
    }
    Ok([mom.mean, var.sqrt(), s.j / s.m])
}

/// Profiled unbiased log-likelihood in `x = (μ, ln σ)`: the intensity is
/// replaced by its maximiser `λ̂ = (J/M)/(1 − F(L))`.
fn profile_unbiased(x: [f64; 2], s: &Stats) -> (f64, f64) {
    let sigma = x[1].exp();
    let ln_sf = if s.ln_threshold == f64::NEG_INFINITY {
        0.0
    } else {
        ln_norm_sf((s.ln_threshold - x[0]) / sigma)
    };
    let lambda = s.j / s.m / ln_sf.exp();
    (loglik_stats(ModelKind::Unbiased, [x[0], sigma, lambda], s), lambda)
}

/// Gradient of the profiled log-likelihood in `(μ, ln σ)`.
fn profile_gradient(x: [f64; 2], s: &Stats) -> [f64; 2] {
    let sigma = x[1].exp();
    let s2 = sigma * sigma;
    let dev = s.raw.sq_dev(s.j, x[0]);
    let mut gm = (s.raw.sum - s.j * x[0]) / s2;
    let mut gs = -s.j / sigma + dev / (s2 * sigma);
    if s.ln_threshold != f64::NEG_INFINITY {
        let t = (s.ln_threshold - x[0]) / sigma;
        let h = norm_hazard(t);
        gm -= s.j * h / sigma;
        gs -= s.j * h * t / sigma;
    }
    [gm, gs * sigma]
}

const NM_MAX_ITER: usize = 5000;
const BFGS_MAX_ITER: usize = 200;
const PARAM_TOL: f64 = 1e-8;
const LOGLIK_TOL: f64 = 1e-10;

/// Nelder-Mead minimisation of `f` on ℝ². Returns the best vertex and the iteration count.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(f: &F, start: [f64; 2], step: [f64; 2]) -> ([f64; 2], f64, usize, bool) {
    let eval = |x: [f64; 2]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex = [
        (start, eval(start)),
        ([start[0] + step[0], start[1]], 0.0),
        ([start[0], start[1] + step[1]], 0.0),
    ];
    simplex[1].1 = eval(simplex[1].0);
    simplex[2].1 = eval(simplex[2].0);
    let lerp = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * (b[0] - a[0]), a[1] + c * (b[1] - a[1])];
    for it in 0..NM_MAX_ITER {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0], simplex[2]);
        let size = simplex[1..]
            .iter()
            .flat_map(|v| [(v.0[0] - best.0[0]).abs(), (v.0[1] - best.0[1]).abs()])
            .fold(0.0, f64::max);
        if size < PARAM_TOL && (worst.1 - best.1).abs() < LOGLIK_TOL {
            return (best.0, best.1, it, true);
        }
        let centroid = lerp(simplex[0].0, simplex[1].0, 0.5);
        let refl = lerp(centroid, worst.0, -1.0);
        let fr = eval(refl);
        if fr < best.1 {
            let exp = lerp(centroid, worst.0, -2.0);
            let fe = eval(exp);
            simplex[2] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (refl, fr);
        } else {
            let (cand, fc) = if fr < worst.1 {
                let c = lerp(centroid, refl, 0.5);
                (c, eval(c))
            } else {
                let c = lerp(centroid, worst.0, 0.5);
                (c, eval(c))
            };
            if fc < worst.1.min(fr) {
                simplex[2] = (cand, fc);
            } else {
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(best.0, v.0, 0.5);
                    v.1 = eval(v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, NM_MAX_ITER, false)
}

/// BFGS polish of a minimiser of `f` with gradient `g`. Returns the point, value,
/// iterations, and whether both the step and value criteria were met.
fn bfgs<F, G>(f: &F, g: &G, start: [f64; 2]) -> ([f64; 2], f64, usize, bool)
where
    F: Fn([f64; 2]) -> f64,
    G: Fn([f64; 2]) -> [f64; 2],
{
    let mut x = start;
    let mut fx = f(x);
    let mut gx = g(x);
    // Inverse-Hessian estimate, reset to a scaled identity on any bad curvature update.
    let scale = 1.0 / (gx[0].hypot(gx[1]).max(1.0));
    let mut h = [[scale, 0.0], [0.0, scale]];
    for it in 0..BFGS_MAX_ITER {
        let d = [
            -(h[0][0] * gx[0] + h[0][1] * gx[1]),
            -(h[1][0] * gx[0] + h[1][1] * gx[1]),
        ];
        let slope = d[0] * gx[0] + d[1] * gx[1];
        if !(slope < 0.0) {
            if gx[0] == 0.0 && gx[1] == 0.0 {
                return (x, fx, it, true);
            }
            h = [[scale, 0.0], [0.0, scale]];
            continue;
        }
        let mut a = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = [x[0] + a * d[0], x[1] + a * d[1]];
            let fn_ = f(xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * a * slope {
                accepted = Some((xn, fn_));
                break;
            }
            a *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // No descent left at double precision: the point is a minimiser to working accuracy.
            return (x, fx, it, true);
        };
        let gn = g(xn);
        let sv = [xn[0] - x[0], xn[1] - x[1]];
        let yv = [gn[0] - gx[0], gn[1] - gx[1]];
        let step = sv[0].abs().max(sv[1].abs());
        let df = (fx - fn_).abs();
        x = xn;
        fx = fn_;
        gx = gn;
        if step < PARAM_TOL && df < LOGLIK_TOL {
            return (x, fx, it + 1, true);
        }
        let sy = sv[0] * yv[0] + sv[1] * yv[1];
        if sy <= 1e-300 {
            h = [[scale, 0.0], [0.0, scale]];
            continue;
        }
        let rho = 1.0 / sy;
        let hy = [h[0][0] * yv[0] + h[0][1] * yv[1], h[1][0] * yv[0] + h[1][1] * yv[1]];
        let yhy = yv[0] * hy[0] + yv[1] * hy[1];
        for i in 0..2 {
            for j in 0..2 {
                h[i][j] += -rho * (hy[i] * sv[j] + sv[i] * hy[j]) + (rho * rho * yhy + rho) * sv[i] * sv[j];
            }
        }
    }
    (x, fx, BFGS_MAX_ITER, false)
}

/// Fits `kind` to `data` and attaches Fisher-information errors.
///
/// Non-convergence of the unbiased optimiser is reported through
/// `converged = false`, with the best point found.
pub fn fit(kind: ModelKind, data: &LossDataset) -> Result<FitResult> {
    data.validate()?;
    if data.n_losses() < MIN_LOSSES {
        return Err(Error::DegenerateData(format!(
            "{} losses given, at least {MIN_LOSSES} are required",
            data.n_losses()
        )));
    }
    let s = data.stats();
    let (gamma, converged, iterations) = match kind {
        ModelKind::Shifted | ModelKind::Naive => (fit_closed_form(kind, &s)?, true, 0),
        ModelKind::Unbiased => {
            let start = fit_closed_form(ModelKind::Naive, &s)?;
            let obj = |x: [f64; 2]| -profile_unbiased(x, &s).0;
            let grad = |x: [f64; 2]| {
                let g = profile_gradient(x, &s);
                [-g[0], -g[1]]
            };
            let x0 = [start[0], start[1].ln()];
            let (x1, _, it1, _) = nelder_mead(&obj, x0, [0.25 * start[1], 0.25]);
            let (x2, _, it2, ok) = bfgs(&obj, &grad, x1);
            let g = profile_gradient(x2, &s);
            let gnorm = g[0].hypot(g[1]);
            let sigma = x2[1].exp();
            let (_, lambda) = profile_unbiased(x2, &s);
            let ok = ok && gnorm <= 1e-6 * s.j.max(1.0) && lambda.is_finite();
            ([x2[0], sigma, lambda], ok, it1 + it2)
        }
    };
    let severity = SeverityParams::new(gamma[0], gamma[1])?;
    let frequency = FrequencyParams::new(gamma[2])?;
    let (stderr, correlations) = fisher_information_stats(kind, gamma, &s)?;
    Ok(FitResult {
        model_kind: kind,
        threshold: data.threshold,
        severity,
        frequency,
        stderr,
        correlations,
        loglik: loglik_stats(kind, gamma, &s),
        converged,
        iterations,
    })
}

/// Standard errors and correlations from `Ĉ = I⁻¹`, with `I` the negative
/// central-difference Hessian of the log-likelihood at `gamma_hat`.
pub fn fisher_information(
    kind: ModelKind,
    gamma_hat: [f64; 3],
    data: &LossDataset,
) -> Result<([f64; 3], [[f64; 3]; 3])> {
    fisher_information_stats(kind, gamma_hat, &data.stats())
}

fn fisher_information_stats(kind: ModelKind, g: [f64; 3], s: &Stats) -> Result<([f64; 3], [[f64; 3]; 3])> {
    let f = |x: [f64; 3]| loglik_stats(kind, x, s);
    let h: Vec<f64> = g.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let f0 = f(g);
    let at = |d: [f64; 3]| f([g[0] + d[0], g[1] + d[1], g[2] + d[2]]);
    let mut info = Matrix3::zeros();
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = h[i];
        let mut em = [0.0; 3];
        em[i] = -h[i];
        info[(i, i)] = -(at(e) - 2.0 * f0 + at(em)) / (h[i] * h[i]);
        for j in 0..i {
            let mut pp = [0.0; 3];
            pp[i] = h[i];
            pp[j] = h[j];
            let mut pm = pp;
            pm[j] = -h[j];
            let mut mp = pp;
            mp[i] = -h[i];
            let mut mm = pm;
            mm[i] = -h[i];
            let v = -(at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h[i] * h[j]);
            info[(i, j)] = v;
            info[(j, i)] = v;
        }
    }
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: f64::NAN,
        });
    }
    let eig = SymmetricEigen::new(info);
    let trace = info.trace();
    let min_ev = eig.eigenvalues.min();
    if !(trace > 0.0) || min_ev < 1e-10 * trace {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min_ev });
    }
    let inv_diag = Matrix3::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let cov = eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let stderr = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()];
    let mut corr = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            corr[i][j] = if i == j {
                1.0
            } else {
                (cov[(i, j)] / (stderr[i] * stderr[j])).clamp(-1.0, 1.0)
            };
        }
    }
    Ok((stderr, corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::lognormal_ln_pdf;
    use crate::dist::poisson_ln_pmf;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic(mu: f64, sigma: f64, lambda: f64, threshold: f64, years: usize, seed: u64) -> LossDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LossDataset::simulate(&SeverityParams::new(mu, sigma).unwrap(), lambda, threshold, years, &mut rng)
            .unwrap()
    }

    fn brute_loglik(kind: ModelKind, g: [f64; 3], d: &LossDataset) -> f64 {
        let p = SeverityParams::new(g[0], g[1]).unwrap();
        let l = d.threshold;
        let sf = crate::dist::lognormal_sf(l, &p);
        let sev: f64 = d
            .severities
            .iter()
            .map(|&x| match kind {
                ModelKind::Naive => lognormal_ln_pdf(x, &p),
                ModelKind::Shifted => lognormal_ln_pdf(x - l, &p),
                ModelKind::Unbiased => lognormal_ln_pdf(x, &p) - sf.ln(),
            })
            .sum();
        let rate = if kind == ModelKind::Unbiased { g[2] * sf } else { g[2] };
        sev + d.annual_counts.iter().map(|&n| poisson_ln_pmf(n, rate)).sum::<f64>()
    }

    #[test]
    fn summary_statistics_reproduce_the_direct_sum() {
        let d = synthetic(3.0, 2.0, 20.0, 8.0, 4, 11);
        for kind in ModelKind::ALL {
            for g in [[3.0, 2.0, 20.0], [2.5, 1.7, 31.0], [4.0, 2.5, 9.0]] {
                assert_relative_eq!(loglik(kind, g, &d), brute_loglik(kind, g, &d), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_threshold_reduces_to_plain_model() {
        let d = synthetic(1.0, 0.8, 30.0, 0.0, 3, 5);
        let g = [0.9, 0.7, 28.0];
        assert_relative_eq!(
            loglik_unbiased(g, &d),
            loglik(ModelKind::Naive, g, &d),
            max_relative = 1e-14
        );
    }

    #[test]
    fn single_loss_at_the_median() {
        let mu: f64 = 2.0;
        let sigma: f64 = 0.5;
        let d = LossDataset::new(0.0, vec![1], vec![mu.exp()]).unwrap();
        let sev = -mu - (2.0 * PI * sigma * sigma).sqrt().ln();
        let pois = poisson_ln_pmf(1, 1.3);
        assert_relative_eq!(loglik_unbiased([mu, sigma, 1.3], &d), sev + pois, max_relative = 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let d = synthetic(3.0, 2.0, 20.0, 10.0, 6, 3);
        let g = [2.7, 2.2, 24.0];
        let an = loglik_unbiased_gradient(g, &d).unwrap();
        for i in 0..3 {
            let h = 1e-5 * g[i].abs().max(1.0);
            let mut a = g;
            let mut b = g;
            a[i] += h;
            b[i] -= h;
            let fd = (loglik_unbiased(a, &d) - loglik_unbiased(b, &d)) / (2.0 * h);
            assert_relative_eq!(an[i], fd, max_relative = 1e-4);
        }
    }

    #[test]
    fn invalid_region_is_negative_infinity() {
        let d = synthetic(3.0, 2.0, 20.0, 10.0, 2, 1);
        assert_eq!(loglik_unbiased([3.0, -1.0, 20.0], &d), f64::NEG_INFINITY);
        assert_eq!(loglik_unbiased([3.0, 1.0, 0.0], &d), f64::NEG_INFINITY);
    }

    #[test]
    fn shifted_equals_naive_without_threshold() {
        let d = synthetic(3.0, 2.0, 20.0, 0.0, 4, 9);
        let a = fit(ModelKind::Shifted, &d).unwrap();
        let b = fit(ModelKind::Naive, &d).unwrap();
        assert_eq!(a.severity, b.severity);
        assert_eq!(a.frequency, b.frequency);
    }

    #[test]
    fn reported_intensity_is_count_per_year() {
        let sev: Vec<f64> = (0..62).map(|i| 10.5 + i as f64).collect();
        let d = LossDataset::new(10.0, vec![14, 17, 15, 16], sev).unwrap();
        for kind in [ModelKind::Shifted, ModelKind::Naive] {
            assert_relative_eq!(fit(kind, &d).unwrap().frequency.lambda, 15.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn naive_errors_match_textbook_information() {
        let d = synthetic(3.0, 2.0, 20.0, 5.0, 10, 21);
        let f = fit(ModelKind::Naive, &d).unwrap();
        let j = d.n_losses() as f64;
        let m = d.n_years() as f64;
        let s = f.severity.sigma;
        assert_relative_eq!(f.stderr[0], s / j.sqrt(), max_relative = 1e-3);
        assert_relative_eq!(f.stderr[1], s / (2.0 * j).sqrt(), max_relative = 1e-3);
        assert_relative_eq!(f.stderr[2], (f.frequency.lambda / m).sqrt(), max_relative = 1e-3);
        for kind in [ModelKind::Naive, ModelKind::Shifted] {
            let f = fit(kind, &d).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    if i != k {
                        assert!(f.correlations[i][k].abs() < 1e-6, "{kind} rho[{i}][{k}] = {}", f.correlations[i][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn unbiased_fit_is_a_stationary_maximum() {
        let d = synthetic(3.0, 2.0, 20.0, 2.6, 4, 8);
        let f = fit(ModelKind::Unbiased, &d).unwrap();
        assert!(f.converged);
        let g = loglik_unbiased_gradient(f.gamma(), &d).unwrap();
        for (gi, gam) in g.iter().zip(f.gamma()) {
            assert!(gi.abs() * gam.abs().max(1.0) < 1e-4, "gradient {g:?}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let mut p = f.gamma();
            for v in p.iter_mut() {
                *v *= 1.0 + rng.random_range(-0.1..0.1);
            }
            assert!(loglik_unbiased(p, &d) <= f.loglik);
        }
    }

    #[test]
    fn unbiased_correlation_signs() {
        // Large sample so the signs are not sampling noise.
        let d = synthetic(3.0, 2.0, 500.0, 2.6, 4, 12);
        let f = fit(ModelKind::Unbiased, &d).unwrap();
        let r = f.correlations;
        assert!(r[0][1] < 0.0 && r[0][2] < 0.0 && r[1][2] > 0.0, "{r:?}");
    }

    #[test]
    fn degenerate_and_small_samples_are_rejected() {
        let same = LossDataset::new(1.0, vec![6], vec![2.0; 6]).unwrap();
        for kind in ModelKind::ALL {
            assert!(matches!(fit(kind, &same), Err(Error::DegenerateData(_))));
        }
        let few = LossDataset::new(1.0, vec![4], vec![2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(matches!(fit(ModelKind::Naive, &few), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn csv_rows_are_checked() {
        let ok = "year,loss\n2001,12.5\n2001,30\n2003,11\n";
        let d = LossDataset::from_csv_reader(ok.as_bytes(), 10.0, None).unwrap();
        assert_eq!(d.annual_counts, vec![2, 0, 1]);
        let d = LossDataset::from_csv_reader(ok.as_bytes(), 10.0, Some(5)).unwrap();
        assert_eq!(d.annual_counts.len(), 5);
        let below = "year,loss\n2001,12.5\n2002,9.5\n";
        match LossDataset::from_csv_reader(below.as_bytes(), 10.0, None) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let d = synthetic(3.0, 2.0, 20.0, 1.5, 4, 4);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = LossDataset::from_csv_reader(buf.as_slice(), 1.5, Some(4)).unwrap();
        assert_eq!(back, d);
        let garbage = "year,loss\n2001,abc\n";
        assert!(matches!(
            LossDataset::from_csv_reader(garbage.as_bytes(), 10.0, None),
            Err(Error::Data { row: 2, .. })
        ));
    }

    #[test]
    fn rescaling_losses_shifts_mu_only() {
        let d = synthetic(3.0, 2.0, 20.0, 5.0, 8, 2);
        let c: f64 = 1.7;
        let scaled = LossDataset::new(
            d.threshold * c.exp(),
            d.annual_counts.clone(),
            d.severities.iter().map(|x| x * c.exp()).collect(),
        )
        .unwrap();
        for kind in ModelKind::ALL {
            let a = fit(kind, &d).unwrap();
            let b = fit(kind, &scaled).unwrap();
            let tol = if kind == ModelKind::Unbiased { 1e-6 } else { 1e-12 };
            assert!((b.severity.mu - a.severity.mu - c).abs() < tol, "{kind}");
            assert!((b.severity.sigma - a.severity.sigma).abs() < tol, "{kind}");
        }
    }
}
