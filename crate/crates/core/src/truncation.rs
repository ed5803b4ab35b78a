//! Large-sample parameter maps from the true severity law to the parameters a
//! "shifted" or "naive" fit converges to, the frequency adjustment, and the
//! standard-normal diagnostics that decide when the naive fit under-states
//! the severity tail.

use crate::dist::{
    lognormal_ln_pdf, lognormal_sf, FrequencyParams, SeverityParams, TruncationSpec, DEGENERATE_EPS,
};
use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::special::{norm_hazard, norm_pdf, norm_quantile, norm_sf};

/// Which simplified fit a parameter map describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Shifted,
    Naive,
}

/// Parameters a simplified fit converges to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMapResult {
    pub mapped: SeverityParams,
    pub kind: MapKind,
    pub truncation: TruncationSpec,
    /// Relative integration error; zero for closed forms.
    pub quad_error: f64,
}

/// Standard-normal quantities at the standardised threshold `t = (ln L − μ)/σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasDiagnostics {
    pub t: f64,
    /// Hazard `f_N(t) / (1 − F_N(t))`.
    pub a: f64,
    /// `A(t) − t`; positive exactly when the naive fit shrinks σ.
    pub b: f64,
    /// `σ_U / σ = √(1 + A(t)(t − A(t)))`.
    pub sigma_ratio: f64,
    /// `(α, C(t, α))`; the naive fit under-states the α severity quantile iff `C < 0`.
    pub c_at_alpha: Vec<(f64, f64)>,
}

impl BiasDiagnostics {
    pub fn c(&self, alpha: f64) -> Option<f64> {
        self.c_at_alpha
            .iter()
            .find(|(a, _)| *a == alpha)
            .map(|&(_, c)| c)
    }
}

fn check_truncation(trunc: &TruncationSpec) -> Result<()> {
    let frac = trunc.fraction();
    if !(0.0..1.0 - DEGENERATE_EPS).contains(&frac) {
        return Err(Error::DegenerateTruncation { fraction: frac });
    }
    Ok(())
}

/// True intensity from the intensity of reported losses: `λ = θ / (1 − F(L))`.
pub fn adjust_lambda(
    theta: &FrequencyParams,
    trunc: &TruncationSpec,
    p: &SeverityParams,
) -> Result<FrequencyParams> {
    check_truncation(trunc)?;
    if trunc.level == 0.0 {
        return Ok(*theta);
    }
    let s = lognormal_sf(trunc.level, p);
    if s <= DEGENERATE_EPS {
        return Err(Error::DegenerateTruncation { fraction: 1.0 - s });
    }
    FrequencyParams::new(theta.lambda / s)
}

const SHIFTED_REL_TOL: f64 = 1e-9;

/// Mean and standard deviation of `ln(X − L)` for `X` truncated below `L`.
///
/// Integrated in `y = ln(x − L)`, which turns the logarithmic endpoint
/// behaviour at `x = L` into an exponentially decaying left tail.
pub fn shifted_params(p: &SeverityParams, trunc: &TruncationSpec) -> Result<ModelMapResult> {
    p.validate()?;
    check_truncation(trunc)?;
    let l = trunc.level;
    if l == 0.0 {
        return Ok(ModelMapResult {
            mapped: *p,
            kind: MapKind::Shifted,
            truncation: *trunc,
            quad_error: 0.0,
        });
    }
    let ln_s = lognormal_sf(l, p).ln();
    let density = |y: f64| -> f64 {
        let x = l + y.exp();
        (lognormal_ln_pdf(x, p) + y - ln_s).exp()
    };
    // Split at the kink where x − L ≈ L and at the bulk of the untruncated law.
    let hi = p.mu + 14.0 * p.sigma;
    let lo = l.ln().min(p.mu - 14.0 * p.sigma) - 45.0;
    let mut cuts = vec![lo, l.ln() - 10.0, l.ln(), p.mu, hi];
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let piecewise = |f: &dyn Fn(f64) -> f64| -> (f64, f64) {
        cuts.windows(2).fold((0.0, 0.0), |(v, e), w| {
            let r = integrate(f, w[0], w[1], 1e-15, 1e-13, 2000);
            (v + r.value, e + r.error)
        })
    };
    let (mass, e0) = piecewise(&|y| density(y));
    let (m1, e1) = piecewise(&|y| y * density(y));
    let mu_s = m1 / mass;
    let (m2, e2) = piecewise(&|y| (y - mu_s).powi(2) * density(y));
    let var = m2 / mass;
    if !(var > 0.0) {
        return Err(Error::Accuracy {
            what: "shifted-model variance is not positive".into(),
            estimate: var,
            tolerance: 0.0,
        });
    }
    let rel = (e0 / mass)
        .max(e1 / m1.abs().max(mass))
        .max(e2 / m2)
        .max((mass - 1.0).abs());
    if rel > SHIFTED_REL_TOL {
        return Err(Error::Accuracy {
            what: "shifted-model parameter integrals".into(),
            estimate: rel,
            tolerance: SHIFTED_REL_TOL,
        });
    }
    Ok(ModelMapResult {
        mapped: SeverityParams::new(mu_s, var.sqrt())?,
        kind: MapKind::Shifted,
        truncation: *trunc,
        quad_error: rel,
    })
}

/// Naive-fit limits `μ_U = μ + σA(t)`, `σ_U² = (μ_U − μ)(ln L − μ_U) + σ²`.
pub fn naive_params(p: &SeverityParams, trunc: &TruncationSpec) -> Result<ModelMapResult> {
    p.validate()?;
    check_truncation(trunc)?;
    let mapped = if trunc.level == 0.0 {
        *p
    } else {
        let ln_l = trunc.level.ln();
        let t = (ln_l - p.mu) / p.sigma;
        let mu_u = norm_hazard(t) * p.sigma + p.mu;
        let var = (mu_u - p.mu) * (ln_l - mu_u) + p.sigma * p.sigma;
        if !(var > 0.0) {
            return Err(Error::Domain(format!("naive-model variance {var} is not positive")));
        }
        SeverityParams::new(mu_u, var.sqrt())?
    };
    Ok(ModelMapResult {
        mapped,
        kind: MapKind::Naive,
        truncation: *trunc,
        quad_error: 0.0,
    })
}

/// The same limits written with the truncated mass and Gaussian factor kept apart
/// (before the hazard simplification). Kept as a cross-check of [`naive_params`].
pub fn naive_params_expanded(p: &SeverityParams, trunc: &TruncationSpec) -> Result<(f64, f64)> {
    p.validate()?;
    check_truncation(trunc)?;
    if trunc.level == 0.0 {
        return Ok((p.mu, p.sigma));
    }
    let ln_l = trunc.level.ln();
    let z = (ln_l - p.mu) / p.sigma;
    let k = p.sigma / (norm_sf(z) * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * z * z).exp();
    let mu_u = k + p.mu;
    let var = k * (ln_l + p.mu) + p.sigma * p.sigma + p.mu * p.mu - mu_u * mu_u;
    Ok((mu_u, var.max(0.0).sqrt()))
}

/// `A`, `B`, `σ_U/σ` and `C(t, α)` at a standardised threshold.
pub fn bias_diagnostics(t: f64, alphas: &[f64]) -> Result<BiasDiagnostics> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("t must be finite, got {t}")));
    }
    let a = norm_hazard(t);
    let b = a - t;
    let inner = 1.0 + a * (t - a);
    if inner < -1e-12 {
        return Err(Error::Domain(format!("1 + A(t)(t − A(t)) = {inner} < 0 at t = {t}")));
    }
    let sigma_ratio = inner.max(0.0).sqrt();
    let mut c_at_alpha = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(Error::Domain(format!("confidence level must lie in (0.5, 1), got {alpha}")));
        }
        c_at_alpha.push((alpha, a / norm_quantile(alpha) + sigma_ratio - 1.0));
    }
    Ok(BiasDiagnostics {
        t,
        a,
        b,
        sigma_ratio,
        c_at_alpha,
    })
}

/// Whether the naive fit under-states the α quantile of the severity, i.e. `C(t, α) < 0`.
pub fn severity_quantile_underestimated(
    p: &SeverityParams,
    trunc: &TruncationSpec,
    alpha: f64,
) -> Result<bool> {
    p.validate()?;
    check_truncation(trunc)?;
    if trunc.level == 0.0 {
        // No truncation: the fit is exact, so nothing is under-stated.
        return Ok(false);
    }
    let t = p.standardize(trunc.level);
    let d = bias_diagnostics(t, &[alpha])?;
    Ok(d.c_at_alpha[0].1 < 0.0)
}

/// Truncated fraction (percent) at which `C(t, α)` changes sign, by bisection on
/// `Ψ ∈ [0.1, 99.9]` to `resolution` percentage points.
pub fn c_crossing_psi(alpha: f64, resolution: f64) -> Result<f64> {
    let c_of = |psi: f64| -> Result<f64> {
        let t = norm_quantile(psi / 100.0);
        Ok(bias_diagnostics(t, &[alpha])?.c_at_alpha[0].1)
    };
    let (mut lo, mut hi) = (0.1, 99.9);
    let (c_lo, c_hi) = (c_of(lo)?, c_of(hi)?);
    if (c_lo < 0.0) == (c_hi < 0.0) {
        return Err(Error::BracketFailure {
            level: alpha,
            expansions: 0,
        });
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if (c_of(mid)? < 0.0) == (c_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `B(t)` on an arithmetic grid; used for the positivity check over `[−6, 6]`.
pub fn b_curve(t_lo: f64, t_hi: f64, step: f64) -> Vec<(f64, f64)> {
    let n = ((t_hi - t_lo) / step).round() as usize;
    (0..=n)
        .map(|i| {
            let t = t_lo + i as f64 * step;
            (t, norm_hazard(t) - t)
        })
        .collect()
}

/// Density of the standard normal at `t` divided by its upper tail, computed directly.
/// Exposed for cross-checks of the continued-fraction branch.
pub fn hazard_direct(t: f64) -> f64 {
    norm_pdf(t) / norm_sf(t)
}
