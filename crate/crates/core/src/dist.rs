//! Lognormal severity family (plain, left-truncated, shifted) and the Poisson
//! frequency law.

use crate::error::{Error, Result};
use crate::special::{ln_gamma, norm_cdf, norm_quantile, norm_sf};
use std::f64::consts::PI;

/// Truncated fractions at or above `1 - DEGENERATE_EPS` leave no usable support.
pub const DEGENERATE_EPS: f64 = 1e-14;

/// Lognormal `(μ, σ)` on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityParams {
    pub mu: f64,
    pub sigma: f64,
}

impl SeverityParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let p = Self { mu, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Standardised log-threshold `(ln x − μ)/σ`.
    pub fn standardize(&self, x: f64) -> f64 {
        (x.ln() - self.mu) / self.sigma
    }
}

/// Poisson intensity (events per year).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyParams {
    pub lambda: f64,
}

impl FrequencyParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

/// Reporting threshold `L` together with the fraction `Ψ` (percent) it removes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    pub level: f64,
    pub psi_percent: f64,
}

impl TruncationSpec {
    pub const NONE: TruncationSpec = TruncationSpec {
        level: 0.0,
        psi_percent: 0.0,
    };

    /// Threshold that removes `psi_percent` of the mass of `p`.
    pub fn from_psi(psi_percent: f64, p: &SeverityParams) -> Result<Self> {
        p.validate()?;
        if !(0.0..100.0).contains(&psi_percent) {
            return Err(Error::Domain(format!(
                "truncated fraction must lie in [0, 100) percent, got {psi_percent}"
            )));
        }
        let frac = psi_percent / 100.0;
        if frac >= 1.0 - DEGENERATE_EPS {
            return Err(Error::DegenerateTruncation { fraction: frac });
        }
        if psi_percent == 0.0 {
            return Ok(Self::NONE);
        }
        Ok(Self {
            level: lognormal_quantile(frac, p)?,
            psi_percent,
        })
    }

    /// Fraction removed by threshold `level` under `p`.
    pub fn from_level(level: f64, p: &SeverityParams) -> Result<Self> {
        let frac = lognormal_cdf(level, p)?;
        if frac >= 1.0 - DEGENERATE_EPS {
            return Err(Error::DegenerateTruncation { fraction: frac });
        }
        Ok(Self {
            level,
            psi_percent: 100.0 * frac,
        })
    }

    /// Truncated fraction as a probability.
    pub fn fraction(&self) -> f64 {
        self.psi_percent / 100.0
    }
}

/// Which member of the Lognormal family a severity law is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeverityKind {
    Plain,
    /// Left-truncated at `L`: support `[L, ∞)`, density renormalised.
    TruncatedAt(f64),
    /// Shifted by `L`: `X = L + Y`, `Y` plain Lognormal.
    ShiftedBy(f64),
}

impl SeverityKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SeverityKind::Plain => Ok(()),
            SeverityKind::TruncatedAt(l) | SeverityKind::ShiftedBy(l) => {
                if l.is_finite() && l >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "threshold must be finite and >= 0, got {l}"
                    )))
                }
            }
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            SeverityKind::Plain => 0.0,
            SeverityKind::TruncatedAt(l) | SeverityKind::ShiftedBy(l) => l,
        }
    }
}

/// Plain Lognormal density; zero for `x ≤ 0`.
pub fn lognormal_pdf(x: f64, p: &SeverityParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let z = (x.ln() - p.mu) / p.sigma;
    (-0.5 * z * z).exp() / (x * p.sigma * (2.0 * PI).sqrt())
}

/// Natural log of the plain Lognormal density; `-inf` for `x ≤ 0`.
pub fn lognormal_ln_pdf(x: f64, p: &SeverityParams) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    let z = (lx - p.mu) / p.sigma;
    -0.5 * z * z - lx - p.sigma.ln() - 0.5 * (2.0 * PI).ln()
}

/// `F(x | μ, σ) = Φ((ln x − μ)/σ)`.
pub fn lognormal_cdf(x: f64, p: &SeverityParams) -> Result<f64> {
    p.validate()?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("lognormal_cdf needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(norm_cdf(p.standardize(x)))
}

/// `1 − F(x | μ, σ)` computed from the upper tail.
pub fn lognormal_sf(x: f64, p: &SeverityParams) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        norm_sf(p.standardize(x))
    }
}

/// Inverse Lognormal CDF for `q ∈ (0, 1)`.
pub fn lognormal_quantile(q: f64, p: &SeverityParams) -> Result<f64> {
    p.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must be in (0, 1), got {q}")));
    }
    Ok((p.mu + p.sigma * norm_quantile(q)).exp())
}

/// Density of the Lognormal left-truncated at `l`.
pub fn truncated_lognormal_pdf(x: f64, p: &SeverityParams, l: f64) -> Result<f64> {
    p.validate()?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("truncation level must be >= 0, got {l}")));
    }
    let survive = lognormal_sf(l, p);
    if survive <= DEGENERATE_EPS {
        return Err(Error::DegenerateTruncation { fraction: 1.0 - survive });
    }
    if x < l {
        return Ok(0.0);
    }
    Ok(lognormal_pdf(x, p) / survive)
}

/// Density of `L + Y`, `Y ~ Lognormal(μ, σ)`.
pub fn shifted_lognormal_pdf(x: f64, p: &SeverityParams, l: f64) -> Result<f64> {
    p.validate()?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("shift must be >= 0, got {l}")));
    }
    if x <= l {
        return Ok(0.0);
    }
    Ok(lognormal_pdf(x - l, p))
}

/// `ln p(k | λ)`.
pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    let kf = k as f64;
    if k == 0 {
        return -lambda;
    }
    kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)
}

/// Poisson probability `λᵏ e^{−λ} / k!`, evaluated in log space.
pub fn poisson_pmf(k: i64, f: &FrequencyParams) -> Result<f64> {
    if k < 0 {
        return Err(Error::Domain(format!("poisson count must be >= 0, got {k}")));
    }
    FrequencyParams::new(f.lambda)?;
    Ok(poisson_ln_pmf(k as u64, f.lambda).exp())
}

/// Mean and variance of the plain Lognormal.
pub fn lognormal_moments(p: &SeverityParams) -> Result<(f64, f64)> {
    p.validate()?;
    let s2 = p.sigma * p.sigma;
    let mean = (p.mu + 0.5 * s2).exp();
    let variance = s2.exp_m1() * (2.0 * p.mu + s2).exp();
    if !mean.is_finite() || !variance.is_finite() {
        return Err(Error::Overflow(format!(
            "lognormal moments overflow for mu={}, sigma={}",
            p.mu, p.sigma
        )));
    }
    Ok((mean, variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use approx::assert_relative_eq;

    fn p(mu: f64, sigma: f64) -> SeverityParams {
        SeverityParams::new(mu, sigma).unwrap()
    }

    #[test]
    fn cdf_examples() {
        assert_relative_eq!(lognormal_cdf(3f64.exp(), &p(3.0, 2.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(lognormal_cdf(0.0, &p(-1.0, 0.3)).unwrap(), 0.0);
        assert!((lognormal_cdf(1.548, &p(3.0, 2.0)).unwrap() - 0.10).abs() < 5e-4);
        assert!(matches!(lognormal_cdf(-1.0, &p(0.0, 1.0)), Err(Error::Domain(_))));
        assert!(lognormal_cdf(1.0, &SeverityParams { mu: 0.0, sigma: 0.0 }).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_relative_eq!(
            lognormal_quantile(0.5, &p(3.0, 2.0)).unwrap(),
            3f64.exp(),
            max_relative = 1e-14
        );
        assert!((lognormal_quantile(0.10, &p(3.0, 2.0)).unwrap() - 1.548).abs() < 1e-3);
        assert!(lognormal_quantile(1.0, &p(0.0, 1.0)).is_err());
        assert!(lognormal_quantile(0.0, &p(0.0, 1.0)).is_err());
    }

    #[test]
    fn quantile_0999_against_bisection_oracle() {
        // Oracle: bisection on the erf-based CDF, independent of the rational approximation.
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_cdf(mid) < 0.999 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expected = (0.5 * (lo + hi)).exp();
        assert_relative_eq!(
            lognormal_quantile(0.999, &p(0.0, 1.0)).unwrap(),
            expected,
            max_relative = 1e-13
        );
        assert!((expected - 3.0902f64.exp()).abs() / expected < 1e-4);
    }

    #[test]
    fn truncated_pdf_examples() {
        let q = p(3.0, 2.0);
        for &x in &[0.1, 1.0, 20.0, 300.0] {
            assert_eq!(truncated_lognormal_pdf(x, &q, 0.0).unwrap(), lognormal_pdf(x, &q));
        }
        assert_eq!(truncated_lognormal_pdf(1.0, &q, 2.0).unwrap(), 0.0);
        let med = 3f64.exp();
        assert_relative_eq!(
            truncated_lognormal_pdf(med, &q, med).unwrap(),
            2.0 * lognormal_pdf(med, &q),
            max_relative = 1e-14
        );
        let deep = lognormal_quantile(1.0 - 1e-16, &q).unwrap_or(1e30);
        assert!(truncated_lognormal_pdf(deep * 10.0, &q, deep * 10.0).is_err());
    }

    #[test]
    fn shifted_pdf_normalises() {
        let q = p(3.0, 1.0);
        assert_eq!(shifted_lognormal_pdf(5.0, &q, 5.0).unwrap(), 0.0);
        assert_eq!(shifted_lognormal_pdf(7.0, &q, 0.0).unwrap(), lognormal_pdf(7.0, &q));
        // Oracle: adaptive quadrature over [L, ∞) with x = L + e^y.
        let r = integrate(
            |y| shifted_lognormal_pdf(5.0 + y.exp(), &q, 5.0).unwrap() * y.exp(),
            -30.0,
            20.0,
            1e-13,
            1e-13,
            2000,
        );
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn poisson_examples() {
        let f = FrequencyParams::new(0.01).unwrap();
        assert_relative_eq!(poisson_pmf(0, &f).unwrap(), (-0.01f64).exp(), max_relative = 1e-15);
        let one = FrequencyParams::new(1.0).unwrap();
        assert_relative_eq!(poisson_pmf(1, &one).unwrap(), (-1f64).exp(), max_relative = 1e-14);
        let twenty = FrequencyParams::new(20.0).unwrap();
        let total: f64 = (0..=200).map(|k| poisson_pmf(k, &twenty).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(poisson_pmf(-1, &one).is_err());
        let big = FrequencyParams::new(1e6).unwrap();
        let at_mode = poisson_pmf(1_000_000, &big).unwrap();
        assert_relative_eq!(at_mode, 1.0 / (2.0 * PI * 1e6).sqrt(), max_relative = 1e-5);
    }

    #[test]
    fn moments_examples() {
        let (m, v) = lognormal_moments(&p(0.0, 1e-8)).unwrap();
        assert_relative_eq!(m, 1.0, epsilon = 1e-12);
        assert!(v < 1e-15);
        let (m, _) = lognormal_moments(&p(3.0, 1.0)).unwrap();
        assert_relative_eq!(m, 3.5f64.exp(), max_relative = 1e-15);
        assert!(matches!(lognormal_moments(&p(0.0, 30.0)), Err(Error::Overflow(_))));
    }

    #[test]
    fn truncation_spec_round_trip() {
        for &sigma in &[1.0, 2.0] {
            let q = p(3.0, sigma);
            for &psi in &[1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0] {
                let t = TruncationSpec::from_psi(psi, &q).unwrap();
                let back = TruncationSpec::from_level(t.level, &q).unwrap();
                assert!((back.fraction() - t.fraction()).abs() < 1e-12);
            }
        }
        let none = TruncationSpec::from_psi(0.0, &p(3.0, 1.0)).unwrap();
        assert_eq!(none.level, 0.0);
        assert!(TruncationSpec::from_psi(100.0, &p(3.0, 1.0)).is_err());
    }
}
