//! Annual loss `Z = X₁ + … + X_N`, `N ~ Poisson(λ)`, and the engines that
//! evaluate its distribution: characteristic-function inversion, Monte Carlo,
//! Panjer recursion and the central-limit approximation.

mod cf;
mod clt;
mod mc;
mod panjer;

pub use cf::{
    compound_cdf_cf, compound_cf, quantile_cf, quantile_from_inversion, severity_cf, severity_cf_with,
    CfGrid, CfInversion,
};
pub use clt::clt_quantile;
pub use mc::{
    quantile_mc, simulate_annual_losses, simulate_annual_losses_with, McConfig, DEFAULT_DRAW_BUDGET,
};
pub use panjer::{panjer_quantile, panjer_quantile_auto};

use crate::dist::{
    lognormal_moments, lognormal_quantile, lognormal_sf, FrequencyParams, SeverityKind,
    SeverityParams, DEGENERATE_EPS,
};
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_sf};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::fmt;

/// Severity law × Poisson intensity: the object every engine evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundModel {
    pub severity_kind: SeverityKind,
    pub severity: SeverityParams,
    pub frequency: FrequencyParams,
}

impl CompoundModel {
    pub fn new(
        severity_kind: SeverityKind,
        severity: SeverityParams,
        frequency: FrequencyParams,
    ) -> Result<Self> {
        let m = Self {
            severity_kind,
            severity,
            frequency,
        };
        m.validate()?;
        Ok(m)
    }

    /// Plain Lognormal severity with Poisson(λ) frequency.
    pub fn plain(mu: f64, sigma: f64, lambda: f64) -> Result<Self> {
        Self::new(
            SeverityKind::Plain,
            SeverityParams::new(mu, sigma)?,
            FrequencyParams::new(lambda)?,
        )
    }

    /// Lognormal shifted right by `shift`.
    pub fn shifted(mu: f64, sigma: f64, lambda: f64, shift: f64) -> Result<Self> {
        Self::new(
            SeverityKind::ShiftedBy(shift),
            SeverityParams::new(mu, sigma)?,
            FrequencyParams::new(lambda)?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.severity.validate()?;
        FrequencyParams::new(self.frequency.lambda)?;
        self.severity_kind.validate()?;
        if let SeverityKind::TruncatedAt(l) = self.severity_kind {
            let s = lognormal_sf(l, &self.severity);
            if s <= DEGENERATE_EPS {
                return Err(Error::DegenerateTruncation { fraction: 1.0 - s });
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.frequency.lambda
    }

    /// Probability of the atom at zero, `P(N = 0) = e^{−λ}`.
    pub fn zero_mass(&self) -> f64 {
        (-self.lambda()).exp()
    }

    /// Severity CDF of the model's severity law.
    pub fn severity_cdf(&self, x: f64) -> f64 {
        let p = &self.severity;
        match self.severity_kind {
            SeverityKind::Plain => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf(p.standardize(x))
                }
            }
            SeverityKind::ShiftedBy(l) => {
                if x <= l {
                    0.0
                } else {
                    norm_cdf(p.standardize(x - l))
                }
            }
            SeverityKind::TruncatedAt(l) => {
                if x <= l {
                    0.0
                } else {
                    let s_l = lognormal_sf(l, p);
                    let s_x = lognormal_sf(x, p);
                    ((s_l - s_x) / s_l).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Severity survival function `1 − F(x)`.
    pub fn severity_sf(&self, x: f64) -> f64 {
        let p = &self.severity;
        match self.severity_kind {
            SeverityKind::Plain => lognormal_sf(x, p),
            SeverityKind::ShiftedBy(l) => {
                if x <= l {
                    1.0
                } else {
                    lognormal_sf(x - l, p)
                }
            }
            SeverityKind::TruncatedAt(l) => {
                if x <= l {
                    1.0
                } else {
                    lognormal_sf(x, p) / lognormal_sf(l, p)
                }
            }
        }
    }

    /// Severity quantile of the model's severity law.
    pub fn severity_quantile(&self, q: f64) -> Result<f64> {
        let p = &self.severity;
        match self.severity_kind {
            SeverityKind::Plain => lognormal_quantile(q, p),
            SeverityKind::ShiftedBy(l) => Ok(l + lognormal_quantile(q, p)?),
            SeverityKind::TruncatedAt(l) => {
                let f_l = 1.0 - lognormal_sf(l, p);
                lognormal_quantile(f_l + q * (1.0 - f_l), p)
            }
        }
    }

    /// `(E[X], E[X²])` of the severity law.
    pub fn severity_raw_moments(&self) -> Result<(f64, f64)> {
        let p = &self.severity;
        let (m, v) = lognormal_moments(p)?;
        Ok(match self.severity_kind {
            SeverityKind::Plain => (m, v + m * m),
            SeverityKind::ShiftedBy(l) => {
                let mean = m + l;
                (mean, v + mean * mean)
            }
            SeverityKind::TruncatedAt(l) => {
                if l <= 0.0 {
                    (m, v + m * m)
                } else {
                    let t = p.standardize(l);
                    let s = norm_sf(t);
                    let s2 = p.sigma * p.sigma;
                    let m1 = m * norm_sf(t - p.sigma) / s;
                    let m2 = (2.0 * p.mu + 2.0 * s2).exp() * norm_sf(t - 2.0 * p.sigma) / s;
                    (m1, m2)
                }
            }
        })
    }

    /// Mean and standard deviation of the annual loss (compound Poisson moments).
    pub fn annual_moments(&self) -> Result<(f64, f64)> {
        let (m1, m2) = self.severity_raw_moments()?;
        let lam = self.lambda();
        Ok((lam * m1, (lam * m2).sqrt()))
    }

    /// One severity draw.
    pub fn sample_severity<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = &self.severity;
        match self.severity_kind {
            SeverityKind::Plain => {
                let z: f64 = StandardNormal.sample(rng);
                (p.mu + p.sigma * z).exp()
            }
            SeverityKind::ShiftedBy(l) => {
                let z: f64 = StandardNormal.sample(rng);
                l + (p.mu + p.sigma * z).exp()
            }
            SeverityKind::TruncatedAt(l) => {
                // Inverse transform restricted to the upper tail, sampled on the survival scale.
                let s_l = lognormal_sf(l, p);
                let u: f64 = rng.random::<f64>();
                let s = (1.0 - u) * s_l;
                let z = -crate::special::norm_quantile(s.max(f64::MIN_POSITIVE));
                (p.mu + p.sigma * z).exp().max(l)
            }
        }
    }
}

/// Which engine produced a quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Cf,
    Mc,
    Panjer,
    Clt,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Cf => "cf",
            Engine::Mc => "mc",
            Engine::Panjer => "panjer",
            Engine::Clt => "clt",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" => Ok(Engine::Cf),
            "mc" => Ok(Engine::Mc),
            "panjer" => Ok(Engine::Panjer),
            "clt" => Ok(Engine::Clt),
            other => Err(Error::InvalidParameter(format!("unknown engine '{other}'"))),
        }
    }
}

/// A quantile of the annual loss together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileReport {
    pub level: f64,
    pub value: f64,
    pub engine: Engine,
    /// Half-width of the numerical or statistical uncertainty in `value`.
    pub err_estimate: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl QuantileReport {
    pub(crate) fn new(level: f64, value: f64, engine: Engine, err_estimate: f64) -> Self {
        Self {
            level,
            value,
            engine,
            err_estimate,
            diagnostics: BTreeMap::new(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

/// Settings for [`quantile`] beyond the engine choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub cf: CfGrid,
    pub mc_samples: usize,
    pub seed: u64,
    pub panjer_points: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            cf: CfGrid::default(),
            mc_samples: 1_000_000,
            seed: 1,
            panjer_points: 1 << 14,
        }
    }
}

/// Annual-loss quantile at `level` by `engine`.
pub fn quantile(engine: Engine, level: f64, model: &CompoundModel, opts: &EngineOptions) -> Result<QuantileReport> {
    match engine {
        Engine::Cf => quantile_cf(level, model, &opts.cf),
        Engine::Mc => {
            check_level(level)?;
            let sample = simulate_annual_losses(model, opts.mc_samples, opts.seed)?;
            quantile_mc(&sample, level)
        }
        Engine::Panjer => panjer_quantile_auto(level, model, opts.panjer_points),
        Engine::Clt => clt_quantile(level, model),
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level must be in (0, 1), got {level}")))
    }
}
