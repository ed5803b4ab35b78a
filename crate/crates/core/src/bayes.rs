//! Parameter uncertainty: a Normal approximation to the posterior around the
//! maximum-likelihood point, and the predictive annual-loss quantile obtained
//! by drawing parameters and then one annual loss per draw.

use crate::compound::{quantile_cf, quantile_mc, CfGrid, CompoundModel};
use crate::dist::{FrequencyParams, SeverityKind, SeverityParams};
use crate::error::{Error, Result};
use crate::fitting::{covariance_from, fit, FitResult, LossDataset, ModelKind};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

/// Draws per random stream; fixed so results do not depend on the thread count.
const PARTITION: usize = 1 << 16;
/// Consecutive rejections of a single draw that abort the run.
const MAX_ATTEMPTS_PER_DRAW: u64 = 1000;

/// Multivariate Normal approximation `N(γ̂, Ĉ)` to the posterior of `(μ, σ, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorApprox {
    pub model_kind: ModelKind,
    /// Reporting threshold; enters the shifted model as its shift.
    pub threshold: f64,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

impl PosteriorApprox {
    /// Annual-loss model at parameters `gamma`.
    pub fn model_at(&self, gamma: [f64; 3]) -> Result<CompoundModel> {
        model_for(self.model_kind, self.threshold, gamma)
    }

    /// Standard deviations and correlations recovered from the covariance.
    pub fn stderr_and_correlations(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        let c = &self.covariance;
        let sd = [c[0][0].sqrt(), c[1][1].sqrt(), c[2][2].sqrt()];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = if i == j {
                    1.0
                } else if sd[i] > 0.0 && sd[j] > 0.0 {
                    c[i][j] / (sd[i] * sd[j])
                } else {
                    0.0
                };
            }
        }
        (sd, r)
    }

    /// Symmetric square root `A` with `A Aᵀ = Ĉ`; eigenvalues below `1e-12·trace` are set to zero.
    fn factor(&self) -> Matrix3<f64> {
        let c = Matrix3::from_fn(|i, j| self.covariance[i][j]);
        let trace = c.trace();
        if trace <= 0.0 {
            return Matrix3::zeros();
        }
        let eig = SymmetricEigen::new(c);
        let root = eig
            .eigenvalues
            .map(|v| if v < 1e-12 * trace { 0.0 } else { v.sqrt() });
        eig.eigenvectors * Matrix3::from_diagonal(&root)
    }
}

/// Severity and frequency laws a fitted model uses for its annual loss.
///
/// The unbiased model's intensity counts all losses; its annual loss is the
/// plain Lognormal compound. The shifted model's severity is shifted by the threshold.
pub fn model_for(kind: ModelKind, threshold: f64, [mu, sigma, lambda]: [f64; 3]) -> Result<CompoundModel> {
    let sev = match kind {
        ModelKind::Shifted if threshold > 0.0 => SeverityKind::ShiftedBy(threshold),
        _ => SeverityKind::Plain,
    };
    CompoundModel::new(sev, SeverityParams::new(mu, sigma)?, FrequencyParams::new(lambda)?)
}

/// Normal posterior approximation from a converged fit, non-informative prior.
pub fn posterior_approx(fit: &FitResult) -> Result<PosteriorApprox> {
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "{} fit did not converge; its curvature does not describe a posterior",
            fit.model_kind
        )));
    }
    let covariance = covariance_from(&fit.stderr, &fit.correlations);
    let c = Matrix3::from_fn(|i, j| covariance[i][j]);
    let min_ev = SymmetricEigen::new(c).eigenvalues.min();
    if min_ev < -1e-8 * c.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min_ev });
    }
    Ok(PosteriorApprox {
        model_kind: fit.model_kind,
        threshold: fit.threshold,
        mean: fit.gamma(),
        covariance,
    })
}

/// Quantile with and without parameter uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveReport {
    pub level: f64,
    /// Quantile at the posterior mean.
    pub q_hat: f64,
    /// Quantile of the predictive annual loss.
    pub q_hathat: f64,
    /// `(q_hathat − q_hat) / q_hat`.
    pub delta: f64,
    pub k: usize,
    pub rejected_draws: u64,
    /// One-sigma Monte Carlo error of `q_hathat` from order-statistic spread.
    pub mc_stderr: f64,
}

/// Predictive quantile by nested simulation: per draw, parameters from the
/// posterior (redrawn while `σ ≤ 0` or `λ ≤ 0`), then one annual loss.
pub fn predictive_quantile(post: &PosteriorApprox, level: f64, k: usize, seed: u64) -> Result<PredictiveReport> {
    let q_hat = quantile_cf(level, &post.model_at(post.mean)?, &CfGrid::default())?.value;
    let a = post.factor();
    let mean = Vector3::from(post.mean);
    let mut sample = vec![0.0; k];
    let per_part: Vec<Result<u64>> = sample
        .par_chunks_mut(PARTITION)
        .enumerate()
        .map(|(part, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(part as u64);
            let mut rejected = 0u64;
            for slot in chunk.iter_mut() {
                let mut attempts = 0;
                let gamma = loop {
                    let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                    let g = mean + a * z;
                    if g[1] > 0.0 && g[2] > 0.0 && g.iter().all(|v| v.is_finite()) {
                        break g;
                    }
                    rejected += 1;
                    attempts += 1;
                    if attempts >= MAX_ATTEMPTS_PER_DRAW {
                        return Err(Error::RejectionRate {
                            rejected: attempts,
                            attempted: attempts,
                        });
                    }
                };
                let model = post.model_at([gamma[0], gamma[1], gamma[2]])?;
                let n = Poisson::new(gamma[2])
                    .map_err(|e| Error::InvalidParameter(format!("Poisson intensity: {e}")))?
                    .sample(&mut rng) as u64;
                let mut z = 0.0;
                for _ in 0..n {
                    z += model.sample_severity(&mut rng);
                }
                *slot = z;
            }
            Ok(rejected)
        })
        .collect();
    let mut rejected = 0;
    for r in per_part {
        rejected += r?;
    }
    let attempted = rejected + k as u64;
    if 2 * rejected > attempted {
        return Err(Error::RejectionRate { rejected, attempted });
    }
    let mc = quantile_mc(&sample, level)?;
    let q_hathat = mc.value;
    Ok(PredictiveReport {
        level,
        q_hat,
        q_hathat,
        delta: (q_hathat - q_hat) / q_hat,
        k,
        rejected_draws: rejected,
        mc_stderr: mc.err_estimate / 3.0,
    })
}

/// One fitted model inside a three-way comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison {
    pub fit: FitResult,
    pub report: PredictiveReport,
}

/// Unbiased, shifted and naive models side by side on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyComparison {
    pub unbiased: ModelComparison,
    pub shifted: ModelComparison,
    pub naive: ModelComparison,
    /// `q̂(naive) < q̂(unbiased) < q̂(shifted)`.
    pub point_ordering: bool,
    /// `q̂̂(naive) < q̂̂(shifted) < q̂̂(unbiased)`.
    pub predictive_ordering: bool,
}

impl UncertaintyComparison {
    pub fn rows(&self) -> [&ModelComparison; 3] {
        [&self.unbiased, &self.shifted, &self.naive]
    }
}

/// Fits all three models and reports `(q̂, q̂̂, Δ)` for each.
///
/// The three predictive runs use the same seed, so their parameter and loss
/// draws share random streams.
pub fn uncertainty_comparison(data: &LossDataset, level: f64, k: usize, seed: u64) -> Result<UncertaintyComparison> {
    let run = |kind: ModelKind| -> Result<ModelComparison> {
        let f = fit(kind, data)?;
        let post = posterior_approx(&f)?;
        let report = predictive_quantile(&post, level, k, seed)?;
        Ok(ModelComparison { fit: f, report })
    };
    let unbiased = run(ModelKind::Unbiased)?;
    let shifted = run(ModelKind::Shifted)?;
    let naive = run(ModelKind::Naive)?;
    let (u, s, n) = (&unbiased.report, &shifted.report, &naive.report);
    Ok(UncertaintyComparison {
        point_ordering: n.q_hat < u.q_hat && u.q_hat < s.q_hat,
        predictive_ordering: n.q_hathat < s.q_hathat && s.q_hathat < u.q_hathat,
        unbiased,
        shifted,
        naive,
    })
}
