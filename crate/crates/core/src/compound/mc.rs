use super::{check_level, CompoundModel, Engine, QuantileReport};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

/// Default ceiling on expected severity draws per simulation.
pub const DEFAULT_DRAW_BUDGET: f64 = 1e10;

/// Monte Carlo controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Refuse runs whose expected severity draws `K·λ` exceed this.
    pub draw_budget: f64,
    /// Annual losses per random stream; fixed so output does not depend on thread count.
    pub partition_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draw_budget: DEFAULT_DRAW_BUDGET,
            partition_size: 1 << 16,
        }
    }
}

/// `k` independent annual losses, deterministic in `seed`.
pub fn simulate_annual_losses(model: &CompoundModel, k: usize, seed: u64) -> Result<Vec<f64>> {
    simulate_annual_losses_with(model, k, seed, &McConfig::default())
}

/// [`simulate_annual_losses`] with explicit budget and partitioning.
///
/// Partition `p` draws from ChaCha8 stream `p` keyed by `seed`, so partitions
/// run concurrently and concatenate to the same sample on any thread count.
pub fn simulate_annual_losses_with(
    model: &CompoundModel,
    k: usize,
    seed: u64,
    config: &McConfig,
) -> Result<Vec<f64>> {
    model.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    if config.partition_size == 0 {
        return Err(Error::InvalidParameter("partition size must be >= 1".into()));
    }
    let requested = k as f64 * model.lambda();
    if requested > config.draw_budget {
        return Err(Error::DrawBudget {
            requested,
            budget: config.draw_budget,
        });
    }
    let poisson = Poisson::new(model.lambda())
        .map_err(|e| Error::InvalidParameter(format!("Poisson intensity: {e}")))?;
    let mut out = vec![0.0; k];
    out.par_chunks_mut(config.partition_size)
        .enumerate()
        .for_each(|(part, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(part as u64);
            for slot in chunk.iter_mut() {
                let n = poisson.sample(&mut rng) as u64;
                let mut z = 0.0;
                for _ in 0..n {
                    z += model.sample_severity(&mut rng);
                }
                *slot = z;
            }
        });
    Ok(out)
}

/// Empirical quantile: the order statistic of rank `⌈level·K⌉`.
///
/// `err_estimate` is the larger distance to the order statistics at ranks
/// `⌈level·K ± 3√(K·level·(1−level))⌉`.
pub fn quantile_mc(sample: &[f64], level: f64) -> Result<QuantileReport> {
    check_level(level)?;
    let k = sample.len();
    if k < 1000 {
        return Err(Error::Domain(format!("MC quantile needs at least 1000 draws, got {k}")));
    }
    let kf = k as f64;
    if level.min(1.0 - level) * kf < 10.0 {
        return Err(Error::Domain(format!(
            "fewer than 10 sample points beyond the {level} quantile (K = {k})"
        )));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("sample contains NaN".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    // Guard the product against representation error before taking the ceiling.
    let rank = |r: f64| ((r - 1e-9 * kf).ceil() as usize).clamp(1, k);
    let centre = level * kf;
    let spread = 3.0 * (kf * level * (1.0 - level)).sqrt();
    let r = rank(centre);
    let value = sorted[r - 1];
    let lo = sorted[rank(centre - spread) - 1];
    let hi = sorted[rank(centre + spread) - 1];
    let err = (value - lo).max(hi - value);
    Ok(QuantileReport::new(level, value, Engine::Mc, err)
        .with("sample_size", kf)
        .with("rank", r as f64)
        .with("interval_lo", lo)
        .with("interval_hi", hi))
}
