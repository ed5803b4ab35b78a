use super::{check_level, CompoundModel, Engine, QuantileReport};
use crate::error::Result;
use crate::special::norm_quantile;

/// Normal approximation `μ_Z + z_level·σ_Z` with `μ_Z = λE[X]`, `σ_Z² = λE[X²]`.
pub fn clt_quantile(level: f64, model: &CompoundModel) -> Result<QuantileReport> {
    check_level(level)?;
    let (mean, sd) = model.annual_moments()?;
    let value = (mean + norm_quantile(level) * sd).max(0.0);
    Ok(QuantileReport::new(level, value, Engine::Clt, 0.0)
        .with("mean", mean)
        .with("sd", sd))
}
