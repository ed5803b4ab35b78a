use super::{check_level, CompoundModel, Engine, QuantileReport};
use crate::error::{Error, Result};

/// Quantile by Panjer's recursion on a mass-rounded severity grid.
///
/// Cell `j` carries `F((j+½)h) − F((j−½)h)`; the Poisson recursion
/// `g_n = (λ/n) Σ_{j≥1} j f_j g_{n−j}` runs in a rescaled representation so
/// `g_0 = e^{−λ(1−f_0)}` may underflow without losing the distribution.
pub fn panjer_quantile(
    level: f64,
    model: &CompoundModel,
    grid_step: f64,
    n_points: usize,
) -> Result<QuantileReport> {
    check_level(level)?;
    model.validate()?;
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid step must be > 0, got {grid_step}")));
    }
    if n_points == 0 {
        return Err(Error::InvalidParameter("n_points must be >= 1".into()));
    }
    let lambda = model.lambda();
    if lambda > 1e3 {
        return Err(Error::InvalidParameter(format!(
            "Panjer oracle limited to λ ≤ 1000, got {lambda}"
        )));
    }
    let h = grid_step;
    let p0 = model.zero_mass();
    if level <= p0 {
        return Ok(QuantileReport::new(level, 0.0, Engine::Panjer, 0.0).with("grid_step", h));
    }

    // Mass rounding; jf[j] = j·f_j.
    let mut jf = Vec::with_capacity(n_points + 1);
    let mut prev = model.severity_cdf(0.5 * h);
    let f0 = prev;
    jf.push(0.0);
    for j in 1..=n_points {
        let next = model.severity_cdf((j as f64 + 0.5) * h);
        jf.push(j as f64 * (next - prev).max(0.0));
        prev = next;
    }

    // True g_n = g[n]·exp(log_scale).
    let mut log_scale = -lambda * (1.0 - f0);
    let mut g = Vec::with_capacity(n_points + 1);
    g.push(1.0);
    let mut cum = 1.0;
    let reached = |cum: f64, log_scale: f64| (cum.ln() + log_scale) >= level.ln();
    if reached(cum, log_scale) {
        return Ok(report(level, 0.0, h, 0));
    }
    for n in 1..=n_points {
        let mut s = 0.0;
        for j in 1..=n {
            s += jf[j] * g[n - j];
        }
        let gn = lambda / n as f64 * s;
        g.push(gn);
        cum += gn;
        if cum > 1e250 {
            for v in g.iter_mut() {
                *v *= 1e-250;
            }
            cum *= 1e-250;
            log_scale += 250.0 * std::f64::consts::LN_10;
        }
        if reached(cum, log_scale) {
            return Ok(report(level, n as f64 * h, h, n));
        }
    }
    Err(Error::Resolution {
        level,
        n_points,
        step: h,
    })
}

fn report(level: f64, value: f64, h: f64, cells: usize) -> QuantileReport {
    QuantileReport::new(level, value, Engine::Panjer, h)
        .with("grid_step", h)
        .with("cells", cells as f64)
}

/// Panjer quantile with a step sized from the annual-loss moments, coarsened on resolution failure.
pub fn panjer_quantile_auto(level: f64, model: &CompoundModel, n_points: usize) -> Result<QuantileReport> {
    let (mean, sd) = model.annual_moments()?;
    let mut h = ((mean + 12.0 * sd) / n_points as f64).max(f64::MIN_POSITIVE);
    let mut last = None;
    for _ in 0..20 {
        match panjer_quantile(level, model, h, n_points) {
            Err(e @ Error::Resolution { .. }) => {
                last = Some(e);
                h *= 2.0;
            }
            other => return other,
        }
    }
    Err(last.expect("loop ran"))
}
