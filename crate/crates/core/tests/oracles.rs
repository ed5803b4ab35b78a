//! Cross-checks of the analytic and numerical routes against simulation.

use lossdist::compound::{compound_cf, quantile_cf, simulate_annual_losses, CfGrid, CfInversion};
use lossdist::dist::{lognormal_quantile, SeverityParams, TruncationSpec};
use lossdist::fitting::{fit, LossDataset, ModelKind};
use lossdist::study::{bias_cell, EngineChoice};
use lossdist::truncation::{shifted_params, MapKind};
use lossdist::{CompoundModel, Engine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn shifted_map_matches_sampled_moments() {
    let p = SeverityParams::new(3.0, 2.0).unwrap();
    let t = TruncationSpec::from_psi(10.0, &p).unwrap();
    let mapped = shifted_params(&p, &t).unwrap().mapped;
    // Inverse-CDF draws restricted to the part above the threshold.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 400_000;
    let ys: Vec<f64> = (0..n)
        .map(|_| {
            let u = 0.1 + 0.9 * rng.random::<f64>();
            (lognormal_quantile(u, &p).unwrap() - t.level).ln()
        })
        .filter(|y| y.is_finite())
        .collect();
    let (m, s) = mean_sd(&ys);
    let se_m = s / (ys.len() as f64).sqrt();
    assert!((m - mapped.mu).abs() < 4.0 * se_m, "mean {m} vs {}", mapped.mu);
    // Standard error of a sample standard deviation, inflated for the heavy left tail.
    assert!((s - mapped.sigma).abs() < 8.0 * s / (2.0 * ys.len() as f64).sqrt(), "sd {s} vs {}", mapped.sigma);
}

#[test]
fn characteristic_function_matches_sample() {
    let m = CompoundModel::plain(3.0, 1.0, 4.0).unwrap();
    let sample = simulate_annual_losses(&m, 400_000, 5).unwrap();
    for t in [0.001, 0.01] {
        let phi = compound_cf(t, &m).unwrap();
        let n = sample.len() as f64;
        let re = sample.iter().map(|s| (t * s).cos()).sum::<f64>() / n;
        let im = sample.iter().map(|s| (t * s).sin()).sum::<f64>() / n;
        // Each component is a mean of variables bounded by one.
        let tol = 5.0 / n.sqrt();
        assert!((phi.re - re).abs() < tol && (phi.im - im).abs() < tol, "t={t}: {phi} vs {re}+{im}i");
    }
}

#[test]
fn inverted_cdf_matches_empirical_levels() {
    let m = CompoundModel::plain(3.0, 2.0, 20.0).unwrap();
    let inv = CfInversion::new(&m, &CfGrid::default()).unwrap();
    let mut sample = simulate_annual_losses(&m, 1_000_000, 8).unwrap();
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    for level in [0.5, 0.9, 0.99, 0.999] {
        let z = sample[(level * n) as usize];
        let h = inv.cdf(z).unwrap();
        let se = (level * (1.0 - level) / n).sqrt();
        assert!((h - level).abs() < 4.0 * se, "level {level}: H = {h}");
    }
    let q = quantile_cf(0.999, &m, &CfGrid::default()).unwrap().value;
    let frac = sample.iter().filter(|&&s| s <= q).count() as f64 / n;
    assert!((frac - 0.999).abs() < 4.0 * (0.999 * 0.001 / n).sqrt());
}

#[test]
fn unbiased_fit_recovers_large_sample_parameters() {
    let truth = SeverityParams::new(3.0, 2.0).unwrap();
    let l = lognormal_quantile(0.1, &truth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let data = LossDataset::simulate(&truth, 10_000.0, l, 11, &mut rng).unwrap();
    assert!(data.n_losses() > 90_000);
    let f = fit(ModelKind::Unbiased, &data).unwrap();
    assert!(f.converged);
    let g = f.gamma();
    for (i, want) in [3.0, 2.0, 10_000.0].into_iter().enumerate() {
        assert!((g[i] - want).abs() < 3.0 * f.stderr[i], "param {i}: {} ± {} vs {want}", g[i], f.stderr[i]);
    }
}

#[test]
fn bias_does_not_depend_on_location() {
    let opts = lossdist::compound::EngineOptions::default();
    for kind in [MapKind::Shifted, MapKind::Naive] {
        for (sigma, theta, psi) in [(1.0, 1.0, 40.0), (2.0, 100.0, 10.0), (1.0, 1e4, 30.0)] {
            let a = bias_cell(kind, 3.0, sigma, theta, psi, 0.999, EngineChoice::Fixed(Engine::Cf), &opts);
            let b = bias_cell(kind, -1.5, sigma, theta, psi, 0.999, EngineChoice::Fixed(Engine::Cf), &opts);
            assert!((a.delta - b.delta).abs() <= a.err_estimate + b.err_estimate + 1e-9, "{a:?} vs {b:?}");
            assert_eq!(a, bias_cell(kind, 3.0, sigma, theta, psi, 0.999, EngineChoice::Fixed(Engine::Cf), &opts));
        }
    }
}
