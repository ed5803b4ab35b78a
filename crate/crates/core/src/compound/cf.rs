//! Characteristic-function engine.
//!
//! The severity CF is integrated along a ray rotated into the upper half
//! plane, where `e^{itx}` decays instead of oscillating. The compound CDF is
//! recovered from
//!
//! ```text
//! H(z) = e^{−λ}(1 + λ F(z)) + (2/π) ∫₀^∞ Re R(t) sin(zt)/t dt,
//! R(t) = χ(t) − e^{−λ}(1 + λ φ(t)),
//! ```
//!
//! which peels off the atom at zero and the single-loss term so the remaining
//! integrand decays like `φ(t)²` rather than `φ(t)`.
//!
//! `[0, t_max]` is covered by adaptive panels on which `(Re R(t) − Re R(0))/t` is
//! stored as a Legendre series. The sine moments of Legendre polynomials are
//! spherical Bessel functions, so once the panels are built every `H(z)`
//! evaluation is exact in `z` and costs no further CF calls.

use super::{check_level, CompoundModel, Engine, QuantileReport};
use crate::dist::SeverityKind;
use crate::error::{Error, Result};
use crate::quad::{cc_pair, clenshaw_curtis, gauss_legendre, Rule};
use crate::special::{norm_quantile, sine_integral, spherical_bessel_j};
use num_complex::Complex64;
use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};
use std::sync::OnceLock;

/// Numerical controls of the CF engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfGrid {
    /// Upper cutoff of the inversion integral; `None` picks it from the decay of `χ`.
    pub t_max: Option<f64>,
    /// Points per Clenshaw-Curtis panel of the severity CF (`4k + 1`, embedded half rule used for error).
    pub severity_nodes: usize,
    /// Octaves beyond `t_max` covered by the piecewise-linear tail correction.
    pub tail_segments: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for CfGrid {
    fn default() -> Self {
        Self {
            t_max: None,
            severity_nodes: 33,
            tail_segments: 8,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
        }
    }
}

impl CfGrid {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("t_max must be > 0, got {t}")));
            }
        }
        if self.severity_nodes < 9 || (self.severity_nodes - 1) % 4 != 0 {
            return Err(Error::InvalidParameter(format!(
                "severity_nodes must be 4k+1 with k >= 2, got {}",
                self.severity_nodes
            )));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// `φ(t)`, `φ(t) − 1` without cancellation, and a bound on `|φ(s)|` valid for every `s ≥ t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CfValue {
    pub value: Complex64,
    pub minus_one: Complex64,
    pub bound: f64,
}

/// `e^z − 1` accurate for small `|z|`.
pub(crate) fn cexpm1(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let em1 = z.re.exp_m1();
    let half = (0.5 * z.im).sin();
    Complex64::new(em1 * c - 2.0 * half * half, (em1 + 1.0) * s)
}

/// Severity CF evaluator for one model.
///
/// Integrates `f(x)(e^{itx} − 1)` rather than `f(x)e^{itx}`, so `φ − 1` keeps full
/// relative accuracy as `t → 0`, where the inversion divides by `t`.
pub(crate) struct SeverityCf {
    mu: f64,
    sigma: f64,
    theta: f64,
    sin_t: f64,
    cos_t: f64,
    rot: Complex64,
    norm: f64,
    shift: f64,
    truncation: Option<f64>,
    scale: f64,
    big: Rule,
    small: Rule,
    target: f64,
    abs_tol: f64,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const MAX_PANEL_DEPTH: usize = 24;
const MAX_PANELS_PER_SIDE: usize = 400;

#[derive(Clone, Copy, Default)]
struct PanelSum {
    value: Complex64,
    mass: f64,
    bound: f64,
    err: f64,
}

impl std::ops::AddAssign for PanelSum {
    fn add_assign(&mut self, o: Self) {
        self.value += o.value;
        self.mass += o.mass;
        self.bound += o.bound;
        self.err += o.err;
    }
}

impl SeverityCf {
    pub fn new(model: &CompoundModel, grid: &CfGrid) -> Result<Self> {
        grid.validate()?;
        let p = model.severity;
        // Rotation bounded so the cancellation factor e^{θ²/2σ²} stays ≤ e².
        let theta = FRAC_PI_2.min(2.0 * p.sigma);
        let (sin_t, cos_t) = theta.sin_cos();
        let (big, small) = if grid.severity_nodes == 33 {
            let (b, s) = cc_pair();
            (b.clone(), s.clone())
        } else {
            let n = grid.severity_nodes - 1;
            (clenshaw_curtis(n), clenshaw_curtis(n / 2))
        };
        let (shift, truncation, scale) = match model.severity_kind {
            SeverityKind::Plain => (0.0, None, 1.0),
            SeverityKind::ShiftedBy(l) => (l, None, 1.0),
            SeverityKind::TruncatedAt(l) if l > 0.0 => {
                let s = crate::dist::lognormal_sf(l, &p);
                (0.0, Some(l), 1.0 / s)
            }
            SeverityKind::TruncatedAt(_) => (0.0, None, 1.0),
        };
        Ok(Self {
            mu: p.mu,
            sigma: p.sigma,
            theta,
            sin_t,
            cos_t,
            rot: Complex64::new(cos_t, sin_t),
            norm: INV_SQRT_2PI / p.sigma,
            shift,
            truncation,
            scale,
            big,
            small,
            target: 1e-15,
            abs_tol: grid.abs_tol,
        })
    }

    /// At log-radius `w` on the rotated ray: density weight times `e^{itx} − 1`,
    /// the modulus of the weight, and the modulus of weight times `e^{itx}`.
    #[inline]
    fn integrand(&self, w: f64, t: f64) -> (Complex64, f64, f64) {
        let zero = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        let s2 = self.sigma * self.sigma;
        let (weight, itx) = match self.truncation {
            None => {
                let d = w - self.mu;
                let re = -(d * d - self.theta * self.theta) / (2.0 * s2);
                if re < -745.0 {
                    return zero;
                }
                let im = -self.theta * d / s2;
                let ew = w.exp();
                (
                    Complex64::from_polar(self.norm * re.exp(), im),
                    Complex64::new(-t * ew * self.sin_t, t * ew * self.cos_t),
                )
            }
            Some(l) => {
                let y = self.rot * w.exp();
                let x = y + l;
                let d = x.ln() - self.mu;
                let g = -(d * d) / (2.0 * s2);
                if g.re < -745.0 {
                    return zero;
                }
                (g.exp() * (y / x) * self.norm, Complex64::new(-t * x.im, t * x.re))
            }
        };
        let m = weight.norm();
        (weight * cexpm1(itx), m, m * itx.re.exp())
    }

    fn panel(&self, a: f64, b: f64, t: f64, depth: usize) -> PanelSum {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        let mut i_big = Complex64::new(0.0, 0.0);
        let mut i_small = Complex64::new(0.0, 0.0);
        let mut mass = 0.0;
        let mut bound = 0.0;
        for (j, (&x, &wt)) in self.big.nodes.iter().zip(&self.big.weights).enumerate() {
            let (v, m, bd) = self.integrand(c + h * x, t);
            i_big += v * wt;
            mass += m * wt;
            bound += bd * wt;
            if j % 2 == 0 {
                i_small += v * self.small.weights[j / 2];
            }
        }
        let err = h * (i_big - i_small).norm();
        let out = PanelSum {
            value: i_big * h,
            mass: mass * h,
            bound: bound * h,
            err,
        };
        if err <= self.target.max(1e-13 * out.mass) || depth >= MAX_PANEL_DEPTH {
            return out;
        }
        let mut left = self.panel(a, c, t, depth + 1);
        left += self.panel(c, b, t, depth + 1);
        left
    }

    fn centre(&self) -> f64 {
        match self.truncation {
            None => self.mu,
            Some(l) => self.mu.max(l.ln()),
        }
    }

    /// Sweep panels away from the centre until two consecutive panels carry negligible weight.
    fn sweep(&self, t: f64, dir: f64) -> PanelSum {
        let mut acc = PanelSum::default();
        let mut a = self.centre();
        let mut width = self.sigma;
        let mut quiet = 0;
        for k in 0..MAX_PANELS_PER_SIDE {
            let b = a + dir * width;
            let (lo, hi) = if dir > 0.0 { (a, b) } else { (b, a) };
            let p = self.panel(lo, hi, t, 0);
            let small = p.mass < 1e-3 * self.target;
            acc += p;
            if small {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
            a = b;
            if k >= 2 {
                width *= 1.5;
            }
        }
        acc
    }

    pub fn eval(&self, t: f64) -> Result<CfValue> {
        if t == 0.0 {
            return Ok(CfValue {
                value: Complex64::new(1.0, 0.0),
                minus_one: Complex64::new(0.0, 0.0),
                bound: 1.0,
            });
        }
        if t < 0.0 {
            let v = self.eval(-t)?;
            return Ok(CfValue {
                value: v.value.conj(),
                minus_one: v.minus_one.conj(),
                bound: v.bound,
            });
        }
        let mut sum = self.sweep(t, 1.0);
        sum += self.sweep(t, -1.0);
        let mut minus_one = sum.value * self.scale;
        if self.shift != 0.0 {
            // φ_shift − 1 = e^{itL}(φ − 1) + (e^{itL} − 1).
            let its = Complex64::new(0.0, t * self.shift);
            minus_one = its.exp() * minus_one + cexpm1(its);
        }
        let err = sum.err * self.scale;
        if err > self.abs_tol {
            return Err(Error::Accuracy {
                what: format!("severity CF at t = {t}"),
                estimate: err,
                tolerance: self.abs_tol,
            });
        }
        Ok(CfValue {
            value: minus_one + 1.0,
            minus_one,
            bound: (sum.bound * self.scale).min(1.0),
        })
    }
}

/// Severity characteristic function `φ(t) = E[e^{itX}]` of the model's severity law.
pub fn severity_cf(t: f64, model: &CompoundModel) -> Result<Complex64> {
    severity_cf_with(t, model, &CfGrid::default())
}

/// [`severity_cf`] with explicit numerical controls.
pub fn severity_cf_with(t: f64, model: &CompoundModel, grid: &CfGrid) -> Result<Complex64> {
    Ok(SeverityCf::new(model, grid)?.eval(t)?.value)
}

/// Compound characteristic function `χ(t) = exp(λ(φ(t) − 1))`.
pub fn compound_cf(t: f64, model: &CompoundModel) -> Result<Complex64> {
    let phi = severity_cf(t, model)?;
    Ok(((phi - 1.0) * model.lambda()).exp())
}

/// `R = e^{−λ}(e^{λφ} − 1 − λφ)`, evaluated without cancellation when `λφ` is small.
fn remainder(lambda: f64, p0: f64, phi: Complex64) -> Complex64 {
    let w = phi * lambda;
    if w.norm() < 0.1 {
        let mut term = w * w * 0.5;
        let mut sum = term;
        let mut k = 2.0;
        loop {
            k += 1.0;
            term *= w / k;
            sum += term;
            if term.norm() <= 1e-17 * sum.norm() {
                break;
            }
        }
        sum * p0
    } else {
        ((phi - 1.0) * lambda).exp() - (w + 1.0) * p0
    }
}

/// Bound on `|R|` given `|φ| ≤ m`: the power series of `e^{λφ} − 1 − λφ` has non-negative coefficients.
fn remainder_bound(lambda: f64, p0: f64, m: f64) -> f64 {
    let w = lambda * m;
    if w < 1e-3 {
        p0 * w * w * 0.5 * (1.0 + w / 3.0)
    } else {
        (lambda * (m - 1.0)).exp() - p0 * (1.0 + w)
    }
    .max(0.0)
}

const GL_N: usize = 16;

struct LegendreBasis {
    nodes: Vec<f64>,
    // (2k+1)/2 · w_j · P_k(s_j), so coefficients are a plain matrix-vector product.
    proj: Vec<[f64; GL_N]>,
}

fn legendre_basis() -> &'static LegendreBasis {
    static BASIS: OnceLock<LegendreBasis> = OnceLock::new();
    BASIS.get_or_init(|| {
        let rule = gauss_legendre(GL_N);
        let mut proj = vec![[0.0; GL_N]; GL_N];
        for (j, (&s, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let mut p_prev = 1.0;
            let mut p = s;
            for (k, row) in proj.iter_mut().enumerate() {
                let pk = match k {
                    0 => 1.0,
                    1 => s,
                    _ => {
                        let kf = k as f64;
                        let next = ((2.0 * kf - 1.0) * s * p - (kf - 1.0) * p_prev) / kf;
                        p_prev = p;
                        p = next;
                        next
                    }
                };
                row[j] = (2.0 * k as f64 + 1.0) / 2.0 * w * pk;
            }
        }
        LegendreBasis {
            nodes: rule.nodes,
            proj,
        }
    })
}

#[derive(Debug, Clone)]
struct Panel {
    c: f64,
    h: f64,
    coef: [f64; GL_N],
    err: f64,
}

impl Panel {
    /// `∫_{c−h}^{c+h} G(t) sin(zt) dt` for the stored Legendre series of `G`.
    fn sin_moment(&self, z: f64, jbuf: &mut [f64; GL_N]) -> f64 {
        let w = z * self.h;
        spherical_bessel_j(GL_N, w, jbuf);
        let mut even = 0.0;
        let mut odd = 0.0;
        for k in 0..GL_N {
            let term = self.coef[k] * jbuf[k];
            match k % 4 {
                0 => even += term,
                1 => odd += term,
                2 => even -= term,
                _ => odd -= term,
            }
        }
        let (s, c) = (z * self.c).sin_cos();
        2.0 * self.h * (s * even + c * odd)
    }
}

#[derive(Debug, Clone, Copy)]
struct TailSegment {
    t0: f64,
    t1: f64,
    g0: f64,
    g1: f64,
}

const MAX_INVERSION_PANELS: usize = 20_000;

/// Tabulated inversion of one compound model; evaluates `H(z)` for any `z > 0`.
pub struct CfInversion {
    model: CompoundModel,
    p0: f64,
    c1: f64,
    g0: f64,
    t_max: f64,
    panels: Vec<Panel>,
    tail: Vec<TailSegment>,
    panel_err: f64,
    tail_err: f64,
    phi_evals: usize,
}

impl CfInversion {
    pub fn new(model: &CompoundModel, grid: &CfGrid) -> Result<Self> {
        model.validate()?;
        let sev = SeverityCf::new(model, grid)?;
        let lambda = model.lambda();
        let p0 = (-lambda).exp();
        let c1 = p0 * lambda;
        let g0 = remainder(lambda, p0, Complex64::new(1.0, 0.0)).re;
        let mut phi_evals = 0usize;
        // (Re R(t), Re R(t) − Re R(0), bound on |R(s)| for s ≥ t).
        let mut g_at = |t: f64| -> Result<(f64, f64, f64)> {
            phi_evals += 1;
            let v = sev.eval(t)?;
            let d = v.minus_one;
            Ok((
                remainder(lambda, p0, v.value).re,
                (cexpm1(d * lambda) - d * (p0 * lambda)).re,
                remainder_bound(lambda, p0, v.bound),
            ))
        };

        let (mean, sd) = model.annual_moments().unwrap_or((f64::INFINITY, f64::INFINITY));
        let (m1, _) = model.severity_raw_moments().unwrap_or((f64::INFINITY, 0.0));
        let zscale = if (mean + 8.0 * sd).is_finite() {
            (mean + 8.0 * sd).max(m1)
        } else {
            model.severity_quantile(0.999_999)?.max(1.0) * lambda.max(1.0)
        };
        let cutoff_tol = 0.1 * grid.abs_tol;

        let t_max = match grid.t_max {
            Some(t) => t,
            None => {
                let mut t = 1e-3 / zscale;
                let mut found = None;
                for _ in 0..400 {
                    let (_, _, bound) = g_at(t)?;
                    if bound < cutoff_tol {
                        found = Some(t);
                        break;
                    }
                    t *= 1.5;
                }
                found.ok_or_else(|| Error::Accuracy {
                    what: "inversion cutoff: |χ| did not decay".into(),
                    estimate: f64::NAN,
                    tolerance: cutoff_tol,
                })?
            }
        };

        // Initial partition: [0, a] then octaves up to t_max.
        let mut breaks = vec![t_max];
        let a = (0.5 / zscale).min(t_max);
        while *breaks.last().unwrap() > 2.0 * a {
            let last = *breaks.last().unwrap();
            breaks.push(0.5 * last);
        }
        breaks.push(0.0);
        breaks.reverse();

        let basis = legendre_basis();
        let mut fit = |lo: f64, hi: f64| -> Result<(Panel, f64)> {
            let c = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo);
            let mut vals = [0.0; GL_N];
            for (v, &s) in vals.iter_mut().zip(&basis.nodes) {
                let t = c + h * s;
                let (_, dg, _) = g_at(t)?;
                *v = dg / t;
            }
            let mut coef = [0.0; GL_N];
            for (k, row) in basis.proj.iter().enumerate() {
                coef[k] = row.iter().zip(&vals).map(|(p, v)| p * v).sum();
            }
            let err = 2.0 * h * (coef[GL_N - 1].abs() + coef[GL_N - 2].abs());
            let peak = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok((Panel { c, h, coef, err }, peak))
        };

        let span = t_max;
        let mut stack: Vec<(f64, f64)> = breaks.windows(2).rev().map(|w| (w[0], w[1])).collect();
        let mut panels = Vec::new();
        let mut unresolved = 0.0;
        while let Some((lo, hi)) = stack.pop() {
            let (p, peak) = fit(lo, hi)?;
            let _ = peak;
            let allowance = grid.abs_tol * ((hi - lo) / span).max(1.0 / 64.0);
            let scale_ok = p.err <= grid.rel_tol * peak * 2.0 * p.h;
            if p.err <= allowance || scale_ok || (hi - lo) < 1e-12 * span {
                if p.err > allowance && !scale_ok {
                    unresolved += p.err;
                }
                panels.push(p);
            } else if panels.len() + stack.len() >= MAX_INVERSION_PANELS {
                return Err(Error::Accuracy {
                    what: format!("inversion integral needs more than {MAX_INVERSION_PANELS} panels"),
                    estimate: p.err,
                    tolerance: allowance,
                });
            } else {
                let mid = 0.5 * (lo + hi);
                stack.push((mid, hi));
                stack.push((lo, mid));
            }
        }
        let panel_err: f64 = panels.iter().map(|p| p.err).sum::<f64>() + unresolved;

        let mut tail = Vec::with_capacity(grid.tail_segments);
        let mut tail_err = 0.0;
        let mut t0 = t_max;
        let (mut g_lo, _, _) = g_at(t0)?;
        for _ in 0..grid.tail_segments {
            let t1 = 2.0 * t0;
            let (g_hi, _, _) = g_at(t1)?;
            tail.push(TailSegment {
                t0,
                t1,
                g0: g_lo,
                g1: g_hi,
            });
            tail_err += 0.5 * (g_lo.abs() + g_hi.abs()) * std::f64::consts::LN_2;
            t0 = t1;
            g_lo = g_hi;
        }
        // Beyond the last segment |g| stays below its value there; ∫ sin(zt)/t over it is O(1/(zt)).
        tail_err += g_lo.abs();

        Ok(Self {
            model: *model,
            p0,
            c1,
            g0,
            t_max,
            panels,
            tail,
            panel_err,
            tail_err,
            phi_evals,
        })
    }

    pub fn model(&self) -> &CompoundModel {
        &self.model
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    pub fn cf_evaluations(&self) -> usize {
        self.phi_evals
    }

    /// Error budget of `H` from panel truncation and the tail correction.
    pub fn error_bound(&self) -> f64 {
        FRAC_2_PI * (self.panel_err + self.tail_err)
    }

    /// `H(z) = P(Z ≤ z)`.
    pub fn cdf(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("compound CDF needs z > 0, got {z}")));
        }
        if z.is_infinite() {
            return Ok(1.0);
        }
        Ok(self.raw_cdf(z).clamp(0.0, 1.0))
    }

    fn raw_cdf(&self, z: f64) -> f64 {
        let mut jbuf = [0.0; GL_N];
        let mut integral = self.g0 * sine_integral(z * self.t_max);
        for p in &self.panels {
            integral += p.sin_moment(z, &mut jbuf);
        }
        for s in &self.tail {
            let beta = (s.g1 - s.g0) / (s.t1 - s.t0);
            let alpha = s.g0 - beta * s.t0;
            integral += alpha * (sine_integral(z * s.t1) - sine_integral(z * s.t0))
                + beta * ((z * s.t0).cos() - (z * s.t1).cos()) / z;
        }
        self.p0 + self.c1 * self.model.severity_cdf(z) + FRAC_2_PI * integral
    }
}

/// `H(z) = P(Z ≤ z)` by CF inversion.
pub fn compound_cdf_cf(z: f64, model: &CompoundModel, grid: &CfGrid) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("compound CDF needs z > 0, got {z}")));
    }
    CfInversion::new(model, grid)?.cdf(z)
}

const MAX_BRACKET_EXPANSIONS: usize = 60;
const PROB_TOL: f64 = 1e-10;

/// Quantile of the annual loss by CF inversion and safeguarded root-finding.
pub fn quantile_cf(level: f64, model: &CompoundModel, grid: &CfGrid) -> Result<QuantileReport> {
    check_level(level)?;
    model.validate()?;
    let p0 = model.zero_mass();
    if level <= p0 {
        return Ok(QuantileReport::new(level, 0.0, Engine::Cf, 0.0).with("zero_mass", p0));
    }
    let inv = CfInversion::new(model, grid)?;
    quantile_from_inversion(level, &inv)
}

/// Root of `H(z) = level` on a prebuilt inversion.
pub fn quantile_from_inversion(level: f64, inv: &CfInversion) -> Result<QuantileReport> {
    check_level(level)?;
    let model = inv.model();
    let p0 = model.zero_mass();
    if level <= p0 {
        return Ok(QuantileReport::new(level, 0.0, Engine::Cf, 0.0).with("zero_mass", p0));
    }
    let f = |z: f64| inv.raw_cdf(z) - level;

    // Initial bracket from the normal approximation, widened geometrically.
    let (mean, sd) = model.annual_moments()?;
    let q = norm_quantile(level);
    let centre = (mean + q * sd).max(f64::MIN_POSITIVE);
    let mut lo = (mean - 10.0 * sd).max(1e-6 * centre).max(1e-300);
    let mut hi = (mean + 10.0 * sd).max(2.0 * lo);
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    let mut expansions = 0;
    while f_lo > 0.0 {
        if expansions >= MAX_BRACKET_EXPANSIONS {
            return Err(Error::BracketFailure { level, expansions });
        }
        hi = lo;
        f_hi = f_lo;
        lo *= 0.125;
        f_lo = f(lo);
        expansions += 1;
    }
    while f_hi < 0.0 {
        if expansions >= MAX_BRACKET_EXPANSIONS {
            return Err(Error::BracketFailure { level, expansions });
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 4.0;
        f_hi = f(hi);
        expansions += 1;
    }
    let (bracket_lo, bracket_hi) = (lo, hi);
    let (z, iterations) = brent(&f, lo, hi, f_lo, f_hi);
    let resid = f(z);
    if resid.abs() > 1e-6 {
        return Err(Error::Accuracy {
            what: format!("CF quantile residual at level {level}"),
            estimate: resid.abs(),
            tolerance: 1e-6,
        });
    }
    let dz = (1e-4 * z).max(1e-9);
    let density = ((f(z + dz) - f((z - dz).max(0.5 * z))) / (z + dz - (z - dz).max(0.5 * z))).max(0.0);
    let h_err = inv.error_bound() + resid.abs();
    let z_tol = (1e-8 * z).max(1e-6);
    let err = if density > 0.0 {
        h_err / density + z_tol
    } else {
        z_tol
    };
    Ok(QuantileReport::new(level, z, Engine::Cf, err)
        .with("t_max", inv.t_max())
        .with("panels", inv.panel_count() as f64)
        .with("cf_evaluations", inv.cf_evaluations() as f64)
        .with("bracket_lo", bracket_lo)
        .with("bracket_hi", bracket_hi)
        .with("bracket_expansions", expansions as f64)
        .with("root_iterations", iterations as f64)
        .with("cdf_error_bound", inv.error_bound())
        .with("residual", resid))
}

/// Brent's method on a sign-changing bracket; returns the root and iteration count.
fn brent<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> (f64, usize) {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for it in 0..200 {
        if fb == 0.0 || fb.abs() < PROB_TOL {
            return (b, it);
        }
        if (fa > 0.0) == (fb > 0.0) {
            a = c;
            fa = fc;
            d = b - c;
            e = d;
        }
        if fa.abs() < fb.abs() {
            c = b;
            b = a;
            a = c;
            fc = fb;
            fb = fa;
            fa = fc;
        }
        let tol = 0.5 * (1e-8 * b.abs()).max(1e-6);
        let m = 0.5 * (a - b);
        if m.abs() <= tol {
            return (b, it);
        }
        if e.abs() >= tol && fc.abs() > fb.abs() {
            let s = fb / fc;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fc / fa;
                let r = fb / fa;
                p = s * (2.0 * m * qq * (qq - r) - (b - c) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        c = b;
        fc = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    (b, 200)
}
