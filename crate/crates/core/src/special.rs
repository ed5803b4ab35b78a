//! Standard-normal helpers and the handful of special functions the engines need.

use num_complex::Complex64;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Wichura's AS241 rational approximation followed by one Newton step on
/// whichever tail is smaller. Returns `±inf` at 0 and 1, NaN outside `[0, 1]`.
pub fn norm_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let x = as241(p);
    // Newton refinement against the accurate erfc-based CDF.
    let resid = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    let dens = norm_pdf(x);
    if dens > 0.0 && resid.is_finite() {
        x - resid / dens
    } else {
        x
    }
}

fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Normal hazard `A(t) = f_N(t) / (1 - F_N(t))` (reciprocal Mills ratio).
///
/// Above `t = 8` the ratio of two underflowing quantities is replaced by
/// Laplace's continued fraction for the Mills ratio.
pub fn norm_hazard(t: f64) -> f64 {
    if t > 8.0 {
        // Mills ratio R(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...)))).
        let mut frac = t;
        for k in (1..=40).rev() {
            frac = t + k as f64 / frac;
        }
        frac
    } else {
        norm_pdf(t) / norm_sf(t)
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Sine integral `Si(x) = ∫₀ˣ sin(u)/u du`.
pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return FRAC_PI_2;
    }
    if x <= 4.0 {
        // Σ (-1)^k x^(2k+1) / ((2k+1)(2k+1)!)
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 0usize;
        loop {
            k += 1;
            let n = (2 * k) as f64;
            term *= -x2 / (n * (n + 1.0));
            let add = term / (n + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        // E1(ix) by modified Lentz on its continued fraction; Si = π/2 + Im[e^{-ix}·cf].
        let tiny = 1e-300;
        let mut b = Complex64::new(1.0, x);
        let mut c = Complex64::new(1.0 / tiny, 0.0);
        let mut d = b.inv();
        let mut h = d;
        for i in 2..500 {
            let a = -((i - 1) * (i - 1)) as f64;
            b += 2.0;
            d = (d * a + b).inv();
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        let h = Complex64::new(x.cos(), -x.sin()) * h;
        FRAC_PI_2 + h.im
    }
}

/// Spherical Bessel functions `j_0(w) .. j_{n-1}(w)` for `w ≥ 0`.
///
/// Upward recurrence where it is stable (`w > n`), Miller's downward
/// recurrence otherwise, and a short power series near the origin.
pub fn spherical_bessel_j(n: usize, w: f64, out: &mut [f64]) {
    debug_assert!(out.len() >= n);
    if n == 0 {
        return;
    }
    if w < 1e-2 {
        let w2 = w * w;
        let mut lead = 1.0; // w^k / (2k+1)!!
        for (k, slot) in out.iter_mut().take(n).enumerate() {
            if k > 0 {
                lead *= w / (2 * k + 1) as f64;
            }
            let kk = k as f64;
            let c1 = w2 / (2.0 * (2.0 * kk + 3.0));
            let c2 = w2 * w2 / (8.0 * (2.0 * kk + 3.0) * (2.0 * kk + 5.0));
            *slot = lead * (1.0 - c1 + c2);
        }
        return;
    }
    let (s, c) = w.sin_cos();
    let j0 = s / w;
    if w > n as f64 {
        out[0] = j0;
        if n > 1 {
            out[1] = s / (w * w) - c / w;
        }
        for k in 2..n {
            out[k] = (2 * k - 1) as f64 / w * out[k - 1] - out[k - 2];
        }
        return;
    }
    let start = n + 16 + w as usize;
    let mut next = 0.0;
    let mut cur = 1e-300;
    let mut buf = vec![0.0; n];
    for k in (1..=start).rev() {
        let prev = (2 * k + 1) as f64 / w * cur - next;
        next = cur;
        cur = prev;
        if k - 1 < n {
            buf[k - 1] = cur;
        }
        if cur.abs() > 1e250 {
            next *= 1e-250;
            cur *= 1e-250;
            for v in buf.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    // Normalise with whichever of j0, j1 is better conditioned.
    let j1 = s / (w * w) - c / w;
    let scale = if j0.abs() >= j1.abs() || n < 2 {
        j0 / buf[0]
    } else {
        j1 / buf[1]
    };
    for k in 0..n {
        out[k] = buf[k] * scale;
    }
}
