//! Error function family.
//!
//! `erf` on `|x| < 2.5` sums the positive-term series
//! `erf(x) = 2/√π · e^{-x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1))`, which has no
//! cancellation. Beyond that `erfc` is evaluated by Lentz's method on the
//! Laplace continued fraction `erfc(x) = e^{-x²}/√π · 1/(x + ½/(x + 1/(x + 3/2/(x + …))))`.
//! `erfinv` starts from Winitzki's closed-form approximation and polishes
//! with Halley steps on `erf(y) − u` (tail residuals taken through `erfc`).

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SERIES_CUTOFF: f64 = 2.5;

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-17 * sum {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// `erfc(x)` for `x >= SERIES_CUTOFF`.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    // f = x + a1/(x + a2/(x + ...)), a_k = k/2
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Error function. Odd symmetry holds bit-exactly.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    let ax = x.abs();
    let v = if ax < SERIES_CUTOFF {
        erf_series(ax)
    } else if ax > 6.0 {
        1.0
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Complementary error function `1 − erf(x)`, accurate in the upper tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x >= SERIES_CUTOFF {
        if x > 27.0 {
            return 0.0;
        }
        erfc_continued_fraction(x)
    } else if x > -SERIES_CUTOFF {
        1.0 - erf(x)
    } else {
        2.0 - erfc(-x)
    }
}

/// Inverse error function on `(-1, 1)`.
pub fn erfinv(u: f64) -> Result<f64> {
    if u.is_nan() || u.abs() >= 1.0 {
        return Err(Error::Domain(format!("erfinv requires |u| < 1, got {u}")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    let au = u.abs();
    let tail = 1.0 - au; // exact for au >= 0.5
    // Winitzki, a = 0.147
    let a = 0.147;
    let ln = (tail * (1.0 + au)).ln();
    let t = 2.0 / (std::f64::consts::PI * a) + 0.5 * ln;
    let mut y = ((t * t - ln / a).sqrt() - t).sqrt();
    for _ in 0..8 {
        let f = if y > 1.0 {
            tail - erfc(y)
        } else {
            erf(y) - au
        };
        let fp = FRAC_2_SQRT_PI * (-y * y).exp();
        if fp == 0.0 {
            break;
        }
        let step = f / (fp + y * f);
        y -= step;
        if step.abs() <= 1e-16 * y.abs() {
            break;
        }
    }
    Ok(if u < 0.0 { -y } else { y })
}

/// Standard normal CDF, `Φ(x) = (1 + erf(x/√2))/2`, evaluated through `erfc`
/// so the lower tail keeps relative precision.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Quantile of `|Z|`, `Z ~ N(0,1)`: `√2 · erfinv(u)` for `u ∈ [0, 1)`.
pub fn half_normal_quantile(u: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!(
            "half-normal quantile requires 0 <= u < 1, got {u}"
        )));
    }
    Ok(std::f64::consts::SQRT_2 * erfinv(u)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Alternating Maclaurin series, summed in extended steps; independent of
    /// the implementation's positive-term series.
    fn erf_maclaurin(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut pow = x; // x^{2n+1}
        let mut fact = 1.0; // n!
        for n in 0..200 {
            let term = pow / (fact * (2 * n + 1) as f64);
            if n % 2 == 0 {
                sum += term;
            } else {
                sum -= term;
            }
            if term.abs() < 1e-20 {
                break;
            }
            pow *= x * x;
            fact *= (n + 1) as f64;
        }
        FRAC_2_SQRT_PI * sum
    }

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, target: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn erf_fixed_points() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.842700793).abs() < 1e-9);
        assert_eq!(erf(-2.0), -erf(2.0));
    }

    #[test]
    fn erf_matches_maclaurin_oracle() {
        // alternating series loses digits past |x|≈3
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            let oracle = erf_maclaurin(x);
            assert!(
                (erf(x) - oracle).abs() <= 1e-9,
                "x={x}: {} vs {oracle}",
                erf(x)
            );
        }
    }

    #[test]
    fn erfc_tail_against_asymptotic() {
        // erfc(x) ~ e^{-x²}/(x√π) · (1 − 1/(2x²) + 3/(4x⁴) − 15/(8x⁶))
        for &x in &[5.0_f64, 8.0, 12.0] {
            let x2 = x * x;
            let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
            let approx = (-x2).exp() / (x * std::f64::consts::PI.sqrt()) * series;
            assert!(((erfc(x) - approx) / approx).abs() < 1e-3);
        }
        assert!((erfc(2.6) - (1.0 - erf(2.6))).abs() < 1e-15);
    }

    #[test]
    fn erfinv_values() {
        assert_eq!(erfinv(0.0).unwrap(), 0.0);
        assert!((erfinv(erf(1.5)).unwrap() - 1.5).abs() < 1e-6);
        let oracle = bisect(0.0, 2.0, erf, 0.5);
        assert!((oracle - 0.476936276).abs() < 1e-9);
        assert!((erfinv(0.5).unwrap() - oracle).abs() < 1e-9);
        assert!(erfinv(1.0).is_err());
        assert!(erfinv(-1.5).is_err());
    }

    #[test]
    fn erfinv_round_trip_extreme() {
        for &u in &[0.999999, -0.999999, 0.9, 1e-12, 0.3] {
            let y = erfinv(u).unwrap();
            assert!((erf(y) - u).abs() <= 1e-6, "u={u}");
        }
    }

    #[test]
    fn normal_cdf() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.959964) - 0.975).abs() < 1e-5);
        for i in 0..50 {
            let x = i as f64 * 0.17;
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-12);
        }
    }

    #[test]
    fn half_normal_median() {
        let oracle = bisect(0.0, 5.0, |t| erf(t / std::f64::consts::SQRT_2), 0.5);
        assert!((oracle - 0.674489750).abs() < 1e-8);
        assert!((half_normal_quantile(0.5).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(half_normal_quantile(0.0).unwrap(), 0.0);
        assert!(half_normal_quantile(1.0).is_err());
    }

    #[test]
    fn half_normal_monotone() {
        let mut prev = 0.0;
        for i in 0..1000 {
            let q = half_normal_quantile(i as f64 / 1000.0).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }
}
