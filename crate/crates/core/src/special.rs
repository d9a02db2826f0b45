//! Special functions used throughout the estimators: the scaled complementary
//! error function, stable logarithms of Gaussian tail and interval masses, and
//! log-sum-exp helpers.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

pub const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// `erfc` from the FreeBSD libm port.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
///
/// Finite for every `x >= -26.6`; overflows to `+inf` below that, where the
/// true value exceeds the largest double.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        // erfc(x) = 2 - erfc(-x)
        return 2.0 * exp_square(x) - erfcx(-x);
    }
    if x < 1.25 {
        exp_square(x) * libm::erfc(x)
    } else if x < 26.0 {
        erfcx_rational(x)
    } else {
        erfcx_asymptotic(x)
    }
}

/// `erfcx` on `[1.25, 28)` from the FreeBSD `erfc` tail fits
/// `erfc(x) = exp(-x^2 - 0.5625 + R(1/x^2)/S(1/x^2)) / x`, with the `exp(-x^2)`
/// factor cancelled analytically.
fn erfcx_rational(x: f64) -> f64 {
    const RA: [f64; 8] = [
        -9.864_944_034_847_148e-3,
        -6.938_585_727_071_818e-1,
        -1.055_862_622_532_329_1e1,
        -6.237_533_245_032_600_6e1,
        -1.623_966_694_625_734_7e2,
        -1.846_050_929_067_110_4e2,
        -8.128_743_550_630_66e1,
        -9.814_329_344_169_145,
    ];
    const SA: [f64; 9] = [
        1.0,
        1.965_127_166_743_925_7e1,
        1.376_577_541_435_190_4e2,
        4.345_658_774_752_292_3e2,
        6.453_872_717_332_679e2,
        4.290_081_400_275_678_3e2,
        1.086_350_055_417_794_4e2,
        6.570_249_770_319_282,
        -6.042_441_521_485_81e-2,
    ];
    const RB: [f64; 7] = [
        -9.864_942_924_700_1e-3,
        -7.992_832_376_805_23e-1,
        -1.775_795_491_775_475_2e1,
        -1.606_363_848_558_219_2e2,
        -6.375_664_433_683_896e2,
        -1.025_095_131_611_077_2e3,
        -4.835_191_916_086_514e2,
    ];
    const SB: [f64; 8] = [
        1.0,
        3.033_806_074_348_246e1,
        3.257_925_129_965_739e2,
        1.536_729_586_084_437e3,
        3.199_858_219_508_595_5e3,
        2.553_050_406_433_164_4e3,
        4.745_285_412_069_553_7e2,
        -2.244_095_244_658_582e1,
    ];
    let s = 1.0 / (x * x);
    let g = if x < 1.0 / 0.35 { poly(&RA, s) / poly(&SA, s) } else { poly(&RB, s) / poly(&SB, s) };
    (g - 0.5625).exp() / x
}

#[inline]
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc.mul_add(x, v))
}

/// `exp(x*x)` with the rounding error of the square folded back in.
#[inline]
fn exp_square(x: f64) -> f64 {
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    hi.exp() * (1.0 + lo)
}

fn erfcx_asymptotic(x: f64) -> f64 {
    // 1/(x sqrt(pi)) * sum_k (-1)^k (2k-1)!! / (2x^2)^k
    let inv = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        term *= -((2 * k - 1) as f64) * inv;
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    FRAC_1_SQRT_PI * sum / x
}

/// `ln erfc(x)`, accurate deep into the upper tail.
pub fn ln_erfc(x: f64) -> f64 {
    if x > 0.0 {
        erfcx(x).ln() - x * x
    } else {
        libm::erfc(x).ln()
    }
}

/// Standard normal survival function `Q(z) = P(Z > z)` in log space.
#[inline]
pub fn ln_normal_sf(z: f64) -> f64 {
    ln_erfc(z * FRAC_1_SQRT_2) - LN_2
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Hazard `phi(z)/Q(z)` of the standard normal, stable for all `z`.
#[inline]
pub fn normal_hazard(z: f64) -> f64 {
    (2.0 / PI).sqrt() / erfcx(z * FRAC_1_SQRT_2)
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn ln_1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(P(a < Z < b))` for a standard normal `Z` and `a < b` (infinite ends allowed).
pub fn ln_normal_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        let la = ln_normal_sf(a);
        let lb = if b.is_infinite() { f64::NEG_INFINITY } else { ln_normal_sf(b) };
        la + ln_1m_exp(lb - la)
    } else if b <= 0.0 {
        ln_normal_interval(-b, -a)
    } else {
        let tails = 0.5 * (libm::erfc(b * FRAC_1_SQRT_2) + libm::erfc(-a * FRAC_1_SQRT_2));
        (-tails).ln_1p()
    }
}

/// Inverse of the standard normal survival function given `ln Q`, i.e. the
/// `z` with `ln P(Z > z) = ln_q`. Wichura's AS241 rational approximations
/// (relative error ~1e-16), Newton-polished past `Q = e^-700`. The tail branch
/// only needs `ln Q`, so tails far below the smallest double are fine.
pub fn normal_isf_from_ln(ln_q: f64) -> f64 {
    if ln_q.is_nan() || ln_q > 0.0 {
        return f64::NAN;
    }
    if ln_q == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    if ln_q == 0.0 {
        return f64::NEG_INFINITY;
    }
    const LN_LO: f64 = -2.590_267_165_445_236_6; // ln 0.075
    if ln_q < LN_LO {
        let mut z = as241_tail((-ln_q).sqrt());
        if ln_q < -700.0 {
            // beyond the fitted range: polish with Newton on ln Q
            for _ in 0..4 {
                z += (ln_normal_sf(z) - ln_q) / normal_hazard(z);
            }
        }
        z
    } else {
        let q = ln_q.exp();
        if q <= 0.925 {
            -as241_central(q - 0.5)
        } else {
            -as241_tail((-(-ln_q.exp_m1()).ln()).sqrt())
        }
    }
}

/// Inverse of the standard normal survival function for `q` in `(0, 1)`.
pub fn normal_isf(q: f64) -> f64 {
    if !(q > 0.0 && q < 1.0) {
        return if q == 0.0 {
            f64::INFINITY
        } else if q == 1.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        };
    }
    if q < 0.075 {
        normal_isf_from_ln(q.ln())
    } else if q <= 0.925 {
        -as241_central(q - 0.5)
    } else {
        -as241_tail((-(-q).ln_1p()).sqrt())
    }
}

/// `Phi^{-1}(0.5 + q)` for `|q| <= 0.425`.
fn as241_central(q: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854e3,
    ];
    let r = 0.180_625 - q * q;
    q * poly(&A, r) / poly(&B, r)
}

/// `-Phi^{-1}(p)` for `p < 0.075` given `r = sqrt(-ln p)`.
fn as241_tail(r: f64) -> f64 {
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    }
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Max-shifted `ln(sum_i e^{x_i})`.
pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Simpson-rule reference for `erfcx(x) = (2/sqrt(pi)) \int_0^inf exp(-t^2 - 2xt) dt`.
    fn erfcx_quadrature(x: f64) -> f64 {
        let upper = 40.0 / (1.0 + x.max(0.0));
        let n = 200_000;
        let h = upper / n as f64;
        let f = |t: f64| (-t * t - 2.0 * x * t).exp();
        let mut s = f(0.0) + f(upper);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        2.0 * FRAC_1_SQRT_PI * s * h / 3.0
    }

    #[test]
    fn erfcx_matches_integral_representation() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.3, 1.0, 2.5, 5.0, 10.0, 25.9, 26.1, 40.0] {
            let want = erfcx_quadrature(x);
            let got = erfcx(x);
            assert!(((got - want) / want).abs() < 1e-9, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn erfcx_is_continuous_at_asymptotic_switch() {
        let a = erfcx(26.0 - 1e-12);
        let b = erfcx_asymptotic(26.0);
        assert!(((a - b) / b).abs() < 1e-12);
        assert_eq!(erfcx(0.0), 1.0);
    }

    #[test]
    fn erfcx_tail_fit_matches_unscaled_product() {
        for i in 0..2000 {
            let x = 1.25 + i as f64 * 0.0123;
            let direct = exp_square(x) * libm::erfc(x);
            assert!(((erfcx(x) - direct) / direct).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn erfcx_large_argument_limit() {
        let x = 1e6;
        assert!((erfcx(x) * x * PI.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_interval_tails_and_center() {
        let p = ln_normal_interval(-1.0, 1.0).exp();
        assert!((p - 0.682_689_492_137_085_9).abs() < 1e-14);
        // far right tail: P(40 < Z < inf) ~ phi(40)/40 (1 - 1/1600 + ...)
        let l = ln_normal_interval(40.0, f64::INFINITY);
        let approx = -800.0 - 40f64.ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / 1600.0 + 3.0 / 1600.0f64.powi(2)).ln();
        assert!((l - approx).abs() < 1e-6);
        let m = ln_normal_interval(-f64::INFINITY, -40.0);
        assert!((m - l).abs() < 1e-12);
        assert_eq!(ln_normal_interval(-f64::INFINITY, f64::INFINITY), 0.0);
    }

    #[test]
    fn log_sum_exp_shifts() {
        assert!((ln_sum_exp(&[1000.0, 1000.0]) - (1000.0 + LN_2)).abs() < 1e-12);
        assert!((ln_add_exp(-1000.0, -1000.0) - (-1000.0 + LN_2)).abs() < 1e-12);
        assert_eq!(ln_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn hazard_matches_direct_ratio() {
        for &z in &[-2.0, 0.0, 1.5, 4.0] {
            let direct = normal_pdf(z) / (1.0 - normal_cdf(z));
            assert!((normal_hazard(z) - direct).abs() < 1e-10 * direct);
        }
        assert!((normal_hazard(50.0) / 50.0 - 1.0).abs() < 1e-3);
    }
}
