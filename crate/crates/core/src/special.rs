//! Standard normal functions and the Kolmogorov distribution.
//!
//! The error function follows W. J. Cody's rational Chebyshev
//! approximations (relative error below 1e-15 on the whole real line) and the
//! quantile function follows Wichura's AS 241 (PPND16). Both are written out
//! here so that results do not depend on the platform libm.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// 1 / sqrt(2 pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// 1 / sqrt(pi)
pub const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_467_3e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// exp(-y^2) without the rounding error of y^2 leaking into the result for
/// large y: y^2 = p + e exactly (Dekker's product), and exp(-e) = 1 - e to
/// double precision because |e| <= ulp(p) / 2.
#[inline]
fn exp_neg_square(y: f64) -> f64 {
    const SPLIT: f64 = 134_217_729.0; // 2^27 + 1
    let c = SPLIT * y;
    let hi = c - (c - y);
    let lo = y - hi;
    let p = y * y;
    let e = ((hi * hi - p) + 2.0 * hi * lo) + lo * lo;
    (-p).exp() * (1.0 - e)
}

/// exp(y^2) erfc(y) for y > 0.5.
fn erfcx_tail(y: f64) -> f64 {
    if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = ERF_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERF_P[i]) * ysq;
            den = (den + ERF_Q[i]) * ysq;
        }
        let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (INV_SQRT_PI - r) / y
    }
}

/// erfc(|x|) for |x| > 0.5.
#[inline]
fn erfc_tail(y: f64) -> f64 {
    if y >= 26.6 {
        0.0
    } else {
        exp_neg_square(y) * erfcx_tail(y)
    }
}

/// Mills ratio (1 - Phi(t)) / phi(t) for t >= 0; zero at infinity.
pub fn mills_ratio(t: f64) -> f64 {
    const SQRT_FRAC_PI_2: f64 = 1.253_314_137_315_500_3;
    if t == f64::INFINITY {
        return 0.0;
    }
    let y = t * FRAC_1_SQRT_2;
    let scaled = if y <= 0.5 {
        (y * y).exp() * (1.0 - erf_small(y))
    } else {
        erfcx_tail(y)
    };
    SQRT_FRAC_PI_2 * scaled
}

/// erf(x) for |x| <= 0.5.
fn erf_small(x: f64) -> f64 {
    let ysq = x * x;
    let mut num = ERF_A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + ERF_A[i]) * ysq;
        den = (den + ERF_B[i]) * ysq;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.5 {
        erf_small(x)
    } else {
        let r = 1.0 - erfc_tail(y);
        if x < 0.0 {
            -r
        } else {
            r
        }
    }
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.5 {
        1.0 - erf_small(x)
    } else {
        let r = erfc_tail(y);
        if x < 0.0 {
            2.0 - r
        } else {
            r
        }
    }
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in the lower tail.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function 1 - Phi(z), accurate in the upper tail.
#[inline]
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_5e0,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_854_5e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_5e0,
    4.630_337_846_156_545e0,
    5.769_497_221_460_691e0,
    3.647_848_324_763_204_5e0,
    1.270_458_252_452_368_4e0,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759e0,
    1.676_384_830_183_803_8e0,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_8e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103e0,
    5.463_784_911_164_114e0,
    1.784_826_539_917_291_3e0,
    2.965_605_718_285_049e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

#[inline]
fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard normal quantile function (AS 241).
///
/// Returns -inf at 0 and +inf at 1; NaN outside [0, 1].
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
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&PPND_A, r) / horner(&PPND_B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    lower_tail_magnitude(tail) * if q < 0.0 { -1.0 } else { 1.0 }
}

/// Upper-tail quantile: the z with 1 - Phi(z) = q, accurate for tiny q.
pub fn norm_quantile_upper(q: f64) -> f64 {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return f64::NAN;
    }
    if q < 0.075 {
        if q == 0.0 {
            return f64::INFINITY;
        }
        lower_tail_magnitude(q)
    } else {
        -norm_quantile(q)
    }
}

/// |Phi^{-1}(p)| for p <= 0.075 computed from p itself.
fn lower_tail_magnitude(p: f64) -> f64 {
    let mut r = (-p.ln()).sqrt();
    if r <= 5.0 {
        r -= 1.6;
        horner(&PPND_C, r) / horner(&PPND_D, r)
    } else {
        r -= 5.0;
        horner(&PPND_E, r) / horner(&PPND_F, r)
    }
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // The alternating series converges slowly here; use the Jacobi dual form.
        let s: f64 = (1..=20)
            .map(|k| {
                let t = (2 * k - 1) as f64;
                (-(t * t) * PI * PI / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        return (1.0 - (2.0 * PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
