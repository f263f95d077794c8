//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does floating-point math (PUF resistances, the binomial
//! reference law, the mixed-model sampler and its diagnostics) is written
//! against [`Real`] so the same code runs in `f32` and `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for literals.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// log(p / (1 - p)).
pub fn logit<F: Real>(p: F) -> F {
    p.ln() - (-p).ln_1p()
}

/// 1 / (1 + exp(-x)), evaluated without overflow on either tail.
pub fn inv_logit<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// log(1 + exp(x)).
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::lit(35.0) {
        x
    } else if x < F::lit(-35.0) {
        x.exp()
    } else if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binomial log-likelihood kernel on the logit scale:
/// `y·θ − n·log(1 + e^θ)`, i.e. `log P(y | n, inv_logit(θ))` without the
/// combinatorial constant.
#[inline]
pub fn binomial_logit_kernel<F: Real>(y: F, n: F, theta: F) -> F {
    y * theta - n * softplus(theta)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<F: Real>(x: F) -> F {
    if x < F::lit(0.5) {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = F::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma(F::one() - x);
    }
    let x = x - F::one();
    let mut acc = F::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + F::lit(c) / (x + F::from_usize_lossy(i));
    }
    let t = x + F::lit(LANCZOS_G + 0.5);
    F::lit(0.5) * (F::TAU()).ln() + (x + F::lit(0.5)) * t.ln() - t + acc.ln()
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted<F: Real>(sorted: &[F], q: f64) -> F {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = F::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn mean<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::from_usize_lossy(xs.len())
}

/// Unbiased sample variance.
pub fn variance<F: Real>(xs: &[F]) -> F {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / F::from_usize_lossy(xs.len() - 1)
}

/// log Σ exp(xs), stable for large magnitudes.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<F>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_round_trip_f64() {
        for i in 0..=4000 {
            let x = -20.0 + i as f64 * 0.01;
            let p = inv_logit(x);
            assert!((inv_logit(logit(p)) - p).abs() < 1e-12, "x={x}");
            // above zero, p is within one ulp of 1 and x is only recoverable to ulp(1)/(1-p)
            if x <= 0.0 {
                assert!((logit(p) - x).abs() < 1e-12, "x={x}");
            }
        }
    }

    #[test]
    fn ln_gamma_against_high_precision() {
        // reference values from a 50-digit evaluation
        let cases = [
            (0.5, 0.572_364_942_924_700_087_1),
            (1.0, 0.0),
            (2.5, 0.284_682_870_472_919_159_6),
            (10.0, 12.801_827_480_081_469_61),
            (100.5, 361.435_540_467_777_621_6),
            (481.0, 2_487.423_335_069_171_209),
            (1000.0, 5_905.220_423_209_181_212),
        ];
        for (x, want) in cases {
            let got = ln_gamma(x);
            assert!((got - want).abs() <= 1e-13 * want.abs().max(1.0), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn ln_gamma_f32() {
        assert!((ln_gamma(10.0f32) - 12.801_828).abs() < 1e-4);
    }

    #[test]
    fn softplus_tails() {
        assert_eq!(softplus(100.0f64), 100.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(-40.0f64) - (-40.0f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
    }
}
