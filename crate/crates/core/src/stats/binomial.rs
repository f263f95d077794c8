//! Exact binomial probability mass, used as the reference law in tests and
//! goodness-of-fit checks.
//!
//! The evaluation follows Loader's saddle-point form: the log-gamma terms of
//! `ln C(n, k)` are split into Stirling's approximation plus its error term
//! (`stirling_error`), and the remaining `x·ln(x/np) + np − x` deviances are
//! computed by `deviance_term` without cancellation. Relative accuracy is near
//! machine precision even where `ln C(n, k)` is large.

use crate::error::{Error, Result};
use crate::scalar::{ln_gamma, Real};

/// `ln Γ(n + 1) − [(n + ½) ln n − n + ½ ln 2π]`.
fn stirling_error<F: Real>(n: F) -> F {
    let half_ln_tau = F::lit(0.5) * F::TAU().ln();
    if n <= F::lit(15.0) {
        if n == F::zero() {
            return F::one() - half_ln_tau;
        }
        return ln_gamma(n + F::one()) - (n + F::lit(0.5)) * n.ln() + n - half_ln_tau;
    }
    let s0 = F::lit(1.0 / 12.0);
    let s1 = F::lit(1.0 / 360.0);
    let s2 = F::lit(1.0 / 1260.0);
    let s3 = F::lit(1.0 / 1680.0);
    let s4 = F::lit(1.0 / 1188.0);
    let nn = n * n;
    (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n
}

/// `x ln(x / np) + np − x`.
fn deviance_term<F: Real>(x: F, np: F) -> F {
    if (x - np).abs() < F::lit(0.1) * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = F::lit(2.0) * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej = ej * v2;
            let s1 = s + ej / F::from_usize_lossy(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Natural log of `P(K = k)` for `K ~ Binomial(n, p)`.
pub fn binomial_ln_pmf<F: Real>(n: u64, p: F, k: u64) -> Result<F> {
    if !(p >= F::zero() && p <= F::one()) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds n = {n}")));
    }
    let q = F::one() - p;
    let nf = F::lit(n as f64);
    let kf = F::lit(k as f64);
    if p == F::zero() {
        return Ok(if k == 0 { F::zero() } else { F::neg_infinity() });
    }
    if q == F::zero() {
        return Ok(if k == n { F::zero() } else { F::neg_infinity() });
    }
    if k == 0 {
        if n == 0 {
            return Ok(F::zero());
        }
        return Ok(if p < F::lit(0.1) {
            -deviance_term(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        });
    }
    if k == n {
        return Ok(if q < F::lit(0.1) {
            -deviance_term(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        });
    }
    let rest = nf - kf;
    let lc = stirling_error(nf) - stirling_error(kf) - stirling_error(rest)
        - deviance_term(kf, nf * p)
        - deviance_term(rest, nf * q);
    let lf = F::TAU().ln() + kf.ln() + (-kf / nf).ln_1p();
    Ok(lc - F::lit(0.5) * lf)
}

/// `P(K = k)` for `K ~ Binomial(n, p)`.
pub fn binomial_pmf<F: Real>(n: u64, p: F, k: u64) -> Result<F> {
    binomial_ln_pmf(n, p, k).map(F::exp)
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_choose<F: Real>(n: u64, k: u64) -> F {
    let one = F::one();
    ln_gamma(F::lit(n as f64) + one) - ln_gamma(F::lit(k as f64) + one) - ln_gamma(F::lit((n - k) as f64) + one)
}

/// Two-sided exact binomial test p-value: total mass of outcomes no more
/// likely than the observed one.
pub fn binomial_test_two_sided(n: u64, p: f64, k: u64) -> Result<f64> {
    let observed = binomial_ln_pmf(n, p, k)?;
    let slack = 1e-7_f64.ln_1p();
    let mut total = 0.0;
    for j in 0..=n {
        let lp = binomial_ln_pmf(n, p, j)?;
        if lp <= observed + slack {
            total += lp.exp();
        }
    }
    Ok(total.min(1.0))
}
