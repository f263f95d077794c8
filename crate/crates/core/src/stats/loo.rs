//! Leave-one-out predictive accuracy from posterior draws via Pareto-smoothed
//! importance sampling, with WAIC as the fallback when the smoothed weights
//! are unreliable.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats::glmm::{LogLikMatrix, PosteriorFit};

/// Pareto shape above which importance weights are not trusted.
pub const K_THRESHOLD: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElpdMethod {
    Psis,
    Waic,
}

impl ElpdMethod {
    pub fn name(self) -> &'static str {
        match self {
            ElpdMethod::Psis => "psis-loo",
            ElpdMethod::Waic => "waic",
        }
    }
}

/// Pointwise elpd for one model.
#[derive(Clone, Debug)]
pub struct ElpdEstimate {
    pub method: ElpdMethod,
    pub pointwise: Vec<f64>,
    /// Pareto shape per observation (PSIS only).
    pub pareto_k: Vec<f64>,
    pub elpd: f64,
    pub se: f64,
}

impl ElpdEstimate {
    fn from_pointwise(method: ElpdMethod, pointwise: Vec<f64>, pareto_k: Vec<f64>) -> Self {
        let n = pointwise.len() as f64;
        let elpd = pointwise.iter().sum();
        let se = (n * sample_var(&pointwise)).sqrt();
        Self {
            method,
            pointwise,
            pareto_k,
            elpd,
            se,
        }
    }

    pub fn looic(&self) -> f64 {
        -2.0 * self.elpd
    }

    pub fn looic_se(&self) -> f64 {
        2.0 * self.se
    }

    pub fn max_k(&self) -> f64 {
        self.pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Generalized Pareto fit by the Zhang–Stephens profile-posterior method,
/// with the shape shrunk toward ½ as if from 10 prior observations.
/// `x` must be sorted ascending and non-negative. Returns `(k, sigma)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let x_star = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&v| (-t * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (k, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        return -sigma * (-p).ln_1p();
    }
    sigma * (-k * (-p).ln_1p()).exp_m1() / k
}

/// Pareto-smoothed, self-normalized log weights for one observation's log
/// ratios. Returns the weights and the fitted shape.
pub fn psis_weights(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let mut k = f64::NEG_INFINITY;
    if tail_len >= 5 && tail_len < s {
        let mut order: Vec<usize> = (0..s).collect();
        let pivot = s - tail_len - 1;
        order.select_nth_unstable_by(pivot, |&a, &b| lw[a].total_cmp(&lw[b]));
        let cutoff = lw[order[pivot]];
        let tail = &mut order[pivot + 1..];
        tail.sort_unstable_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let exp_cutoff = cutoff.exp();
        let x: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
        if x[x.len() - 1] > 0.0 {
            let (shape, sigma) = gpd_fit(&x);
            k = shape;
            if shape.is_finite() {
                for (j, &i) in tail.iter().enumerate() {
                    let p = (j as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, shape, sigma) + exp_cutoff).ln().min(0.0);
                }
            }
        }
    }
    let norm = log_sum_exp(&lw);
    for w in &mut lw {
        *w -= norm;
    }
    (lw, k)
}

fn psis_pointwise(ll: &[f64]) -> (f64, f64) {
    let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
    let (lw, k) = psis_weights(&ratios);
    let terms: Vec<f64> = lw.iter().zip(ll).map(|(w, l)| w + l).collect();
    (log_sum_exp(&terms), k)
}

fn waic_pointwise(ll: &[f64]) -> f64 {
    let lppd = log_sum_exp(ll) - (ll.len() as f64).ln();
    lppd - sample_var(ll)
}

/// Pointwise columns evaluated once per distinct key.
fn unique_columns<F: Real, T: Send>(ll: &LogLikMatrix<'_, F>, f: impl Fn(&[f64]) -> T + Sync) -> (Vec<T>, Vec<usize>) {
    let mut keys = HashMap::new();
    let mut reps = Vec::new();
    let slot: Vec<usize> = (0..ll.n_obs())
        .map(|obs| {
            *keys.entry(ll.column_key(obs)).or_insert_with(|| {
                reps.push(obs);
                reps.len() - 1
            })
        })
        .collect();
    let values = reps
        .par_iter()
        .map(|&obs| {
            let col: Vec<f64> = ll.column(obs).iter().map(|v| v.to_f64_lossy()).collect();
            f(&col)
        })
        .collect();
    (values, slot)
}

/// PSIS-LOO elpd; falls back to WAIC if any Pareto shape exceeds 0.7.
pub fn elpd<F: Real>(fit: &PosteriorFit<F>) -> ElpdEstimate {
    let ll = fit.log_lik();
    let (values, slot) = unique_columns(&ll, psis_pointwise);
    let pointwise: Vec<f64> = slot.iter().map(|&i| values[i].0).collect();
    let ks: Vec<f64> = slot.iter().map(|&i| values[i].1).collect();
    if ks.iter().any(|&k| k > K_THRESHOLD) {
        let (w, slot) = unique_columns(&ll, waic_pointwise);
        let pointwise = slot.iter().map(|&i| w[i]).collect();
        return ElpdEstimate::from_pointwise(ElpdMethod::Waic, pointwise, ks);
    }
    ElpdEstimate::from_pointwise(ElpdMethod::Psis, pointwise, ks)
}

/// WAIC elpd regardless of Pareto diagnostics.
pub fn waic<F: Real>(fit: &PosteriorFit<F>) -> ElpdEstimate {
    let ll = fit.log_lik();
    let (w, slot) = unique_columns(&ll, waic_pointwise);
    ElpdEstimate::from_pointwise(ElpdMethod::Waic, slot.iter().map(|&i| w[i]).collect(), Vec::new())
}

#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub model: String,
    pub method: ElpdMethod,
    pub elpd: f64,
    pub se: f64,
    /// This model's elpd minus the best model's; 0 for the best.
    pub elpd_diff: f64,
    pub se_diff: f64,
    pub max_k: f64,
}

impl ComparisonRow {
    pub fn looic(&self) -> f64 {
        -2.0 * self.elpd
    }

    pub fn looic_se(&self) -> f64 {
        2.0 * self.se
    }
}

/// Models ordered from best (highest elpd) to worst.
#[derive(Clone, Debug)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,looic,looic_se,elpd_diff,se_diff\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.3},{:.3},{:.3},{:.3}",
                r.model,
                r.looic(),
                r.looic_se(),
                r.elpd_diff,
                r.se_diff
            );
        }
        s
    }
}

/// Compares named elpd estimates on the same observations.
pub fn compare_estimates(estimates: &[(String, ElpdEstimate)]) -> Result<ComparisonTable> {
    let Some(first) = estimates.first() else {
        return Err(Error::domain("nothing to compare"));
    };
    let n = first.1.pointwise.len();
    if estimates.iter().any(|(_, e)| e.pointwise.len() != n) {
        return Err(Error::domain("models were fitted to different observation sets"));
    }
    let best = estimates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.elpd.total_cmp(&b.1 .1.elpd))
        .map(|(i, _)| i)
        .unwrap();
    let best_pw = &estimates[best].1.pointwise;
    let mut rows: Vec<ComparisonRow> = estimates
        .iter()
        .enumerate()
        .map(|(i, (name, e))| {
            let (diff, se_diff) = if i == best {
                (0.0, 0.0)
            } else {
                let d: Vec<f64> = e.pointwise.iter().zip(best_pw).map(|(a, b)| a - b).collect();
                (d.iter().sum(), (n as f64 * sample_var(&d)).sqrt())
            };
            ComparisonRow {
                model: name.clone(),
                method: e.method,
                elpd: e.elpd,
                se: e.se,
                elpd_diff: diff,
                se_diff,
                max_k: e.max_k(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.elpd_diff.total_cmp(&a.elpd_diff));
    Ok(ComparisonTable { rows })
}

/// Estimates elpd for each fit and compares them. All fits must share the
/// same observations.
pub fn compare_models<F: Real>(fits: &[&PosteriorFit<F>]) -> Result<ComparisonTable> {
    if let Some(first) = fits.first() {
        if fits.iter().any(|f| f.data != first.data) {
            return Err(Error::domain("models were fitted to different observation sets"));
        }
    }
    let estimates: Vec<(String, ElpdEstimate)> = fits
        .iter()
        .map(|f| (f.spec.variant.name().to_string(), elpd(*f)))
        .collect();
    compare_estimates(&estimates)
}

/// Paired difference `a − b` of two estimates with its standard error.
pub fn paired_difference(a: &ElpdEstimate, b: &ElpdEstimate) -> (f64, f64) {
    let d: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    (d.iter().sum(), (d.len() as f64 * sample_var(&d)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn gpd_fit_recovers_exponential_shape() {
        // exponential data: shape 0, shrunk toward 0.5 by 10 / (n + 10)
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut x: Vec<f64> = (0..2000).map(|_| Exp::new(2.0).unwrap().sample(&mut rng)).collect();
        x.sort_by(f64::total_cmp);
        let (k, sigma) = gpd_fit(&x);
        assert!(k.abs() < 0.08, "k {k}");
        assert!((sigma - 0.5).abs() < 0.05, "sigma {sigma}");
    }

    #[test]
    fn gpd_fit_recovers_heavy_tail() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (k_true, s_true) = (0.5, 1.0);
        let mut x: Vec<f64> = (0..4000)
            .map(|_| {
                let u: f64 = rand::Rng::random(&mut rng);
                gpd_quantile(u, k_true, s_true)
            })
            .collect();
        x.sort_by(f64::total_cmp);
        let (k, sigma) = gpd_fit(&x);
        assert!((k - 0.5).abs() < 0.08, "k {k}");
        assert!((sigma - 1.0).abs() < 0.15, "sigma {sigma}");
    }

    #[test]
    fn weights_are_normalized_and_truncated() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..1000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let (lw, k) = psis_weights(&r);
        assert!(k.is_finite());
        assert!((log_sum_exp(&lw)).abs() < 1e-12);
        let raw_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw_norm = log_sum_exp(&r.iter().map(|v| v - raw_max).collect::<Vec<_>>());
        // no smoothed weight exceeds the largest raw weight
        assert!(lw.iter().all(|&w| w <= -raw_norm + 1e-12));
    }

    #[test]
    fn constant_likelihood_is_exact() {
        let ll = vec![-1.25; 400];
        let (v, k) = psis_pointwise(&ll);
        assert!((v + 1.25).abs() < 1e-12);
        assert_eq!(k, f64::NEG_INFINITY);
        assert!((waic_pointwise(&ll) + 1.25).abs() < 1e-12);
    }

    fn fake_estimate(pw: Vec<f64>) -> ElpdEstimate {
        ElpdEstimate::from_pointwise(ElpdMethod::Psis, pw, vec![0.1])
    }

    #[test]
    fn self_comparison_is_zero() {
        let e = fake_estimate(vec![-1.0, -2.0, -0.5, -0.7]);
        let t = compare_estimates(&[("a".into(), e.clone()), ("b".into(), e)]).unwrap();
        for r in &t.rows {
            assert_eq!(r.elpd_diff, 0.0);
            assert_eq!(r.se_diff, 0.0);
            assert!((r.looic() + 2.0 * r.elpd).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_ordered_best_first() {
        let a = fake_estimate(vec![-1.0, -1.0, -1.0]);
        let b = fake_estimate(vec![-0.5, -1.5, -0.2]);
        let t = compare_estimates(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(t.rows[0].model, "b");
        assert_eq!(t.rows[0].elpd_diff, 0.0);
        assert!((t.rows[1].elpd_diff + 0.8).abs() < 1e-12);
        assert!(t.to_csv().starts_with("model,looic,looic_se,elpd_diff,se_diff\n"));
    }

    #[test]
    fn mismatched_sets_rejected() {
        let a = fake_estimate(vec![-1.0, -1.0]);
        let b = fake_estimate(vec![-1.0]);
        assert!(compare_estimates(&[("a".into(), a), ("b".into(), b)]).is_err());
    }
}
