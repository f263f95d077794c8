//! Convergence diagnostics for multi-chain MCMC output: rank-normalized
//! split-R̂ and effective sample size.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::scalar::Real;

/// Splits every chain in half, dropping the middle draw of odd-length chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks (average ranks for ties), shaped back
/// into chains.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut idx: Vec<(f64, usize)> = chains
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(i, x)| (x, i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &idx[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    let mut out = Vec::with_capacity(chains.len());
    let mut pos = 0;
    for c in chains {
        out.push(
            (0..c.len())
                .map(|k| std_normal.inverse_cdf((ranks[pos + k] - 0.375) / (s + 0.25)))
                .collect(),
        );
        pos += c.len();
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already-split chains.
fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    if w <= 0.0 {
        return if b_over_n > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size via Geyer's initial monotone sequence on the
/// multi-chain autocorrelation.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
        .collect();
    let acov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if var_plus <= 0.0 {
        return f64::NAN;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut even = 1.0;
    rho_hat[0] = even;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s < n - 4 && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    let mut k = 1;
    while k + 3 <= max_s {
        if rho_hat[k + 1] + rho_hat[k + 2] > rho_hat[k - 1] + rho_hat[k] {
            rho_hat[k + 1] = (rho_hat[k - 1] + rho_hat[k]) / 2.0;
            rho_hat[k + 2] = rho_hat[k + 1];
        }
        k += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    (total / tau).min(total * total.log10())
}

/// Diagnostics for one scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDiagnostic {
    pub name: String,
    /// Rank-normalized split-R̂, maximum of the bulk and folded versions.
    pub rhat: f64,
    /// Bulk effective sample size.
    pub ess: f64,
}

/// Split-R̂ on rank-normalized draws; also applied to the draws folded about
/// their median, and the larger value is reported.
pub fn rhat<F: Real>(chains: &[Vec<F>]) -> f64 {
    let chains = to_f64(chains);
    let split = split_chains(&chains);
    let bulk = rhat_raw(&rank_normalize(&split));
    let med = {
        let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        crate::scalar::quantile_sorted(&all, 0.5)
    };
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = rhat_raw(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Bulk ESS: Geyer ESS of the rank-normalized split chains.
pub fn ess_bulk<F: Real>(chains: &[Vec<F>]) -> f64 {
    ess_raw(&rank_normalize(&split_chains(&to_f64(chains))))
}

/// ESS of the raw draws (no rank normalization), as used for Monte-Carlo
/// standard errors of means.
pub fn ess_mean<F: Real>(chains: &[Vec<F>]) -> f64 {
    ess_raw(&split_chains(&to_f64(chains)))
}

pub fn diagnose<F: Real>(name: &str, chains: &[Vec<F>]) -> ParamDiagnostic {
    ParamDiagnostic {
        name: name.to_string(),
        rhat: rhat(chains),
        ess: ess_bulk(chains),
    }
}

fn to_f64<F: Real>(chains: &[Vec<F>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .map(|c| c.iter().map(|x| x.to_f64_lossy()).collect())
        .collect()
}
