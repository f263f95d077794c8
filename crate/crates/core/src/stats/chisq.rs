use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::experiment::VisitTable;

/// Pearson chi-square test outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Some expected count is below 5, so the asymptotic p-value is unreliable.
    pub low_expected: bool,
}

fn upper_tail(statistic: f64, dof: usize) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::domain(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson test of observed counts against expected counts.
pub fn pearson(observed: &[u64], expected: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::domain("need at least two matching observed/expected bins"));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::domain("expected counts must be positive"));
    }
    let statistic = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum::<f64>();
    let dof = observed.len() - 1;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof)?,
        low_expected: expected.iter().any(|&e| e < 5.0),
    })
}

/// Pooled per-cell counts against equal expected counts `total / 1024`.
pub fn chi_square_uniformity(table: &VisitTable) -> Result<ChiSquareTest> {
    let pooled = table.pooled();
    let total: u64 = pooled.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("no visits recorded".into()));
    }
    let e = total as f64 / pooled.len() as f64;
    pearson(&pooled, &vec![e; pooled.len()])
}

/// Goodness of fit of a count histogram (`observed[k]` records with value
/// `k`) to a discrete law with probabilities `probs[k]`. Bins are merged from
/// the upper tail until every expected count reaches `min_expected`; the last
/// bin absorbs all remaining probability mass.
pub fn histogram_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> Result<ChiSquareTest> {
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("empty histogram".into()));
    }
    let n = total as f64;
    let mut obs_bins = Vec::new();
    let mut exp_bins = Vec::new();
    let mut acc_o = 0u64;
    let mut acc_p = 0.0;
    for k in 0..probs.len().max(observed.len()) {
        acc_o += observed.get(k).copied().unwrap_or(0);
        acc_p += probs.get(k).copied().unwrap_or(0.0);
        let rest: f64 = probs.iter().skip(k + 1).sum();
        if acc_p * n >= min_expected && rest * n >= min_expected {
            obs_bins.push(acc_o);
            exp_bins.push(acc_p * n);
            acc_o = 0;
            acc_p = 0.0;
        }
    }
    // tail bin: everything not yet emitted, including mass beyond `probs`
    let emitted_p: f64 = exp_bins.iter().sum::<f64>() / n;
    obs_bins.push(acc_o);
    exp_bins.push((1.0 - emitted_p).max(acc_p) * n);
    pearson(&obs_bins, &exp_bins)
}
