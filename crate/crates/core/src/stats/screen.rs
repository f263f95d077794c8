//! Credible-interval screening of cell effects and posterior summaries.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::{quantile_sorted, Real};
use crate::stats::diagnostics::diagnose;
use crate::stats::glmm::PosteriorFit;

/// Central interval coverage used for screening.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    P80,
    P95,
}

impl Level {
    pub fn coverage(self) -> f64 {
        match self {
            Level::P80 => 0.80,
            Level::P95 => 0.95,
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Level::P80 => 80,
            Level::P95 => 95,
        }
    }

    pub fn from_percent(p: u32) -> Option<Self> {
        match p {
            80 => Some(Level::P80),
            95 => Some(Level::P95),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellInterval {
    pub cell: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub overlaps_zero: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellEffectScreen {
    pub level: Level,
    pub cells: Vec<CellInterval>,
}

impl CellEffectScreen {
    /// Cells whose interval excludes zero.
    pub fn flagged(&self) -> impl Iterator<Item = &CellInterval> {
        self.cells.iter().filter(|c| !c.overlaps_zero)
    }

    pub fn n_flagged(&self) -> usize {
        self.flagged().count()
    }

    pub fn max_abs_median(&self) -> f64 {
        self.cells.iter().map(|c| c.median.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,median,lower,upper,overlaps_zero\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{:.6e},{:.6e},{:.6e},{}", c.cell, c.median, c.lower, c.upper, c.overlaps_zero);
        }
        s
    }

    /// Error-bar plot of the first `n_cells` intervals against a zero line.
    pub fn to_svg(&self, n_cells: usize) -> String {
        let shown = &self.cells[..n_cells.min(self.cells.len())];
        let (w, h) = (1000.0, 600.0);
        let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
        let mut lo = shown.iter().map(|c| c.lower).fold(0.0, f64::min);
        let mut hi = shown.iter().map(|c| c.upper).fold(0.0, f64::max);
        if hi - lo <= 0.0 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let y = |v: f64| top + (hi - v) / (hi - lo) * (h - top - bottom);
        let step = (w - left - right) / shown.len().max(1) as f64;
        let x = |i: usize| left + step * (i as f64 + 0.5);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1000 600" width="1000" height="600">"#);
        let _ = writeln!(s, r#"<rect x="0" y="0" width="1000" height="600" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="500" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">cell effects, {}% intervals</text>"#,
            self.level.percent()
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{z:.2}" x2="{x2}" y2="{z:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            z = y(0.0),
            x2 = w - right
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{b}" stroke="black"/>"#,
            b = h - bottom
        );
        for v in [lo + pad, 0.0, hi - pad] {
            let _ = writeln!(
                s,
                r#"<text x="{tx}" y="{ty:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
                tx = left - 6.0,
                ty = y(v) + 4.0
            );
        }
        for (i, c) in shown.iter().enumerate() {
            let colour = if c.overlaps_zero { "#1f4e79" } else { "#c0392b" };
            let _ = writeln!(
                s,
                r#"<line x1="{xi:.2}" y1="{y1:.2}" x2="{xi:.2}" y2="{y2:.2}" stroke="{colour}"/>"#,
                xi = x(i),
                y1 = y(c.lower),
                y2 = y(c.upper)
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{xi:.2}" cy="{ym:.2}" r="3" fill="{colour}"/>"#,
                xi = x(i),
                ym = y(c.median)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="500" y="590" text-anchor="middle" font-family="sans-serif" font-size="12">cell 0 to {}</text>"#,
            shown.len().saturating_sub(1)
        );
        s.push_str("</svg>\n");
        s
    }
}

fn sorted<F: Real>(draws: &[F]) -> Vec<f64> {
    let mut v: Vec<f64> = draws.iter().map(|x| x.to_f64_lossy()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Central posterior interval of every cell effect.
pub fn screen_cell_effects<F: Real>(fit: &PosteriorFit<F>, level: Level) -> Result<CellEffectScreen> {
    if fit.cell_effects.is_none() {
        return Err(Error::domain(format!(
            "the '{}' model has no cell effects to screen",
            fit.spec.variant.name()
        )));
    }
    let tail = (1.0 - level.coverage()) / 2.0;
    let cells = (0..fit.data.n_cells)
        .map(|c| {
            let v = sorted(&fit.cell_effect_draws(c).unwrap());
            let lower = quantile_sorted(&v, tail);
            let upper = quantile_sorted(&v, 1.0 - tail);
            CellInterval {
                cell: c,
                median: quantile_sorted(&v, 0.5),
                lower,
                upper,
                overlaps_zero: lower <= 0.0 && upper >= 0.0,
            }
        })
        .collect();
    Ok(CellEffectScreen { level, cells })
}

/// One line of the posterior summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub lo80: f64,
    pub hi80: f64,
    pub rhat: f64,
    pub ess: f64,
}

pub fn summarize<F: Real>(fit: &PosteriorFit<F>) -> Vec<ParamSummary> {
    use rayon::prelude::*;
    fit.parameter_chains()
        .into_par_iter()
        .map(|(name, chains)| {
            let all: Vec<F> = chains.iter().flatten().copied().collect();
            let v = sorted(&all);
            let d = diagnose(&name, &chains);
            ParamSummary {
                name,
                median: quantile_sorted(&v, 0.5),
                lo95: quantile_sorted(&v, 0.025),
                hi95: quantile_sorted(&v, 0.975),
                lo80: quantile_sorted(&v, 0.10),
                hi80: quantile_sorted(&v, 0.90),
                rhat: d.rhat,
                ess: d.ess,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[ParamSummary]) -> String {
    let mut s = String::from("param,median,lo95,hi95,lo80,hi80,rhat,ess\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.4},{:.1}",
            r.name, r.median, r.lo95, r.hi95, r.lo80, r.hi80, r.rhat, r.ess
        );
    }
    s
}
