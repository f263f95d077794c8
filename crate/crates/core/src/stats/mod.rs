//! Statistical analysis of visit tables: exact binomial reference law,
//! frequentist checks, the Bayesian mixed model and model comparison.

pub mod binomial;
pub mod chisq;
pub mod diagnostics;
pub mod glmm;
pub mod loo;
pub mod screen;

pub use binomial::{binomial_ln_pmf, binomial_pmf, binomial_test_two_sided};
pub use chisq::{chi_square_uniformity, histogram_gof, ChiSquareTest};
pub use glmm::{fit_glmm, sample_posterior, GlmmData, InterceptPrior, McmcSettings, ModelSpec, ModelVariant, PosteriorFit, Priors};
pub use loo::{compare_models, elpd, ComparisonTable, ElpdEstimate, ElpdMethod};
pub use screen::{screen_cell_effects, summarize, summary_csv, CellEffectScreen, Level};
