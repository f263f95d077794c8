//! Binomial mixed model of cell visits and its MCMC fit.
//!
//! ```text
//! y[c, r] ~ Binomial(n, p[c, r])
//! logit p[c, r] = a + η_c[c] + η_r[r]
//! η_c ~ Normal(0, σ_c),  η_r ~ Normal(0, σ_r)
//! a ~ Normal(0, 5),  σ_c, σ_r ~ HalfNormal(1)
//! ```
//!
//! The random effects are stored non-centered (`η = σ·z`) and updated by
//! adaptive random-walk Metropolis one coordinate at a time. Each σ is moved
//! jointly with its whole effect family, the effects being redrawn from a
//! Gaussian approximation of their conditional, and the intercept gets an
//! extra proposal from a Newton step on its own conditional. Each sweep also
//! makes two moves in the centered parameterization that leave the
//! likelihood unchanged: a scale move on σ holding η fixed, and a location
//! move shifting `a` against η.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::VisitTable;
use crate::puf::CELLS;
use crate::scalar::{binomial_logit_kernel, inv_logit, logit, softplus, Real};
use crate::stats::binomial::ln_choose;
use crate::stats::diagnostics::{diagnose, ParamDiagnostic};

/// Which random effects the linear predictor carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// `a + η_c + η_r`
    BothEffects,
    /// `a + η_c`
    CellOnly,
    /// `a`
    InterceptOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [
        ModelVariant::BothEffects,
        ModelVariant::CellOnly,
        ModelVariant::InterceptOnly,
    ];

    pub fn has_cell(self) -> bool {
        matches!(self, ModelVariant::BothEffects | ModelVariant::CellOnly)
    }

    pub fn has_run(self) -> bool {
        matches!(self, ModelVariant::BothEffects)
    }

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::BothEffects => "both",
            ModelVariant::CellOnly => "cell",
            ModelVariant::InterceptOnly => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InterceptPrior {
    /// Normal(0, scale) on the logit scale.
    Normal { scale: f64 },
    /// Jeffreys prior Beta(½, ½) on the probability scale.
    Jeffreys,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Priors {
    pub intercept: InterceptPrior,
    /// Scale of the half-normal prior on σ_c and σ_r.
    pub effect_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            intercept: InterceptPrior::Normal { scale: 5.0 },
            effect_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub priors: Priors,
}

impl ModelSpec {
    pub fn new(variant: ModelVariant) -> Self {
        Self {
            variant,
            priors: Priors::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McmcSettings {
    pub chains: usize,
    pub warmup: usize,
    /// Retained draws per chain.
    pub draws: usize,
    pub seed: u64,
    /// Robbins–Monro target acceptance rate for each coordinate.
    pub target_accept: f64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            target_accept: 0.4,
        }
    }
}

/// Observations for the sampler: a dense run-major `n_runs × n_cells` grid of
/// counts out of `n_trials`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlmmData {
    pub n_cells: usize,
    pub n_runs: usize,
    pub n_trials: u32,
    pub counts: Vec<u32>,
}

impl GlmmData {
    pub fn new(n_cells: usize, n_runs: usize, n_trials: u32, counts: Vec<u32>) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::domain("need at least one cell"));
        }
        if counts.len() != n_cells * n_runs {
            return Err(Error::domain("count grid does not match n_cells × n_runs"));
        }
        if counts.iter().any(|&y| y > n_trials) {
            return Err(Error::domain("a count exceeds the number of trials"));
        }
        Ok(Self {
            n_cells,
            n_runs,
            n_trials,
            counts,
        })
    }

    pub fn from_table(table: &VisitTable) -> Self {
        Self {
            n_cells: CELLS,
            n_runs: table.n_runs(),
            n_trials: table.n_trials_per_run(),
            counts: table.counts().to_vec(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.counts.len()
    }
}

/// Posterior draws, chain-major: draw `i` of chain `k` is at `k·draws + i`.
#[derive(Clone, Debug)]
pub struct PosteriorFit<F> {
    pub spec: ModelSpec,
    pub data: GlmmData,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub intercept: Vec<F>,
    pub sigma_cell: Option<Vec<F>>,
    pub sigma_run: Option<Vec<F>>,
    /// `[draw][cell]`
    pub cell_effects: Option<Vec<F>>,
    /// `[draw][run]`
    pub run_effects: Option<Vec<F>>,
    /// R̂ and ESS of `a_bar`, `sigma_cell`, `sigma_run` (those present).
    pub diagnostics: Vec<ParamDiagnostic>,
    /// Mean acceptance rate per chain over retained sweeps.
    pub acceptance: Vec<f64>,
}

impl<F: Real> PosteriorFit<F> {
    pub fn n_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    fn by_chain(&self, flat: &[F]) -> Vec<Vec<F>> {
        flat.chunks(self.draws_per_chain).map(<[F]>::to_vec).collect()
    }

    pub fn intercept_chains(&self) -> Vec<Vec<F>> {
        self.by_chain(&self.intercept)
    }

    /// All draws of η_c for one cell.
    pub fn cell_effect_draws(&self, cell: usize) -> Option<Vec<F>> {
        let n = self.data.n_cells;
        self.cell_effects
            .as_ref()
            .map(|e| (0..self.n_draws()).map(|d| e[d * n + cell]).collect())
    }

    /// All draws of η_r for one 0-based run.
    pub fn run_effect_draws(&self, run: usize) -> Option<Vec<F>> {
        let n = self.data.n_runs;
        self.run_effects
            .as_ref()
            .map(|e| (0..self.n_draws()).map(|d| e[d * n + run]).collect())
    }

    /// Named scalar parameters split by chain, in summary order.
    pub fn parameter_chains(&self) -> Vec<(String, Vec<Vec<F>>)> {
        let mut out = vec![("a_bar".to_string(), self.intercept_chains())];
        if let Some(s) = &self.sigma_cell {
            out.push(("sigma_cell".into(), self.by_chain(s)));
        }
        if let Some(s) = &self.sigma_run {
            out.push(("sigma_run".into(), self.by_chain(s)));
        }
        if self.cell_effects.is_some() {
            for c in 0..self.data.n_cells {
                let d = self.cell_effect_draws(c).unwrap();
                out.push((format!("eta_cell[{c}]"), self.by_chain(&d)));
            }
        }
        if self.run_effects.is_some() {
            for r in 0..self.data.n_runs {
                let d = self.run_effect_draws(r).unwrap();
                out.push((format!("eta_run[{}]", r + 1), self.by_chain(&d)));
            }
        }
        out
    }

    /// Linear predictor of observation `obs` (run-major index) at draw `d`.
    fn linear_predictor(&self, d: usize, obs: usize) -> F {
        let run = obs / self.data.n_cells;
        let cell = obs % self.data.n_cells;
        let mut theta = self.intercept[d];
        if let Some(e) = &self.cell_effects {
            theta = theta + e[d * self.data.n_cells + cell];
        }
        if let Some(e) = &self.run_effects {
            theta = theta + e[d * self.data.n_runs + run];
        }
        theta
    }

    /// Pointwise log-likelihood, draws × observations, evaluated on demand.
    pub fn log_lik(&self) -> LogLikMatrix<'_, F> {
        LogLikMatrix { fit: self }
    }
}

/// View of the `draws × observations` log-likelihood matrix. Columns are
/// computed from the stored draws when requested so that the full matrix
/// never has to be resident.
pub struct LogLikMatrix<'a, F> {
    fit: &'a PosteriorFit<F>,
}

impl<F: Real> LogLikMatrix<'_, F> {
    pub fn n_draws(&self) -> usize {
        self.fit.n_draws()
    }

    pub fn n_obs(&self) -> usize {
        self.fit.data.n_obs()
    }

    /// Observations with equal keys have identical columns.
    pub fn column_key(&self, obs: usize) -> (usize, usize, u32) {
        let data = &self.fit.data;
        let cell = if self.fit.cell_effects.is_some() { obs % data.n_cells } else { usize::MAX };
        let run = if self.fit.run_effects.is_some() { obs / data.n_cells } else { usize::MAX };
        (cell, run, data.counts[obs])
    }

    pub fn column(&self, obs: usize) -> Vec<F> {
        let data = &self.fit.data;
        let y = data.counts[obs];
        let yf = F::lit(y as f64);
        let n = F::lit(data.n_trials as f64);
        let constant: F = ln_choose(data.n_trials as u64, y as u64);
        (0..self.n_draws())
            .map(|d| constant + binomial_logit_kernel(yf, n, self.fit.linear_predictor(d, obs)))
            .collect()
    }

    /// Materializes the whole matrix row-major (`[draw][obs]`).
    pub fn to_dense(&self) -> Vec<F> {
        let (s, n) = (self.n_draws(), self.n_obs());
        let mut out = vec![F::zero(); s * n];
        for obs in 0..n {
            for (d, v) in self.column(obs).into_iter().enumerate() {
                out[d * n + obs] = v;
            }
        }
        out
    }
}

/// Per-coordinate random-walk scale with Robbins–Monro adaptation of its log.
#[derive(Clone, Copy, Debug)]
struct Step {
    log_scale: f64,
}

impl Step {
    fn new(scale: f64) -> Self {
        Self {
            log_scale: scale.ln(),
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn adapt(&mut self, accepted: bool, target: f64, gain: f64) {
        let a = if accepted { 1.0 } else { 0.0 };
        self.log_scale = (self.log_scale + gain * (a - target)).clamp(-20.0, 5.0);
    }
}

struct Chain<'a, F> {
    data: &'a GlmmData,
    variant: ModelVariant,
    priors: Priors,
    y: Vec<F>,
    n: F,
    a: F,
    log_sc: F,
    log_sr: F,
    z: Vec<F>,
    w: Vec<F>,
    eta_c: Vec<F>,
    eta_r: Vec<F>,
    ll: Vec<F>,
    scratch: Vec<F>,
    step_z: Vec<Step>,
    step_w: Vec<Step>,
    step_a: Step,
    step_sc: Step,
    step_sr: Step,
    step_sc_centered: Step,
    step_sr_centered: Step,
    step_shift_c: Step,
    step_shift_r: Step,
    rng: ChaCha20Rng,
    target: f64,
    gain: f64,
    adapting: bool,
    accepts: u64,
    proposals: u64,
}

fn normal<F: Real>(rng: &mut ChaCha20Rng) -> F {
    let x: f64 = rng.sample(StandardNormal);
    F::lit(x)
}

impl<'a, F: Real> Chain<'a, F> {
    fn new(data: &'a GlmmData, spec: &ModelSpec, settings: &McmcSettings, chain: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
        rng.set_stream(chain as u64 + 1);
        let total: f64 = data.counts.iter().map(|&y| y as f64).sum();
        let trials = data.n_obs() as f64 * data.n_trials as f64;
        let base = if trials > 0.0 {
            logit((total + 0.5) / (trials + 1.0))
        } else {
            0.0
        };
        let jitter: f64 = rng.sample(StandardNormal);
        let a = F::lit(base + 0.5 * jitter);
        let log_sc = F::lit(0.1f64.ln() + rng.sample::<f64, _>(StandardNormal));
        let log_sr = F::lit(0.1f64.ln() + rng.sample::<f64, _>(StandardNormal));
        let z: Vec<F> = if spec.variant.has_cell() {
            (0..data.n_cells).map(|_| normal(&mut rng)).collect()
        } else {
            vec![F::zero(); data.n_cells]
        };
        let w: Vec<F> = if spec.variant.has_run() {
            (0..data.n_runs).map(|_| normal(&mut rng)).collect()
        } else {
            vec![F::zero(); data.n_runs]
        };
        let mut chain = Self {
            data,
            variant: spec.variant,
            priors: spec.priors,
            y: data.counts.iter().map(|&y| F::lit(y as f64)).collect(),
            n: F::lit(data.n_trials as f64),
            a,
            log_sc,
            log_sr,
            eta_c: vec![F::zero(); data.n_cells],
            eta_r: vec![F::zero(); data.n_runs],
            z,
            w,
            ll: vec![F::zero(); data.n_obs()],
            scratch: vec![F::zero(); data.n_obs()],
            step_z: vec![Step::new(0.5); data.n_cells],
            step_w: vec![Step::new(0.5); data.n_runs],
            step_a: Step::new(0.1),
            step_sc: Step::new(0.3),
            step_sr: Step::new(0.3),
            step_sc_centered: Step::new(0.3),
            step_sr_centered: Step::new(0.3),
            step_shift_c: Step::new(0.05),
            step_shift_r: Step::new(0.05),
            rng,
            target: settings.target_accept,
            gain: 1.0,
            adapting: true,
            accepts: 0,
            proposals: 0,
        };
        chain.refresh();
        chain
    }

    fn sigma_c(&self) -> F {
        if self.variant.has_cell() { self.log_sc.exp() } else { F::zero() }
    }

    fn sigma_r(&self) -> F {
        if self.variant.has_run() { self.log_sr.exp() } else { F::zero() }
    }

    /// Recomputes η and the per-observation log-likelihood cache.
    fn refresh(&mut self) {
        let sc = self.sigma_c();
        let sr = self.sigma_r();
        for (e, &z) in self.eta_c.iter_mut().zip(&self.z) {
            *e = sc * z;
        }
        for (e, &w) in self.eta_r.iter_mut().zip(&self.w) {
            *e = sr * w;
        }
        let nc = self.data.n_cells;
        for r in 0..self.data.n_runs {
            for c in 0..nc {
                let i = r * nc + c;
                self.ll[i] = binomial_logit_kernel(self.y[i], self.n, self.a + self.eta_c[c] + self.eta_r[r]);
            }
        }
    }

    fn log_prior_intercept(&self, a: F) -> F {
        match self.priors.intercept {
            InterceptPrior::Normal { scale } => {
                let s = F::lit(scale);
                -(a * a) / (F::lit(2.0) * s * s)
            }
            InterceptPrior::Jeffreys => -F::lit(0.5) * (softplus(a) + softplus(-a)),
        }
    }

    /// Half-normal log density of σ plus the log-Jacobian of σ = exp(log σ).
    fn log_prior_log_sigma(&self, log_sigma: F) -> F {
        let s = F::lit(self.priors.effect_scale);
        let sigma = log_sigma.exp();
        -(sigma * sigma) / (F::lit(2.0) * s * s) + log_sigma
    }

    fn accept(&mut self, log_ratio: F) -> bool {
        self.proposals += 1;
        let u: f64 = self.rng.random();
        let ok = log_ratio.is_finite() && (log_ratio >= F::zero() || F::lit(u).ln() < log_ratio);
        if ok {
            self.accepts += 1;
        }
        ok
    }

    fn sweep(&mut self) {
        if self.variant.has_cell() {
            self.update_cells();
        }
        if self.variant.has_run() {
            self.update_runs();
        }
        self.update_intercept();
        self.newton_intercept();
        if self.variant.has_cell() {
            self.update_sigma_collapsed(true);
            self.update_sigma_centered(true);
            self.shift_intercept(true);
        }
        if self.variant.has_run() {
            self.update_sigma_collapsed(false);
            self.update_sigma_centered(false);
            self.shift_intercept(false);
        }
    }

    fn update_cells(&mut self) {
        let nc = self.data.n_cells;
        let nr = self.data.n_runs;
        let sc = self.sigma_c();
        for c in 0..nc {
            let step = F::lit(self.step_z[c].scale());
            let prop = self.z[c] + step * normal(&mut self.rng);
            let eta = sc * prop;
            let mut delta = -(prop * prop - self.z[c] * self.z[c]) / F::lit(2.0);
            for r in 0..nr {
                let i = r * nc + c;
                let v = binomial_logit_kernel(self.y[i], self.n, self.a + eta + self.eta_r[r]);
                self.scratch[r] = v;
                delta = delta + v - self.ll[i];
            }
            let ok = self.accept(delta);
            if ok {
                self.z[c] = prop;
                self.eta_c[c] = eta;
                for r in 0..nr {
                    self.ll[r * nc + c] = self.scratch[r];
                }
            }
            if self.adapting {
                self.step_z[c].adapt(ok, self.target, self.gain);
            }
        }
    }

    fn update_runs(&mut self) {
        let nc = self.data.n_cells;
        let sr = self.sigma_r();
        for r in 0..self.data.n_runs {
            let step = F::lit(self.step_w[r].scale());
            let prop = self.w[r] + step * normal(&mut self.rng);
            let eta = sr * prop;
            let mut delta = -(prop * prop - self.w[r] * self.w[r]) / F::lit(2.0);
            let base = r * nc;
            for c in 0..nc {
                let i = base + c;
                let v = binomial_logit_kernel(self.y[i], self.n, self.a + self.eta_c[c] + eta);
                self.scratch[c] = v;
                delta = delta + v - self.ll[i];
            }
            let ok = self.accept(delta);
            if ok {
                self.w[r] = prop;
                self.eta_r[r] = eta;
                self.ll[base..base + nc].copy_from_slice(&self.scratch[..nc]);
            }
            if self.adapting {
                self.step_w[r].adapt(ok, self.target, self.gain);
            }
        }
    }

    /// Fills `scratch` with the log-likelihood under (a, η_c, η_r) and
    /// returns the total change against the cache.
    fn full_delta(&mut self, a: F, eta_c: &[F], eta_r: &[F]) -> F {
        let nc = self.data.n_cells;
        let mut delta = F::zero();
        for r in 0..self.data.n_runs {
            let base = r * nc;
            let er = eta_r[r];
            for c in 0..nc {
                let i = base + c;
                let v = binomial_logit_kernel(self.y[i], self.n, a + eta_c[c] + er);
                self.scratch[i] = v;
                delta = delta + v - self.ll[i];
            }
        }
        delta
    }

    fn update_intercept(&mut self) {
        let prop = self.a + F::lit(self.step_a.scale()) * normal(&mut self.rng);
        let eta_c = std::mem::take(&mut self.eta_c);
        let eta_r = std::mem::take(&mut self.eta_r);
        let lik = self.full_delta(prop, &eta_c, &eta_r);
        self.eta_c = eta_c;
        self.eta_r = eta_r;
        let ratio = lik + self.log_prior_intercept(prop) - self.log_prior_intercept(self.a);
        let ok = self.accept(ratio);
        if ok {
            self.a = prop;
            std::mem::swap(&mut self.ll, &mut self.scratch);
        }
        if self.adapting {
            self.step_a.adapt(ok, self.target, self.gain);
        }
    }

    /// Gradient and curvature of the log prior of the intercept.
    fn intercept_prior_derivatives(&self, a: F) -> (F, F) {
        match self.priors.intercept {
            InterceptPrior::Normal { scale } => {
                let prec = F::one() / (F::lit(scale) * F::lit(scale));
                (-a * prec, prec)
            }
            InterceptPrior::Jeffreys => {
                let p = inv_logit(a);
                (F::lit(0.5) - p, p * (F::one() - p))
            }
        }
    }

    /// Log posterior gradient and curvature in the intercept at `a`.
    fn intercept_derivatives(&self, a: F) -> (F, F) {
        let nc = self.data.n_cells;
        let (mut g, mut h) = self.intercept_prior_derivatives(a);
        for r in 0..self.data.n_runs {
            for c in 0..nc {
                let i = r * nc + c;
                let p = inv_logit(a + self.eta_c[c] + self.eta_r[r]);
                let np = self.n * p;
                g = g + self.y[i] - np;
                h = h + np * (F::one() - p);
            }
        }
        (g, h)
    }

    /// Intercept proposal from one Newton step on its conditional, corrected
    /// by Metropolis–Hastings with the reverse step. The conditional is close
    /// to Gaussian, so this accepts nearly always and, unlike the random
    /// walk, moves a whole posterior width at a time.
    fn newton_intercept(&mut self) {
        let (g0, h0) = self.intercept_derivatives(self.a);
        let mean0 = self.a + g0 / h0;
        let prop = mean0 + normal::<F>(&mut self.rng) / h0.sqrt();
        let (g1, h1) = self.intercept_derivatives(prop);
        let mean1 = prop + g1 / h1;
        let eta_c = std::mem::take(&mut self.eta_c);
        let eta_r = std::mem::take(&mut self.eta_r);
        let lik = self.full_delta(prop, &eta_c, &eta_r);
        self.eta_c = eta_c;
        self.eta_r = eta_r;
        let half = F::lit(0.5);
        let log_q = |x: F, mean: F, h: F| half * h.ln() - half * h * (x - mean) * (x - mean);
        let ratio = lik + self.log_prior_intercept(prop) - self.log_prior_intercept(self.a) + log_q(self.a, mean1, h1)
            - log_q(prop, mean0, h0);
        if h0 > F::zero() && h1 > F::zero() && self.accept(ratio) {
            self.a = prop;
            std::mem::swap(&mut self.ll, &mut self.scratch);
        }
    }

    /// Joint move of one scale and its whole effect family. The new scale is a
    /// random walk on log σ; the effects are then drawn afresh from a Gaussian
    /// approximation to their conditional given that σ, the other parameters
    /// held fixed. When the approximation is accurate the move is close to an
    /// update of σ from its marginal posterior, which the one-at-a-time moves
    /// cannot achieve once σ is small and the effects are many.
    fn update_sigma_collapsed(&mut self, cell: bool) {
        let nc = self.data.n_cells;
        let k = if cell { nc } else { self.data.n_runs };
        let mut observed = vec![F::zero(); k];
        let mut expected = vec![F::zero(); k];
        for i in 0..self.data.n_obs() {
            let j = self.family_index(cell, i);
            observed[j] = observed[j] + self.y[i];
            expected[j] = expected[j] + self.n * inv_logit(self.family_base(cell, i));
        }
        let mut current =
            self.gaussian_conditional(cell, &observed, &expected, if cell { self.log_sc } else { self.log_sr });
        for _ in 0..COLLAPSED_REPEATS {
            if let Some(next) = self.collapsed_step(cell, &observed, &expected, &current) {
                current = next;
            }
        }
    }

    fn family_index(&self, cell: bool, i: usize) -> usize {
        if cell { i % self.data.n_cells } else { i / self.data.n_cells }
    }

    /// Linear predictor of observation `i` without the family's effect.
    fn family_base(&self, cell: bool, i: usize) -> F {
        let nc = self.data.n_cells;
        if cell { self.a + self.eta_r[i / nc] } else { self.a + self.eta_c[i % nc] }
    }

    /// Gaussian approximation `(mean, precision)` to each effect's
    /// conditional at scale `exp(log_sigma)`. The expansion point is the mode
    /// under a Poisson approximation to the pooled count, `observed ≈
    /// expected·e^η`; one exact pass then supplies the gradient and curvature
    /// there.
    fn gaussian_conditional(&self, cell: bool, observed: &[F], expected: &[F], log_sigma: F) -> (Vec<F>, Vec<F>) {
        let inv_var = (-(log_sigma + log_sigma)).exp();
        let k = observed.len();
        let centre: Vec<F> = (0..k).map(|j| pooled_mode(observed[j], expected[j], inv_var)).collect();
        let mut g = vec![F::zero(); k];
        let mut h = vec![F::zero(); k];
        for i in 0..self.data.n_obs() {
            let j = self.family_index(cell, i);
            let p = inv_logit(self.family_base(cell, i) + centre[j]);
            let np = self.n * p;
            g[j] = g[j] + self.y[i] - np;
            h[j] = h[j] + np * (F::one() - p);
        }
        let prec: Vec<F> = h.iter().map(|&hj| hj + inv_var).collect();
        let mean = (0..k).map(|j| (h[j] * centre[j] + g[j]) / prec[j]).collect();
        (mean, prec)
    }

    /// One joint proposal; returns the approximation at the new scale if
    /// accepted.
    fn collapsed_step(
        &mut self,
        cell: bool,
        observed: &[F],
        expected: &[F],
        current: &(Vec<F>, Vec<F>),
    ) -> Option<(Vec<F>, Vec<F>)> {
        let (cur, step) = if cell {
            (self.log_sc, self.step_sc.scale())
        } else {
            (self.log_sr, self.step_sr.scale())
        };
        let prop = cur + F::lit(step) * normal(&mut self.rng);
        let proposal = self.gaussian_conditional(cell, observed, expected, prop);
        let half = F::lit(0.5);
        // log N(η | 0, σ) − log q(η | σ), constants dropped
        let weight = |eta: &[F], log_sigma: F, q: &(Vec<F>, Vec<F>)| -> F {
            let inv_var = (-(log_sigma + log_sigma)).exp();
            eta.iter()
                .zip(q.0.iter().zip(&q.1))
                .map(|(&e, (&m, &prec))| {
                    let d = e - m;
                    -half * e * e * inv_var - log_sigma + half * d * d * prec - half * prec.ln()
                })
                .sum()
        };
        let fresh: Vec<F> = proposal
            .0
            .iter()
            .zip(&proposal.1)
            .map(|(&m, &prec)| m + normal::<F>(&mut self.rng) / prec.sqrt())
            .collect();
        let old = if cell { std::mem::take(&mut self.eta_c) } else { std::mem::take(&mut self.eta_r) };
        let lik = if cell {
            let er = std::mem::take(&mut self.eta_r);
            let d = self.full_delta(self.a, &fresh, &er);
            self.eta_r = er;
            d
        } else {
            let ec = std::mem::take(&mut self.eta_c);
            let d = self.full_delta(self.a, &ec, &fresh);
            self.eta_c = ec;
            d
        };
        let ratio = lik + self.log_prior_log_sigma(prop) - self.log_prior_log_sigma(cur)
            + weight(&fresh, prop, &proposal)
            - weight(&old, cur, current);
        let ok = self.accept(ratio);
        let sigma = if ok { prop.exp() } else { cur.exp() };
        let eta = if ok { fresh } else { old };
        if cell {
            if ok {
                self.log_sc = prop;
            }
            for (z, &e) in self.z.iter_mut().zip(&eta) {
                *z = e / sigma;
            }
            self.eta_c = eta;
        } else {
            if ok {
                self.log_sr = prop;
            }
            for (w, &e) in self.w.iter_mut().zip(&eta) {
                *w = e / sigma;
            }
            self.eta_r = eta;
        }
        if ok {
            std::mem::swap(&mut self.ll, &mut self.scratch);
        }
        let st = if cell { &mut self.step_sc } else { &mut self.step_sr };
        if self.adapting {
            st.adapt(ok, self.target, self.gain);
        }
        ok.then_some(proposal)
    }

    /// Scale move with η held fixed; the likelihood does not change.
    fn update_sigma_centered(&mut self, cell: bool) {
        let (cur, step, eta) = if cell {
            (self.log_sc, self.step_sc_centered.scale(), &self.eta_c)
        } else {
            (self.log_sr, self.step_sr_centered.scale(), &self.eta_r)
        };
        let k = F::from_usize_lossy(eta.len());
        let ss: F = eta.iter().map(|&e| e * e).sum();
        let log_target = |ls: F| -> F {
            let var = (ls + ls).exp();
            -k * ls - ss / (F::lit(2.0) * var)
        };
        let prop = cur + F::lit(step) * normal(&mut self.rng);
        let ratio = log_target(prop) - log_target(cur) + self.log_prior_log_sigma(prop) - self.log_prior_log_sigma(cur);
        let ok = self.accept(ratio);
        if ok {
            let sigma = prop.exp();
            if cell {
                self.log_sc = prop;
                for (z, &e) in self.z.iter_mut().zip(&self.eta_c) {
                    *z = e / sigma;
                }
            } else {
                self.log_sr = prop;
                for (w, &e) in self.w.iter_mut().zip(&self.eta_r) {
                    *w = e / sigma;
                }
            }
        }
        let st = if cell { &mut self.step_sc_centered } else { &mut self.step_sr_centered };
        if self.adapting {
            st.adapt(ok, self.target, self.gain);
        }
    }

    /// Moves `a` by δ and every η of one family by −δ; the likelihood does
    /// not change.
    fn shift_intercept(&mut self, cell: bool) {
        let step = if cell { self.step_shift_c.scale() } else { self.step_shift_r.scale() };
        let delta = F::lit(step) * normal(&mut self.rng);
        let (eta, sigma) = if cell {
            (&self.eta_c, self.sigma_c())
        } else {
            (&self.eta_r, self.sigma_r())
        };
        let two_var = F::lit(2.0) * sigma * sigma;
        let prior_eta: F = eta
            .iter()
            .map(|&e| {
                let moved = e - delta;
                -(moved * moved - e * e) / two_var
            })
            .sum();
        let ratio = prior_eta + self.log_prior_intercept(self.a + delta) - self.log_prior_intercept(self.a);
        let ok = self.accept(ratio);
        if ok {
            self.a = self.a + delta;
            if cell {
                for (e, z) in self.eta_c.iter_mut().zip(self.z.iter_mut()) {
                    *e = *e - delta;
                    *z = *e / sigma;
                }
            } else {
                for (e, w) in self.eta_r.iter_mut().zip(self.w.iter_mut()) {
                    *e = *e - delta;
                    *w = *e / sigma;
                }
            }
        }
        let st = if cell { &mut self.step_shift_c } else { &mut self.step_shift_r };
        if self.adapting {
            st.adapt(ok, self.target, self.gain);
        }
    }
}

struct ChainOutput<F> {
    intercept: Vec<F>,
    sigma_cell: Vec<F>,
    sigma_run: Vec<F>,
    cell_effects: Vec<F>,
    run_effects: Vec<F>,
    acceptance: f64,
}

/// Root of `y − e·exp(η) − η·v`, which is concave and decreasing in η.
/// Newton's method started to the right of the root converges monotonically.
fn pooled_mode<F: Real>(y: F, e: F, v: F) -> F {
    if e <= F::zero() {
        return y / v;
    }
    let mut eta = ((y + F::lit(0.5)) / e).ln().max(F::zero());
    for _ in 0..50 {
        let m = e * eta.exp();
        let step = (y - m - eta * v) / (m + v);
        eta = eta + step;
        if step.abs() < F::lit(1e-10) {
            break;
        }
    }
    eta
}

fn run_chain<F: Real>(data: &GlmmData, spec: &ModelSpec, settings: &McmcSettings, index: usize) -> ChainOutput<F> {
    let mut chain = Chain::<F>::new(data, spec, settings, index);
    for t in 0..settings.warmup {
        chain.gain = ((t + 1) as f64).powf(-0.6);
        chain.sweep();
        // guard against drift in the cached likelihood
        if (t + 1) % 100 == 0 {
            chain.refresh();
        }
    }
    chain.adapting = false;
    chain.refresh();
    chain.accepts = 0;
    chain.proposals = 0;

    let keep_cells = spec.variant.has_cell();
    let keep_runs = spec.variant.has_run();
    let mut out = ChainOutput {
        intercept: Vec::with_capacity(settings.draws),
        sigma_cell: Vec::new(),
        sigma_run: Vec::new(),
        cell_effects: Vec::with_capacity(if keep_cells { settings.draws * data.n_cells } else { 0 }),
        run_effects: Vec::with_capacity(if keep_runs { settings.draws * data.n_runs } else { 0 }),
        acceptance: 0.0,
    };
    for _ in 0..settings.draws {
        chain.sweep();
        out.intercept.push(chain.a);
        if keep_cells {
            out.sigma_cell.push(chain.sigma_c());
            out.cell_effects.extend_from_slice(&chain.eta_c);
        }
        if keep_runs {
            out.sigma_run.push(chain.sigma_r());
            out.run_effects.extend_from_slice(&chain.eta_r);
        }
    }
    out.acceptance = chain.accepts as f64 / chain.proposals.max(1) as f64;
    out
}

/// Runs the sampler without input or convergence checks. Chains execute in
/// parallel.
pub fn sample_posterior<F: Real>(data: &GlmmData, spec: &ModelSpec, settings: &McmcSettings) -> PosteriorFit<F> {
    let outputs: Vec<ChainOutput<F>> = (0..settings.chains)
        .into_par_iter()
        .map(|k| run_chain(data, spec, settings, k))
        .collect();
    let concat = |f: &dyn Fn(&ChainOutput<F>) -> &Vec<F>| -> Vec<F> {
        outputs.iter().flat_map(|o| f(o).iter().copied()).collect()
    };
    let variant = spec.variant;
    let mut fit = PosteriorFit {
        spec: *spec,
        data: data.clone(),
        chains: settings.chains,
        draws_per_chain: settings.draws,
        intercept: concat(&|o| &o.intercept),
        sigma_cell: variant.has_cell().then(|| concat(&|o| &o.sigma_cell)),
        sigma_run: variant.has_run().then(|| concat(&|o| &o.sigma_run)),
        cell_effects: variant.has_cell().then(|| concat(&|o| &o.cell_effects)),
        run_effects: variant.has_run().then(|| concat(&|o| &o.run_effects)),
        diagnostics: Vec::new(),
        acceptance: outputs.iter().map(|o| o.acceptance).collect(),
    };
    if settings.draws >= 4 {
        fit.diagnostics = fit
            .parameter_chains()
            .into_iter()
            .take(1 + variant.has_cell() as usize + variant.has_run() as usize)
            .map(|(name, chains)| diagnose(&name, &chains))
            .collect();
    }
    fit
}

/// Joint scale moves per family per sweep; they share one expansion.
const COLLAPSED_REPEATS: usize = 3;

pub const RHAT_MAX: f64 = 1.01;
pub const ESS_MIN: f64 = 400.0;

/// Fits the mixed model to a visit table and refuses to return a fit whose
/// hyperparameters have not converged (R̂ ≥ 1.01 or ESS ≤ 400).
pub fn fit_glmm<F: Real>(table: &VisitTable, spec: &ModelSpec, settings: &McmcSettings) -> Result<PosteriorFit<F>> {
    if settings.chains < 2 {
        return Err(Error::domain("at least 2 chains are required"));
    }
    if settings.draws < 1000 {
        return Err(Error::domain("at least 1000 retained draws per chain are required"));
    }
    if table.n_trials_per_run() == 0 || table.counts().iter().all(|&c| c == 0) {
        return Err(Error::Degenerate(
            "every count is zero; the intercept has no finite posterior mode".into(),
        ));
    }
    let data = GlmmData::from_table(table);
    let fit = sample_posterior::<F>(&data, spec, settings);
    let failed: Vec<String> = fit
        .diagnostics
        .iter()
        .filter(|d| !(d.rhat < RHAT_MAX && d.ess > ESS_MIN))
        .map(|d| format!("{} (rhat {:.4}, ess {:.0})", d.name, d.rhat, d.ess))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Convergence(failed));
    }
    Ok(fit)
}

/// Posterior median of the global intercept on the logit and probability
/// scales.
pub fn intercept_median<F: Real>(fit: &PosteriorFit<F>) -> (F, F) {
    let mut a = fit.intercept.clone();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let m = crate::scalar::quantile_sorted(&a, 0.5);
    (m, inv_logit(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{mean, variance};

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(ModelVariant::from_name(v.name()), Some(v));
        }
        assert_eq!(ModelVariant::from_name("x"), None);
    }

    #[test]
    fn zero_table_is_degenerate() {
        let t = VisitTable::from_counts(2, vec![0; 2 * CELLS]).unwrap();
        let err = fit_glmm::<f64>(&t, &ModelSpec::new(ModelVariant::BothEffects), &McmcSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn settings_are_checked() {
        let t = VisitTable::from_counts(1, vec![1; CELLS]).unwrap();
        let spec = ModelSpec::new(ModelVariant::InterceptOnly);
        let one_chain = McmcSettings { chains: 1, ..Default::default() };
        assert!(fit_glmm::<f64>(&t, &spec, &one_chain).is_err());
        let short = McmcSettings { draws: 10, ..Default::default() };
        assert!(fit_glmm::<f64>(&t, &spec, &short).is_err());
    }

    #[test]
    fn prior_is_recovered_without_data() {
        let data = GlmmData::new(20, 0, 10, vec![]).unwrap();
        let spec = ModelSpec::new(ModelVariant::CellOnly);
        let settings = McmcSettings { chains: 4, warmup: 500, draws: 4000, seed: 9, ..Default::default() };
        let fit = sample_posterior::<f64>(&data, &spec, &settings);
        let a_mean = mean(&fit.intercept);
        let a_sd = variance(&fit.intercept).sqrt();
        assert!(a_mean.abs() < 0.5, "a mean {a_mean}");
        assert!((a_sd - 5.0).abs() < 0.5, "a sd {a_sd}");
        let sc = fit.sigma_cell.as_ref().unwrap();
        // half-normal(1): mean √(2/π) ≈ 0.798
        assert!((mean(sc) - 0.798).abs() < 0.08, "sigma mean {}", mean(sc));
        let eta0 = fit.cell_effect_draws(0).unwrap();
        // marginal sd of η = E[σ²]^½ = 1
        assert!((variance(&eta0).sqrt() - 1.0).abs() < 0.12);
    }

    #[test]
    fn log_lik_dimensions() {
        let data = GlmmData::new(4, 3, 5, vec![1, 0, 2, 0, 0, 1, 1, 1, 3, 0, 0, 0]).unwrap();
        let spec = ModelSpec::new(ModelVariant::BothEffects);
        let settings = McmcSettings { chains: 2, warmup: 20, draws: 30, seed: 1, ..Default::default() };
        let fit = sample_posterior::<f64>(&data, &spec, &settings);
        let ll = fit.log_lik();
        assert_eq!((ll.n_draws(), ll.n_obs()), (60, 12));
        assert_eq!(ll.to_dense().len(), 60 * 12);
        assert!(fit.sigma_cell.as_ref().unwrap().iter().all(|&s| s > 0.0));
        assert!(fit.sigma_run.as_ref().unwrap().iter().all(|&s| s > 0.0));
        // the stored likelihood agrees with a direct binomial evaluation
        let d = 17;
        let obs = 6; // run 1, cell 2
        let theta = fit.intercept[d] + fit.cell_effects.as_ref().unwrap()[d * 4 + 2] + fit.run_effects.as_ref().unwrap()[d * 3 + 1];
        let p = inv_logit(theta);
        let direct: f64 = crate::stats::binomial::binomial_ln_pmf(5, p, 1).unwrap();
        assert!((ll.column(obs)[d] - direct).abs() < 1e-9);
    }

    #[test]
    fn sampler_runs_in_f32() {
        let data = GlmmData::new(8, 4, 20, (0..32).map(|i| (i % 3) as u32).collect()).unwrap();
        let settings = McmcSettings { chains: 2, warmup: 50, draws: 50, seed: 3, ..Default::default() };
        let fit = sample_posterior::<f32>(&data, &ModelSpec::new(ModelVariant::BothEffects), &settings);
        assert!(fit.intercept.iter().all(|a| a.is_finite()));
    }
}
