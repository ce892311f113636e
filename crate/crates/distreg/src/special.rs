//! Special model terms: nonlinear-in-coefficients functions with their own
//! optimizer and sampler steps.
//!
//! A special term plugs into the engines exclusively through the
//! [`SpecialHooks`] trait: the backfitting optimizer calls [`SpecialHooks::update`]
//! with working weights and partial residuals, the MCMC sampler calls
//! [`SpecialHooks::propose`] with the term's log full conditional, and both
//! assemble predictors from [`SpecialHooks::fitted`]. Engines never look
//! inside a term, so new term types need no engine changes.
//!
//! The built-in special term is the Gompertz growth curve
//! `f(x; β) = β₁ · exp(−β₂ · exp(−β₃ · x))`, selected in formulas as
//! `s2(x, bs = "gc")`. Its fit is mean-centered over the training rows
//! (the absorbed level belongs to the intercept), it carries independent
//! N(0, 1000²) priors on the three coefficients instead of a smoothing
//! variance, and it reports a fixed 3 effective degrees of freedom.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array1;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::numeric::nelder_mead;
use crate::sampler::slice_step;

/// Slice-sampler window width for coordinate-wise proposals.
const SLICE_W: f64 = 1.0;
/// Slice-sampler expansion budget per side.
const SLICE_EXPAND: usize = 50;

/// The engine-facing interface of a special term.
///
/// Implementations must be pure given `(β, rng)`: `fitted` and `log_prior`
/// may not keep mutable state, so a term can be shared across engines.
pub trait SpecialHooks: Send + Sync + std::fmt::Debug {
    /// Number of coefficients.
    fn n_params(&self) -> usize;

    /// Starting coefficients for optimizers and samplers.
    fn start(&self) -> Array1<f64>;

    /// Effective degrees of freedom reported in summaries.
    fn edf(&self) -> f64;

    /// Log prior density of the coefficients.
    fn log_prior(&self, beta: &Array1<f64>) -> f64;

    /// Centered fitted values on the training rows.
    fn fitted(&self, beta: &Array1<f64>) -> Array1<f64>;

    /// Centered fitted values at new covariate values; the centering offset
    /// is the training-row mean, so train and new fits are comparable.
    fn fitted_at(&self, x_new: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64>;

    /// One optimizer step: improve `beta` against the weighted penalized
    /// least-squares objective `Σ w_i (r_i − fitted(β)_i)² − 2·log_prior(β)`.
    /// The returned coefficients never have a larger objective than `beta`.
    fn update(&self, w: &Array1<f64>, r: &Array1<f64>, beta: &Array1<f64>) -> Result<Array1<f64>>;

    /// One rejection-free sampler step on the term's log full conditional
    /// (log-likelihood plus log prior, as a function of the coefficients).
    fn propose(
        &self,
        beta: &Array1<f64>,
        log_conditional: &mut dyn FnMut(&Array1<f64>) -> f64,
        rng: &mut dyn RngCore,
    ) -> Result<Array1<f64>>;
}

/// Gompertz growth-curve term over a fixed training covariate.
#[derive(Debug, Clone)]
pub struct GompertzHooks {
    x: Array1<f64>,
    prior_sd: f64,
}

/// Builds the Gompertz special term for a training covariate column.
pub fn gompertz_term(x: Array1<f64>) -> Arc<dyn SpecialHooks> {
    Arc::new(GompertzHooks { x, prior_sd: 1000.0 })
}

impl GompertzHooks {
    #[cfg(test)]
    fn with_prior_sd(x: Array1<f64>, prior_sd: f64) -> Self {
        GompertzHooks { x, prior_sd }
    }

    fn raw(&self, x: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64> {
        x.mapv(|xi| gompertz_raw(xi, beta[0], beta[1], beta[2]))
    }

    fn training_mean(&self, beta: &Array1<f64>) -> f64 {
        self.raw(&self.x, beta).mean().unwrap_or(0.0)
    }

    fn objective(&self, w: &Array1<f64>, r: &Array1<f64>, beta: &Array1<f64>) -> f64 {
        let f = self.fitted(beta);
        let mut ss = 0.0;
        for i in 0..r.len() {
            let d = r[i] - f[i];
            ss += w[i] * d * d;
        }
        let value = ss - 2.0 * self.log_prior(beta);
        if value.is_finite() {
            value
        } else {
            f64::INFINITY
        }
    }
}

fn gompertz_raw(x: f64, b1: f64, b2: f64, b3: f64) -> f64 {
    b1 * (-b2 * (-b3 * x).exp()).exp()
}

impl SpecialHooks for GompertzHooks {
    fn n_params(&self) -> usize {
        3
    }

    fn start(&self) -> Array1<f64> {
        Array1::from_vec(vec![0.0, 0.5, 0.1])
    }

    fn edf(&self) -> f64 {
        3.0
    }

    fn log_prior(&self, beta: &Array1<f64>) -> f64 {
        let sd = self.prior_sd;
        beta.iter()
            .map(|b| {
                -0.5 * (b / sd) * (b / sd) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    }

    fn fitted(&self, beta: &Array1<f64>) -> Array1<f64> {
        let f = self.raw(&self.x, beta);
        let m = f.mean().unwrap_or(0.0);
        f - m
    }

    fn fitted_at(&self, x_new: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64> {
        let offset = self.training_mean(beta);
        self.raw(x_new, beta) - offset
    }

    fn update(&self, w: &Array1<f64>, r: &Array1<f64>, beta: &Array1<f64>) -> Result<Array1<f64>> {
        let objective = |b: &[f64]| {
            self.objective(w, r, &Array1::from_vec(b.to_vec()))
        };
        // derivative-free refinement from the current coefficients; the
        // incumbent is a simplex vertex, so the result never regresses
        let steps: Vec<f64> = beta.iter().map(|b| 0.25 * b.abs().max(1.0)).collect();
        let best = nelder_mead(&objective, beta.as_slice().unwrap(), &steps, 500, 1e-15);
        let mut best = Array1::from_vec(best);
        // restart from the default start when the incumbent basin is poor
        let restart = nelder_mead(
            &objective,
            self.start().as_slice().unwrap(),
            &[0.5, 0.5, 0.25],
            500,
            1e-15,
        );
        let restart = Array1::from_vec(restart);
        if self.objective(w, r, &restart) < self.objective(w, r, &best) {
            best = restart;
        }
        if !self.objective(w, r, &best).is_finite() {
            return Err(Error::Engine(
                "special-term update failed: objective is non-finite after restarts".into(),
            ));
        }
        Ok(best)
    }

    fn propose(
        &self,
        beta: &Array1<f64>,
        log_conditional: &mut dyn FnMut(&Array1<f64>) -> f64,
        rng: &mut dyn RngCore,
    ) -> Result<Array1<f64>> {
        let mut current = beta.clone();
        for j in 0..current.len() {
            let mut coord_target = |v: f64| {
                let mut candidate = current.clone();
                candidate[j] = v;
                log_conditional(&candidate)
            };
            current[j] = slice_step(&mut coord_target, current[j], SLICE_W, SLICE_EXPAND, rng)?;
        }
        Ok(current)
    }
}

/// Delegating wrapper that counts `update` and `propose` calls. Lets tests
/// assert that engines drive special terms only through the hook interface.
#[doc(hidden)]
#[derive(Debug)]
pub struct CountingHooks {
    inner: Arc<dyn SpecialHooks>,
    update_calls: AtomicUsize,
    propose_calls: AtomicUsize,
}

impl CountingHooks {
    pub fn new(inner: Arc<dyn SpecialHooks>) -> Arc<Self> {
        Arc::new(CountingHooks {
            inner,
            update_calls: AtomicUsize::new(0),
            propose_calls: AtomicUsize::new(0),
        })
    }

    pub fn update_calls(&self) -> usize {
        self.update_calls.load(Ordering::SeqCst)
    }

    pub fn propose_calls(&self) -> usize {
        self.propose_calls.load(Ordering::SeqCst)
    }
}

impl SpecialHooks for CountingHooks {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }
    fn start(&self) -> Array1<f64> {
        self.inner.start()
    }
    fn edf(&self) -> f64 {
        self.inner.edf()
    }
    fn log_prior(&self, beta: &Array1<f64>) -> f64 {
        self.inner.log_prior(beta)
    }
    fn fitted(&self, beta: &Array1<f64>) -> Array1<f64> {
        self.inner.fitted(beta)
    }
    fn fitted_at(&self, x_new: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64> {
        self.inner.fitted_at(x_new, beta)
    }
    fn update(&self, w: &Array1<f64>, r: &Array1<f64>, beta: &Array1<f64>) -> Result<Array1<f64>> {
        self.update_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.update(w, r, beta)
    }
    fn propose(
        &self,
        beta: &Array1<f64>,
        log_conditional: &mut dyn FnMut(&Array1<f64>) -> f64,
        rng: &mut dyn RngCore,
    ) -> Result<Array1<f64>> {
        self.propose_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.propose(beta, log_conditional, rng)
    }
}
