//! Posterior-mode optimizers: IWLS backfitting and componentwise gradient
//! boosting.
//!
//! Both engines walk a [`ModelFrame`] blockwise ("zigzag"): for parameter
//! `k` and block `j`, they form working quantities from the family's score
//! and curvature, then refit the block against the partial residual
//! `z_k − η_{k,−j}`. Backfitting applies full penalized IWLS steps and
//! retunes each smoothing variance by a golden-section search minimizing
//! the whole model's corrected AIC. Boosting instead computes shrunken
//! candidate updates for every block and applies only the best one per
//! iteration, yielding a variable-selection path.
//!
//! The result of either engine is a [`FitState`]: per-block coefficients
//! and smoothing variances, cached predictors, and mode-fit statistics
//! (log-likelihood, log-posterior, effective degrees of freedom, corrected
//! AIC).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::design::{BlockRef, CoefRef, ModelFrame, TermBlock};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::{cholesky_jittered, weighted_crossprod, weighted_xtv};
use crate::numeric::golden_section_min;

/// Default maximum number of backfitting sweeps.
pub const BACKFIT_MAX_ITER: usize = 400;
/// Default backfitting convergence tolerance on the relative predictor
/// change.
pub const BACKFIT_EPS: f64 = 1e-4;
/// Default maximum number of boosting iterations.
pub const BOOST_MAXIT: usize = 1000;
/// Default boosting step length.
pub const BOOST_NU: f64 = 0.1;
/// Smallest log-likelihood gain that keeps boosting running.
pub const BOOST_GAIN_TOL: f64 = 1e-8;
/// Inverse-gamma prior shape for smoothing variances.
pub const TAU2_PRIOR_A: f64 = 1.0;
/// Inverse-gamma prior scale for smoothing variances.
pub const TAU2_PRIOR_B: f64 = 1e-4;
/// Search window for `log τ²` in the mode-stage variance tuning.
const LOG_TAU2_RANGE: (f64, f64) = (-20.0, 20.0);
/// Weight clamp bounds.
const W_MIN: f64 = 1e-10;
const W_MAX: f64 = 1e10;

// ---------------------------------------------------------------------
// fit state
// ---------------------------------------------------------------------

/// Coefficients and bookkeeping of one design block.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub beta: Array1<f64>,
    /// Smoothing variance (smooth blocks only).
    pub tau2: Option<f64>,
    /// Effective degrees of freedom at the current weights.
    pub edf: f64,
}

/// Block states of one distribution parameter: parametric block first,
/// then term blocks in frame order.
#[derive(Debug, Clone)]
pub struct ParamState {
    pub parametric: BlockState,
    pub terms: Vec<BlockState>,
}

/// Selection path of a boosting run.
#[derive(Debug, Clone, Default)]
pub struct BoostPath {
    /// Identifier of the block updated at each iteration, e.g. `mu.p.x1`
    /// or `mu.s.s(x2)`.
    pub selection: Vec<String>,
    /// Cumulative log-likelihood contribution per term, appended at each
    /// of that term's selections.
    pub contribution: BTreeMap<String, Vec<f64>>,
    /// Deviance of the intercept-only state the path started from.
    pub null_deviance: f64,
}

impl BoostPath {
    /// Final cumulative contribution of every selected term.
    pub fn totals(&self) -> BTreeMap<String, f64> {
        self.contribution
            .iter()
            .map(|(k, path)| (k.clone(), *path.last().unwrap_or(&0.0)))
            .collect()
    }
}

/// Mode-fit result: per-block coefficients, cached predictors, and the
/// optimizer's summary statistics.
#[derive(Debug, Clone)]
pub struct FitState {
    pub params: Vec<ParamState>,
    /// Cached predictors η_k, always equal to the sum of the blocks'
    /// fitted values.
    pub eta: Vec<Array1<f64>>,
    pub loglik: f64,
    pub logpost: f64,
    pub edf: f64,
    pub aicc: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final value of the convergence criterion.
    pub eps: f64,
    /// Log-posterior after each completed sweep (backfitting only).
    pub logpost_path: Vec<f64>,
    /// Selection path (boosting only).
    pub boost: Option<BoostPath>,
}

impl FitState {
    /// Fresh state: coefficients at zero except intercepts, which start at
    /// the family's moment-based values; smoothing variances at their
    /// block defaults.
    pub fn init(frame: &ModelFrame) -> Self {
        let n = frame.n;
        let mut params = Vec::with_capacity(frame.params.len());
        for (k, param) in frame.params.iter().enumerate() {
            let mut beta = Array1::zeros(param.parametric.n_coef());
            if let Some(pos) = param
                .parametric
                .colnames
                .iter()
                .position(|c| c == "(Intercept)")
            {
                beta[pos] = frame.family.init_eta(k, &frame.y);
            }
            let parametric = BlockState {
                beta,
                tau2: None,
                edf: param.parametric.n_coef() as f64,
            };
            let terms = param
                .terms
                .iter()
                .map(|term| match term {
                    TermBlock::Smooth(b) => BlockState {
                        beta: Array1::zeros(b.n_coef()),
                        tau2: Some(b.tau2_init),
                        // before the first fit, budget the full column count
                        // so early variance tuning sees an honest model size
                        edf: b.n_coef() as f64,
                    },
                    TermBlock::Special(b) => BlockState {
                        beta: b.hooks.start(),
                        tau2: None,
                        edf: b.hooks.edf(),
                    },
                })
                .collect();
            params.push(ParamState { parametric, terms });
        }
        let mut state = FitState {
            params,
            eta: vec![Array1::zeros(n); frame.params.len()],
            loglik: f64::NAN,
            logpost: f64::NAN,
            edf: f64::NAN,
            aicc: f64::NAN,
            converged: false,
            iterations: 0,
            eps: f64::NAN,
            logpost_path: Vec::new(),
            boost: None,
        };
        state.eta = state.recompute_eta(frame);
        state
    }

    /// Recomputes every parameter's predictor from its blocks.
    pub fn recompute_eta(&self, frame: &ModelFrame) -> Vec<Array1<f64>> {
        frame
            .params
            .iter()
            .zip(self.params.iter())
            .map(|(param, state)| {
                let mut eta = param.parametric.x.dot(&state.parametric.beta);
                for (term, bs) in param.terms.iter().zip(state.terms.iter()) {
                    eta += &term_fitted(term, &bs.beta);
                }
                eta
            })
            .collect()
    }

    /// All coefficients flattened in the frame's canonical name order.
    pub fn flat_coefs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for param in &self.params {
            out.extend(param.parametric.beta.iter().copied());
            for term in &param.terms {
                out.extend(term.beta.iter().copied());
            }
        }
        out
    }

    /// Smoothing variances in the frame's `tau2_names` order.
    pub fn flat_tau2(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for param in &self.params {
            for term in &param.terms {
                if let Some(t) = term.tau2 {
                    out.push(t);
                }
            }
        }
        out
    }

    /// Sets one coefficient by registry name (used for user-supplied
    /// starting values).
    pub fn set_coef(&mut self, frame: &ModelFrame, name: &str, value: f64) -> Result<()> {
        let CoefRef { param, block, index } = frame
            .coef_ref(name)
            .ok_or_else(|| Error::Engine(format!("unknown coefficient `{name}`")))?;
        match block {
            BlockRef::Parametric => self.params[param].parametric.beta[index] = value,
            BlockRef::Term(j) => self.params[param].terms[j].beta[index] = value,
        }
        self.eta = self.recompute_eta(frame);
        Ok(())
    }

    /// Total effective degrees of freedom over all blocks.
    fn edf_total(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.parametric.edf + p.terms.iter().map(|t| t.edf).sum::<f64>())
            .sum()
    }

    /// Refreshes the cached fit statistics from the current coefficients.
    fn refresh_stats(&mut self, frame: &ModelFrame) -> Result<()> {
        let par = params_from_etas(&frame.family, &self.eta);
        self.loglik = frame.family.loglik(&frame.y, &par)?;
        self.logpost = self.loglik + log_prior_total(frame, self);
        self.edf = self.edf_total();
        self.aicc = aicc(self.loglik, self.edf, frame.n);
        Ok(())
    }
}

/// Fitted values of one term block at the given coefficients.
pub fn term_fitted(term: &TermBlock, beta: &Array1<f64>) -> Array1<f64> {
    match term {
        TermBlock::Smooth(b) => b.x.dot(beta),
        TermBlock::Special(b) => b.hooks.fitted(beta),
    }
}

/// Inverse-links every predictor to its parameter scale.
pub fn params_from_etas(family: &Family, etas: &[Array1<f64>]) -> Vec<Array1<f64>> {
    etas.iter()
        .enumerate()
        .map(|(k, eta)| eta.mapv(|e| family.link(k).inverse(e)))
        .collect()
}

/// Corrected AIC.
pub fn aicc(loglik: f64, edf: f64, n: usize) -> f64 {
    let n = n as f64;
    -2.0 * loglik + 2.0 * edf + 2.0 * edf * (edf + 1.0) / (n - edf - 1.0).max(1e-10)
}

/// Unnormalized inverse-gamma log-density at `x` with shape `a`, scale `b`
/// (normalization included; it is a constant per model anyway).
pub fn inverse_gamma_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Sum of all block log-priors at the current state: Gaussian penalty
/// kernels and inverse-gamma smoothing-variance priors for smooth blocks,
/// the term's own prior for special blocks, flat priors for parametric
/// blocks.
fn log_prior_total(frame: &ModelFrame, state: &FitState) -> f64 {
    let mut total = 0.0;
    for (param, pstate) in frame.params.iter().zip(state.params.iter()) {
        for (term, bs) in param.terms.iter().zip(pstate.terms.iter()) {
            match term {
                TermBlock::Smooth(b) => {
                    let tau2 = bs.tau2.expect("smooth block without tau2");
                    let kb = b.penalty.dot(&bs.beta);
                    total += -0.5 * bs.beta.dot(&kb) / tau2;
                    total += inverse_gamma_log_pdf(tau2, TAU2_PRIOR_A, TAU2_PRIOR_B);
                }
                TermBlock::Special(b) => {
                    total += b.hooks.log_prior(&bs.beta);
                }
            }
        }
    }
    total
}

// ---------------------------------------------------------------------
// working quantities and IWLS steps
// ---------------------------------------------------------------------

/// IWLS working weights and working response for one parameter.
#[derive(Debug, Clone)]
pub struct WorkingQuantities {
    /// Clamped curvature weights.
    pub w: Array1<f64>,
    /// Working response `z = η + score / w`.
    pub z: Array1<f64>,
}

/// Builds the working weights `w = hess` (clamped to `[1e-10, 1e10]`) and
/// working response `z = η_k + score/w` for parameter `k`.
pub fn working_quantities(
    family: &Family,
    k: usize,
    y: &Array1<f64>,
    etas: &[Array1<f64>],
) -> Result<WorkingQuantities> {
    let par = params_from_etas(family, etas);
    let score = family.score(k, y, &par);
    let hess = family.hess(k, y, &par);
    let w = hess.mapv(|h| h.clamp(W_MIN, W_MAX));
    let z = &etas[k] + &(&score / &w);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Engine(format!(
            "non-finite working response for parameter `{}`",
            family.param_names()[k]
        )));
    }
    Ok(WorkingQuantities { w, z })
}

/// Result of one penalized weighted least-squares solve.
#[derive(Debug, Clone)]
pub struct IwlsResult {
    pub beta: Array1<f64>,
    /// trace((XᵀWX + G)⁻¹ XᵀWX); equals the column count when G = 0.
    pub edf: f64,
    /// Ridge jitter that was needed to factorize the system (0 normally).
    pub jitter: f64,
}

/// Solves `β = (XᵀWX + G)⁻¹ XᵀW r` through a Cholesky factorization, with
/// `G = K/τ²` for penalized blocks and `G = 0` otherwise.
pub fn iwls_update(
    x: ArrayView2<f64>,
    w: ArrayView1<f64>,
    r: ArrayView1<f64>,
    penalty: Option<(ArrayView2<f64>, f64)>,
) -> Result<IwlsResult> {
    let xtwx = weighted_crossprod(x, w);
    let mut a = xtwx.clone();
    if let Some((k, tau2)) = penalty {
        a = a + &k.mapv(|v| v / tau2);
    }
    let (chol, jitter) = cholesky_jittered(a.view())?;
    let beta = chol.solve(weighted_xtv(x, w, r).view());
    let edf = if penalty.is_some() {
        chol.trace_of_solve(xtwx.view())
    } else {
        x.ncols() as f64
    };
    Ok(IwlsResult { beta, edf, jitter })
}

/// Outcome of the smoothing-variance line search for one smooth block.
struct Tau2Choice {
    tau2: f64,
    beta: Array1<f64>,
    edf: f64,
}

/// Selects τ² for one smooth block by golden-section search on log τ²,
/// minimizing the corrected AIC of the whole model with this block's
/// coefficients refit at each candidate.
#[allow(clippy::too_many_arguments)]
fn update_tau2(
    frame: &ModelFrame,
    k: usize,
    block_x: &Array2<f64>,
    block_penalty: &Array2<f64>,
    w: &Array1<f64>,
    r: &Array1<f64>,
    eta_rest: &Array1<f64>,
    etas: &[Array1<f64>],
    edf_other: f64,
) -> Result<Tau2Choice> {
    let xtwx = weighted_crossprod(block_x.view(), w.view());
    let xtwr = weighted_xtv(block_x.view(), w.view(), r.view());

    let solve_at = |log_tau2: f64| -> Result<(Array1<f64>, f64)> {
        let tau2 = log_tau2.exp();
        let a = &xtwx + &block_penalty.mapv(|v| v / tau2);
        let (chol, _) = cholesky_jittered(a.view())?;
        let beta = chol.solve(xtwr.view());
        let edf = chol.trace_of_solve(xtwx.view());
        Ok((beta, edf))
    };
    let criterion = |log_tau2: f64| -> f64 {
        let Ok((beta, edf)) = solve_at(log_tau2) else {
            return f64::INFINITY;
        };
        let eta_k = eta_rest + &block_x.dot(&beta);
        let mut etas_new = etas.to_vec();
        etas_new[k] = eta_k;
        let par = params_from_etas(&frame.family, &etas_new);
        match frame.family.loglik(&frame.y, &par) {
            Ok(ll) => aicc(ll, edf_other + edf, frame.n),
            Err(_) => f64::INFINITY,
        }
    };

    let (log_tau2, _) = golden_section_min(
        &criterion,
        LOG_TAU2_RANGE.0,
        LOG_TAU2_RANGE.1,
        1e-4,
    );
    let (beta, edf) = solve_at(log_tau2)?;
    Ok(Tau2Choice { tau2: log_tau2.exp(), beta, edf })
}

// ---------------------------------------------------------------------
// backfitting
// ---------------------------------------------------------------------

/// IWLS backfitting from fresh starting values. See [`backfit_from`].
pub fn backfit(frame: &ModelFrame, max_iter: usize, eps: f64) -> Result<FitState> {
    backfit_from(frame, FitState::init(frame), max_iter, eps)
}

/// IWLS backfitting from a given state: sweeps parameters and blocks in
/// order, applying penalized IWLS updates (with per-sweep smoothing
/// variance retuning for smooth blocks) until the largest relative
/// predictor change over one sweep drops below `eps`.
///
/// On non-convergence the state is still returned, flagged accordingly.
pub fn backfit_from(
    frame: &ModelFrame,
    mut state: FitState,
    max_iter: usize,
    eps: f64,
) -> Result<FitState> {
    state.boost = None;
    state.logpost_path.clear();
    let mut criterion = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let eta_before = state.eta.clone();

        for k in 0..frame.params.len() {
            sweep_parameter(frame, &mut state, k)?;
        }

        criterion = state
            .eta
            .iter()
            .zip(eta_before.iter())
            .map(|(now, before)| {
                let delta = (now - before).mapv(|v| v * v).sum().sqrt();
                let scale = before.mapv(|v| v * v).sum().sqrt();
                delta / (scale + 1e-10)
            })
            .fold(0.0f64, f64::max);

        state.refresh_stats(frame)?;
        state.logpost_path.push(state.logpost);

        if criterion < eps {
            break;
        }
    }

    state.iterations = iterations;
    state.eps = criterion;
    state.converged = criterion < eps;
    Ok(state)
}

/// One zigzag visit of every block of parameter `k`.
fn sweep_parameter(frame: &ModelFrame, state: &mut FitState, k: usize) -> Result<()> {
    let param = &frame.params[k];

    // parametric block (skipped when a parameter has no columns)
    if param.parametric.n_coef() > 0 {
        let wq = working_quantities(&frame.family, k, &frame.y, &state.eta)?;
        let fitted = param.parametric.x.dot(&state.params[k].parametric.beta);
        let eta_rest = &state.eta[k] - &fitted;
        let r = &wq.z - &eta_rest;
        let upd = iwls_update(param.parametric.x.view(), wq.w.view(), r.view(), None)?;
        state.eta[k] = &eta_rest + &param.parametric.x.dot(&upd.beta);
        state.params[k].parametric.beta = upd.beta;
        state.params[k].parametric.edf = upd.edf;
    }

    for j in 0..param.terms.len() {
        let wq = working_quantities(&frame.family, k, &frame.y, &state.eta)?;
        let beta_old = state.params[k].terms[j].beta.clone();
        let fitted = term_fitted(&param.terms[j], &beta_old);
        let eta_rest = &state.eta[k] - &fitted;
        let r = &wq.z - &eta_rest;

        match &param.terms[j] {
            TermBlock::Smooth(block) => {
                let bs = &state.params[k].terms[j];
                if block.tau2_fixed {
                    let tau2 = bs.tau2.unwrap_or(block.tau2_init);
                    let upd = iwls_update(
                        block.x.view(),
                        wq.w.view(),
                        r.view(),
                        Some((block.penalty.view(), tau2)),
                    )?;
                    state.eta[k] = &eta_rest + &block.x.dot(&upd.beta);
                    state.params[k].terms[j] = BlockState {
                        beta: upd.beta,
                        tau2: Some(tau2),
                        edf: upd.edf,
                    };
                } else {
                    let edf_other = state.edf_total() - bs.edf;
                    let choice = update_tau2(
                        frame,
                        k,
                        &block.x,
                        &block.penalty,
                        &wq.w,
                        &r,
                        &eta_rest,
                        &state.eta,
                        edf_other,
                    )?;
                    state.eta[k] = &eta_rest + &block.x.dot(&choice.beta);
                    state.params[k].terms[j] = BlockState {
                        beta: choice.beta,
                        tau2: Some(choice.tau2),
                        edf: choice.edf,
                    };
                }
            }
            TermBlock::Special(block) => {
                let beta = block.hooks.update(&wq.w, &r, &beta_old)?;
                state.eta[k] = &eta_rest + &block.hooks.fitted(&beta);
                state.params[k].terms[j] = BlockState {
                    beta,
                    tau2: None,
                    edf: block.hooks.edf(),
                };
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// boosting
// ---------------------------------------------------------------------

/// One boosting candidate: a block (or single parametric column) with its
/// shrunken update and the log-likelihood it would reach.
struct Candidate {
    param: usize,
    block: BlockRef,
    beta_new: Array1<f64>,
    eta_new: Array1<f64>,
    loglik: f64,
    id: String,
}

/// Componentwise gradient boosting: per iteration, refresh all intercepts,
/// evaluate a ν-shrunken IWLS update for every non-intercept parametric
/// column and every smooth block, and apply only the best one. Stops when
/// the best log-likelihood gain falls below `1e-8` or after `maxit`
/// iterations. Smoothing variances stay at their block defaults.
pub fn boost(frame: &ModelFrame, maxit: usize, nu: f64) -> Result<FitState> {
    for param in &frame.params {
        if param.terms.iter().any(|t| matches!(t, TermBlock::Special(_))) {
            return Err(Error::Engine(
                "boosting does not support special terms (no linear candidate update)".into(),
            ));
        }
    }

    let mut state = FitState::init(frame);
    let mut path = BoostPath::default();
    refresh_intercepts(frame, &mut state)?;
    {
        let par = params_from_etas(&frame.family, &state.eta);
        path.null_deviance = -2.0 * frame.family.loglik(&frame.y, &par)?;
    }

    let mut loglik = -0.5 * path.null_deviance;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..maxit {
        iterations += 1;
        refresh_intercepts(frame, &mut state)?;
        let par = params_from_etas(&frame.family, &state.eta);
        loglik = frame.family.loglik(&frame.y, &par)?;

        let mut best: Option<Candidate> = None;
        for k in 0..frame.params.len() {
            let wq = working_quantities(&frame.family, k, &frame.y, &state.eta)?;
            collect_parametric_candidates(frame, &state, k, &wq, nu, &mut best)?;
            collect_smooth_candidates(frame, &state, k, &wq, nu, &mut best)?;
        }

        let Some(best) = best else { break };
        let gain = best.loglik - loglik;
        if gain < BOOST_GAIN_TOL {
            converged = true;
            break;
        }

        state.eta[best.param] = best.eta_new;
        match best.block {
            BlockRef::Parametric => {
                state.params[best.param].parametric.beta = best.beta_new;
            }
            BlockRef::Term(j) => {
                state.params[best.param].terms[j].beta = best.beta_new;
            }
        }
        loglik = best.loglik;
        path.selection.push(best.id.clone());
        let entry = path.contribution.entry(best.id).or_default();
        let cumulative = entry.last().copied().unwrap_or(0.0) + gain;
        entry.push(cumulative);
    }

    // edf bookkeeping at the final weights, for reporting
    for k in 0..frame.params.len() {
        let wq = working_quantities(&frame.family, k, &frame.y, &state.eta)?;
        for (j, term) in frame.params[k].terms.iter().enumerate() {
            if let TermBlock::Smooth(block) = term {
                let tau2 = state.params[k].terms[j].tau2.unwrap_or(block.tau2_init);
                let xtwx = weighted_crossprod(block.x.view(), wq.w.view());
                let a = &xtwx + &block.penalty.mapv(|v| v / tau2);
                let (chol, _) = cholesky_jittered(a.view())?;
                state.params[k].terms[j].edf = chol.trace_of_solve(xtwx.view());
            }
        }
    }

    state.iterations = iterations;
    state.converged = converged;
    state.eps = f64::NAN;
    state.boost = Some(path);
    state.refresh_stats(frame)?;
    debug_assert!((state.loglik - loglik).abs() < 1e-8);
    Ok(state)
}

/// Full (unshrunken) IWLS refresh of every parameter's intercept.
fn refresh_intercepts(frame: &ModelFrame, state: &mut FitState) -> Result<()> {
    for (k, param) in frame.params.iter().enumerate() {
        let Some(pos) = param
            .parametric
            .colnames
            .iter()
            .position(|c| c == "(Intercept)")
        else {
            continue;
        };
        let wq = working_quantities(&frame.family, k, &frame.y, &state.eta)?;
        let old = state.params[k].parametric.beta[pos];
        // single-column solve: b = Σ w r / Σ w (the column is all ones)
        let eta_rest = state.eta[k].mapv(|v| v) - old;
        let r = &wq.z - &eta_rest;
        let b = wq.w.dot(&r) / wq.w.sum();
        state.params[k].parametric.beta[pos] = b;
        state.eta[k] = eta_rest + b;
    }
    Ok(())
}

fn collect_parametric_candidates(
    frame: &ModelFrame,
    state: &FitState,
    k: usize,
    wq: &WorkingQuantities,
    nu: f64,
    best: &mut Option<Candidate>,
) -> Result<()> {
    let param = &frame.params[k];
    for (j, colname) in param.parametric.colnames.iter().enumerate() {
        if colname == "(Intercept)" {
            continue;
        }
        let x_j = param.parametric.x.column(j);
        let beta_j = state.params[k].parametric.beta[j];
        let eta_rest = &state.eta[k] - &x_j.mapv(|v| v * beta_j);
        let r = &wq.z - &eta_rest;
        let denom: f64 = wq.w.iter().zip(x_j.iter()).map(|(w, x)| w * x * x).sum();
        if denom <= 0.0 {
            continue;
        }
        let numer: f64 = wq
            .w
            .iter()
            .zip(x_j.iter())
            .zip(r.iter())
            .map(|((w, x), r)| w * x * r)
            .sum();
        let b_full = numer / denom;
        let b_new = beta_j + nu * (b_full - beta_j);
        let eta_new = &eta_rest + &x_j.mapv(|v| v * b_new);
        consider_candidate(
            frame,
            k,
            BlockRef::Parametric,
            {
                let mut beta = state.params[k].parametric.beta.clone();
                beta[j] = b_new;
                beta
            },
            eta_new,
            format!("{}.p.{}", param.name, colname),
            state,
            best,
        )?;
    }
    Ok(())
}

fn collect_smooth_candidates(
    frame: &ModelFrame,
    state: &FitState,
    k: usize,
    wq: &WorkingQuantities,
    nu: f64,
    best: &mut Option<Candidate>,
) -> Result<()> {
    let param = &frame.params[k];
    for (j, term) in param.terms.iter().enumerate() {
        let TermBlock::Smooth(block) = term else { continue };
        let bs = &state.params[k].terms[j];
        let fitted = block.x.dot(&bs.beta);
        let eta_rest = &state.eta[k] - &fitted;
        let r = &wq.z - &eta_rest;
        let tau2 = bs.tau2.unwrap_or(block.tau2_init);
        let upd = iwls_update(
            block.x.view(),
            wq.w.view(),
            r.view(),
            Some((block.penalty.view(), tau2)),
        )?;
        let beta_new = &bs.beta + &(&upd.beta - &bs.beta).mapv(|v| v * nu);
        let eta_new = &eta_rest + &block.x.dot(&beta_new);
        consider_candidate(
            frame,
            k,
            BlockRef::Term(j),
            beta_new,
            eta_new,
            format!("{}.s.{}", param.name, block.label),
            state,
            best,
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn consider_candidate(
    frame: &ModelFrame,
    k: usize,
    block: BlockRef,
    beta_new: Array1<f64>,
    eta_new: Array1<f64>,
    id: String,
    state: &FitState,
    best: &mut Option<Candidate>,
) -> Result<()> {
    let mut etas = state.eta.clone();
    etas[k] = eta_new.clone();
    let par = params_from_etas(&frame.family, &etas);
    let Ok(loglik) = frame.family.loglik(&frame.y, &par) else {
        return Ok(()); // candidate leaves the family's parameter space
    };
    if !loglik.is_finite() {
        return Ok(());
    }
    if best.as_ref().map_or(true, |b| loglik > b.loglik) {
        *best = Some(Candidate { param: k, block, beta_new, eta_new, loglik, id });
    }
    Ok(())
}
