//! Posterior samplers and sample statistics.
//!
//! * [`gmcmc`] — blockwise Metropolis–Hastings whose proposals are the
//!   penalized IWLS solution and curvature at the current state, with the
//!   asymmetric forward/reverse correction; smoothing variances are drawn
//!   from their inverse-gamma full conditionals; special terms move by
//!   coordinate-wise slice sampling through their own hooks.
//! * [`gibbs_lm`] — the conjugate normal–inverse-gamma Gibbs sampler for
//!   the homoskedastic linear model.
//! * [`slice_step`] — univariate stepping-out-and-shrinkage slice sampling,
//!   the building block used by special-term proposals.
//! * [`samplestats`] / [`waic`] — deviance and pointwise information
//!   criteria over a finished chain.
//!
//! All samplers return a [`SampleMatrix`]: one named column per
//! coefficient, per smoothing variance, and per distribution parameter's
//! acceptance rate, with one row per retained iteration.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::design::{BlockRef, ModelFrame, TermBlock};
use crate::engine::{
    params_from_etas, term_fitted, working_quantities, FitState, TAU2_PRIOR_A, TAU2_PRIOR_B,
};
use crate::error::{Error, Result};
use crate::linalg::{weighted_crossprod, weighted_xtv, Cholesky};

/// Hard cap on coefficients per sampled block; larger blocks error out
/// rather than grinding through dense factorizations.
pub const MAX_BLOCK_COEFS: usize = 2000;

/// Iteration plan of a sampler run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcOptions {
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcOptions {
    /// The blockwise MH defaults: 1200 iterations, 200 burn-in, no thinning.
    fn default() -> Self {
        McmcOptions { n_iter: 1200, burnin: 200, thin: 1, seed: 1 }
    }
}

impl McmcOptions {
    /// The conjugate Gibbs defaults: 12000 iterations, 2000 burn-in,
    /// thinning 10.
    pub fn gibbs_default() -> Self {
        McmcOptions { n_iter: 12000, burnin: 2000, thin: 10, seed: 1 }
    }
}

/// The retained iteration numbers: `burnin, burnin+thin, …` up to and
/// including `n_iter` (iterations count from 1).
pub fn retention_grid(n_iter: usize, burnin: usize, thin: usize) -> Result<Vec<usize>> {
    if burnin < 1 || burnin > n_iter {
        return Err(Error::Sampler(format!(
            "burnin must satisfy 1 <= burnin <= n_iter; got burnin={burnin}, n_iter={n_iter}"
        )));
    }
    if thin < 1 {
        return Err(Error::Sampler(format!("thin must be >= 1; got {thin}")));
    }
    Ok((burnin..=n_iter).step_by(thin).collect())
}

/// Mean acceptance probability of one sampled block over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRate {
    /// Block identifier, e.g. `mu.p` or `mu.s.s(x)`.
    pub id: String,
    pub rate: f64,
}

/// A finished chain: named draws plus the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub colnames: Vec<String>,
    /// One row per retained iteration.
    pub data: Array2<f64>,
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Per-block mean acceptance probabilities (empty for Gibbs runs).
    pub block_rates: Vec<BlockRate>,
}

impl SampleMatrix {
    /// Number of retained rows.
    pub fn nsave(&self) -> usize {
        self.data.nrows()
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.colnames.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.col_index(name).map(|j| self.data.column(j))
    }

    /// Posterior mean of one named column.
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        self.column(name).map(|c| c.mean().unwrap_or(f64::NAN))
    }

    /// Writes the draws as CSV: a header of column names, then one row per
    /// retained iteration, every value in shortest-round-trip decimal form
    /// so a reload reproduces the matrix bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{}", self.colnames.join(","))?;
        for row in self.data.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    write!(out, ",")?;
                }
                write!(out, "{v}")?;
                first = false;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads back a draw CSV written by [`SampleMatrix::write_csv`].
    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Sampler(format!("empty draw file {}", path.display())))??;
        let colnames: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut values = Vec::new();
        let mut nrows = 0;
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            for field in line.split(',') {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Sampler(format!("bad numeric field `{field}` in {}", path.display()))
                })?;
                values.push(v);
            }
            nrows += 1;
        }
        let data = Array2::from_shape_vec((nrows, colnames.len()), values)
            .map_err(|e| Error::Sampler(format!("ragged draw file {}: {e}", path.display())))?;
        Ok((colnames, data))
    }
}

// ---------------------------------------------------------------------
// decoding rows back into model states
// ---------------------------------------------------------------------

/// Maps sample-matrix columns back onto the frame's blocks, so chain rows
/// can be re-evaluated through the model.
#[derive(Debug, Clone)]
pub struct RowDecoder {
    /// Per parameter: parametric column indices, then per-term indices.
    per_param: Vec<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl RowDecoder {
    pub fn new(frame: &ModelFrame, colnames: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = colnames
            .iter()
            .enumerate()
            .map(|(j, c)| (c.as_str(), j))
            .collect();
        let lookup = |name: &str| -> Result<usize> {
            index.get(name).copied().ok_or_else(|| {
                Error::Sampler(format!("sample matrix lacks coefficient column `{name}`"))
            })
        };
        let names = frame.coef_names();
        let mut cursor = 0usize;
        let mut per_param = Vec::with_capacity(frame.params.len());
        for param in &frame.params {
            let mut parametric = Vec::with_capacity(param.parametric.n_coef());
            for _ in 0..param.parametric.n_coef() {
                parametric.push(lookup(&names[cursor])?);
                cursor += 1;
            }
            let mut terms = Vec::with_capacity(param.terms.len());
            for term in &param.terms {
                let mut cols = Vec::with_capacity(term.n_coef());
                for _ in 0..term.n_coef() {
                    cols.push(lookup(&names[cursor])?);
                    cursor += 1;
                }
                terms.push(cols);
            }
            per_param.push((parametric, terms));
        }
        Ok(RowDecoder { per_param })
    }

    /// Coefficients of one block in one chain row.
    pub fn block_beta(&self, row: ArrayView1<f64>, param: usize, block: &BlockRef) -> Array1<f64> {
        let cols = match block {
            BlockRef::Parametric => &self.per_param[param].0,
            BlockRef::Term(j) => &self.per_param[param].1[*j],
        };
        cols.iter().map(|&j| row[j]).collect()
    }

    /// Training-data predictors of one chain row.
    pub fn etas(&self, frame: &ModelFrame, row: ArrayView1<f64>) -> Vec<Array1<f64>> {
        frame
            .params
            .iter()
            .enumerate()
            .map(|(k, param)| {
                let beta = self.block_beta(row, k, &BlockRef::Parametric);
                let mut eta = if param.parametric.n_coef() > 0 {
                    param.parametric.x.dot(&beta)
                } else {
                    Array1::zeros(frame.n)
                };
                for (j, term) in param.terms.iter().enumerate() {
                    let beta = self.block_beta(row, k, &BlockRef::Term(j));
                    eta += &term_fitted(term, &beta);
                }
                eta
            })
            .collect()
    }
}

// ---------------------------------------------------------------------
// blockwise Metropolis–Hastings with IWLS proposals
// ---------------------------------------------------------------------

/// Result of one linear-block MH step.
struct MhStep {
    beta: Array1<f64>,
    alpha: f64,
}

/// Relative diagonal jitter applied to every proposal precision.
const PROPOSAL_JITTER: f64 = 1e-10;

/// One MH update of a linear block: propose from the penalized IWLS
/// solution and curvature at the current state, correct with the reverse
/// proposal evaluated at the proposed state.
#[allow(clippy::too_many_arguments)]
fn mh_linear_block<R: Rng>(
    frame: &ModelFrame,
    k: usize,
    x: ArrayView2<f64>,
    penalty: Option<(ArrayView2<f64>, f64)>,
    beta: &Array1<f64>,
    etas: &mut [Array1<f64>],
    block_id: &str,
    rng: &mut R,
) -> Result<MhStep> {
    let y = &frame.y;
    let family = &frame.family;
    let log_prior = |b: &Array1<f64>| -> f64 {
        match &penalty {
            Some((kmat, tau2)) => -0.5 * b.dot(&kmat.dot(b)) / tau2,
            None => 0.0,
        }
    };
    let factor = |a: Array2<f64>| -> Result<Cholesky> {
        let dim = a.nrows();
        let mut a = a;
        let bump = PROPOSAL_JITTER * a.diag().sum() / dim as f64;
        for i in 0..dim {
            a[[i, i]] += bump;
        }
        Cholesky::new(a.view()).ok_or_else(|| {
            Error::Sampler(format!(
                "proposal precision for block `{block_id}` is not positive definite after jitter"
            ))
        })
    };
    let precision_at = |w: &Array1<f64>| -> Result<Cholesky> {
        let mut a = weighted_crossprod(x, w.view());
        if let Some((kmat, tau2)) = &penalty {
            a = a + &kmat.mapv(|v| v / tau2);
        }
        factor(a)
    };

    let par0 = params_from_etas(family, etas);
    let ll0 = family.loglik(y, &par0)?;
    let wq0 = working_quantities(family, k, y, etas)?;
    let eta_rest = &etas[k] - &x.dot(beta);
    let r0 = &wq0.z - &eta_rest;
    let chol0 = precision_at(&wq0.w)?;
    let mu0 = chol0.solve(weighted_xtv(x, wq0.w.view(), r0.view()).view());
    let beta1 = chol0.sample_mvn_prec(mu0.view(), rng);
    let logq_fwd = chol0.mvn_log_density_prec(beta1.view(), mu0.view());
    let u: f64 = rng.gen();

    // evaluate the reverse move at the proposed state; any failure there
    // (invalid parameters, non-finite quantities) rejects the proposal
    let eta1 = &eta_rest + &x.dot(&beta1);
    let mut etas1: Vec<Array1<f64>> = etas.to_vec();
    etas1[k] = eta1.clone();
    let reverse = (|| -> Result<f64> {
        let par1 = params_from_etas(family, &etas1);
        let ll1 = family.loglik(y, &par1)?;
        let wq1 = working_quantities(family, k, y, &etas1)?;
        let r1 = &wq1.z - &eta_rest;
        let chol1 = precision_at(&wq1.w)?;
        let mu1 = chol1.solve(weighted_xtv(x, wq1.w.view(), r1.view()).view());
        let logq_rev = chol1.mvn_log_density_prec(beta.view(), mu1.view());
        Ok((ll1 + log_prior(&beta1)) - (ll0 + log_prior(beta)) + logq_rev - logq_fwd)
    })();

    let log_alpha = match reverse {
        Ok(v) if v.is_nan() => f64::NEG_INFINITY,
        Ok(v) => v,
        Err(_) => f64::NEG_INFINITY,
    };
    let alpha = log_alpha.exp().min(1.0);
    if u.ln() < log_alpha {
        etas[k] = eta1;
        Ok(MhStep { beta: beta1, alpha })
    } else {
        Ok(MhStep { beta: beta.clone(), alpha })
    }
}

/// Draws a smoothing variance from its inverse-gamma full conditional
/// `IG(a + rank(K)/2, b + βᵀKβ/2)`.
fn draw_tau2<R: Rng>(
    beta: &Array1<f64>,
    penalty: ArrayView2<f64>,
    rank: usize,
    rng: &mut R,
) -> f64 {
    let shape = TAU2_PRIOR_A + rank as f64 / 2.0;
    let scale_b = TAU2_PRIOR_B + 0.5 * beta.dot(&penalty.dot(beta));
    let gamma = Gamma::new(shape, 1.0 / scale_b).expect("inverse-gamma parameters");
    1.0 / gamma.sample(rng)
}

/// Blockwise MCMC over all model coefficients.
///
/// Per iteration, every parameter's blocks are visited in frame order:
/// parametric and smooth blocks move by Metropolis–Hastings with the IWLS
/// proposal; each non-fixed smoothing variance is then refreshed from its
/// inverse-gamma full conditional; special terms delegate to their own
/// `propose` hook (slice sampling, rejection-free). Retained rows hold
/// every coefficient, every smoothing variance, and each distribution
/// parameter's mean acceptance probability for that iteration.
pub fn gmcmc(frame: &ModelFrame, start: &FitState, opt: &McmcOptions) -> Result<SampleMatrix> {
    for (param, frame_param) in frame.params.iter().enumerate() {
        let check = |n_coef: usize, label: &str| -> Result<()> {
            if n_coef > MAX_BLOCK_COEFS {
                return Err(Error::Sampler(format!(
                    "block `{label}` of parameter `{}` has {n_coef} coefficients; \
                     the sampler caps blocks at {MAX_BLOCK_COEFS}",
                    frame.family.param_names()[param]
                )));
            }
            Ok(())
        };
        check(frame_param.parametric.n_coef(), "parametric")?;
        for term in &frame_param.terms {
            check(term.n_coef(), &term.label())?;
        }
    }

    let grid = retention_grid(opt.n_iter, opt.burnin, opt.thin)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opt.seed);

    let mut state = start.clone();
    state.eta = state.recompute_eta(frame);

    let param_names = frame.family.param_names();
    let mut colnames = frame.coef_names();
    colnames.extend(frame.tau2_names());
    for k in 0..frame.params.len() {
        colnames.push(format!("{}.alpha", param_names[k]));
    }

    let mut data = Array2::zeros((grid.len(), colnames.len()));
    let mut next_save = 0usize;
    let mut block_alpha_sums: Vec<(String, f64)> = Vec::new();
    for param in &frame.params {
        if param.parametric.n_coef() > 0 {
            block_alpha_sums.push((format!("{}.p", param.name), 0.0));
        }
        for term in &param.terms {
            block_alpha_sums.push((format!("{}.s.{}", param.name, term.label()), 0.0));
        }
    }

    for t in 1..=opt.n_iter {
        let mut rate_cursor = 0usize;
        let mut param_alphas: Vec<f64> = Vec::with_capacity(frame.params.len());
        for k in 0..frame.params.len() {
            let param = &frame.params[k];
            let mut alphas: Vec<f64> = Vec::new();

            if param.parametric.n_coef() > 0 {
                let beta = state.params[k].parametric.beta.clone();
                let step = mh_linear_block(
                    frame,
                    k,
                    param.parametric.x.view(),
                    None,
                    &beta,
                    &mut state.eta,
                    &format!("{}.p", param.name),
                    &mut rng,
                )?;
                state.params[k].parametric.beta = step.beta;
                alphas.push(step.alpha);
                block_alpha_sums[rate_cursor].1 += step.alpha;
                rate_cursor += 1;
            }

            for j in 0..param.terms.len() {
                match &param.terms[j] {
                    TermBlock::Smooth(block) => {
                        let beta = state.params[k].terms[j].beta.clone();
                        let tau2 = state.params[k].terms[j].tau2.unwrap_or(block.tau2_init);
                        let step = mh_linear_block(
                            frame,
                            k,
                            block.x.view(),
                            Some((block.penalty.view(), tau2)),
                            &beta,
                            &mut state.eta,
                            &format!("{}.s.{}", param.name, block.label),
                            &mut rng,
                        )?;
                        state.params[k].terms[j].beta = step.beta;
                        alphas.push(step.alpha);
                        block_alpha_sums[rate_cursor].1 += step.alpha;
                        rate_cursor += 1;

                        if !block.tau2_fixed {
                            let tau2_new = draw_tau2(
                                &state.params[k].terms[j].beta,
                                block.penalty.view(),
                                block.penalty_rank,
                                &mut rng,
                            );
                            state.params[k].terms[j].tau2 = Some(tau2_new);
                        }
                    }
                    TermBlock::Special(block) => {
                        let beta = state.params[k].terms[j].beta.clone();
                        let eta_rest = &state.eta[k] - &block.hooks.fitted(&beta);
                        let hooks = block.hooks.clone();
                        let mut log_conditional = |b: &Array1<f64>| -> f64 {
                            let mut etas = state.eta.clone();
                            etas[k] = &eta_rest + &hooks.fitted(b);
                            let par = params_from_etas(&frame.family, &etas);
                            match frame.family.loglik(&frame.y, &par) {
                                Ok(ll) => ll + hooks.log_prior(b),
                                Err(_) => f64::NEG_INFINITY,
                            }
                        };
                        let beta_new = block.hooks.propose(&beta, &mut log_conditional, &mut rng)?;
                        state.eta[k] = &eta_rest + &block.hooks.fitted(&beta_new);
                        state.params[k].terms[j].beta = beta_new;
                        // slice moves are rejection-free
                        alphas.push(1.0);
                        block_alpha_sums[rate_cursor].1 += 1.0;
                        rate_cursor += 1;
                    }
                }
            }

            let alpha_k = if alphas.is_empty() {
                f64::NAN
            } else {
                alphas.iter().sum::<f64>() / alphas.len() as f64
            };
            param_alphas.push(alpha_k);
        }

        if next_save < grid.len() && t == grid[next_save] {
            let coefs = state.flat_coefs();
            let tau2s = state.flat_tau2();
            let mut col = 0usize;
            for v in coefs {
                data[[next_save, col]] = v;
                col += 1;
            }
            for v in tau2s {
                data[[next_save, col]] = v;
                col += 1;
            }
            for v in &param_alphas {
                data[[next_save, col]] = *v;
                col += 1;
            }
            next_save += 1;
        }
    }

    let block_rates = block_alpha_sums
        .into_iter()
        .map(|(id, sum)| BlockRate { id, rate: sum / opt.n_iter as f64 })
        .collect();

    Ok(SampleMatrix {
        colnames,
        data,
        n_iter: opt.n_iter,
        burnin: opt.burnin,
        thin: opt.thin,
        seed: opt.seed,
        block_rates,
    })
}

// ---------------------------------------------------------------------
// conjugate Gibbs sampler for the linear model
// ---------------------------------------------------------------------

/// Conjugate normal–inverse-gamma prior: `β | σ² ~ N(m, σ²·M)` and
/// `σ² ~ IG(a, b)`.
#[derive(Debug, Clone)]
pub struct GibbsPrior {
    pub m: Array1<f64>,
    /// Prior covariance scale of `β` (symmetric positive definite).
    pub m_cov: Array2<f64>,
    pub a: f64,
    pub b: f64,
}

impl GibbsPrior {
    /// A vague prior: zero mean, `1e5·I` covariance scale, IG(1, 1e-4).
    pub fn vague(p: usize) -> Self {
        GibbsPrior {
            m: Array1::zeros(p),
            m_cov: Array2::eye(p) * 1e5,
            a: 1.0,
            b: 1e-4,
        }
    }
}

/// The posterior inverse-gamma shape of the conjugate linear model:
/// `a' = a + n/2 + p/2`.
pub fn gibbs_a_prime(n: usize, p: usize, a: f64) -> f64 {
    a + n as f64 / 2.0 + p as f64 / 2.0
}

/// Conjugate Gibbs sampler for `y = Xβ + ε`, `ε ~ N(0, σ²·I)`, under a
/// [`GibbsPrior`]. Alternates the exact full conditionals
///
/// * `σ² | β ~ IG(a + n/2 + p/2, b + ‖y − Xβ‖²/2 + (β−m)ᵀM⁻¹(β−m)/2)`
/// * `β | σ² ~ N(μ_β, Σ_β)`, `Σ_β = σ²(XᵀX + M⁻¹)⁻¹`,
///   `μ_β = (XᵀX + M⁻¹)⁻¹(Xᵀy + M⁻¹m)`
///
/// Columns are named `mu.p.<col>` plus `sigma` (the drawn √σ²).
pub fn gibbs_lm(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    colnames: &[String],
    prior: &GibbsPrior,
    start: Option<ArrayView1<f64>>,
    opt: &McmcOptions,
) -> Result<SampleMatrix> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(Error::Sampler("gibbs_lm: empty design".into()));
    }
    if y.len() != n || colnames.len() != p || prior.m.len() != p || prior.m_cov.dim() != (p, p) {
        return Err(Error::Sampler(format!(
            "gibbs_lm: inconsistent shapes (n={n}, p={p}, y={}, names={}, m={}, M={:?})",
            y.len(),
            colnames.len(),
            prior.m.len(),
            prior.m_cov.dim()
        )));
    }
    if !(prior.a > 0.0 && prior.b > 0.0) {
        return Err(Error::Sampler(format!(
            "gibbs_lm: inverse-gamma hyperparameters must be positive (a={}, b={})",
            prior.a, prior.b
        )));
    }
    let m_chol = Cholesky::new(prior.m_cov.view())
        .ok_or_else(|| Error::Sampler("gibbs_lm: prior covariance M is singular".into()))?;
    let m_inv = m_chol.solve_matrix(Array2::eye(p).view());

    let grid = retention_grid(opt.n_iter, opt.burnin, opt.thin)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opt.seed);

    // constant pieces of the full conditionals
    let xtx = x.t().dot(&x);
    let xty = x.t().dot(&y);
    let a_post = &xtx + &m_inv;
    let chol = Cholesky::new(a_post.view())
        .ok_or_else(|| Error::Sampler("gibbs_lm: XᵀX + M⁻¹ is not positive definite".into()))?;
    let mu_beta = chol.solve((&xty + &m_inv.dot(&prior.m)).view());
    let a_prime = gibbs_a_prime(n, p, prior.a);

    let mut beta = match start {
        Some(b) if b.len() == p => b.to_owned(),
        Some(b) => {
            return Err(Error::Sampler(format!(
                "gibbs_lm: start has {} entries, expected {p}",
                b.len()
            )))
        }
        None => Array1::zeros(p),
    };

    let mut names: Vec<String> = colnames.iter().map(|c| format!("mu.p.{c}")).collect();
    names.push("sigma".to_string());
    let mut data = Array2::zeros((grid.len(), p + 1));
    let mut next_save = 0usize;

    let y_owned = y.to_owned();
    for t in 1..=opt.n_iter {
        let resid = &y_owned - &x.dot(&beta);
        let centered = &beta - &prior.m;
        let b_prime = prior.b
            + 0.5 * resid.dot(&resid)
            + 0.5 * centered.dot(&m_inv.dot(&centered));
        let gamma = Gamma::new(a_prime, 1.0 / b_prime)
            .map_err(|e| Error::Sampler(format!("gibbs_lm: bad IG parameters: {e}")))?;
        let sigma2 = 1.0 / gamma.sample(&mut rng);
        let sigma = sigma2.sqrt();

        // β | σ²: mean is σ²-free, fluctuation scales with σ
        let noise = chol.sample_mvn_prec(Array1::zeros(p).view(), &mut rng);
        beta = &mu_beta + &noise.mapv(|v| v * sigma);

        if next_save < grid.len() && t == grid[next_save] {
            for j in 0..p {
                data[[next_save, j]] = beta[j];
            }
            data[[next_save, p]] = sigma;
            next_save += 1;
        }
    }

    Ok(SampleMatrix {
        colnames: names,
        data,
        n_iter: opt.n_iter,
        burnin: opt.burnin,
        thin: opt.thin,
        seed: opt.seed,
        block_rates: Vec::new(),
    })
}

// ---------------------------------------------------------------------
// sample statistics
// ---------------------------------------------------------------------

/// Deviance summary of a chain.
#[derive(Debug, Clone, Copy)]
pub struct SampleStats {
    pub dic: f64,
    pub pd: f64,
    /// Log-likelihood at the posterior-mean coefficients.
    pub loglik: f64,
}

/// Deviance information criterion over a chain: `DIC = D̄ + pd` with
/// `pd = D̄ − D(θ̄)`, `D = −2·loglik`, and `θ̄` the per-column posterior
/// mean mapped through the model.
pub fn samplestats(samples: &SampleMatrix, frame: &ModelFrame) -> Result<SampleStats> {
    if samples.nsave() == 0 {
        return Err(Error::Sampler("samplestats: empty sample matrix".into()));
    }
    let decoder = RowDecoder::new(frame, &samples.colnames)?;
    let mut dbar = 0.0;
    for row in samples.data.rows() {
        let etas = decoder.etas(frame, row);
        let par = params_from_etas(&frame.family, &etas);
        dbar += -2.0 * frame.family.loglik(&frame.y, &par)?;
    }
    dbar /= samples.nsave() as f64;

    let means: Array1<f64> = samples
        .data
        .columns()
        .into_iter()
        .map(|c| c.mean().unwrap_or(f64::NAN))
        .collect();
    let etas_hat = decoder.etas(frame, means.view());
    let par_hat = params_from_etas(&frame.family, &etas_hat);
    let loglik_hat = frame.family.loglik(&frame.y, &par_hat)?;
    let d_hat = -2.0 * loglik_hat;
    let pd = dbar - d_hat;
    Ok(SampleStats { dic: dbar + pd, pd, loglik: loglik_hat })
}

/// Pointwise information criterion of a chain.
#[derive(Debug, Clone, Copy)]
pub struct WaicStats {
    pub waic: f64,
    pub p_waic: f64,
}

/// Widely applicable information criterion: `WAIC = −2(lppd − pWAIC)` with
/// `lppd = Σᵢ log(mean over draws of p(yᵢ | θ))` and
/// `pWAIC = Σᵢ var over draws of log p(yᵢ | θ)`.
pub fn waic(samples: &SampleMatrix, frame: &ModelFrame) -> Result<WaicStats> {
    if samples.nsave() == 0 {
        return Err(Error::Sampler("waic: empty sample matrix".into()));
    }
    if !frame.family.pointwise() {
        return Err(Error::Sampler(format!(
            "waic: family `{}` has no per-observation densities",
            frame.family.name()
        )));
    }
    let decoder = RowDecoder::new(frame, &samples.colnames)?;
    let n = frame.n;
    let kp = frame.family.n_params();
    // streaming per-observation accumulators: log-sum-exp for lppd and
    // Welford mean/M2 for the log-density variance
    let mut lse_max = vec![f64::NEG_INFINITY; n];
    let mut lse_sum = vec![0.0f64; n];
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    let mut count = 0usize;

    for row in samples.data.rows() {
        let etas = decoder.etas(frame, row);
        let par = params_from_etas(&frame.family, &etas);
        count += 1;
        for i in 0..n {
            let par_row: Vec<f64> = (0..kp).map(|k| par[k][i]).collect();
            let ld = frame.family.density_at(frame.y[i], &par_row, true)?;
            if ld > lse_max[i] {
                lse_sum[i] = lse_sum[i] * (lse_max[i] - ld).exp() + 1.0;
                lse_max[i] = ld;
            } else {
                lse_sum[i] += (ld - lse_max[i]).exp();
            }
            let delta = ld - mean[i];
            mean[i] += delta / count as f64;
            m2[i] += delta * (ld - mean[i]);
        }
    }

    let s = count as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..n {
        lppd += lse_max[i] + (lse_sum[i] / s).ln();
        if count > 1 {
            p_waic += m2[i] / (s - 1.0);
        }
    }
    Ok(WaicStats { waic: -2.0 * (lppd - p_waic), p_waic })
}

/// Monte-Carlo standard error of the mean of a (possibly autocorrelated)
/// chain, by the batch-means method with ⌊√N⌋ batches.
pub fn mcse(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return f64::NAN;
    }
    let nb = (n as f64).sqrt().floor() as usize;
    let len = n / nb;
    let used = nb * len;
    let grand = chain[..used].iter().sum::<f64>() / used as f64;
    let mut ss = 0.0;
    for b in 0..nb {
        let mb = chain[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64;
        ss += (mb - grand) * (mb - grand);
    }
    // asymptotic variance estimate: len·Σ(m_b − m̄)²/(nb − 1), divided by N
    (len as f64 * ss / ((nb - 1) as f64 * used as f64)).sqrt()
}

/// One univariate slice-sampling step (stepping out, then shrinkage) from
/// `x0` under the unnormalized `log_target`.
///
/// The returned point always lies inside the slice: `log_target(x1) ≥ u`
/// for the level `u` drawn for this step. Slice sampling is rejection-free,
/// so there is no accept/reject decision to track.
pub fn slice_step<R: Rng + ?Sized>(
    log_target: &mut dyn FnMut(f64) -> f64,
    x0: f64,
    w: f64,
    m_expand: usize,
    rng: &mut R,
) -> Result<f64> {
    let f0 = log_target(x0);
    if !f0.is_finite() {
        return Err(Error::Sampler(format!(
            "slice step: log target is {f0} at the current point {x0}"
        )));
    }
    // vertical level: log u = log f(x0) − Exp(1)
    let level = f0 + rng.gen::<f64>().ln();

    // stepping out: place a width-w window around x0, then expand each end
    // until it leaves the slice (or the expansion budget is spent)
    let mut lo = x0 - w * rng.gen::<f64>();
    let mut hi = lo + w;
    let mut budget_lo = m_expand;
    let mut budget_hi = m_expand;
    while budget_lo > 0 && log_target(lo) > level {
        lo -= w;
        budget_lo -= 1;
    }
    while budget_hi > 0 && log_target(hi) > level {
        hi += w;
        budget_hi -= 1;
    }

    // shrinkage: sample uniformly and pull the rejected end inward
    loop {
        let x1 = lo + (hi - lo) * rng.gen::<f64>();
        if log_target(x1) > level {
            return Ok(x1);
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
        if (hi - lo) < 1e-300 {
            return Ok(x0);
        }
    }
}
