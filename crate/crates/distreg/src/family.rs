//! Response-distribution families.
//!
//! A [`Family`] bundles everything the estimation engines need to know
//! about a response distribution: the ordered distribution parameters with
//! their link functions, density/cdf/quantile/sampling functions, the
//! summed log-likelihood, and per-parameter score and curvature functions
//! taken with respect to the *predictors* η_k (not the natural parameters).
//! Because engines only touch this interface, families are exchangeable:
//! any optimizer or sampler works with any family.
//!
//! Available families:
//!
//! * [`Family::gaussian`] — location-scale normal, `mu` (identity) and
//!   `sigma` (log).
//! * [`Family::binomial`] — Bernoulli with logit link on `pi`.
//! * [`Family::ztnbinom`] — zero-truncated negative binomial, `mu` and
//!   `theta` both log-linked; supports counts y = 1, 2, ….
//! * [`Family::lm`] — Gaussian mean model with a plug-in residual standard
//!   deviation (profiled out rather than modeled); used by the conjugate
//!   linear-model engines.
//!
//! Throughout, `par` is a slice of per-parameter value columns on the
//! *parameter* scale (one `Array1` per distribution parameter, already
//! inverse-linked), matching the `d(y, par)`-style calling convention.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::Column;
use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Link functions mapping a distribution parameter to its predictor scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Log,
    Logit,
}

impl Link {
    /// Parameter scale → predictor scale, η = h(θ).
    pub fn apply(&self, theta: f64) -> f64 {
        match self {
            Link::Identity => theta,
            Link::Log => theta.ln(),
            Link::Logit => (theta / (1.0 - theta)).ln(),
        }
    }

    /// Predictor scale → parameter scale, θ = h⁻¹(η).
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            // clamp the exponent so extreme predictors saturate instead of
            // overflowing to infinity
            Link::Log => eta.clamp(-700.0, 700.0).exp(),
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Display name used in summaries.
    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Log => "log",
            Link::Logit => "logit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Gaussian,
    Binomial,
    ZtNbinom,
    /// Gaussian mean model with plug-in residual σ computed from the full
    /// response vector and the effective parameter count.
    Lm { p_effective: usize },
    /// Constant likelihood; sampling from a model with this family draws
    /// from the prior. Test instrumentation, hidden from the CLI.
    Flat,
}

/// A response distribution with its parameter set and function contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    kind: Kind,
}

/// Step used for the observed-curvature finite differences of the
/// zero-truncated negative binomial (on the predictor scale).
const ZTNB_HESS_STEP: f64 = 1e-4;

impl Family {
    /// Location-scale normal: parameters `mu` (identity link) and `sigma`
    /// (log link).
    pub fn gaussian() -> Self {
        Self { kind: Kind::Gaussian }
    }

    /// Bernoulli: parameter `pi` with logit link.
    pub fn binomial() -> Self {
        Self { kind: Kind::Binomial }
    }

    /// Zero-truncated negative binomial: parameters `mu` and `theta`, both
    /// log-linked. Supports integer responses y ≥ 1.
    pub fn ztnbinom() -> Self {
        Self { kind: Kind::ZtNbinom }
    }

    /// Gaussian mean model with plug-in residual standard deviation
    /// `σ̂ = sqrt(Σ(y − μ)² / (n − p_effective))`. The scale is profiled
    /// out, so the only parameter is `mu` (identity link).
    pub fn lm(p_effective: usize) -> Self {
        Self { kind: Kind::Lm { p_effective } }
    }

    /// Constant-likelihood family for sampler correctness tests: with it, a
    /// posterior equals the prior exactly.
    #[doc(hidden)]
    pub fn flat() -> Self {
        Self { kind: Kind::Flat }
    }

    /// Looks a family up by its CLI short name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian()),
            "binomial" => Ok(Self::binomial()),
            "ztnbinom" => Ok(Self::ztnbinom()),
            "lm" => Ok(Self::lm(0)),
            other => Err(Error::Family(format!(
                "unknown family `{other}` (available: gaussian, binomial, ztnbinom, lm)"
            ))),
        }
    }

    /// Short family name.
    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Gaussian => "gaussian",
            Kind::Binomial => "binomial",
            Kind::ZtNbinom => "ztnbinom",
            Kind::Lm { .. } => "lm",
            Kind::Flat => "flat",
        }
    }

    /// Ordered distribution-parameter names.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self.kind {
            Kind::Gaussian => &["mu", "sigma"],
            Kind::Binomial => &["pi"],
            Kind::ZtNbinom => &["mu", "theta"],
            Kind::Lm { .. } => &["mu"],
            Kind::Flat => &["mu"],
        }
    }

    /// Number of distribution parameters.
    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    /// Link function of parameter `k`.
    pub fn link(&self, k: usize) -> Link {
        match (&self.kind, k) {
            (Kind::Gaussian, 0) => Link::Identity,
            (Kind::Gaussian, 1) => Link::Log,
            (Kind::Binomial, 0) => Link::Logit,
            (Kind::ZtNbinom, _) => Link::Log,
            (Kind::Lm { .. }, 0) | (Kind::Flat, 0) => Link::Identity,
            _ => panic!("family `{}` has no parameter {k}", self.name()),
        }
    }

    /// `"pi = logit"`-style display of all links, for summaries.
    pub fn link_display(&self) -> String {
        self.param_names()
            .iter()
            .enumerate()
            .map(|(k, name)| format!("{name} = {}", self.link(k).name()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// True for count/indicator families (integer support).
    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Binomial | Kind::ZtNbinom)
    }

    /// Smallest support point of a discrete family.
    pub fn support_min(&self) -> Option<u64> {
        match self.kind {
            Kind::Binomial => Some(0),
            Kind::ZtNbinom => Some(1),
            _ => None,
        }
    }

    /// True when the density and cdf factorize over observations. The `lm`
    /// family is the exception: its plug-in σ couples all observations, so
    /// pointwise diagnostics (CRPS, rootograms) are unavailable.
    pub fn pointwise(&self) -> bool {
        !matches!(self.kind, Kind::Lm { .. } | Kind::Flat)
    }

    /// Effective parameter count of the `lm` family (0 otherwise).
    pub fn p_effective(&self) -> usize {
        match self.kind {
            Kind::Lm { p_effective } => p_effective,
            _ => 0,
        }
    }

    /// Fixes the `lm` family's effective parameter count (set by the model
    /// frame once the design width is known). No-op for other families.
    pub fn set_p_effective(&mut self, p: usize) {
        if let Kind::Lm { p_effective } = &mut self.kind {
            *p_effective = p;
        }
    }

    // -----------------------------------------------------------------
    // response handling
    // -----------------------------------------------------------------

    /// Encodes a raw data column into the numeric response vector. For the
    /// binomial family, a two-level categorical column maps to 0/1 with the
    /// lexicographically first level as reference (0).
    pub fn encode_response(&self, name: &str, col: &Column) -> Result<Array1<f64>> {
        let y = match (col, &self.kind) {
            (Column::Categorical(values), Kind::Binomial) => {
                let levels = col.levels();
                if levels.len() != 2 {
                    return Err(Error::Family(format!(
                        "binomial response `{name}` must have exactly 2 levels, found {}",
                        levels.len()
                    )));
                }
                Array1::from_iter(values.iter().map(|v| {
                    match v {
                        Some(level) if *level == levels[1] => 1.0,
                        Some(_) => 0.0,
                        None => f64::NAN,
                    }
                }))
            }
            (Column::Categorical(_), _) => {
                return Err(Error::Family(format!(
                    "response `{name}` is categorical; family `{}` needs a numeric response",
                    self.name()
                )))
            }
            (Column::Numeric(values), _) => Array1::from_vec(values.clone()),
        };
        Ok(y)
    }

    /// Validates a response vector against the family's support.
    pub fn validate_response(&self, y: &Array1<f64>) -> Result<()> {
        match self.kind {
            Kind::Binomial => {
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Family(
                        "binomial response must only contain 0 and 1".into(),
                    ));
                }
            }
            Kind::ZtNbinom => {
                if y.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                    return Err(Error::Family(
                        "zero-truncated count response must contain integers ≥ 1".into(),
                    ));
                }
            }
            _ => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Family("response contains non-finite values".into()));
                }
            }
        }
        Ok(())
    }

    /// Constant starting value for predictor η_k, from simple moment
    /// estimates mapped through the link.
    pub fn init_eta(&self, k: usize, y: &Array1<f64>) -> f64 {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        match (&self.kind, k) {
            (Kind::Gaussian, 0) => mean,
            (Kind::Gaussian, 1) => {
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                var.sqrt().max(1e-10).ln()
            }
            (Kind::Binomial, 0) => Link::Logit.apply(mean.clamp(1e-3, 1.0 - 1e-3)),
            (Kind::ZtNbinom, 0) => mean.max(1e-3).ln(),
            (Kind::ZtNbinom, 1) => {
                // method of moments on VAR = μ + μ²/θ
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                let excess = (var - mean).max(1e-8);
                (mean * mean / excess).clamp(0.1, 50.0).ln()
            }
            (Kind::Lm { .. }, 0) => mean,
            (Kind::Flat, 0) => 0.0,
            _ => panic!("family `{}` has no parameter {k}", self.name()),
        }
    }

    // -----------------------------------------------------------------
    // likelihood contract
    // -----------------------------------------------------------------

    fn check_par(&self, y_len: usize, par: &[Array1<f64>]) -> Result<()> {
        if par.len() != self.n_params() {
            return Err(Error::Family(format!(
                "family `{}` expects {} parameter column(s), got {}",
                self.name(),
                self.n_params(),
                par.len()
            )));
        }
        for (k, col) in par.iter().enumerate() {
            if col.len() != y_len {
                return Err(Error::Family(format!(
                    "parameter `{}` has {} entries, expected {y_len}",
                    self.param_names()[k],
                    col.len()
                )));
            }
        }
        match self.kind {
            Kind::Gaussian => {
                if par[1].iter().any(|&s| s <= 0.0) {
                    return Err(Error::Family("sigma must be positive".into()));
                }
            }
            Kind::Binomial => {
                if par[0].iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::Family("pi must lie in [0, 1]".into()));
                }
            }
            Kind::ZtNbinom => {
                if par[0].iter().any(|&m| m <= 0.0) || par[1].iter().any(|&t| t <= 0.0) {
                    return Err(Error::Family("mu and theta must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Summed log-likelihood of the response under `par`.
    pub fn loglik(&self, y: &Array1<f64>, par: &[Array1<f64>]) -> Result<f64> {
        self.check_par(y.len(), par)?;
        match &self.kind {
            Kind::Gaussian | Kind::Binomial | Kind::ZtNbinom => {
                self.validate_response(y)?;
                let mut total = 0.0;
                for i in 0..y.len() {
                    total += self.log_density_row(y[i], &par_row(par, i))?;
                }
                Ok(total)
            }
            Kind::Lm { p_effective } => {
                let sigma = lm_sigma(y, &par[0], *p_effective)?;
                let n = y.len() as f64;
                Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - n * sigma.ln()
                    - y.iter()
                        .zip(par[0].iter())
                        .map(|(yi, mi)| (yi - mi) * (yi - mi))
                        .sum::<f64>()
                        / (2.0 * sigma * sigma))
            }
            Kind::Flat => Ok(0.0),
        }
    }

    /// Pointwise score ∂ℓ_i/∂η_k of parameter `k` at `par`.
    ///
    /// Panics on dimension mismatches (programming errors); invalid
    /// parameter values are the caller's responsibility here because scores
    /// are only evaluated on inverse-linked predictors.
    pub fn score(&self, k: usize, y: &Array1<f64>, par: &[Array1<f64>]) -> Array1<f64> {
        assert!(k < self.n_params(), "score: no parameter {k}");
        assert_eq!(par.len(), self.n_params(), "score: wrong parameter count");
        let n = y.len();
        match (&self.kind, k) {
            (Kind::Gaussian, 0) => Array1::from_iter(
                (0..n).map(|i| (y[i] - par[0][i]) / (par[1][i] * par[1][i])),
            ),
            (Kind::Gaussian, 1) => Array1::from_iter((0..n).map(|i| {
                let r = y[i] - par[0][i];
                -1.0 + r * r / (par[1][i] * par[1][i])
            })),
            (Kind::Binomial, 0) => {
                Array1::from_iter((0..n).map(|i| y[i] - par[0][i]))
            }
            (Kind::ZtNbinom, 0) => Array1::from_iter((0..n).map(|i| {
                let (mu, theta) = (par[0][i], par[1][i]);
                let ratio = zt_odds(mu, theta); // A/(1-A) for A = NB(0)
                y[i] - mu * (y[i] + theta) / (mu + theta)
                    - mu * theta * ratio / (theta + mu)
            })),
            (Kind::ZtNbinom, 1) => Array1::from_iter((0..n).map(|i| {
                let (mu, theta) = (par[0][i], par[1][i]);
                let log_frac = (theta / (theta + mu)).ln();
                let ratio = zt_odds(mu, theta);
                theta
                    * (digamma(y[i] + theta) - digamma(theta) + log_frac + 1.0
                        - (y[i] + theta) / (theta + mu)
                        + ratio * (log_frac + 1.0 - theta / (theta + mu)))
            })),
            (Kind::Lm { p_effective }, 0) => {
                let sigma = lm_sigma(y, &par[0], *p_effective)
                    .expect("lm score: degenerate plug-in sigma");
                let c = n as f64 / (n - *p_effective) as f64;
                Array1::from_iter(
                    (0..n).map(|i| c * (y[i] - par[0][i]) / (sigma * sigma)),
                )
            }
            (Kind::Flat, 0) => Array1::zeros(n),
            _ => unreachable!(),
        }
    }

    /// Pointwise curvature of parameter `k`: the negative second derivative
    /// of ℓ_i with respect to η_k, or its expectation where that is the
    /// simpler closed form (Gaussian). Values may be clamped positive where
    /// the observed curvature can change sign.
    pub fn hess(&self, k: usize, y: &Array1<f64>, par: &[Array1<f64>]) -> Array1<f64> {
        assert!(k < self.n_params(), "hess: no parameter {k}");
        assert_eq!(par.len(), self.n_params(), "hess: wrong parameter count");
        let n = y.len();
        match (&self.kind, k) {
            (Kind::Gaussian, 0) => {
                Array1::from_iter((0..n).map(|i| 1.0 / (par[1][i] * par[1][i])))
            }
            // expected curvature: E[(y−μ)²] = σ² makes the observed
            // −∂²ℓ/∂η² = 2(y−μ)²/σ² average out to the constant 2
            (Kind::Gaussian, 1) => Array1::from_elem(n, 2.0),
            (Kind::Binomial, 0) => {
                Array1::from_iter((0..n).map(|i| par[0][i] * (1.0 - par[0][i])))
            }
            (Kind::ZtNbinom, _) => {
                // observed curvature by central differences of the analytic
                // score on the predictor scale, clamped positive
                let h = ZTNB_HESS_STEP;
                let mut plus = par.to_vec();
                let mut minus = par.to_vec();
                plus[k].mapv_inplace(|v| v * h.exp());
                minus[k].mapv_inplace(|v| v * (-h).exp());
                let s_plus = self.score(k, y, &plus);
                let s_minus = self.score(k, y, &minus);
                Array1::from_iter(
                    (0..n).map(|i| (-(s_plus[i] - s_minus[i]) / (2.0 * h)).max(1e-10)),
                )
            }
            (Kind::Lm { p_effective }, 0) => {
                let sigma = lm_sigma(y, &par[0], *p_effective)
                    .expect("lm hess: degenerate plug-in sigma");
                let np = (n - *p_effective) as f64;
                let c = n as f64 / np;
                let s2 = sigma * sigma;
                Array1::from_iter((0..n).map(|i| {
                    let r = y[i] - par[0][i];
                    (c * (1.0 / s2 - 2.0 * r * r / (np * s2 * s2))).max(1e-10)
                }))
            }
            (Kind::Flat, 0) => Array1::ones(n),
            _ => unreachable!(),
        }
    }

    // -----------------------------------------------------------------
    // distribution functions
    // -----------------------------------------------------------------

    /// Density (or log-density) evaluated pointwise.
    pub fn density(&self, y: &Array1<f64>, par: &[Array1<f64>], log: bool) -> Result<Array1<f64>> {
        self.check_par(y.len(), par)?;
        if let Kind::Lm { p_effective } = self.kind {
            // plug-in σ couples the rows: compute it once from the full
            // vectors, then evaluate Gaussian densities
            let sigma = lm_sigma(y, &par[0], p_effective)?;
            return Ok(Array1::from_iter(y.iter().zip(par[0].iter()).map(|(yi, mi)| {
                let ld = std_normal_pdf((yi - mi) / sigma).ln() - sigma.ln();
                if log {
                    ld
                } else {
                    ld.exp()
                }
            })));
        }
        let mut out = Array1::zeros(y.len());
        for i in 0..y.len() {
            let ld = self.log_density_row(y[i], &par_row(par, i))?;
            out[i] = if log { ld } else { ld.exp() };
        }
        Ok(out)
    }

    /// Distribution function evaluated pointwise.
    pub fn cdf(&self, y: &Array1<f64>, par: &[Array1<f64>]) -> Result<Array1<f64>> {
        self.check_par(y.len(), par)?;
        if let Kind::Lm { p_effective } = self.kind {
            let sigma = lm_sigma(y, &par[0], p_effective)?;
            return Ok(Array1::from_iter(
                y.iter()
                    .zip(par[0].iter())
                    .map(|(yi, mi)| std_normal_cdf((yi - mi) / sigma)),
            ));
        }
        let mut out = Array1::zeros(y.len());
        for i in 0..y.len() {
            out[i] = self.cdf_row(y[i], &par_row(par, i))?;
        }
        Ok(out)
    }

    /// Quantile function evaluated pointwise.
    pub fn quantile(&self, u: &Array1<f64>, par: &[Array1<f64>]) -> Result<Array1<f64>> {
        self.check_par(u.len(), par)?;
        let mut out = Array1::zeros(u.len());
        for i in 0..u.len() {
            out[i] = self.quantile_row(u[i], &par_row(par, i))?;
        }
        Ok(out)
    }

    /// One random draw per row of `par`.
    pub fn sample<R: Rng>(&self, par: &[Array1<f64>], rng: &mut R) -> Result<Array1<f64>> {
        let n = par.first().map(|c| c.len()).unwrap_or(0);
        self.check_par(n, par)?;
        let mut out = Array1::zeros(n);
        for i in 0..n {
            let row = par_row(par, i);
            out[i] = match self.kind {
                Kind::Gaussian => {
                    let z: f64 = rng.sample(StandardNormal);
                    row[0] + row[1] * z
                }
                Kind::Binomial => {
                    if rng.gen::<f64>() < row[0] {
                        1.0
                    } else {
                        0.0
                    }
                }
                // quantile method: deterministic in the uniform draw
                Kind::ZtNbinom => self.quantile_row(rng.gen::<f64>(), &row)?,
                _ => {
                    return Err(Error::Family(format!(
                        "family `{}` has no sampling function",
                        self.name()
                    )))
                }
            };
        }
        Ok(out)
    }

    /// Pointwise density for a single observation; unavailable for the
    /// non-factorizing `lm` family.
    pub fn density_at(&self, y: f64, par_row: &[f64], log: bool) -> Result<f64> {
        let ld = self.log_density_row(y, par_row)?;
        Ok(if log { ld } else { ld.exp() })
    }

    /// Pointwise cdf for a single observation; unavailable for `lm`.
    pub fn cdf_at(&self, y: f64, par_row: &[f64]) -> Result<f64> {
        self.cdf_row(y, par_row)
    }

    fn log_density_row(&self, y: f64, par: &[f64]) -> Result<f64> {
        match self.kind {
            Kind::Gaussian => {
                let (mu, sigma) = (par[0], par[1]);
                let z = (y - mu) / sigma;
                Ok(std_normal_pdf(z).ln() - sigma.ln())
            }
            Kind::Binomial => {
                let pi = par[0].clamp(1e-300, 1.0 - 1e-16);
                if y == 1.0 {
                    Ok(pi.ln())
                } else if y == 0.0 {
                    Ok((1.0 - pi).ln())
                } else {
                    Err(Error::Family(format!(
                        "binomial density needs y in {{0, 1}}, got {y}"
                    )))
                }
            }
            Kind::ZtNbinom => {
                if y.fract() != 0.0 || y < 0.0 {
                    return Err(Error::Family(format!(
                        "zero-truncated count density needs integer y ≥ 0, got {y}"
                    )));
                }
                if y < 1.0 {
                    // truncation: no mass at zero
                    return Ok(f64::NEG_INFINITY);
                }
                let (mu, theta) = (par[0], par[1]);
                Ok(nb_log_pmf(y, mu, theta) - zt_log_one_minus_a(mu, theta))
            }
            Kind::Lm { .. } | Kind::Flat => Err(Error::Family(format!(
                "family `{}` has no pointwise density",
                self.name()
            ))),
        }
    }

    fn cdf_row(&self, y: f64, par: &[f64]) -> Result<f64> {
        match self.kind {
            Kind::Gaussian => Ok(std_normal_cdf((y - par[0]) / par[1])),
            Kind::Binomial => {
                let pi = par[0];
                Ok(if y < 0.0 {
                    0.0
                } else if y < 1.0 {
                    1.0 - pi
                } else {
                    1.0
                })
            }
            Kind::ZtNbinom => {
                let (mu, theta) = (par[0], par[1]);
                if y < 1.0 {
                    return Ok(0.0);
                }
                let yf = y.floor();
                // untruncated NB cdf via the regularized incomplete beta
                let q = theta / (theta + mu);
                let cdf_nb = beta_reg(theta, yf + 1.0, q);
                let log_a = -theta * (mu / theta).ln_1p();
                let a = log_a.exp();
                Ok(((cdf_nb - a) / (-log_a.exp_m1())).clamp(0.0, 1.0))
            }
            Kind::Lm { .. } | Kind::Flat => Err(Error::Family(format!(
                "family `{}` has no pointwise cdf",
                self.name()
            ))),
        }
    }

    fn quantile_row(&self, u: f64, par: &[f64]) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Family(format!("quantile level {u} outside [0, 1]")));
        }
        match self.kind {
            Kind::Gaussian => {
                if u <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                if u >= 1.0 {
                    return Ok(f64::INFINITY);
                }
                Ok(par[0] + par[1] * std_normal_quantile(u))
            }
            Kind::Binomial => Ok(if u <= 1.0 - par[0] { 0.0 } else { 1.0 }),
            Kind::ZtNbinom => {
                // walk the pmf with the multiplicative recurrence
                // NB(y+1)/NB(y) = (y+θ)/(y+1) · μ/(μ+θ)
                let (mu, theta) = (par[0], par[1]);
                let growth = mu / (mu + theta);
                let norm = -zt_log_one_minus_a(mu, theta);
                let mut y = 1.0;
                let mut pmf = (nb_log_pmf(1.0, mu, theta) + norm).exp();
                let mut acc = pmf;
                let cap = 100_000_000u64;
                let mut steps = 0u64;
                while acc + 1e-12 < u {
                    pmf *= (y + theta) / (y + 1.0) * growth;
                    y += 1.0;
                    acc += pmf;
                    steps += 1;
                    if steps > cap || pmf == 0.0 {
                        return Err(Error::Family(format!(
                            "count quantile did not terminate (u = {u}, mu = {mu}, theta = {theta})"
                        )));
                    }
                }
                Ok(y)
            }
            Kind::Lm { .. } | Kind::Flat => Err(Error::Family(format!(
                "family `{}` has no quantile function",
                self.name()
            ))),
        }
    }
}

/// One row of a parameter-column set.
fn par_row(par: &[Array1<f64>], i: usize) -> Vec<f64> {
    par.iter().map(|c| c[i]).collect()
}

/// Untruncated negative-binomial log pmf with mean `mu` and size `theta`.
fn nb_log_pmf(y: f64, mu: f64, theta: f64) -> f64 {
    ln_gamma(y + theta) - ln_gamma(theta) - ln_gamma(y + 1.0) + theta * theta.ln()
        + y * mu.ln()
        - (y + theta) * (theta + mu).ln()
}

/// `log(1 − A)` with `A = NB(0; mu, theta) = (θ/(θ+μ))^θ`, computed without
/// cancellation for small μ (where A → 1).
fn zt_log_one_minus_a(mu: f64, theta: f64) -> f64 {
    let log_a = -theta * (mu / theta).ln_1p();
    (-log_a.exp_m1()).ln()
}

/// `A / (1 − A)`, the zero-mass odds of the untruncated negative binomial.
fn zt_odds(mu: f64, theta: f64) -> f64 {
    let log_a = -theta * (mu / theta).ln_1p();
    log_a.exp() / (-log_a.exp_m1())
}

/// Plug-in residual standard deviation of the `lm` family.
fn lm_sigma(y: &Array1<f64>, mu: &Array1<f64>, p_effective: usize) -> Result<f64> {
    let n = y.len();
    if n <= p_effective {
        return Err(Error::Family(format!(
            "lm family needs n > p_effective (n = {n}, p_effective = {p_effective})"
        )));
    }
    let rss: f64 = y
        .iter()
        .zip(mu.iter())
        .map(|(yi, mi)| (yi - mi) * (yi - mi))
        .sum();
    if rss <= 0.0 {
        return Err(Error::Family(
            "lm family: all residuals are zero, plug-in sigma degenerates".into(),
        ));
    }
    Ok((rss / (n - p_effective) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Central finite difference of the summed log-likelihood with respect
    /// to predictor η_k at observation `i`.
    fn fd_score(family: &Family, k: usize, y: &Array1<f64>, par: &[Array1<f64>], i: usize) -> f64 {
        let link = family.link(k);
        let eta_i = link.apply(par[k][i]);
        let h = 1e-6 * (1.0 + eta_i.abs());
        let mut plus = par.to_vec();
        let mut minus = par.to_vec();
        plus[k][i] = link.inverse(eta_i + h);
        minus[k][i] = link.inverse(eta_i - h);
        let lp = family.loglik(y, &plus).unwrap();
        let lm = family.loglik(y, &minus).unwrap();
        (lp - lm) / (2.0 * h)
    }

    fn check_scores_against_fd(
        family: &Family,
        y: &Array1<f64>,
        par: &[Array1<f64>],
        rel_tol: f64,
    ) {
        for k in 0..family.n_params() {
            let s = family.score(k, y, par);
            for i in 0..y.len() {
                let fd = fd_score(family, k, y, par, i);
                let denom = fd.abs().max(1e-4);
                assert!(
                    (s[i] - fd).abs() / denom < rel_tol,
                    "family {} param {k} obs {i}: analytic {} vs fd {}",
                    family.name(),
                    s[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn gaussian_score_zeros() {
        let fam = Family::gaussian();
        let y = array![1.0, 2.0];
        let mu = array![1.0, 2.0];
        let sigma = array![0.5, 2.0];
        let par = vec![mu, sigma];
        let s_mu = fam.score(0, &y, &par);
        let s_sigma = fam.score(1, &y, &par);
        // y = μ: location score vanishes, scale score is −1
        assert_eq!(s_mu[0], 0.0);
        assert_eq!(s_sigma[0], -1.0);
        // (y−μ)² = σ²: scale score vanishes
        let par2 = vec![array![0.0], array![3.0]];
        let s = fam.score(1, &array![3.0], &par2);
        assert!(s[0].abs() < 1e-12);
    }

    #[test]
    fn gaussian_scores_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let n = 100;
        let y = Array1::from_iter((0..n).map(|_| rng.gen::<f64>() * 6.0 - 3.0));
        let mu = Array1::from_iter((0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0));
        let sigma = Array1::from_iter((0..n).map(|_| 0.3 + rng.gen::<f64>() * 3.0));
        check_scores_against_fd(&Family::gaussian(), &y, &[mu, sigma], 1e-6);
    }

    #[test]
    fn binomial_hand_values() {
        let fam = Family::binomial();
        let y = array![1.0];
        let par = vec![array![0.5]];
        assert_eq!(fam.score(0, &y, &par)[0], 0.5);
        assert_eq!(fam.hess(0, &y, &par)[0], 0.25);
        // pi = y: score vanishes
        let par = vec![array![1.0]];
        assert_eq!(fam.score(0, &y, &par)[0], 0.0);
    }

    #[test]
    fn binomial_scores_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let n = 100;
        let y = Array1::from_iter((0..n).map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 }));
        let pi = Array1::from_iter((0..n).map(|_| Link::Logit.inverse(rng.gen::<f64>() * 6.0 - 3.0)));
        check_scores_against_fd(&Family::binomial(), &y, &[pi], 1e-5);
    }

    #[test]
    fn ztnbinom_density_is_truncated_and_normalized() {
        let fam = Family::ztnbinom();
        let par = |n: usize, mu: f64, theta: f64| {
            vec![Array1::from_elem(n, mu), Array1::from_elem(n, theta)]
        };
        // no mass at zero
        let d0 = fam.density(&array![0.0], &par(1, 5.0, 2.0), false).unwrap();
        assert_eq!(d0[0], 0.0);
        // mass on y ≥ 1 sums to one
        let ys = Array1::from_iter((1..=10_000).map(|v| v as f64));
        let d = fam.density(&ys, &par(10_000, 5.0, 2.0), false).unwrap();
        let total: f64 = d.sum();
        assert!((total - 1.0).abs() < 1e-8, "sum = {total}");
    }

    #[test]
    fn ztnbinom_scores_match_finite_differences_on_spec_grid() {
        let fam = Family::ztnbinom();
        for &mu in &[0.5, 5.0, 50.0] {
            for &theta in &[0.1, 1.0, 10.0] {
                for &yv in &[1.0, 3.0, 40.0] {
                    let y = array![yv];
                    let par = vec![array![mu], array![theta]];
                    for k in 0..2 {
                        let s = fam.score(k, &y, &par)[0];
                        let fd = fd_score(&fam, k, &y, &par, 0);
                        let denom = fd.abs().max(1e-4);
                        assert!(
                            (s - fd).abs() / denom < 1e-5,
                            "mu={mu} theta={theta} y={yv} k={k}: {s} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ztnbinom_cdf_matches_density_partial_sums() {
        let fam = Family::ztnbinom();
        let par1 = vec![array![3.0], array![1.5]];
        let mut acc = 0.0;
        for yv in 1..=40 {
            let y = array![yv as f64];
            acc += fam.density(&y, &par1, false).unwrap()[0];
            let p = fam.cdf(&y, &par1).unwrap()[0];
            assert!((p - acc).abs() < 1e-10, "y = {yv}: cdf {p} vs sum {acc}");
        }
        // cdf is zero below the support
        assert_eq!(fam.cdf(&array![0.0], &par1).unwrap()[0], 0.0);
    }

    #[test]
    fn ztnbinom_quantile_inverts_cdf() {
        let fam = Family::ztnbinom();
        let par = vec![array![7.0], array![2.0]];
        for u in [0.01, 0.2, 0.5, 0.9, 0.999] {
            let q = fam.quantile(&array![u], &par).unwrap()[0];
            let p_at = fam.cdf(&array![q], &par).unwrap()[0];
            let p_below = fam.cdf(&array![q - 1.0], &par).unwrap()[0];
            assert!(p_at + 1e-9 >= u && (q == 1.0 || p_below < u + 1e-9),
                "u={u}: q={q}, F(q)={p_at}, F(q-1)={p_below}");
        }
    }

    #[test]
    fn lm_plug_in_sigma_hand_value() {
        // n = 4, p_effective = 2, RSS = 2 → σ = sqrt(2 / 2) = 1
        let fam = Family::lm(2);
        let y = array![1.0, 2.0, 3.0, 4.0];
        let mu = array![1.0, 3.0, 3.0, 3.0]; // residuals 0, -1, 0, 1
        let n = 4.0;
        let ll = fam.loglik(&y, &[mu.clone()]).unwrap();
        let expect = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.0 - 2.0 / 2.0;
        assert!((ll - expect).abs() < 1e-12);
        // density equals the fixed-σ Gaussian density at σ = 1
        let d_lm = fam.density(&y, &[mu.clone()], false).unwrap();
        let gauss = Family::gaussian();
        let d_ref = gauss
            .density(&y, &[mu.clone(), Array1::from_elem(4, 1.0)], false)
            .unwrap();
        for (a, b) in d_lm.iter().zip(d_ref.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lm_degenerate_residuals_error() {
        let fam = Family::lm(1);
        let y = array![1.0, 2.0, 3.0];
        assert!(fam.loglik(&y, &[y.clone()]).is_err());
        // n ≤ p_effective is also an error
        let fam = Family::lm(3);
        let mu = array![0.0, 0.0, 0.0];
        assert!(fam.loglik(&y, &[mu]).is_err());
    }

    #[test]
    fn lm_scores_match_finite_differences() {
        // the plug-in σ depends on all residuals, so the score picks up an
        // n/(n−p) profile factor; the finite-difference oracle checks it
        let fam = Family::lm(3);
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let n = 60;
        let y = Array1::from_iter((0..n).map(|_| rng.gen::<f64>() * 4.0));
        let mu = Array1::from_iter((0..n).map(|_| rng.gen::<f64>() * 4.0));
        check_scores_against_fd(&fam, &y, &[mu], 1e-5);
    }

    #[test]
    fn link_round_trips() {
        for link in [Link::Identity, Link::Log, Link::Logit] {
            let domain: &[f64] = match link {
                Link::Identity => &[-5.0, 0.0, 3.2],
                Link::Log => &[0.1, 1.0, 42.0],
                Link::Logit => &[0.01, 0.5, 0.99],
            };
            for &theta in domain {
                let back = link.inverse(link.apply(theta));
                assert!((back - theta).abs() < 1e-12, "{link:?} at {theta}");
            }
        }
    }

    #[test]
    fn log_density_consistency() {
        let fam = Family::gaussian();
        let y = array![0.3, -1.2, 2.0];
        let par = vec![array![0.0, 0.0, 1.0], array![1.0, 0.5, 2.0]];
        let d = fam.density(&y, &par, false).unwrap();
        let ld = fam.density(&y, &par, true).unwrap();
        for (a, b) in d.iter().zip(ld.iter()) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_quantile_cdf_identity_in_bulk() {
        let fam = Family::gaussian();
        for z in [-4.0, -2.0, -0.5, 0.0, 1.0, 3.9] {
            let y = array![1.5 + 2.0 * z];
            let par = vec![array![1.5], array![2.0]];
            let u = fam.cdf(&y, &par).unwrap();
            let back = fam.quantile(&u, &par).unwrap();
            assert!((back[0] - y[0]).abs() < 1e-6, "z = {z}: {} vs {}", back[0], y[0]);
        }
    }

    fn ks_distance_continuous(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let f = cdf(x);
            d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
        }
        d
    }

    #[test]
    fn sampling_matches_cdf_gaussian() {
        let fam = Family::gaussian();
        let n = 50_000;
        let par = vec![Array1::from_elem(n, 1.0), Array1::from_elem(n, 2.0)];
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        let mut draws = fam.sample(&par, &mut rng).unwrap().to_vec();
        let d = ks_distance_continuous(&mut draws, |x| std_normal_cdf((x - 1.0) / 2.0));
        assert!(d < 0.02, "KS distance {d}");
    }

    #[test]
    fn sampling_matches_cdf_ztnbinom() {
        let fam = Family::ztnbinom();
        let n = 50_000;
        let par = vec![Array1::from_elem(n, 4.0), Array1::from_elem(n, 1.5)];
        let mut rng = ChaCha20Rng::seed_from_u64(46);
        let draws = fam.sample(&par, &mut rng).unwrap();
        // discrete KS: compare empirical and model cdf on the support
        let par1 = vec![array![4.0], array![1.5]];
        let mut d: f64 = 0.0;
        for y in 1..=60 {
            let emp = draws.iter().filter(|&&v| v <= y as f64).count() as f64 / n as f64;
            let f = fam.cdf(&array![y as f64], &par1).unwrap()[0];
            d = d.max((emp - f).abs());
        }
        assert!(d < 0.02, "KS distance {d}");
        assert!(draws.iter().all(|&v| v >= 1.0 && v.fract() == 0.0));
    }

    #[test]
    fn response_encoding_binomial() {
        let fam = Family::binomial();
        let col = Column::Categorical(vec![
            Some("yes".into()),
            Some("no".into()),
            Some("yes".into()),
        ]);
        // lexicographically first level ("no") is the reference 0
        let y = fam.encode_response("participation", &col).unwrap();
        assert_eq!(y.to_vec(), [1.0, 0.0, 1.0]);
        let three = Column::Categorical(vec![Some("a".into()), Some("b".into()), Some("c".into())]);
        assert!(fam.encode_response("g", &three).is_err());
        assert!(fam.validate_response(&array![0.0, 2.0]).is_err());
    }

    #[test]
    fn init_eta_produces_sane_starting_points() {
        let fam = Family::gaussian();
        let y = array![1.0, 2.0, 3.0, 4.0];
        assert!((fam.init_eta(0, &y) - 2.5).abs() < 1e-12);
        let sd = (y.iter().map(|v| (v - 2.5) * (v - 2.5)).sum::<f64>() / 3.0).sqrt();
        assert!((fam.init_eta(1, &y) - sd.ln()).abs() < 1e-12);

        let fam = Family::ztnbinom();
        let y = array![1.0, 2.0, 8.0, 3.0, 2.0];
        let eta = fam.init_eta(0, &y);
        assert!((eta - (16.0f64 / 5.0).ln()).abs() < 1e-12);
        assert!(fam.init_eta(1, &y).is_finite());
    }

    #[test]
    fn by_name_resolves_all_families() {
        for name in ["gaussian", "binomial", "ztnbinom", "lm"] {
            assert_eq!(Family::by_name(name).unwrap().name(), name);
        }
        assert!(Family::by_name("poisson").is_err());
    }
}
