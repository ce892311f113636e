//! Model evaluation: randomized quantile residuals, the continuous ranked
//! probability score by adaptive quadrature, rootogram frequencies for
//! count models, chain autocorrelation summaries, and the `(2.5%, mean,
//! 97.5%)` interval helper.
//!
//! Every diagnostic works from per-observation parameter values `θ̂`. Two
//! helpers produce them: [`fitted_parameters`] (from a mode fit) and
//! [`posterior_mean_parameters`] (mean of the per-draw response-scale
//! parameters over a chain).

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::design::ModelFrame;
use crate::engine::{params_from_etas, FitState};
use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, std_normal_cdf, std_normal_pdf, std_normal_quantile};
use crate::sampler::{RowDecoder, SampleMatrix};

/// Per-observation distribution parameters of a mode fit.
pub fn fitted_parameters(state: &FitState, frame: &ModelFrame) -> Vec<Array1<f64>> {
    params_from_etas(&frame.family, &state.eta)
}

/// Per-observation posterior means of the distribution parameters: each
/// retained draw's predictors are mapped through the inverse links, then
/// averaged on the response scale.
pub fn posterior_mean_parameters(
    samples: &SampleMatrix,
    frame: &ModelFrame,
) -> Result<Vec<Array1<f64>>> {
    if samples.nsave() == 0 {
        return Err(Error::Numeric("posterior means: empty sample matrix".into()));
    }
    let decoder = RowDecoder::new(frame, &samples.colnames)?;
    let kp = frame.family.n_params();
    let mut sums: Vec<Array1<f64>> = vec![Array1::zeros(frame.n); kp];
    for row in samples.data.rows() {
        let etas = decoder.etas(frame, row);
        let par = params_from_etas(&frame.family, &etas);
        for k in 0..kp {
            sums[k] += &par[k];
        }
    }
    let s = samples.nsave() as f64;
    for sum in &mut sums {
        sum.mapv_inplace(|v| v / s);
    }
    Ok(sums)
}

/// Randomized quantile residuals of one model.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// Normal-scored residuals, one per observation.
    pub residuals: Array1<f64>,
    /// Randomization seed, present only for discrete responses.
    pub seed: Option<u64>,
}

/// Probability bounds keeping the normal quantile finite at the extremes.
const PIT_EPS: f64 = 1e-15;

/// Quantile residuals `r_i = Φ⁻¹(F(y_i | θ̂_i))`.
///
/// Continuous responses are deterministic. Discrete responses randomize
/// the probability-integral transform: `r_i = Φ⁻¹(u_i)` with
/// `u_i ~ Uniform(F(y_i − 1), F(y_i))`, drawn from a ChaCha20 stream
/// seeded with `seed` so repeated calls reproduce the same residuals.
pub fn quantile_residuals(
    frame: &ModelFrame,
    par: &[Array1<f64>],
    seed: u64,
) -> Result<ResidualSet> {
    let family = &frame.family;
    let upper = family.cdf(&frame.y, par)?;
    if family.is_discrete() {
        let y_prev = frame.y.mapv(|v| v - 1.0);
        let lower = family.cdf(&y_prev, par)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let residuals = Array1::from_iter(lower.iter().zip(upper.iter()).map(|(&lo, &hi)| {
            let u = lo + (hi - lo) * rng.gen::<f64>();
            std_normal_quantile(u.clamp(PIT_EPS, 1.0 - PIT_EPS))
        }));
        Ok(ResidualSet { residuals, seed: Some(seed) })
    } else {
        let residuals =
            upper.mapv(|u| std_normal_quantile(u.clamp(PIT_EPS, 1.0 - PIT_EPS)));
        Ok(ResidualSet { residuals, seed: None })
    }
}

/// Kolmogorov–Smirnov distance of a sample against the standard normal.
pub fn ks_distance_normal(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, v) in sorted.iter().enumerate() {
        let f = std_normal_cdf(*v);
        ks = ks.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    ks
}

/// Recursion budget for the CRPS quadratures; depth 48 resolves features
/// down to widths near 1e-14 of the unit interval.
const CRPS_DEPTH: usize = 48;

/// Absolute tolerance of each semi-infinite CRPS quadrature. The classic
/// Simpson error estimate can undershoot by an order of magnitude on
/// integrands with saturating tails, so this sits well below the 1e-5
/// accuracy the scores are consumed at.
const CRPS_TOL: f64 = 1e-8;

/// Continuous ranked probability score of a single predictive distribution
/// against one observation:
/// `CRPS = ∫ (F(t | θ) − 1{t ≥ y})² dt`.
///
/// The integral is split at `y` and each half is mapped onto the unit
/// interval via `t = y ∓ u/(1−u)`, then integrated adaptively to absolute
/// tolerance `CRPS_TOL`.
pub fn crps_row(frame_family: &crate::family::Family, par_row: &[f64], y: f64) -> Result<f64> {
    // below y the step function is 0: integrand F(t)²
    let mut below = |u: f64| -> f64 {
        let denom = 1.0 - u;
        if denom <= 1e-12 {
            return 0.0;
        }
        let t = y - u / denom;
        match frame_family.cdf_at(t, par_row) {
            Ok(f) => (f * f) / (denom * denom),
            Err(_) => f64::NAN,
        }
    };
    // above y the step function is 1: integrand (1 − F(t))²
    let mut above = |u: f64| -> f64 {
        let denom = 1.0 - u;
        if denom <= 1e-12 {
            return 0.0;
        }
        let t = y + u / denom;
        match frame_family.cdf_at(t, par_row) {
            Ok(f) => ((1.0 - f) * (1.0 - f)) / (denom * denom),
            Err(_) => f64::NAN,
        }
    };
    let lo = adaptive_simpson(&mut below, 0.0, 1.0, CRPS_TOL, CRPS_DEPTH)?;
    let hi = adaptive_simpson(&mut above, 0.0, 1.0, CRPS_TOL, CRPS_DEPTH)?;
    let total = lo + hi;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "CRPS quadrature produced a non-finite value at y = {y}"
        )));
    }
    Ok(total)
}

/// Per-observation CRPS of a model under parameters `θ̂`.
///
/// Errors identify the first observation whose quadrature failed.
pub fn crps_numeric(frame: &ModelFrame, par: &[Array1<f64>]) -> Result<Array1<f64>> {
    let kp = frame.family.n_params();
    let mut out = Array1::zeros(frame.n);
    for i in 0..frame.n {
        let row: Vec<f64> = (0..kp).map(|k| par[k][i]).collect();
        out[i] = crps_row(&frame.family, &row, frame.y[i]).map_err(|e| {
            Error::Numeric(format!("CRPS failed at observation {}: {e}", i + 1))
        })?;
    }
    Ok(out)
}

/// Closed-form Gaussian CRPS `σ·[z(2Φ(z) − 1) + 2φ(z) − 1/√π]` with
/// `z = (y − μ)/σ`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    sigma
        * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z)
            - 1.0 / std::f64::consts::PI.sqrt())
}

/// Observed and expected count frequencies of a count model.
#[derive(Debug, Clone)]
pub struct Rootogram {
    /// Count bin labels, `support-min ..= max_count`.
    pub counts: Vec<u64>,
    /// Number of responses equal to each bin label.
    pub observed: Vec<usize>,
    /// `expected[j] = Σ_i d(count_j | θ̂_i)`.
    pub expected: Vec<f64>,
}

/// Count frequencies observed in the data versus expected under `θ̂`,
/// for count bins from the family's support minimum up to `max_count`.
/// Both are on the raw scale; any square-root transform is left to
/// presentation.
pub fn rootogram_freq(
    frame: &ModelFrame,
    par: &[Array1<f64>],
    max_count: u64,
) -> Result<Rootogram> {
    let family = &frame.family;
    let min_count = match (family.is_discrete(), family.support_min()) {
        (true, Some(m)) => m,
        _ => {
            return Err(Error::Family(format!(
                "rootogram needs a count family, `{}` is not one",
                family.name()
            )))
        }
    };
    if max_count < min_count {
        return Err(Error::Numeric(format!(
            "rootogram max_count {max_count} is below the support minimum {min_count}"
        )));
    }
    let kp = family.n_params();
    let counts: Vec<u64> = (min_count..=max_count).collect();
    let mut observed = vec![0usize; counts.len()];
    let mut expected = vec![0.0f64; counts.len()];
    for i in 0..frame.n {
        let y = frame.y[i];
        if y >= min_count as f64 && y <= max_count as f64 && y.fract() == 0.0 {
            observed[(y as u64 - min_count) as usize] += 1;
        }
        let row: Vec<f64> = (0..kp).map(|k| par[k][i]).collect();
        for (j, &c) in counts.iter().enumerate() {
            expected[j] += family.density_at(c as f64, &row, false)?;
        }
    }
    Ok(Rootogram { counts, observed, expected })
}

/// Per-column autocorrelations of a chain.
#[derive(Debug, Clone)]
pub struct AcfSummary {
    /// Row `h` holds each column's autocorrelation at lag `h`
    /// (`max_lag + 1` rows).
    pub acf: Array2<f64>,
    /// Largest absolute autocorrelation across columns, per lag.
    pub max_abs: Vec<f64>,
}

/// Sample autocorrelation of every column up to `max_lag`, plus the
/// per-lag maximum of their absolute values. Constant columns report
/// lag-0 autocorrelation 1 and 0 elsewhere.
pub fn acf_summary(data: ArrayView2<f64>, max_lag: usize) -> Result<AcfSummary> {
    let n = data.nrows();
    if n < max_lag + 2 {
        return Err(Error::Numeric(format!(
            "autocorrelation to lag {max_lag} needs at least {} rows, got {n}",
            max_lag + 2
        )));
    }
    let p = data.ncols();
    let mut acf = Array2::zeros((max_lag + 1, p));
    for j in 0..p {
        let col = data.column(j);
        let mean = col.mean().unwrap_or(0.0);
        let denom: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        if denom <= 0.0 {
            acf[[0, j]] = 1.0;
            continue;
        }
        for h in 0..=max_lag {
            let mut num = 0.0;
            for t in 0..n - h {
                num += (col[t] - mean) * (col[t + h] - mean);
            }
            acf[[h, j]] = num / denom;
        }
    }
    let max_abs = (0..=max_lag)
        .map(|h| {
            acf.row(h)
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(AcfSummary { acf, max_abs })
}

/// Linear-interpolation empirical quantile (the "type 7" rule
/// `h = 1 + (n − 1)p` on the sorted sample).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Empirical 2.5% quantile, mean, and 97.5% quantile of a sample.
pub fn c95(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Numeric("c95 of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((
        quantile_type7(&sorted, 0.025),
        mean,
        quantile_type7(&sorted, 0.975),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, DataTable};
    use crate::design::build_frame;
    use crate::family::Family;
    use crate::formula::parse_formula_set;
    use rand_distr::StandardNormal;

    fn texts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gaussian_frame_with_truth(n: usize, seed: u64) -> (ModelFrame, Vec<Array1<f64>>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mu: Vec<f64> = x.iter().map(|&v| 1.0 + 0.5 * v).collect();
        let sigma: Vec<f64> = x.iter().map(|&v| (0.2 * v).exp()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| mu[i] + sigma[i] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(y)),
            ("x".into(), Column::Numeric(x)),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ x", "sigma ~ x"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let par = vec![Array1::from_vec(mu), Array1::from_vec(sigma)];
        (frame, par)
    }

    #[test]
    fn residual_is_zero_at_the_conditional_median() {
        let (mut frame, mut par) = gaussian_frame_with_truth(5, 1);
        // place every observation exactly at its mean = median
        frame.y = par[0].clone();
        par[1].fill(1.3);
        let res = quantile_residuals(&frame, &par, 0).unwrap();
        for r in &res.residuals {
            assert!(r.abs() < 1e-12, "r = {r}");
        }
        assert!(res.seed.is_none());
    }

    #[test]
    fn residuals_of_the_true_model_look_standard_normal() {
        let (frame, par) = gaussian_frame_with_truth(2000, 2);
        let res = quantile_residuals(&frame, &par, 0).unwrap();
        assert!(res.residuals.iter().all(|r| r.is_finite()));
        let ks = ks_distance_normal(res.residuals.as_slice().unwrap());
        assert!(ks < 0.035, "KS = {ks}");
    }

    #[test]
    fn residuals_are_permutation_equivariant() {
        let (frame, par) = gaussian_frame_with_truth(40, 3);
        let res = quantile_residuals(&frame, &par, 0).unwrap();
        // reverse the observation order and recompute
        let (mut rev_frame, _) = gaussian_frame_with_truth(40, 3);
        rev_frame.y = Array1::from_iter(frame.y.iter().rev().copied());
        let rev_par: Vec<Array1<f64>> = par
            .iter()
            .map(|c| Array1::from_iter(c.iter().rev().copied()))
            .collect();
        let rev = quantile_residuals(&rev_frame, &rev_par, 0).unwrap();
        for i in 0..40 {
            assert!((res.residuals[i] - rev.residuals[39 - i]).abs() < 1e-14);
        }
    }

    fn ztnb_frame(n: usize, seed: u64) -> (ModelFrame, Vec<Array1<f64>>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let family = Family::ztnbinom();
        let mu = Array1::from_elem(n, 3.0);
        let theta = Array1::from_elem(n, 2.0);
        let par = vec![mu, theta];
        let y = family.sample(&par, &mut rng).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(y.to_vec())),
            ("x".into(), Column::Numeric(x)),
        ])
        .unwrap();
        let fs = parse_formula_set(&texts(&["y ~ x", "theta ~ 1"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        (frame, par)
    }

    #[test]
    fn discrete_residuals_are_seeded_and_finite() {
        let (frame, par) = ztnb_frame(300, 4);
        let a = quantile_residuals(&frame, &par, 42).unwrap();
        let b = quantile_residuals(&frame, &par, 42).unwrap();
        let c = quantile_residuals(&frame, &par, 43).unwrap();
        assert_eq!(a.residuals, b.residuals);
        assert_ne!(a.residuals, c.residuals);
        assert_eq!(a.seed, Some(42));
        assert!(a.residuals.iter().all(|r| r.is_finite()));
        // randomized PIT of the true model is near-uniform, so the scores
        // are near-normal
        let ks = ks_distance_normal(a.residuals.as_slice().unwrap());
        assert!(ks < 0.08, "KS = {ks}");
    }

    #[test]
    fn crps_matches_the_closed_form_gaussian_value() {
        let family = Family::gaussian();
        // hand value 2φ(0) − 1/√π
        let hand = 2.0 * std_normal_pdf(0.0) - 1.0 / std::f64::consts::PI.sqrt();
        let got = crps_row(&family, &[0.0, 1.0], 0.0).unwrap();
        assert!((got - hand).abs() < 1e-5, "got {got}, hand {hand}");
        assert!((hand - 0.23370).abs() < 1e-5);

        for &mu in &[-2.0, 0.0, 1.5] {
            for &sigma in &[0.1, 1.0, 10.0] {
                for &y in &[-3.0, 0.0, 2.5] {
                    let numeric = crps_row(&family, &[mu, sigma], y).unwrap();
                    let oracle = crps_gaussian(mu, sigma, y);
                    assert!(
                        (numeric - oracle).abs() < 1e-5,
                        "mu={mu} sigma={sigma} y={y}: {numeric} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn crps_of_a_point_mass_vanishes() {
        let family = Family::gaussian();
        let v = crps_row(&family, &[1.0, 1e-6], 1.0).unwrap();
        assert!(v < 1e-5, "CRPS = {v}");
    }

    #[test]
    fn crps_is_nonnegative_over_random_inputs() {
        let family = Family::gaussian();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mu = 4.0 * rng.sample::<f64, _>(StandardNormal);
            let sigma = 0.1 + 3.0 * rng.gen::<f64>();
            let y = mu + 6.0 * rng.sample::<f64, _>(StandardNormal);
            let v = crps_row(&family, &[mu, sigma], y).unwrap();
            assert!(v >= 0.0, "CRPS = {v} at mu={mu} sigma={sigma} y={y}");
        }
    }

    #[test]
    fn crps_numeric_runs_over_a_frame() {
        let (frame, par) = gaussian_frame_with_truth(25, 6);
        let scores = crps_numeric(&frame, &par).unwrap();
        assert_eq!(scores.len(), 25);
        assert!(scores.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn rootogram_respects_truncation_and_totals() {
        let (frame, par) = ztnb_frame(400, 7);
        let root = rootogram_freq(&frame, &par, 50).unwrap();
        assert_eq!(root.counts.first(), Some(&1));
        assert_eq!(root.counts.len(), 50);
        assert!(root.expected.iter().all(|&e| e >= 0.0));

        // the expected total undershoots n by exactly the tail mass
        let expected_total: f64 = root.expected.iter().sum();
        let tail: f64 = (0..frame.n)
            .map(|i| {
                let row = [par[0][i], par[1][i]];
                1.0 - frame.family.cdf_at(50.0, &row).unwrap()
            })
            .sum();
        assert!(
            (expected_total + tail - frame.n as f64).abs() < 1e-6,
            "total {expected_total}, tail {tail}"
        );

        // observed counts cover every in-range response
        let in_range = frame.y.iter().filter(|&&v| (1.0..=50.0).contains(&v)).count();
        assert_eq!(root.observed.iter().sum::<usize>(), in_range);
    }

    #[test]
    fn rootogram_rejects_continuous_families() {
        let (frame, par) = gaussian_frame_with_truth(10, 8);
        assert!(rootogram_freq(&frame, &par, 50).is_err());
    }

    #[test]
    fn acf_of_iid_noise_is_small_and_lag_zero_is_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let data = Array2::from_shape_fn((10_000, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let acf = acf_summary(data.view(), 40).unwrap();
        assert_eq!(acf.acf[[0, 0]], 1.0);
        assert_eq!(acf.acf[[0, 1]], 1.0);
        assert!(acf.acf[[1, 0]].abs() < 0.03);
        assert!(acf.max_abs[0] == 1.0);
        assert!(acf.max_abs[1] < 0.03);
    }

    #[test]
    fn acf_tracks_an_ar1_process() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let n = 20_000;
        let mut data = Array2::zeros((n, 1));
        let mut x = 0.0;
        for t in 0..n {
            x = 0.8 * x + rng.sample::<f64, _>(StandardNormal);
            data[[t, 0]] = x;
        }
        let acf = acf_summary(data.view(), 5).unwrap();
        assert!(
            (0.75..=0.85).contains(&acf.acf[[1, 0]]),
            "ACF(1) = {}",
            acf.acf[[1, 0]]
        );
    }

    #[test]
    fn acf_handles_constant_columns_and_short_chains() {
        let data = Array2::from_elem((100, 1), 3.5);
        let acf = acf_summary(data.view(), 10).unwrap();
        assert_eq!(acf.acf[[0, 0]], 1.0);
        assert_eq!(acf.acf[[1, 0]], 0.0);
        let short = Array2::zeros((10, 1));
        assert!(acf_summary(short.view(), 40).is_err());
    }

    #[test]
    fn c95_hand_values() {
        let constant = vec![2.0; 9];
        assert_eq!(c95(&constant).unwrap(), (2.0, 2.0, 2.0));

        let grid: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let (lo, mean, hi) = c95(&grid).unwrap();
        assert!((lo - 3.475).abs() < 1e-12, "lo = {lo}");
        assert!((mean - 50.5).abs() < 1e-12);
        assert!((hi - 97.525).abs() < 1e-12, "hi = {hi}");

        assert!(c95(&[]).is_err());

        // symmetric input: mean sits midway between the two quantiles
        let mut sym = Vec::new();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..500 {
            let v: f64 = rng.sample(StandardNormal);
            sym.push(v);
            sym.push(-v);
        }
        let (lo, mean, hi) = c95(&sym).unwrap();
        assert!((mean - (lo + hi) / 2.0).abs() < 0.05);
    }

    #[test]
    fn posterior_means_of_a_constant_chain_match_the_state() {
        let (frame, _) = gaussian_frame_with_truth(30, 12);
        let state = crate::engine::backfit(&frame, 100, 1e-6).unwrap();
        let mut colnames = frame.coef_names();
        colnames.extend(frame.tau2_names());
        let coefs = state.flat_coefs();
        let mut data = Array2::zeros((7, colnames.len()));
        for mut row in data.rows_mut() {
            for (j, v) in coefs.iter().enumerate() {
                row[j] = *v;
            }
        }
        let samples = SampleMatrix {
            colnames,
            data,
            n_iter: 7,
            burnin: 1,
            thin: 1,
            seed: 0,
            block_rates: Vec::new(),
        };
        let means = posterior_mean_parameters(&samples, &frame).unwrap();
        let direct = fitted_parameters(&state, &frame);
        for k in 0..2 {
            for i in 0..frame.n {
                assert!((means[k][i] - direct[k][i]).abs() < 1e-12);
            }
        }
    }
}
