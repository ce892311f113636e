//! Reproducible synthetic data sets with documented generating equations.
//!
//! Each generator returns a [`DataTable`] (plus the simulation truth where
//! useful) so examples, tests, and benchmark configurations can run
//! without bundled external data. All draws come from a ChaCha20 stream
//! seeded explicitly — the same seed always yields the same table.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::{Column, DataTable};
use crate::error::Result;
use crate::family::Family;

/// Location-scale Gaussian additive data:
///
/// * `x1, x2, x3 ~ U(0, 1)` independently,
/// * `μ = 1 + 0.5·x1 + sin(2π·x2)`,
/// * `log σ = −0.8 + 0.6·x3`,
/// * `y ~ N(μ, σ²)`.
///
/// Columns: `y, x1, x2, x3`. `x1` enters linearly, `x2` through a smooth,
/// `x3` drives the scale — the texture a distributional regression needs.
pub fn gaussian_additive(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut x3 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen();
        let b: f64 = rng.gen();
        let c: f64 = rng.gen();
        let mu = 1.0 + 0.5 * a + (2.0 * std::f64::consts::PI * b).sin();
        let sigma = (-0.8 + 0.6 * c).exp();
        let z: f64 = rng.sample(StandardNormal);
        x1.push(a);
        x2.push(b);
        x3.push(c);
        y.push(mu + sigma * z);
    }
    DataTable::new(vec![
        ("y".into(), Column::Numeric(y)),
        ("x1".into(), Column::Numeric(x1)),
        ("x2".into(), Column::Numeric(x2)),
        ("x3".into(), Column::Numeric(x3)),
    ])
    .expect("columns are consistent by construction")
}

/// The sigmoid growth-curve data used to exercise user-defined nonlinear
/// terms:
///
/// * `time = 1, …, n` (classically `n = 30`),
/// * `y = 2 + 1/(1 + exp(0.5·(15 − time))) + ε`,
/// * `ε ~ N(0, sd = exp(−3 + 2·cos(time/30·6 − 3)))`.
///
/// Columns: `y, time`. The mean is a three-parameter growth curve; the
/// noise standard deviation varies smoothly with time, so the scale
/// deserves its own smooth.
pub fn growth_curve(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut time = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 1..=n {
        let t = i as f64;
        let mean = 2.0 + 1.0 / (1.0 + (0.5 * (15.0 - t)).exp());
        let sd = (-3.0 + 2.0 * (t / 30.0 * 6.0 - 3.0).cos()).exp();
        let z: f64 = rng.sample(StandardNormal);
        time.push(t);
        y.push(mean + sd * z);
    }
    DataTable::new(vec![
        ("y".into(), Column::Numeric(y)),
        ("time".into(), Column::Numeric(time)),
    ])
    .expect("columns are consistent by construction")
}

/// The noiseless growth-curve mean `2 + 1/(1 + exp(0.5·(15 − t)))`.
pub fn growth_curve_mean(t: f64) -> f64 {
    2.0 + 1.0 / (1.0 + (0.5 * (15.0 - t)).exp())
}

/// The growth-curve noise level `log sd = −3 + 2·cos(t/30·6 − 3)`.
pub fn growth_curve_log_sd(t: f64) -> f64 {
    -3.0 + 2.0 * (t / 30.0 * 6.0 - 3.0).cos()
}

/// A dense linear model `y = Xβ + ε` for conjugate-sampler checks:
///
/// * `X` has an intercept column plus `p − 1` standard-normal columns,
/// * `β_j = (−1)^j · (0.5 + j/4)` for `j = 0, …, p−1`,
/// * `ε ~ N(0, σ²)`.
///
/// Returns the design, the response, the true coefficients, and a table
/// with columns `y, x1, …, x(p−1)`.
pub fn linear_model(
    n: usize,
    p: usize,
    sigma: f64,
    seed: u64,
) -> (Array2<f64>, Array1<f64>, Array1<f64>, DataTable) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let beta: Array1<f64> = (0..p)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0.5 + j as f64 / 4.0)
        })
        .collect();
    let y: Array1<f64> = (0..n)
        .map(|i| x.row(i).dot(&beta) + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut columns = vec![("y".to_string(), Column::Numeric(y.to_vec()))];
    for j in 1..p {
        columns.push((format!("x{j}"), Column::Numeric(x.column(j).to_vec())));
    }
    let table = DataTable::new(columns).expect("columns are consistent by construction");
    (x, y, beta, table)
}

/// Zero-truncated negative-binomial counts with one informative smooth:
///
/// * `x1, x2 ~ U(0, 1)` independently,
/// * `log μ = 0.8 + 1.1·sin(2π·x1)` — `x2` carries no signal,
/// * `log θ = log 2`,
/// * `y` drawn from the zero-truncated negative binomial.
///
/// Columns: `y, x1, x2`. Boosting over `s(x1) + s(x2)` should pick the
/// informative smooth first.
pub fn ztnb_counts(n: usize, seed: u64) -> Result<DataTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let family = Family::ztnbinom();
    let x1: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let mu: Array1<f64> = x1
        .iter()
        .map(|&v| (0.8 + 1.1 * (2.0 * std::f64::consts::PI * v).sin()).exp())
        .collect();
    let theta = Array1::from_elem(n, 2.0);
    let y = family.sample(&[mu, theta], &mut rng)?;
    Ok(DataTable::new(vec![
        ("y".into(), Column::Numeric(y.to_vec())),
        ("x1".into(), Column::Numeric(x1)),
        ("x2".into(), Column::Numeric(x2)),
    ])
    .expect("columns are consistent by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_in_the_seed() {
        let a = gaussian_additive(50, 1);
        let b = gaussian_additive(50, 1);
        assert_eq!(a.numeric("y").unwrap(), b.numeric("y").unwrap());
        let c = gaussian_additive(50, 2);
        assert_ne!(a.numeric("y").unwrap(), c.numeric("y").unwrap());

        let g1 = growth_curve(30, 7);
        let g2 = growth_curve(30, 7);
        assert_eq!(g1.numeric("y").unwrap(), g2.numeric("y").unwrap());

        let (x1, y1, _, _) = linear_model(40, 3, 1.0, 5);
        let (x2, y2, _, _) = linear_model(40, 3, 1.0, 5);
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);

        let z1 = ztnb_counts(100, 9).unwrap();
        let z2 = ztnb_counts(100, 9).unwrap();
        assert_eq!(z1.numeric("y").unwrap(), z2.numeric("y").unwrap());
    }

    #[test]
    fn growth_curve_matches_its_documented_equations() {
        let d = growth_curve(30, 3);
        let time = d.numeric("time").unwrap();
        assert_eq!(time[0], 1.0);
        assert_eq!(time[29], 30.0);
        // late times have tiny noise (sd ≈ exp(−3+2cos(3)) ≈ 0.0069 at t=30)
        let y = d.numeric("y").unwrap();
        let late_err = (y[29] - growth_curve_mean(30.0)).abs();
        assert!(late_err < 0.2, "late residual {late_err}");
        assert!((growth_curve_mean(15.0) - 2.5).abs() < 1e-12);
        // t = 15 is the noisiest point: log sd = −3 + 2·cos(0) = −1
        assert!((growth_curve_log_sd(15.0) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_model_truth_is_recoverable_by_ols() {
        let (x, y, beta, table) = linear_model(2000, 4, 0.5, 11);
        assert_eq!(table.n_rows(), 2000);
        let xtx = x.t().dot(&x);
        let chol = crate::linalg::Cholesky::new(xtx.view()).unwrap();
        let ols = chol.solve(x.t().dot(&y).view());
        for j in 0..4 {
            assert!(
                (ols[j] - beta[j]).abs() < 0.1,
                "coef {j}: OLS {} vs truth {}",
                ols[j],
                beta[j]
            );
        }
    }

    #[test]
    fn ztnb_counts_are_positive_integers() {
        let d = ztnb_counts(500, 13).unwrap();
        let y = d.numeric("y").unwrap();
        assert!(y.iter().all(|&v| v >= 1.0 && v.fract() == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        // μ ranges over exp(0.8 ± 1.1) ≈ [0.74, 6.7]; truncation lifts the
        // mean above 1
        assert!(mean > 1.5 && mean < 6.0, "mean = {mean}");
    }
}
