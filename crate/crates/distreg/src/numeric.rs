//! Scalar numerical routines shared across the crate: golden-section
//! minimization (smoothing-variance search), Nelder-Mead (nonlinear term
//! updates), and adaptive Simpson quadrature (CRPS integration).

use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};

/// Standard normal density φ(z).
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function Φ(z).
pub fn std_normal_cdf(z: f64) -> f64 {
    statrs::distribution::Normal::standard().cdf(z)
}

/// Standard normal quantile function Φ⁻¹(u) for u in (0, 1).
pub fn std_normal_quantile(u: f64) -> f64 {
    statrs::distribution::Normal::standard().inverse_cdf(u)
}

/// Golden-ratio section constant (3 - sqrt(5)) / 2.
const GOLDEN: f64 = 0.381_966_011_250_105_2;

/// Minimizes a univariate function on `[lo, hi]` by golden-section search.
///
/// Returns `(x_min, f(x_min))`. The function is assumed continuous; for
/// non-unimodal objectives the search still terminates but may return a
/// local minimum. The interval shrinks by the golden ratio each step until
/// it is narrower than `tol`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> (f64, f64) {
    assert!(hi > lo, "golden_section_min: empty interval");
    let (mut a, mut b) = (lo, hi);
    let mut x1 = a + GOLDEN * (b - a);
    let mut x2 = b - GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            // minimum is in [a, x2]
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            // minimum is in [x1, b]
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimizes a multivariate function by the Nelder-Mead simplex method.
///
/// `start` seeds the simplex; the remaining vertices offset one coordinate
/// each by the matching entry of `steps`. Returns the best vertex found,
/// which is never worse than the starting point (the start is a simplex
/// vertex and only improvements replace vertices).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    max_iter: usize,
    tol: f64,
) -> Vec<f64> {
    let n = start.len();
    assert!(n > 0, "nelder_mead: empty start");
    assert_eq!(steps.len(), n, "nelder_mead: one step size per coordinate");
    // standard coefficients: reflection, expansion, contraction, shrink
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 0.1 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        // order vertices by objective value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if (values[worst] - values[best]).abs() <= tol * (1.0 + values[best].abs()) {
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for d in 0..n {
                centroid[d] += simplex[i][d] / n as f64;
            }
        }

        let reflect: Vec<f64> = (0..n)
            .map(|d| centroid[d] + alpha * (centroid[d] - simplex[worst][d]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < values[best] {
            let expand: Vec<f64> = (0..n)
                .map(|d| centroid[d] + gamma * (reflect[d] - centroid[d]))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|d| centroid[d] + rho * (simplex[worst][d] - centroid[d]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < values[worst] {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                // shrink toward the best vertex
                let best_v = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for d in 0..n {
                        simplex[i][d] = best_v[d] + sigma * (simplex[i][d] - best_v[d]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    simplex.swap_remove(best)
}

/// Adaptive Simpson quadrature of `f` over the finite interval `[a, b]`.
///
/// Recursion splits intervals until the local Richardson error estimate is
/// below the local tolerance share. Errors out when the depth budget is
/// exhausted before the tolerance is met (non-convergent integrand).
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric(format!(
            "adaptive quadrature did not converge on [{a}, {b}] (error estimate {:.3e} > {:.3e})",
            delta.abs() / 15.0,
            tol
        )));
    }
    let l = simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}
