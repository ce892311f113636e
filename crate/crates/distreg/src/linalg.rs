//! Small dense linear-algebra kernels used by the estimation engines:
//! Cholesky factorization and solves, jittered SPD solves, symmetric
//! eigenvalues (cyclic Jacobi), Householder null-space bases for sum-to-zero
//! constraints, and multivariate-normal helpers on precision factorizations.
//!
//! Coefficient blocks in this crate are small (tens of columns), so simple
//! O(p³) dense routines are both sufficient and easy to verify against dense
//! oracles in the tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factorizes `a = L·Lᵀ`. Returns `None` when the matrix is not
    /// (numerically) positive definite.
    pub fn new(a: ArrayView2<f64>) -> Option<Self> {
        let p = a.nrows();
        assert_eq!(p, a.ncols(), "Cholesky: matrix must be square");
        let mut l = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..p {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Some(Self { l })
    }

    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A·x = b` using the stored factor.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let p = self.dim();
        assert_eq!(b.len(), p, "Cholesky::solve: dimension mismatch");
        // forward: L·u = b
        let mut u = b.to_owned();
        for i in 0..p {
            for k in 0..i {
                let t = self.l[(i, k)] * u[k];
                u[i] -= t;
            }
            u[i] /= self.l[(i, i)];
        }
        // backward: Lᵀ·x = u
        for i in (0..p).rev() {
            for k in (i + 1)..p {
                let t = self.l[(k, i)] * u[k];
                u[i] -= t;
            }
            u[i] /= self.l[(i, i)];
        }
        u
    }

    /// Solves `A·X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// `log |A|` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `tr(A⁻¹·M)`.
    pub fn trace_of_solve(&self, m: ArrayView2<f64>) -> f64 {
        let inv_m = self.solve_matrix(m);
        inv_m.diag().sum()
    }

    /// Quadratic form in the factored matrix: `xᵀ·A·x = ‖Lᵀx‖²`.
    pub fn quad_form(&self, x: ArrayView1<f64>) -> f64 {
        let p = self.dim();
        let mut total = 0.0;
        // v = Lᵀ x, computed row-wise without materializing the transpose
        for i in 0..p {
            let mut v = 0.0;
            for k in i..p {
                v += self.l[(k, i)] * x[k];
            }
            total += v * v;
        }
        total
    }

    /// Draws `mean + L⁻ᵀ·z`, `z ~ N(0, I)`: a multivariate-normal variate
    /// with precision matrix `A = L·Lᵀ` (covariance `A⁻¹`).
    pub fn sample_mvn_prec<R: Rng>(&self, mean: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        let p = self.dim();
        let mut z: Array1<f64> = Array1::from_iter((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // backward substitution: Lᵀ·x = z
        for i in (0..p).rev() {
            for k in (i + 1)..p {
                let t = self.l[(k, i)] * z[k];
                z[i] -= t;
            }
            z[i] /= self.l[(i, i)];
        }
        &z + &mean
    }

    /// Log-density of `N(mean, A⁻¹)` at `x`, with `A = L·Lᵀ` the precision.
    pub fn mvn_log_density_prec(&self, x: ArrayView1<f64>, mean: ArrayView1<f64>) -> f64 {
        let p = self.dim() as f64;
        let diff = &x.to_owned() - &mean;
        0.5 * self.log_det() - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * self.quad_form(diff.view())
    }
}

/// Relative ridge-jitter ladder tried when an SPD solve fails; multiples of
/// `trace(A)` added to the diagonal, capped at `1e-7·trace`.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-9, 1e-7];

/// Factorizes `a` with an escalating ridge jitter on the diagonal.
///
/// Returns the factor and the jitter actually used (0.0 when the plain
/// factorization succeeded). Errors when the system stays indefinite even at
/// the maximum jitter of `1e-7·trace(a)`.
pub fn cholesky_jittered(a: ArrayView2<f64>) -> Result<(Cholesky, f64)> {
    let trace: f64 = a.diag().sum();
    let scale = if trace > 0.0 { trace } else { 1.0 };
    for &level in JITTER_LADDER.iter() {
        let jitter = level * scale;
        let attempt = if jitter == 0.0 {
            Cholesky::new(a)
        } else {
            let mut aj = a.to_owned();
            for i in 0..aj.nrows() {
                aj[(i, i)] += jitter;
            }
            Cholesky::new(aj.view())
        };
        if let Some(chol) = attempt {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Numeric(format!(
        "symmetric system of dimension {} is not positive definite even after ridge jitter 1e-7·trace",
        a.nrows()
    )))
}

/// `Xᵀ·diag(w)·X` for an n×p design and n weights.
pub fn weighted_crossprod(x: ArrayView2<f64>, w: ArrayView1<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    assert_eq!(w.len(), n, "weighted_crossprod: weight length mismatch");
    let mut out = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        let wi = w[i];
        let row = x.row(i);
        for a in 0..p {
            let wa = wi * row[a];
            for b in a..p {
                out[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// `Xᵀ·diag(w)·v` for an n×p design, n weights, and an n-vector.
pub fn weighted_xtv(x: ArrayView2<f64>, w: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    let (n, p) = x.dim();
    assert_eq!(w.len(), n, "weighted_xtv: weight length mismatch");
    assert_eq!(v.len(), n, "weighted_xtv: vector length mismatch");
    let mut out = Array1::<f64>::zeros(p);
    for i in 0..n {
        let wv = w[i] * v[i];
        for (a, xa) in x.row(i).iter().enumerate() {
            out[a] += wv * xa;
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method,
/// returned in ascending order.
///
/// Intended for the small penalty matrices of this crate (p ≲ 60); the
/// sweep count is capped and the routine panics if the off-diagonal mass
/// refuses to vanish, which cannot happen for symmetric input.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let p = a.nrows();
    assert_eq!(p, a.ncols(), "sym_eigenvalues: matrix must be square");
    let mut m = a.to_owned();
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                if m[(i, j)].abs() <= 1e-300 {
                    continue;
                }
                // classical Jacobi rotation annihilating m[(i, j)]
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * m[(i, j)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
            }
        }
    }
    let mut eig: Vec<f64> = m.diag().to_vec();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Numerical rank of a symmetric positive-semidefinite matrix: the number
/// of eigenvalues above `rel_tol` times the largest one.
pub fn psd_rank(a: ArrayView2<f64>, rel_tol: f64) -> usize {
    let eig = sym_eigenvalues(a);
    let max = eig.last().copied().unwrap_or(0.0).max(0.0);
    if max == 0.0 {
        return 0;
    }
    eig.iter().filter(|&&e| e > rel_tol * max).count()
}

/// Verifies that a penalty matrix is symmetric with nonnegative eigenvalues
/// (to relative tolerance `tol`).
pub fn check_symmetric_psd(a: ArrayView2<f64>, tol: f64, what: &str) -> Result<()> {
    let p = a.nrows();
    if p != a.ncols() {
        return Err(Error::Design(format!("{what}: penalty matrix is not square")));
    }
    let scale: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    for i in 0..p {
        for j in (i + 1)..p {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return Err(Error::Design(format!("{what}: penalty matrix is not symmetric")));
            }
        }
    }
    let eig = sym_eigenvalues(a);
    let max = eig.last().copied().unwrap_or(0.0).max(1e-300);
    if let Some(&min) = eig.first() {
        if min < -tol * max {
            return Err(Error::Design(format!(
                "{what}: penalty matrix has negative eigenvalue {min:.3e}"
            )));
        }
    }
    Ok(())
}

/// Orthonormal basis of the null space of a single linear constraint
/// `cᵀβ = 0`, via the Householder reflection mapping `c` onto the first
/// coordinate axis. Returns a k×(k−1) matrix `Z` with `cᵀZ = 0` and
/// `ZᵀZ = I`.
pub fn constraint_nullspace(c: ArrayView1<f64>) -> Result<Array2<f64>> {
    let k = c.len();
    let norm = c.dot(&c).sqrt();
    if !(norm > 0.0) || k < 2 {
        return Err(Error::Design(
            "sum-to-zero constraint is degenerate (zero constraint vector)".into(),
        ));
    }
    // v = c + sign(c₁)·‖c‖·e₁ gives H = I − 2vvᵀ/vᵀv with H·e₁ ∝ c
    let mut v = c.to_owned();
    v[0] += c[0].signum() * norm;
    let vtv = v.dot(&v);
    let mut z = Array2::<f64>::zeros((k, k - 1));
    for col in 1..k {
        for row in 0..k {
            let h = if row == col { 1.0 } else { 0.0 };
            z[(row, col - 1)] = h - 2.0 * v[row] * v[col] / vtv;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn cholesky_matches_hand_factorization() {
        // a = [[4,2],[2,3]] → L = [[2,0],[1,sqrt(2)]]
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let c = Cholesky::new(a.view()).unwrap();
        assert!((c.l[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((c.l[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((c.l[(1, 1)] - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((c.log_det() - 8.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solve_recovers_known_solution() {
        let a = array![[4.0, 2.0, 0.5], [2.0, 3.0, 1.0], [0.5, 1.0, 2.0]];
        let x_true = array![1.0, -2.0, 3.0];
        let b = a.dot(&x_true);
        let c = Cholesky::new(a.view()).unwrap();
        let x = c.solve(b.view());
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        assert!(Cholesky::new(a.view()).is_none());
    }

    #[test]
    fn jitter_repairs_near_singular_system() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, jitter) = cholesky_jittered(a.view()).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-7 * 2.0);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_system() {
        let a = array![[0.0, 5.0], [5.0, 0.0]];
        assert!(cholesky_jittered(a.view()).is_err());
    }

    #[test]
    fn quad_form_and_density_match_hand_values() {
        // identity precision: N(0, I) log-density at x = (1, 1)
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let c = Cholesky::new(a.view()).unwrap();
        let x = array![1.0, 1.0];
        let m = array![0.0, 0.0];
        assert!((c.quad_form(x.view()) - 2.0).abs() < 1e-12);
        let expect = -(2.0 * std::f64::consts::PI).ln() - 1.0;
        assert!((c.mvn_log_density_prec(x.view(), m.view()) - expect).abs() < 1e-12);
    }

    #[test]
    fn weighted_crossprod_matches_dense_oracle() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let w = array![1.0, 0.5, 2.0];
        let xtwx = weighted_crossprod(x.view(), w.view());
        // dense oracle: explicit diag(w) product
        let mut expect = Array2::<f64>::zeros((2, 2));
        for i in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    expect[(a, b)] += x[(i, a)] * w[i] * x[(i, b)];
                }
            }
        }
        for (got, want) in xtwx.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        let v = array![1.0, -1.0, 2.0];
        let xtv = weighted_xtv(x.view(), w.view(), v.view());
        let expect = array![
            1.0 * 1.0 * 1.0 + 3.0 * 0.5 * -1.0 + 5.0 * 2.0 * 2.0,
            2.0 * 1.0 * 1.0 + 4.0 * 0.5 * -1.0 + 6.0 * 2.0 * 2.0
        ];
        for (got, want) in xtv.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrices() {
        let eig = sym_eigenvalues(array![[2.0, 1.0], [1.0, 2.0]].view());
        assert!((eig[0] - 1.0).abs() < 1e-10 && (eig[1] - 3.0).abs() < 1e-10);

        let d = array![[3.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]];
        let eig = sym_eigenvalues(d.view());
        assert!((eig[0] + 1.0).abs() < 1e-12);
        assert!((eig[1] - 2.0).abs() < 1e-12);
        assert!((eig[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn psd_rank_counts_positive_eigenvalues() {
        // rank-1 outer product uuᵀ with u = (1, 2)
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert_eq!(psd_rank(a.view(), 1e-8), 1);
        assert!(check_symmetric_psd(a.view(), 1e-8, "test").is_ok());
        let bad = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(check_symmetric_psd(bad.view(), 1e-8, "test").is_err());
    }

    #[test]
    fn constraint_nullspace_is_orthonormal_and_annihilates_c() {
        let c = array![3.0, 1.0, -2.0, 0.5];
        let z = constraint_nullspace(c.view()).unwrap();
        assert_eq!(z.dim(), (4, 3));
        let ctz = c.dot(&z);
        for v in ctz.iter() {
            assert!(v.abs() < 1e-12, "cᵀZ = {ctz:?}");
        }
        let ztz = z.t().dot(&z);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ztz[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mvn_sampler_matches_target_moments() {
        // precision A = [[2, 0.6], [0.6, 1]] → covariance A⁻¹
        let a = array![[2.0, 0.6], [0.6, 1.0]];
        let chol = Cholesky::new(a.view()).unwrap();
        let mean = array![1.0, -2.0];
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n = 40_000;
        let mut sums = [0.0; 2];
        let mut sq = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = chol.sample_mvn_prec(mean.view(), &mut rng);
            for i in 0..2 {
                sums[i] += x[i];
            }
            for i in 0..2 {
                for j in 0..2 {
                    sq[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        let det = 2.0 * 1.0 - 0.6 * 0.6;
        let cov = [[1.0 / det, -0.6 / det], [-0.6 / det, 2.0 / det]];
        for i in 0..2 {
            assert!((sums[i] / n as f64 - mean[i]).abs() < 0.02);
            for j in 0..2 {
                assert!(
                    (sq[i][j] / n as f64 - cov[i][j]).abs() < 0.03,
                    "cov[{i}][{j}] = {} want {}",
                    sq[i][j] / n as f64,
                    cov[i][j]
                );
            }
        }
    }
}
