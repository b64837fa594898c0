use super::vector::{axpy, dot, norm, DenseMatrix, ParamVector};
use crate::error::{Error, Result};

/// A square linear map on flat vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.rows(), self.cols(), "operator must be square");
        self.rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            tol: 1e-6,
            max_iters: 200,
            damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `(op + damping * I) x = rhs` by conjugate gradients.
pub fn cg_solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
    damping: f64,
) -> Result<ParamVector> {
    cg_solve_with_stats(
        op,
        rhs,
        CgSettings {
            tol,
            max_iters,
            damping,
        },
    )
    .map(|(x, _)| x)
}

pub fn cg_solve_with_stats(
    op: &dyn LinearOperator,
    rhs: &[f64],
    settings: CgSettings,
) -> Result<(ParamVector, CgStats)> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::config(format!(
            "cg rhs has length {} but operator dimension is {n}",
            rhs.len()
        )));
    }
    if settings.damping < 0.0 || !settings.damping.is_finite() {
        return Err(Error::config("cg damping must be a finite value >= 0"));
    }
    let rhs_norm = norm(rhs);
    if !rhs_norm.is_finite() {
        return Err(Error::numeric("cg right-hand side"));
    }
    let mut x = ParamVector::zeros(n);
    if rhs_norm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }

    let apply = |v: &[f64]| {
        let mut out = op.apply(v);
        if settings.damping > 0.0 {
            axpy(&mut out, settings.damping, v);
        }
        out
    };

    let target = settings.tol * rhs_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for it in 1..=settings.max_iters {
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) || !curvature.is_finite() {
            // Indefinite or broken operator; surface as non-convergence.
            return Err(Error::Solver {
                iterations: it,
                residual: rs.sqrt() / rhs_norm,
            });
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= target {
            return Ok((
                x.check_finite("cg solution")?,
                CgStats {
                    iterations: it,
                    relative_residual: rs_new.sqrt() / rhs_norm,
                },
            ));
        }
        let beta = rs_new / rs;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rs = rs_new;
    }
    Err(Error::Solver {
        iterations: settings.max_iters,
        residual: rs.sqrt() / rhs_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting; kept separate from CG.
    fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = a.row(i).to_vec();
                row.push(b[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
                .unwrap();
            m.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn identity_returns_rhs() {
        let id = DenseMatrix::identity(4);
        let rhs = [1.0, -2.0, 0.5, 3.0];
        let x = cg_solve(&id, &rhs, 1e-12, 10, 0.0).unwrap();
        for (a, b) in x.iter().zip(rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_is_zero_in_zero_iterations() {
        let id = DenseMatrix::identity(3);
        let (x, stats) = cg_solve_with_stats(&id, &[0.0; 3], CgSettings::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let b = DenseMatrix::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        // A = B^T B + I is SPD
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = (0..n).map(|k| b[(k, i)] * b[(k, j)]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = cg_solve(&a, &rhs, 1e-12, 100, 0.0).unwrap();
        let oracle = dense_solve(&a, &rhs);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-6, "{u} vs {v}");
        }
    }

    #[test]
    fn damping_shifts_the_spectrum() {
        let a = DenseMatrix::from_row_major(2, 2, vec![2.0, 0.0, 0.0, 0.0]);
        let x = cg_solve(&a, &[2.0, 1.0], 1e-12, 10, 0.5).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let a = DenseMatrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        match cg_solve(&a, &[0.0, 1.0], 1e-10, 5, 0.0) {
            Err(Error::Solver { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn negative_damping_is_rejected() {
        let id = DenseMatrix::identity(2);
        assert!(matches!(cg_solve(&id, &[1.0, 1.0], 1e-6, 10, -1.0), Err(Error::Config(_))));
    }
}
