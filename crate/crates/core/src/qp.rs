//! Dense strictly convex quadratic programs with two-sided linear
//! inequality constraints:
//!
//! ```text
//!     minimize   1/2 x' H x + g' x
//!     subject to l <= A x <= u
//! ```
//!
//! Solved by operator splitting (ADMM) with diagonal equilibration,
//! over-relaxation, and periodic penalty rebalancing. The x-update solves a
//! fixed regularized normal system; the z-update is a componentwise clamp.
//! The problems produced by the receding-horizon planner are tiny (tens of
//! variables), so a dense Cholesky factorization per penalty value is
//! cheap. The iteration is fully deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Regularization added to keep the x-update system positive definite even
/// for semidefinite H.
const SIGMA: f64 = 1e-6;
/// Over-relaxation coefficient for the splitting step.
const ALPHA: f64 = 1.6;
/// Penalty rebalancing period (iterations).
const RHO_CHECK_PERIOD: usize = 25;

#[derive(Debug, Clone)]
pub struct ConstrainedQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, &c| m.max(c.abs()))
}

/// Solve the QP from a warm-start point. `tolerance` bounds the scaled
/// primal (constraint violation) and dual (stationarity) residuals
/// relative to the problem's own magnitudes.
pub fn solve(
    qp: &ConstrainedQp,
    x0: &DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> QpSolution {
    let n = qp.hessian.nrows();
    let m = qp.constraints.nrows();
    assert_eq!(qp.hessian.ncols(), n);
    assert_eq!(qp.gradient.len(), n);
    assert_eq!(qp.constraints.ncols(), n);
    assert_eq!(qp.lower.len(), m);
    assert_eq!(qp.upper.len(), m);
    debug_assert!(qp.lower.iter().zip(qp.upper.iter()).all(|(l, u)| l <= u));

    // Diagonal equilibration: variables by the Hessian diagonal, constraint
    // rows to unit infinity norm.
    let d = qp
        .hessian
        .diagonal()
        .map(|v| 1.0 / v.abs().max(1e-10).sqrt());
    let d_mat = DMatrix::from_diagonal(&d);
    let h = &d_mat * &qp.hessian * &d_mat;
    let g = d.component_mul(&qp.gradient);
    let a_cols = &qp.constraints * &d_mat;
    let e = DVector::from_fn(m, |i, _| {
        let norm = a_cols.row(i).iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        1.0 / norm.max(1e-10)
    });
    let a = DMatrix::from_fn(m, n, |i, j| e[i] * a_cols[(i, j)]);
    let lower = e.component_mul(&qp.lower);
    let upper = e.component_mul(&qp.upper);

    let ata = a.transpose() * &a;
    let factorize = |rho: f64| -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(&h + DMatrix::identity(n, n) * SIGMA + &ata * rho)
    };

    let mut rho = 0.1;
    let mut chol = match factorize(rho) {
        Some(c) => c,
        None => {
            return QpSolution {
                x: x0.clone(),
                iterations: 0,
                converged: false,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
            }
        }
    };

    // Work in the scaled variables throughout.
    let mut x = DVector::from_fn(n, |i, _| x0[i] / d[i]);
    let mut z = (&a * &x).zip_zip_map(&lower, &upper, |v, l, u| v.clamp(l, u));
    let mut y = DVector::<f64>::zeros(m);

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    for iter in 1..=max_iterations {
        let rhs = &x * SIGMA - &g + a.transpose() * (&z * rho - &y);
        x = chol.solve(&rhs);
        let ax = &a * &x;
        let relaxed = &ax * ALPHA + &z * (1.0 - ALPHA);
        z = (&relaxed + &y / rho).zip_zip_map(&lower, &upper, |v, l, u| v.clamp(l, u));
        y += (&relaxed - &z) * rho;

        let stationarity = &h * &x + &g + a.transpose() * &y;
        primal = inf_norm(&(&ax - &z));
        dual = inf_norm(&stationarity);

        let primal_scale = inf_norm(&ax).max(inf_norm(&z)).max(1.0);
        let dual_scale = inf_norm(&(&h * &x)).max(inf_norm(&g)).max(1.0);
        if primal <= tolerance * primal_scale && dual <= tolerance * dual_scale {
            return QpSolution {
                x: d.component_mul(&x),
                iterations: iter,
                converged: true,
                primal_residual: primal,
                dual_residual: dual,
            };
        }

        if iter % RHO_CHECK_PERIOD == 0 {
            let ratio = ((primal / primal_scale) / (dual / dual_scale).max(1e-300)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if new_rho > rho * 5.0 || new_rho < rho / 5.0 {
                if let Some(c) = factorize(new_rho) {
                    rho = new_rho;
                    chol = c;
                }
            }
        }
    }

    QpSolution {
        x: d.component_mul(&x),
        iterations: max_iterations,
        converged: false,
        primal_residual: primal,
        dual_residual: dual,
    }
}
