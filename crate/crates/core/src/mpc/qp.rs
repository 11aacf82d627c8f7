//! Box-constrained convex QP: minimize `0.5 u'Hu + q'u` subject to
//! `lower <= u <= upper`.
//!
//! Projected Newton: coordinates at a bound whose gradient pushes outward
//! are held, a Newton step is taken on the rest, and an Armijo search runs
//! along the projection arc. A projected-gradient step is the fallback when
//! the Newton arc is not a descent direction.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid QP: {0}")]
    Invalid(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64, best: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Constant term, so `objective` can report the full cost.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iter: 5000, tol: 1e-6 }
    }
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, q: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, QpError> {
        let n = q.len();
        if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(QpError::Invalid(format!("dimension mismatch for n = {n}")));
        }
        for i in 0..n {
            if !(lower[i] <= upper[i]) {
                return Err(QpError::Invalid(format!("bound {i}: lower {} > upper {}", lower[i], upper[i])));
            }
            for j in 0..i {
                let scale = 1.0f64.max(h[(i, j)].abs());
                if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                    return Err(QpError::Invalid(format!("H not symmetric at ({i}, {j})")));
                }
            }
        }
        if h.clone().cholesky().is_none() {
            return Err(QpError::Invalid("H not positive definite".into()));
        }
        Ok(Self { h, q, lower, upper, c: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.q.dot(u) + self.c
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.h * u + &self.q
    }

    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len(), (0..u.len()).map(|i| u[i].clamp(self.lower[i], self.upper[i])))
    }

    /// `max_i |u_i - P(u - grad)_i|`: zero exactly at the KKT points.
    pub fn kkt_residual(&self, u: &DVector<f64>) -> f64 {
        let g = self.gradient(u);
        (0..u.len())
            .map(|i| (u[i] - (u[i] - g[i]).clamp(self.lower[i], self.upper[i])).abs())
            .fold(0.0, f64::max)
    }
}

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Armijo search along `P(u + t d)`. Returns the accepted point, or `None`
/// if no step gives sufficient decrease.
fn arc_search(p: &QpProblem, u: &DVector<f64>, f0: f64, g: &DVector<f64>, d: &DVector<f64>) -> Option<DVector<f64>> {
    let mut t = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let trial = p.project(&(u + d * t));
        let step = &trial - u;
        let slope = g.dot(&step);
        if slope >= 0.0 {
            if step.amax() == 0.0 {
                return None;
            }
        } else if p.objective(&trial) <= f0 + ARMIJO * slope {
            return Some(trial);
        }
        t *= BACKTRACK;
    }
    None
}

pub fn solve_qp(problem: &QpProblem, warm_start: Option<&DVector<f64>>, opts: &QpOptions) -> Result<QpSolution, QpError> {
    let n = problem.dim();
    let mut u = match warm_start {
        Some(w) if w.len() == n => problem.project(w),
        Some(w) => return Err(QpError::Invalid(format!("warm start has length {}, expected {n}", w.len()))),
        None => problem.project(&DVector::zeros(n)),
    };
    let mut best = (problem.kkt_residual(&u), u.clone());
    for iteration in 0..opts.max_iter {
        let g = problem.gradient(&u);
        let residual = problem.kkt_residual(&u);
        if residual < best.0 {
            best = (residual, u.clone());
        }
        if residual <= opts.tol {
            return Ok(QpSolution { u, iterations: iteration, kkt_residual: residual });
        }
        let eps = residual.min(1e-3);
        let held: Vec<bool> = (0..n)
            .map(|i| (u[i] <= problem.lower[i] + eps && g[i] > 0.0) || (u[i] >= problem.upper[i] - eps && g[i] < 0.0))
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();

        let mut d = -&g;
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| problem.h[(free[a], free[b])]);
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
            if let Some(chol) = hff.cholesky() {
                let step = chol.solve(&(-gf));
                for (k, &i) in free.iter().enumerate() {
                    d[i] = step[k];
                }
            }
        }
        let f0 = problem.objective(&u);
        let next = arc_search(problem, &u, f0, &g, &d).or_else(|| arc_search(problem, &u, f0, &g, &(-&g)));
        match next {
            Some(v) => u = v,
            None => break,
        }
    }
    let residual = problem.kkt_residual(&u);
    if residual <= opts.tol {
        return Ok(QpSolution { u, iterations: opts.max_iter, kkt_residual: residual });
    }
    Err(QpError::MaxIterations { iterations: opts.max_iter, residual: best.0, best: best.1.iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(h: &[f64], q: &[f64], lo: f64, hi: f64) -> QpProblem {
        let n = q.len();
        QpProblem::new(
            DMatrix::from_row_slice(n, n, h),
            DVector::from_row_slice(q),
            DVector::from_element(n, lo),
            DVector::from_element(n, hi),
        )
        .unwrap()
    }

    #[test]
    fn interior_minimum() {
        let p = problem(&[2.0], &[-4.0], -10.0, 10.0);
        let s = solve_qp(&p, None, &QpOptions::default()).unwrap();
        assert!((s.u[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn separable_clipped() {
        let p = problem(&[2.0, 0.0, 0.0, 2.0], &[-2.0, -4.0], -1.0, 1.0);
        let s = solve_qp(&p, None, &QpOptions::default()).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-12 && s.u[1] == 1.0);
        assert!(s.kkt_residual <= 1e-6);
    }

    #[test]
    fn rejects_bad_problems() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let v = DVector::zeros(2);
        assert!(QpProblem::new(h, v.clone(), v.clone(), v.clone()).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QpProblem::new(indefinite, v.clone(), v.clone(), v.clone()).is_err());
        let lo = DVector::from_element(2, 1.0);
        assert!(QpProblem::new(DMatrix::identity(2, 2), v.clone(), lo, v).is_err());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let p = problem(&[1.0, 0.9, 0.9, 1.0], &[1.0, -3.0], -10.0, 10.0);
        match solve_qp(&p, None, &QpOptions { max_iter: 0, tol: 1e-6 }) {
            Err(QpError::MaxIterations { best, residual, .. }) => {
                assert_eq!(best.len(), 2);
                assert!(residual > 1e-6);
            }
            other => panic!("expected iteration cap, got {other:?}"),
        }
    }

    #[test]
    fn warm_start_at_solution_needs_no_iterations() {
        let p = problem(&[3.0, 1.0, 1.0, 2.0], &[-1.0, 5.0], -1.0, 1.0);
        let cold = solve_qp(&p, None, &QpOptions::default()).unwrap();
        let warm = solve_qp(&p, Some(&cold.u), &QpOptions::default()).unwrap();
        assert_eq!(warm.iterations, 0);
    }
}
