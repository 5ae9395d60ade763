//! Conjugate gradient for the implicit diffusion operators
//! `I - dt*Laplacian + dt*diag(c)` with `c >= 0`.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Stopping rule for the conjugate gradient solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `||b - Ax|| <= rel_tol * ||b||`.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the number of cells.
    pub max_iter_factor: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-13,
            max_iter_factor: 10,
        }
    }
}

/// `x -> x - dt * lap(x) + dt * reaction .* x`.
pub(crate) struct ImplicitOperator<'a> {
    pub grid: &'a Grid,
    pub dt: f64,
    pub reaction: Option<&'a [f64]>,
}

impl ImplicitOperator<'_> {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self.reaction {
            Some(c) => {
                for i in 0..x.len() {
                    out[i] = x[i] + self.dt * c[i] * x[i];
                }
            }
            None => out.copy_from_slice(x),
        }
        self.grid.add_laplacian(x, -self.dt, out);
    }

    /// Solves `A x = b` starting from `x = b`.
    ///
    /// With the initial guess `b`, every Krylov update has zero cell sum when
    /// `reaction` is absent, so the solve conserves `sum(b)` to round-off
    /// regardless of the residual tolerance.
    pub fn solve(&self, b: &[f64], opts: &CgOptions) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = b.to_vec();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut ap = vec![0.0; n];
        self.apply(&x, &mut ap);
        let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let target = opts.rel_tol * b_norm;
        let max_iter = (opts.max_iter_factor * n).max(1);
        for _ in 0..max_iter {
            if rr.sqrt() <= target {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        if rr.sqrt() <= target {
            return Ok(x);
        }
        Err(Error::SolverDiverged {
            iterations: max_iter,
            residual: rr.sqrt() / b_norm,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
