//! Projected gradient descent on the reduced cost `f -> J(S(f), f)`.

use serde::Serialize;

use crate::cost::{adjoint_sources, control_gradient, evaluate_cost, project_control, ControlConstraints, CostSpec};
use crate::error::{Error, Result};
use crate::forward::{criterion_norm, solve_forward, ControlField, ModelParams, Trajectory};
use crate::grid::ScalarField;
use crate::tangent_adjoint::solve_adjoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Sufficient-decrease constant in `(0, 1)`.
    pub armijo_c: f64,
    /// Step reduction factor in `(0, 1)`.
    pub backtrack_factor: f64,
    /// Trial step of the first iteration, and of any iteration where the
    /// Barzilai-Borwein estimate is unavailable.
    pub initial_step: f64,
    pub grad_tol: f64,
    pub min_step: f64,
    /// Start each line search from the Barzilai-Borwein step `<s,s>/<s,y>`.
    pub barzilai_borwein: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 200,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            grad_tol: 1e-6,
            min_step: 1e-12,
            barzilai_borwein: true,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("armijo_c must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack_factor must lie in (0, 1)"));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if !(self.min_step.is_finite() && self.min_step >= 0.0) {
            return Err(Error::invalid("min_step must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    MaxIters,
    MinStep,
}

/// One row of the optimization history. `step` is the accepted step that
/// produced the next iterate (zero on the final row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub residual: f64,
    pub step: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub control: ControlField,
    pub trajectory: Trajectory,
    pub converged: bool,
    pub reason: StopReason,
}

impl OptimizationReport {
    pub fn final_record(&self) -> &IterationRecord {
        self.iterations.last().expect("at least one iterate")
    }

    pub fn initial_cost(&self) -> f64 {
        self.iterations[0].cost
    }
}

/// `||f - P(f - step*grad)||_{L^2(Q)} / step`; for unconstrained controls this
/// is `||grad||_{L^2(Q)}`.
pub fn optimality_residual(
    f: &ControlField,
    grad: &ControlField,
    constraints: &ControlConstraints,
    step: f64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("residual step must be positive, got {step}")));
    }
    let moved = project_control(&f.combine(1.0, grad, -step)?, constraints);
    Ok(f.combine(1.0, &moved, -1.0)?.l2_norm() / step)
}

struct Evaluation {
    traj: Trajectory,
    cost: f64,
}

fn evaluate(
    u0: &ScalarField,
    v0: &ScalarField,
    f: &ControlField,
    params: &ModelParams,
    spec: &CostSpec,
) -> Result<Evaluation> {
    let traj = solve_forward(u0, v0, f, params)?;
    let cost = evaluate_cost(&traj, f, spec)?;
    Ok(Evaluation { traj, cost })
}

/// Reduced gradient at `f` given its trajectory.
pub fn reduced_gradient(
    traj: &Trajectory,
    f: &ControlField,
    params: &ModelParams,
    spec: &CostSpec,
) -> Result<ControlField> {
    let (g_lambda, g_eta) = adjoint_sources(traj, spec)?;
    let adj = solve_adjoint(traj, f, params, &g_lambda, &g_eta)?;
    control_gradient(f, traj, &adj, spec)
}

/// Minimizes the reduced cost over the admissible box with Armijo
/// backtracking on the true cost.
pub fn projected_gradient_descent(
    u0: &ScalarField,
    v0: &ScalarField,
    f0: &ControlField,
    params: &ModelParams,
    spec: &CostSpec,
    opts: &OptimizeOptions,
) -> Result<OptimizationReport> {
    spec.validate()?;
    opts.validate()?;
    if spec.s != params.s || spec.q != params.q {
        return Err(Error::invalid("cost exponents must match the model parameters"));
    }
    let ctx = |iteration: usize| move |e: Error| Error::Optimizer {
        iteration,
        source: Box::new(e),
    };

    let mut f = project_control(f0, &spec.constraints);
    let mut cur = evaluate(u0, v0, &f, params, spec).map_err(ctx(0))?;
    let mut history = Vec::new();
    let mut prev: Option<(ControlField, ControlField)> = None;

    for k in 0.. {
        let grad = reduced_gradient(&cur.traj, &f, params, spec).map_err(ctx(k))?;
        let residual = optimality_residual(&f, &grad, &spec.constraints, 1.0)?;
        let criterion = criterion_norm(&cur.traj, params);
        let mut record = IterationRecord {
            iter: k,
            cost: cur.cost,
            residual,
            step: 0.0,
            criterion,
        };
        let stop = if residual <= opts.grad_tol {
            Some(StopReason::GradTol)
        } else if k >= opts.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(reason) = stop {
            history.push(record);
            return Ok(OptimizationReport {
                iterations: history,
                control: f,
                trajectory: cur.traj,
                converged: reason == StopReason::GradTol,
                reason,
            });
        }

        let mut step = opts.initial_step;
        if opts.barzilai_borwein {
            if let Some((f_prev, g_prev)) = &prev {
                let s = f.combine(1.0, f_prev, -1.0)?;
                let y = grad.combine(1.0, g_prev, -1.0)?;
                let sy = s.inner(&y)?;
                if sy > 0.0 {
                    step = s.inner(&s)? / sy;
                }
            }
        }

        let accepted = loop {
            if step < opts.min_step {
                break None;
            }
            let trial = project_control(&f.combine(1.0, &grad, -step)?, &spec.constraints);
            let moved = trial.combine(1.0, &f, -1.0)?.inner(&trial.combine(1.0, &f, -1.0)?)?;
            if moved == 0.0 {
                break None;
            }
            // A trial that violates the CFL bound is treated as a failed decrease.
            match evaluate(u0, v0, &trial, params, spec) {
                Ok(eval) if eval.cost <= cur.cost - opts.armijo_c / step * moved => break Some((trial, eval)),
                Ok(_) | Err(Error::Cfl { .. }) => {}
                Err(e) => return Err(ctx(k)(e)),
            }
            step *= opts.backtrack_factor;
        };

        match accepted {
            Some((trial, eval)) => {
                record.step = step;
                history.push(record);
                prev = Some((std::mem::replace(&mut f, trial), grad));
                cur = eval;
            }
            None => {
                history.push(record);
                return Ok(OptimizationReport {
                    iterations: history,
                    control: f,
                    trajectory: cur.traj,
                    converged: false,
                    reason: StopReason::MinStep,
                });
            }
        }
    }
    unreachable!("loop exits through a stop reason")
}

/// Desired states produced by running the forward model with `f_star`.
pub fn make_tracking_problem(
    u0: &ScalarField,
    v0: &ScalarField,
    f_star: &ControlField,
    params: &ModelParams,
) -> Result<(Vec<ScalarField>, Vec<ScalarField>)> {
    Ok(solve_forward(u0, v0, f_star, params)?.into_series())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::TimeGrid;
    use crate::grid::{Grid, SubdomainMask};

    #[test]
    fn residual_examples() {
        let g = Grid::shared(&[4], &[1.0]).unwrap();
        let tg = TimeGrid::new(1.0, 5).unwrap();
        let mask = SubdomainMask::from_box(&g, &[0.0], &[0.5]).unwrap();
        let f = ControlField::zeros(tg, mask.clone());
        let zero = ControlField::zeros(tg, mask.clone());
        let one = ControlField::constant(tg, mask.clone(), 1.0);
        let unc = ControlConstraints::Unconstrained;
        assert_eq!(optimality_residual(&f, &zero, &unc, 1.0).unwrap(), 0.0);
        let r = optimality_residual(&f, &one, &unc, 1.0).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-14);

        let b = ControlConstraints::Box { f_min: -1.0, f_max: 1.0 };
        let at_lower = ControlField::constant(tg, mask, -1.0);
        assert_eq!(optimality_residual(&at_lower, &one, &b, 1.0).unwrap(), 0.0);
        assert!(optimality_residual(&f, &one, &b, 0.0).is_err());
    }

    #[test]
    fn options_validation() {
        let mut o = OptimizeOptions::default();
        assert!(o.validate().is_ok());
        o.armijo_c = 1.0;
        assert!(o.validate().is_err());
        o = OptimizeOptions {
            backtrack_factor: 0.0,
            ..Default::default()
        };
        assert!(o.validate().is_err());
    }
}
