//! Linear parabolic systems of the form
//!
//! ```text
//! U_t - lap U + a1 U + b1 V + div(U c1) + div(d grad V) = gU
//! V_t - lap V + a2 V + b2 U + c2 . grad V              = gV
//! ```
//!
//! with zero initial data and no-flux boundaries, advanced with the same
//! splitting as the forward scheme, and the exact algebraic transpose of that
//! time stepper run backward in time.
//!
//! The tangent of the forward scheme is one instance of this system, so its
//! transpose is the discrete adjoint. Duality holds to solver round-off:
//!
//! ```text
//! sum_{n=1..N} dt (<wU_n, U_n> + <wV_n, V_n>) = sum_{n=0..N-1} dt (<lambda_n, gU_n> + <eta_n, gV_n>)
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{
    add_upwind_flux_transpose, cfl_from_faces, consumption_rate, neg_part, pos_part, upwind_flux, upwind_values,
    ControlField, ModelParams, TimeGrid, Trajectory,
};
use crate::grid::{face_gradient, same_grid, Grid, ScalarField, VectorField};
use crate::linsolve::{CgOptions, ImplicitOperator};

/// Coefficients per time step `n = 0..steps-1`.
///
/// The zero-order coefficient of the `V` equation is split into a part
/// treated implicitly (`a2_implicit`, must be nonnegative) and a part
/// treated explicitly (`a2_explicit`); the forward scheme needs both.
#[derive(Debug, Clone)]
pub struct LinearCoefficients {
    pub time_grid: TimeGrid,
    pub a1: Vec<ScalarField>,
    pub b1: Vec<ScalarField>,
    /// Transport velocity in `div(U c1)`, upwinded by its sign.
    pub c1: Vec<VectorField>,
    /// Face diffusivity in `div(d grad V)`.
    pub d: Vec<VectorField>,
    pub a2_implicit: Vec<ScalarField>,
    pub a2_explicit: Vec<ScalarField>,
    pub b2: Vec<ScalarField>,
    /// Face velocity in `c2 . grad V`, averaged to cells.
    pub c2: Vec<VectorField>,
}

impl LinearCoefficients {
    pub fn zeros(grid: &Arc<Grid>, time_grid: TimeGrid) -> Self {
        let n = time_grid.steps();
        let s = || vec![ScalarField::zeros(grid); n];
        let v = || vec![VectorField::zeros(grid); n];
        LinearCoefficients {
            time_grid,
            a1: s(),
            b1: s(),
            c1: v(),
            d: v(),
            a2_implicit: s(),
            a2_explicit: s(),
            b2: s(),
            c2: v(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.a1[0].grid()
    }

    fn validate(&self) -> Result<()> {
        let n = self.time_grid.steps();
        let lens = [
            self.a1.len(),
            self.b1.len(),
            self.c1.len(),
            self.d.len(),
            self.a2_implicit.len(),
            self.a2_explicit.len(),
            self.b2.len(),
            self.c2.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Misaligned(format!("coefficient series must have {n} steps")));
        }
        let grid = self.grid();
        for s in self
            .a1
            .iter()
            .chain(&self.b1)
            .chain(&self.a2_implicit)
            .chain(&self.a2_explicit)
            .chain(&self.b2)
        {
            same_grid(grid, s.grid())?;
        }
        for v in self.c1.iter().chain(&self.d).chain(&self.c2) {
            same_grid(grid, v.grid())?;
        }
        if self.a2_implicit.iter().any(|a| a.min() < 0.0) {
            return Err(Error::invalid("implicit reaction coefficient must be nonnegative"));
        }
        let dt = self.time_grid.dt();
        for (step, c1) in self.c1.iter().enumerate() {
            let admissible = cfl_from_faces(grid, c1.faces());
            if dt > admissible {
                return Err(Error::Cfl { step, dt, admissible });
            }
        }
        Ok(())
    }
}

/// Solution series `(U_n, V_n)`, `n = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub u: Vec<ScalarField>,
    pub v: Vec<ScalarField>,
}

/// Multipliers `(lambda_n, eta_n)`, `n = 0..=steps`, zero at the final node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    time_grid: TimeGrid,
    lambda: Vec<ScalarField>,
    eta: Vec<ScalarField>,
}

impl AdjointPair {
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn lambda(&self) -> &[ScalarField] {
        &self.lambda
    }

    pub fn eta(&self) -> &[ScalarField] {
        &self.eta
    }
}

/// Source series may carry one field per node or per step; only the first
/// `steps` entries are used.
fn check_sources(name: &str, g: &[ScalarField], tg: &TimeGrid, grid: &Arc<Grid>) -> Result<()> {
    if g.len() != tg.steps() && g.len() != tg.nodes() {
        return Err(Error::Misaligned(format!(
            "{name} has {} entries, expected {} or {}",
            g.len(),
            tg.steps(),
            tg.nodes()
        )));
    }
    for w in g {
        same_grid(grid, w.grid())?;
    }
    Ok(())
}

/// Weights are indexed by node; entry 0 is ignored.
fn check_weights(name: &str, w: &[ScalarField], tg: &TimeGrid, grid: &Arc<Grid>) -> Result<()> {
    if w.len() != tg.nodes() {
        return Err(Error::Misaligned(format!(
            "{name} has {} entries, expected {}",
            w.len(),
            tg.nodes()
        )));
    }
    for x in w {
        same_grid(grid, x.grid())?;
    }
    Ok(())
}

/// `out += scale * c2 . grad(x)` with face products averaged onto cells.
fn add_face_advection(grid: &Grid, c2: &[Vec<f64>], x: &[f64], scale: f64, out: &mut [f64]) {
    for k in 0..grid.dim() {
        let ck = &c2[k];
        let h = grid.spacing()[k];
        grid.for_each_interior_face(k, |f, l, r| {
            let q = 0.5 * scale * ck[f] * (x[r] - x[l]) / h;
            out[l] += q;
            out[r] += q;
        });
    }
}

/// Transpose of [`add_face_advection`].
fn add_face_advection_transpose(grid: &Grid, c2: &[Vec<f64>], y: &[f64], scale: f64, out: &mut [f64]) {
    for k in 0..grid.dim() {
        let ck = &c2[k];
        let h = grid.spacing()[k];
        grid.for_each_interior_face(k, |f, l, r| {
            let q = 0.5 * scale * ck[f] * (y[l] + y[r]) / h;
            out[r] += q;
            out[l] -= q;
        });
    }
}

/// `out += scale * div(d .* grad(x))`.
fn add_weighted_laplacian(grid: &Grid, d: &[Vec<f64>], x: &[f64], scale: f64, out: &mut [f64]) {
    for k in 0..grid.dim() {
        let dk = &d[k];
        let h = grid.spacing()[k];
        grid.for_each_interior_face(k, |f, l, r| {
            let q = scale * dk[f] * ((x[r] - x[l]) / h) / h;
            out[l] += q;
            out[r] -= q;
        });
    }
}

fn axpy_diag(out: &mut [f64], scale: f64, coef: &[f64], x: &[f64]) {
    for i in 0..out.len() {
        out[i] += scale * coef[i] * x[i];
    }
}

fn axpy(out: &mut [f64], scale: f64, x: &[f64]) {
    for i in 0..out.len() {
        out[i] += scale * x[i];
    }
}

/// Advances the linear system from zero initial data.
pub fn solve_general_linear(
    coeffs: &LinearCoefficients,
    g_u: &[ScalarField],
    g_v: &[ScalarField],
    cg: &CgOptions,
) -> Result<LinearSolution> {
    coeffs.validate()?;
    let tg = coeffs.time_grid;
    let grid = Arc::clone(coeffs.grid());
    check_sources("gU", g_u, &tg, &grid)?;
    check_sources("gV", g_v, &tg, &grid)?;
    let dt = tg.dt();
    let nc = grid.num_cells();
    let mut us = vec![vec![0.0; nc]];
    let mut vs = vec![vec![0.0; nc]];
    for n in 0..tg.steps() {
        let (un, vn) = (&us[n], &vs[n]);

        let mut rhs_v = vn.clone();
        axpy_diag(&mut rhs_v, -dt, coeffs.a2_explicit[n].values(), vn);
        axpy_diag(&mut rhs_v, -dt, coeffs.b2[n].values(), un);
        add_face_advection(&grid, coeffs.c2[n].faces(), vn, -dt, &mut rhs_v);
        axpy(&mut rhs_v, dt, g_v[n].values());
        let v_next = ImplicitOperator {
            grid: &grid,
            dt,
            reaction: Some(coeffs.a2_implicit[n].values()),
        }
        .solve(&rhs_v, cg)?;

        let mut rhs_u = un.clone();
        axpy_diag(&mut rhs_u, -dt, coeffs.a1[n].values(), un);
        axpy_diag(&mut rhs_u, -dt, coeffs.b1[n].values(), &v_next);
        let flux = upwind_flux(&grid, un, coeffs.c1[n].faces());
        grid.add_divergence(&flux, -dt, &mut rhs_u);
        add_weighted_laplacian(&grid, coeffs.d[n].faces(), &v_next, -dt, &mut rhs_u);
        axpy(&mut rhs_u, dt, g_u[n].values());
        let u_next = ImplicitOperator {
            grid: &grid,
            dt,
            reaction: None,
        }
        .solve(&rhs_u, cg)?;

        if u_next.iter().chain(&v_next).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        us.push(u_next);
        vs.push(v_next);
    }
    Ok(LinearSolution {
        u: us.into_iter().map(|x| ScalarField::from_raw(&grid, x)).collect(),
        v: vs.into_iter().map(|x| ScalarField::from_raw(&grid, x)).collect(),
    })
}

/// Exact transpose of [`solve_general_linear`], swept backward in time.
///
/// `w_u`, `w_v` weight the solution at nodes `1..=steps` (node 0 is ignored).
pub fn solve_general_transpose(
    coeffs: &LinearCoefficients,
    w_u: &[ScalarField],
    w_v: &[ScalarField],
    cg: &CgOptions,
) -> Result<AdjointPair> {
    coeffs.validate()?;
    let tg = coeffs.time_grid;
    let grid = Arc::clone(coeffs.grid());
    check_weights("wU", w_u, &tg, &grid)?;
    check_weights("wV", w_v, &tg, &grid)?;
    let dt = tg.dt();
    let nc = grid.num_cells();
    let steps = tg.steps();
    let mut lambda = vec![vec![0.0; nc]; steps + 1];
    let mut eta = vec![vec![0.0; nc]; steps + 1];
    let mut carry_u = vec![0.0; nc];
    let mut carry_v = vec![0.0; nc];
    let mut grad = vec![Vec::new(); grid.dim()];
    for n in (0..steps).rev() {
        let mut rhs_l = carry_u.clone();
        axpy(&mut rhs_l, dt, w_u[n + 1].values());
        let lam = ImplicitOperator {
            grid: &grid,
            dt,
            reaction: None,
        }
        .solve(&rhs_l, cg)?;

        let mut rhs_e = carry_v.clone();
        axpy(&mut rhs_e, dt, w_v[n + 1].values());
        axpy_diag(&mut rhs_e, -dt, coeffs.b1[n].values(), &lam);
        add_weighted_laplacian(&grid, coeffs.d[n].faces(), &lam, -dt, &mut rhs_e);
        let et = ImplicitOperator {
            grid: &grid,
            dt,
            reaction: Some(coeffs.a2_implicit[n].values()),
        }
        .solve(&rhs_e, cg)?;

        carry_u.copy_from_slice(&lam);
        axpy_diag(&mut carry_u, -dt, coeffs.a1[n].values(), &lam);
        grid.gradient_into(&lam, &mut grad);
        add_upwind_flux_transpose(&grid, coeffs.c1[n].faces(), &grad, dt, &mut carry_u);
        axpy_diag(&mut carry_u, -dt, coeffs.b2[n].values(), &et);

        carry_v.copy_from_slice(&et);
        axpy_diag(&mut carry_v, -dt, coeffs.a2_explicit[n].values(), &et);
        add_face_advection_transpose(&grid, coeffs.c2[n].faces(), &et, -dt, &mut carry_v);

        if lam.iter().chain(&et).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        lambda[n] = lam;
        eta[n] = et;
    }
    Ok(AdjointPair {
        time_grid: tg,
        lambda: lambda.into_iter().map(|x| ScalarField::from_raw(&grid, x)).collect(),
        eta: eta.into_iter().map(|x| ScalarField::from_raw(&grid, x)).collect(),
    })
}

fn check_base(traj: &Trajectory, f: &ControlField) -> Result<()> {
    if traj.time_grid() != f.time_grid() {
        return Err(Error::Misaligned("trajectory and control use different time grids".into()));
    }
    same_grid(traj.grid(), f.grid())
}

/// Coefficients of the derivative of the forward step map at `(traj, f)`.
///
/// Upwind directions and the sign branch of `f` are frozen at the base state
/// (the branch `f >= 0` counts as positive).
pub fn tangent_coefficients(traj: &Trajectory, f: &ControlField, params: &ModelParams) -> Result<LinearCoefficients> {
    check_base(traj, f)?;
    let tg = *traj.time_grid();
    let grid = Arc::clone(traj.grid());
    let s = params.s;
    let mut c = LinearCoefficients::zeros(&grid, tg);
    for n in 0..tg.steps() {
        let (u, fv) = (traj.u()[n].values(), f.node(n).values());
        let v_next = traj.v()[n + 1].values();
        let g = face_gradient(&traj.v()[n + 1]);
        c.d[n] = VectorField::from_raw(&grid, upwind_values(&grid, u, g.faces()));
        c.c1[n] = g;
        c.a2_implicit[n] = ScalarField::from_raw(
            &grid,
            u.iter()
                .zip(fv)
                .map(|(&ui, &fi)| consumption_rate(ui, s) + neg_part(fi))
                .collect(),
        );
        c.a2_explicit[n] = ScalarField::from_raw(&grid, fv.iter().map(|&fi| -pos_part(fi)).collect());
        c.b2[n] = ScalarField::from_raw(
            &grid,
            u.iter()
                .zip(v_next)
                .map(|(&ui, &vi)| s * ui.max(0.0).powf(s - 1.0) * vi)
                .collect(),
        );
    }
    Ok(c)
}

/// The state the control multiplies in step `n`: `v_n` where `f_n >= 0`
/// (explicit gain) and `v_{n+1}` where `f_n < 0` (implicit loss). Entries
/// exist for `n = 0..steps-1`.
pub fn control_state(traj: &Trajectory, f: &ControlField) -> Result<Vec<ScalarField>> {
    check_base(traj, f)?;
    let grid = traj.grid();
    Ok((0..traj.time_grid().steps())
        .map(|n| {
            let (vn, vn1, fv) = (traj.v()[n].values(), traj.v()[n + 1].values(), f.node(n).values());
            let vals = (0..vn.len())
                .map(|i| if fv[i] >= 0.0 { vn[i] } else { vn1[i] })
                .collect();
            ScalarField::from_raw(grid, vals)
        })
        .collect())
}

/// `gV_n = F_n * v_eff_n` on the control mask.
fn control_source(v_eff: &[ScalarField], direction: &ControlField) -> Vec<ScalarField> {
    let grid = direction.grid();
    v_eff
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let mut vals: Vec<f64> = direction
                .node(n)
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| a * b)
                .collect();
            direction.mask().restrict(&mut vals);
            ScalarField::from_raw(grid, vals)
        })
        .collect()
}

/// Directional derivative of the discrete flow `f -> (u, v)` in direction `direction`.
pub fn solve_tangent(
    traj: &Trajectory,
    f: &ControlField,
    params: &ModelParams,
    direction: &ControlField,
) -> Result<LinearSolution> {
    f.check_aligned(direction)?;
    let coeffs = tangent_coefficients(traj, f, params)?;
    let g_v = control_source(&control_state(traj, f)?, direction);
    let g_u = vec![ScalarField::zeros(traj.grid()); traj.time_grid().steps()];
    solve_general_linear(&coeffs, &g_u, &g_v, &params.cg)
}

/// Discrete adjoint of the forward scheme for state weights `(g_lambda, g_eta)`
/// given per node (node 0 is ignored).
pub fn solve_adjoint(
    traj: &Trajectory,
    f: &ControlField,
    params: &ModelParams,
    g_lambda: &[ScalarField],
    g_eta: &[ScalarField],
) -> Result<AdjointPair> {
    let coeffs = tangent_coefficients(traj, f, params)?;
    solve_general_transpose(&coeffs, g_lambda, g_eta, &params.cg)
}

/// `sum_{n=1..N} dt (<U_n, w_u_n> + <V_n, w_v_n>)`.
pub fn state_pairing(tg: &TimeGrid, sol: &LinearSolution, w_u: &[ScalarField], w_v: &[ScalarField]) -> f64 {
    let dt = tg.dt();
    (1..tg.nodes())
        .map(|n| dt * (sol.u[n].dot(&w_u[n]) + sol.v[n].dot(&w_v[n])))
        .sum()
}

/// `sum_{n<N} dt (<lambda_n, g_u_n> + <eta_n, g_v_n>)`.
pub fn source_pairing(adj: &AdjointPair, g_u: &[ScalarField], g_v: &[ScalarField]) -> f64 {
    let dt = adj.time_grid.dt();
    (0..adj.time_grid.steps())
        .map(|n| dt * (adj.lambda[n].dot(&g_u[n]) + adj.eta[n].dot(&g_v[n])))
        .sum()
}

/// Pulls the adjoint back to control space: `v_eff * eta` on the mask, zero
/// at the final node.
pub fn adjoint_pullback(traj: &Trajectory, f: &ControlField, adj: &AdjointPair) -> Result<ControlField> {
    if adj.time_grid != *f.time_grid() {
        return Err(Error::Misaligned("adjoint and control use different time grids".into()));
    }
    let v_eff = control_state(traj, f)?;
    let nc = traj.grid().num_cells();
    let mut nodes: Vec<Vec<f64>> = v_eff
        .iter()
        .zip(&adj.eta)
        .map(|(v, e)| v.values().iter().zip(e.values()).map(|(a, b)| a * b).collect())
        .collect();
    nodes.push(vec![0.0; nc]);
    Ok(ControlField::from_raw(*f.time_grid(), f.mask().clone(), nodes))
}

/// Relative mismatch between `<tangent(direction), w>` and
/// `<direction, pullback(adjoint(w))>`; zero when both sides vanish.
pub fn transpose_check(
    traj: &Trajectory,
    f: &ControlField,
    params: &ModelParams,
    direction: &ControlField,
    w_lambda: &[ScalarField],
    w_eta: &[ScalarField],
) -> Result<f64> {
    let tangent = solve_tangent(traj, f, params, direction)?;
    let lhs = state_pairing(traj.time_grid(), &tangent, w_lambda, w_eta);
    let adj = solve_adjoint(traj, f, params, w_lambda, w_eta)?;
    let rhs = direction.inner(&adjoint_pullback(traj, f, &adj)?)?;
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use crate::grid::SubdomainMask;

    fn line(n: usize) -> Arc<Grid> {
        Grid::shared(&[n], &[1.0]).unwrap()
    }

    #[test]
    fn zero_sources_give_zero_solution() {
        let g = line(6);
        let tg = TimeGrid::new(0.5, 5).unwrap();
        let c = LinearCoefficients::zeros(&g, tg);
        let z = vec![ScalarField::zeros(&g); 6];
        let sol = solve_general_linear(&c, &z, &z, &CgOptions::default()).unwrap();
        assert!(sol.u.iter().chain(&sol.v).all(|w| w.max_abs() == 0.0));
    }

    #[test]
    fn constant_forcing_accumulates() {
        let g = Grid::shared(&[4, 3], &[1.0, 2.0]).unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let c = LinearCoefficients::zeros(&g, tg);
        let zero = vec![ScalarField::zeros(&g); 9];
        let one = vec![ScalarField::constant(&g, 1.0); 9];
        let sol = solve_general_linear(&c, &zero, &one, &CgOptions::default()).unwrap();
        for n in 0..9 {
            assert_eq!(sol.u[n].max_abs(), 0.0);
            for &x in sol.v[n].values() {
                assert!((x - n as f64 * tg.dt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_base_density_decouples_adjoint() {
        let g = line(8);
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let mask = SubdomainMask::full(&g);
        let f = ControlField::zeros(tg, mask);
        let u0 = ScalarField::zeros(&g);
        let v0 = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let p = ModelParams::default();
        let traj = solve_forward(&u0, &v0, &f, &p).unwrap();
        let one = vec![ScalarField::constant(&g, 1.0); tg.nodes()];
        let zero = vec![ScalarField::zeros(&g); tg.nodes()];
        let adj = solve_adjoint(&traj, &f, &p, &one, &zero).unwrap();
        for n in 0..tg.nodes() {
            let expected = tg.final_time() - tg.time(n);
            for &x in adj.lambda()[n].values() {
                assert!((x - expected).abs() < 1e-12, "node {n}: {x} vs {expected}");
            }
            assert_eq!(adj.eta()[n].max_abs(), 0.0);
        }
    }

    #[test]
    fn cfl_is_enforced_on_transport() {
        let g = line(4);
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let mut c = LinearCoefficients::zeros(&g, tg);
        c.c1[0] = VectorField::new(&g, vec![vec![0.0, 10.0, 0.0, 0.0, 0.0]]).unwrap();
        let z = vec![ScalarField::zeros(&g); 2];
        assert!(matches!(
            solve_general_linear(&c, &z, &z, &CgOptions::default()),
            Err(Error::Cfl { .. })
        ));
    }
}
