//! IMEX time stepping for the controlled chemotaxis-consumption system
//!
//! ```text
//! u_t - lap(u) = -div(u grad v)
//! v_t - lap(v) = -u^s v + f v 1_{control}
//! ```
//!
//! with no-flux boundaries, plus the energy and regularity diagnostics
//! computed along a trajectory.
//!
//! One step from `(u_n, v_n)` with control `f_n`:
//!
//! 1. `(I - dt lap + dt u_n^s + dt f_n^-) v_{n+1} = (1 + dt f_n^+) v_n`
//! 2. `(I - dt lap) u_{n+1} = u_n - dt div(flux)`, where the face flux is the
//!    upwind value of `u_n` times `grad v_{n+1}`.
//!
//! Both matrices are M-matrices, so `v` stays nonnegative for any `dt`, and `u`
//! stays nonnegative as long as the explicit upwind step satisfies the CFL
//! bound of [`cfl_dt`].

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    face_gradient, integrate, laplacian_neumann, lp_norm_slice, same_grid, Grid, ScalarField, SubdomainMask,
};
use crate::linsolve::{CgOptions, ImplicitOperator};

/// Tolerance below zero accepted for states that should be nonnegative.
pub const NONNEG_SLACK: f64 = 1e-12;

const CFL_EPS: f64 = 1e-30;

/// Model exponents and numerical settings shared by all solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Consumption exponent `s >= 1`.
    pub s: f64,
    /// Shift in `z = sqrt(v + alpha^2)`.
    pub alpha: f64,
    /// Regularity / control exponent `q > 5/2`.
    pub q: f64,
    pub cg: CgOptions,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            s: 1.0,
            alpha: 1e-4,
            q: 3.0,
            cg: CgOptions::default(),
        }
    }
}

impl ModelParams {
    pub fn new(s: f64, alpha: f64, q: f64) -> Result<Self> {
        let p = ModelParams {
            s,
            alpha,
            q,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s >= 1.0) {
            return Err(Error::invalid(format!("s must be >= 1, got {}", self.s)));
        }
        if !(self.q.is_finite() && self.q > 2.5) {
            return Err(Error::invalid(format!("q must be > 5/2, got {}", self.q)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.cg.rel_tol > 0.0) {
            return Err(Error::invalid("CG tolerance must be positive"));
        }
        Ok(())
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(Error::invalid(format!("final time must be positive, got {final_time}")));
        }
        if steps == 0 {
            return Err(Error::invalid("at least one time step required"));
        }
        Ok(TimeGrid { final_time, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// States `(u_n, v_n)` at every time node `0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    time_grid: TimeGrid,
    u: Vec<ScalarField>,
    v: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(time_grid: TimeGrid, u: Vec<ScalarField>, v: Vec<ScalarField>) -> Result<Self> {
        if u.len() != time_grid.nodes() || v.len() != time_grid.nodes() {
            return Err(Error::Misaligned(format!(
                "trajectory needs {} nodes, got u: {}, v: {}",
                time_grid.nodes(),
                u.len(),
                v.len()
            )));
        }
        let grid = u[0].grid();
        for w in u.iter().chain(&v) {
            same_grid(grid, w.grid())?;
        }
        Ok(Trajectory { time_grid, u, v })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u[0].grid()
    }

    pub fn u(&self) -> &[ScalarField] {
        &self.u
    }

    pub fn v(&self) -> &[ScalarField] {
        &self.v
    }

    pub fn into_series(self) -> (Vec<ScalarField>, Vec<ScalarField>) {
        (self.u, self.v)
    }
}

/// Control `f_n` per time node, identically zero off the control mask.
///
/// The value at the final node never enters the dynamics; it is carried so
/// that controls and states share one time indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    time_grid: TimeGrid,
    mask: SubdomainMask,
    f: Vec<ScalarField>,
}

impl ControlField {
    /// Builds a control, zeroing every value off the mask.
    pub fn new(time_grid: TimeGrid, mask: SubdomainMask, f: Vec<ScalarField>) -> Result<Self> {
        if f.len() != time_grid.nodes() {
            return Err(Error::Misaligned(format!(
                "control needs {} nodes, got {}",
                time_grid.nodes(),
                f.len()
            )));
        }
        let mut f = f;
        for node in &mut f {
            same_grid(mask.grid(), node.grid())?;
            mask.restrict(node.values_mut());
        }
        Ok(ControlField { time_grid, mask, f })
    }

    pub fn zeros(time_grid: TimeGrid, mask: SubdomainMask) -> Self {
        Self::constant(time_grid, mask, 0.0)
    }

    pub fn constant(time_grid: TimeGrid, mask: SubdomainMask, c: f64) -> Self {
        let node = ScalarField::constant(mask.grid(), c);
        let f = vec![node; time_grid.nodes()];
        Self::new(time_grid, mask, f).expect("aligned by construction")
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn mask(&self) -> &SubdomainMask {
        &self.mask
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mask.grid()
    }

    pub fn series(&self) -> &[ScalarField] {
        &self.f
    }

    pub fn node(&self, n: usize) -> &ScalarField {
        &self.f[n]
    }

    pub(crate) fn from_raw(time_grid: TimeGrid, mask: SubdomainMask, f: Vec<Vec<f64>>) -> Self {
        let grid = Arc::clone(mask.grid());
        let f = f
            .into_iter()
            .map(|mut vals| {
                mask.restrict(&mut vals);
                ScalarField::from_raw(&grid, vals)
            })
            .collect();
        ControlField { time_grid, mask, f }
    }

    /// Applies `op` cell by cell on every node; the result is re-masked.
    pub fn map(&self, mut op: impl FnMut(f64) -> f64) -> Result<ControlField> {
        let f = self
            .f
            .iter()
            .map(|node| node.map(&mut op))
            .collect::<Result<Vec<_>>>()?;
        ControlField::new(self.time_grid, self.mask.clone(), f)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ControlField, b: f64) -> Result<ControlField> {
        self.check_aligned(other)?;
        let f = self
            .f
            .iter()
            .zip(&other.f)
            .map(|(x, y)| x.zip_map(y, |p, q| a * p + b * q))
            .collect::<Result<Vec<_>>>()?;
        ControlField::new(self.time_grid, self.mask.clone(), f)
    }

    pub(crate) fn check_aligned(&self, other: &ControlField) -> Result<()> {
        if self.time_grid != other.time_grid {
            return Err(Error::Misaligned("controls use different time grids".into()));
        }
        if self.mask != other.mask {
            return Err(Error::Misaligned("controls use different masks".into()));
        }
        Ok(())
    }

    /// Space-time pairing `sum_{n < steps} dt * <a_n, b_n>` over the nodes
    /// that drive the dynamics.
    pub fn inner(&self, other: &ControlField) -> Result<f64> {
        self.check_aligned(other)?;
        let dt = self.time_grid.dt();
        Ok((0..self.time_grid.steps())
            .map(|n| dt * self.f[n].dot(&other.f[n]))
            .sum())
    }

    /// Discrete `L^2(Q)` norm over the active nodes.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).expect("self-aligned").sqrt()
    }

    /// Discrete `L^p(Q)` norm over the active nodes.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        let active = &self.f[..self.time_grid.steps()];
        crate::grid::bochner_norm(active, p, p, self.time_grid.dt())
    }
}

/// Upwind face flux `u_up * g` where `u_up` is taken from the cell the face
/// velocity `g` points away from (left cell when `g >= 0`).
pub(crate) fn upwind_flux(grid: &Grid, u: &[f64], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..grid.dim())
        .map(|k| {
            let gk = &g[k];
            let mut out = vec![0.0; gk.len()];
            grid.for_each_interior_face(k, |f, l, r| {
                let up = if gk[f] >= 0.0 { u[l] } else { u[r] };
                out[f] = up * gk[f];
            });
            out
        })
        .collect()
}

/// Transpose of `u -> upwind_flux(u, g)` for frozen `g`, applied to face
/// values `y` and accumulated with weight `scale` into `out`.
pub(crate) fn add_upwind_flux_transpose(grid: &Grid, g: &[Vec<f64>], y: &[Vec<f64>], scale: f64, out: &mut [f64]) {
    for k in 0..grid.dim() {
        let gk = &g[k];
        let yk = &y[k];
        grid.for_each_interior_face(k, |f, l, r| {
            let up = if gk[f] >= 0.0 { l } else { r };
            out[up] += scale * gk[f] * yk[f];
        });
    }
}

/// Upwind cell values of `u` on faces selected by the sign of `g`.
pub(crate) fn upwind_values(grid: &Grid, u: &[f64], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..grid.dim())
        .map(|k| {
            let gk = &g[k];
            let mut out = vec![0.0; gk.len()];
            grid.for_each_interior_face(k, |f, l, r| {
                out[f] = if gk[f] >= 0.0 { u[l] } else { u[r] };
            });
            out
        })
        .collect()
}

fn max_abs_faces(g: &[Vec<f64>]) -> f64 {
    g.iter().flat_map(|a| a.iter()).fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest step for which the explicit upwind transport keeps `u >= 0`
/// given face velocities `g`.
pub(crate) fn cfl_from_faces(grid: &Grid, g: &[Vec<f64>]) -> f64 {
    grid.min_spacing() / (2.0 * grid.dim() as f64 * max_abs_faces(g) + CFL_EPS)
}

/// Positivity bound `h_min / (2 dim max|grad v| + eps)` for the explicit
/// chemotaxis transport driven by `v`.
pub fn cfl_dt(_u: &ScalarField, v: &ScalarField, _params: &ModelParams) -> f64 {
    cfl_from_faces(v.grid(), face_gradient(v).faces())
}

#[inline]
pub(crate) fn pos_part(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub(crate) fn neg_part(x: f64) -> f64 {
    (-x).max(0.0)
}

/// `u^s` with round-off negatives clamped to zero.
#[inline]
pub(crate) fn consumption_rate(u: f64, s: f64) -> f64 {
    let u = u.max(0.0);
    if s == 1.0 {
        u
    } else {
        u.powf(s)
    }
}

fn check_nonneg(name: &str, w: &ScalarField) -> Result<()> {
    let m = w.min();
    if m < -NONNEG_SLACK {
        return Err(Error::invalid(format!("{name} must be nonnegative, min is {m:e}")));
    }
    Ok(())
}

/// Advances `(u, v)` by one step with control values `f`.
///
/// The CFL bound is checked against `grad v_{n+1}`, the face velocity the
/// transport step actually uses.
pub fn step_forward(
    u: &ScalarField,
    v: &ScalarField,
    f: &ScalarField,
    params: &ModelParams,
    dt: f64,
) -> Result<(ScalarField, ScalarField)> {
    same_grid(u.grid(), v.grid())?;
    same_grid(u.grid(), f.grid())?;
    check_nonneg("u", u)?;
    check_nonneg("v", v)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    step_at(0, u, v, f, params, dt)
}

fn step_at(
    step: usize,
    u: &ScalarField,
    v: &ScalarField,
    f: &ScalarField,
    params: &ModelParams,
    dt: f64,
) -> Result<(ScalarField, ScalarField)> {
    let grid = u.grid();
    let (uv, vv, fv) = (u.values(), v.values(), f.values());

    let reaction: Vec<f64> = uv
        .iter()
        .zip(fv)
        .map(|(&ui, &fi)| consumption_rate(ui, params.s) + neg_part(fi))
        .collect();
    let rhs_v: Vec<f64> = vv.iter().zip(fv).map(|(&vi, &fi)| vi + dt * pos_part(fi) * vi).collect();
    let v_next = ImplicitOperator {
        grid,
        dt,
        reaction: Some(&reaction),
    }
    .solve(&rhs_v, &params.cg)?;

    let mut g = vec![Vec::new(); grid.dim()];
    grid.gradient_into(&v_next, &mut g);
    let admissible = cfl_from_faces(grid, &g);
    if dt > admissible {
        return Err(Error::Cfl { step, dt, admissible });
    }
    let flux = upwind_flux(grid, uv, &g);
    let mut rhs_u = uv.to_vec();
    grid.add_divergence(&flux, -dt, &mut rhs_u);
    let u_next = ImplicitOperator {
        grid,
        dt,
        reaction: None,
    }
    .solve(&rhs_u, &params.cg)?;

    if u_next.iter().chain(&v_next).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step });
    }
    Ok((ScalarField::from_raw(grid, u_next), ScalarField::from_raw(grid, v_next)))
}

/// Integrates from `(u0, v0)` over the control's time grid.
pub fn solve_forward(
    u0: &ScalarField,
    v0: &ScalarField,
    f: &ControlField,
    params: &ModelParams,
) -> Result<Trajectory> {
    params.validate()?;
    same_grid(u0.grid(), v0.grid())?;
    same_grid(u0.grid(), f.grid())?;
    check_nonneg("u0", u0)?;
    check_nonneg("v0", v0)?;
    let tg = *f.time_grid();
    let dt = tg.dt();
    let mut u = Vec::with_capacity(tg.nodes());
    let mut v = Vec::with_capacity(tg.nodes());
    u.push(u0.clone());
    v.push(v0.clone());
    for n in 0..tg.steps() {
        let (un, vn) = step_at(n, &u[n], &v[n], f.node(n), params, dt)?;
        u.push(un);
        v.push(vn);
    }
    Trajectory::new(tg, u, v)
}

/// `z = sqrt(v + alpha^2)`.
pub fn z_transform(v: &ScalarField, alpha: f64) -> Result<ScalarField> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    check_nonneg("v", v)?;
    let a2 = alpha * alpha;
    v.map(|x| (x.max(0.0) + a2).sqrt())
}

/// Entropy density: `(u+1) ln(u+1) - u` for `s = 1`, `u^s / (s(s-1))` otherwise.
fn entropy_density(u: f64, s: f64) -> f64 {
    let u = u.max(0.0);
    if s == 1.0 {
        (u + 1.0) * (u + 1.0).ln() - u
    } else {
        u.powf(s) / (s * (s - 1.0))
    }
}

fn check_entropy_exponent(s: f64) -> Result<()> {
    if s > 1.0 && s < 1.0 + 1e-12 {
        return Err(Error::invalid(format!("s = {s} is too close to 1 for the power entropy")));
    }
    Ok(())
}

/// Regularized free energy `E = (s/4) int g(u) + (1/2) int |grad z|^2`.
pub fn free_energy(u: &ScalarField, v: &ScalarField, params: &ModelParams) -> Result<f64> {
    check_entropy_exponent(params.s)?;
    check_nonneg("u", u)?;
    let z = z_transform(v, params.alpha)?;
    let entropy: f64 = u.values().iter().map(|&x| entropy_density(x, params.s)).sum::<f64>() * u.grid().cell_volume();
    Ok(0.25 * params.s * entropy + 0.5 * face_gradient(&z).norm_sq())
}

/// Per-node diagnostics.
///
/// Instantaneous quantities are evaluated at `t_n`; the `*_cum` fields are
/// left-rectangle integrals over `[0, t_n]` (zero at node 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub min_z: f64,
    pub max_z: f64,
    /// `E(u, z)`.
    pub energy: f64,
    /// `(s/4) int g(u)`.
    pub entropy: f64,
    /// `int |grad z|^2`.
    pub grad_z_sq: f64,
    /// `int |grad (u+1)^{s/2}|^2`.
    pub grad_upow_sq: f64,
    /// `int u^s |grad z|^2`.
    pub chemo_dissipation: f64,
    /// `int (lap z)^2`; equals `int |D^2 z|^2` for Neumann data on a box.
    pub lap_z_sq: f64,
    /// `int |grad z|^4 / z^2`.
    pub grad_z4_over_z2: f64,
    pub grad_upow_sq_cum: f64,
    pub chemo_dissipation_cum: f64,
    pub lap_z_sq_cum: f64,
    pub grad_z4_over_z2_cum: f64,
    /// `||f||_{L^q(0,t_n; L^q)}`.
    pub control_lq_cum: f64,
    /// `||u^s||_{L^q(0,t_n; L^q)}`, the regularity criterion monitor.
    pub criterion_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsReport {
    pub fn final_record(&self) -> &DiagnosticsRecord {
        self.records.last().expect("at least one node")
    }
}

struct Instant {
    rec: DiagnosticsRecord,
    criterion_density: f64,
    control_density: f64,
}

fn instant(u: &ScalarField, v: &ScalarField, f: &ScalarField, params: &ModelParams, time: f64) -> Result<Instant> {
    let grid = u.grid();
    let vol = grid.cell_volume();
    let s = params.s;
    let z = z_transform(v, params.alpha)?;
    let gz = face_gradient(&z);
    let grad_z_sq = gz.norm_sq();

    // cell-centered |grad z|^2: average of the two adjacent faces per axis
    let mut gz_cell = vec![0.0; grid.num_cells()];
    for k in 0..grid.dim() {
        let a = gz.axis(k);
        grid.for_each_interior_face(k, |fc, l, r| {
            let q = 0.5 * a[fc] * a[fc];
            gz_cell[l] += q;
            gz_cell[r] += q;
        });
    }
    let us: Vec<f64> = u.values().iter().map(|&x| consumption_rate(x, s)).collect();
    let chemo_dissipation = vol * us.iter().zip(&gz_cell).map(|(a, b)| a * b).sum::<f64>();
    let grad_z4_over_z2 = vol
        * gz_cell
            .iter()
            .zip(z.values())
            .map(|(g2, zi)| g2 * g2 / (zi * zi))
            .sum::<f64>();
    let lap_z_sq = {
        let l = laplacian_neumann(&z);
        l.dot(&l)
    };
    let upow = u.map(|x| (x.max(0.0) + 1.0).powf(0.5 * s))?;
    let grad_upow_sq = face_gradient(&upow).norm_sq();
    let entropy = 0.25 * s * vol * u.values().iter().map(|&x| entropy_density(x, s)).sum::<f64>();

    let criterion_density = vol * us.iter().map(|x| x.powf(params.q)).sum::<f64>();
    let control_density = vol * f.values().iter().map(|x| x.abs().powf(params.q)).sum::<f64>();

    Ok(Instant {
        rec: DiagnosticsRecord {
            time,
            mass: integrate(u),
            min_u: u.min(),
            max_u: u.max(),
            min_v: v.min(),
            max_v: v.max(),
            min_z: z.min(),
            max_z: z.max(),
            energy: entropy + 0.5 * grad_z_sq,
            entropy,
            grad_z_sq,
            grad_upow_sq,
            chemo_dissipation,
            lap_z_sq,
            grad_z4_over_z2,
            grad_upow_sq_cum: 0.0,
            chemo_dissipation_cum: 0.0,
            lap_z_sq_cum: 0.0,
            grad_z4_over_z2_cum: 0.0,
            control_lq_cum: 0.0,
            criterion_cum: 0.0,
        },
        criterion_density,
        control_density,
    })
}

/// Mass, extrema, free energy, the energy-inequality ingredients and the
/// cumulative regularity criterion at every node of `traj`.
pub fn diagnostics(traj: &Trajectory, f: &ControlField, params: &ModelParams) -> Result<DiagnosticsReport> {
    check_entropy_exponent(params.s)?;
    if traj.time_grid() != f.time_grid() {
        return Err(Error::Misaligned("trajectory and control use different time grids".into()));
    }
    let dt = traj.time_grid().dt();
    let q = params.q;
    let mut records = Vec::with_capacity(traj.time_grid().nodes());
    let (mut crit, mut ctrl) = (0.0f64, 0.0f64);
    let (mut c_upow, mut c_chemo, mut c_lap, mut c_g4) = (0.0, 0.0, 0.0, 0.0);
    for n in 0..traj.time_grid().nodes() {
        let inst = instant(&traj.u()[n], &traj.v()[n], f.node(n), params, traj.time_grid().time(n))?;
        let mut rec = inst.rec;
        rec.criterion_cum = crit.powf(1.0 / q);
        rec.control_lq_cum = ctrl.powf(1.0 / q);
        rec.grad_upow_sq_cum = c_upow;
        rec.chemo_dissipation_cum = c_chemo;
        rec.lap_z_sq_cum = c_lap;
        rec.grad_z4_over_z2_cum = c_g4;
        crit += dt * inst.criterion_density;
        ctrl += dt * inst.control_density;
        c_upow += dt * rec.grad_upow_sq;
        c_chemo += dt * rec.chemo_dissipation;
        c_lap += dt * rec.lap_z_sq;
        c_g4 += dt * rec.grad_z4_over_z2;
        records.push(rec);
    }
    Ok(DiagnosticsReport { records })
}

/// `||u^s||_{L^q(Q)}` over the whole trajectory (left rectangle in time).
pub fn criterion_norm(traj: &Trajectory, params: &ModelParams) -> f64 {
    let dt = traj.time_grid().dt();
    let vol = traj.grid().cell_volume();
    let sum: f64 = traj.u()[..traj.time_grid().steps()]
        .iter()
        .map(|u| {
            let us: Vec<f64> = u.values().iter().map(|&x| consumption_rate(x, params.s)).collect();
            dt * lp_norm_slice(&us, vol, params.q).powf(params.q)
        })
        .sum();
    sum.powf(1.0 / params.q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<Grid> {
        Grid::shared(&[n], &[1.0]).unwrap()
    }

    fn params(s: f64) -> ModelParams {
        ModelParams::new(s, 1e-4, 3.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.5, 1e-4, 3.0).is_err());
        assert!(ModelParams::new(1.0, 0.0, 3.0).is_err());
        assert!(ModelParams::new(1.0, 1e-4, 2.5).is_err());
        assert!(ModelParams::new(2.0, 0.1, 2.6).is_ok());
    }

    #[test]
    fn time_grid_invariants() {
        let tg = TimeGrid::new(0.5, 500).unwrap();
        assert!((tg.dt() * 500.0 - 0.5).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn constant_state_step() {
        let g = line(8);
        let u = ScalarField::constant(&g, 2.0);
        let v = ScalarField::constant(&g, 1.0);
        let f = ScalarField::zeros(&g);
        let (un, vn) = step_forward(&u, &v, &f, &params(1.0), 0.01).unwrap();
        for &x in un.values() {
            assert!((x - 2.0).abs() < 1e-14);
        }
        for &x in vn.values() {
            assert!((x - 1.0 / 1.02).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_density_gives_heat_step() {
        let g = line(10);
        let u = ScalarField::zeros(&g);
        let v = ScalarField::from_fn(&g, |x| 1.0 + (3.0 * x[0]).cos()).unwrap();
        let f = ScalarField::zeros(&g);
        let dt = 0.01;
        let (un, vn) = step_forward(&u, &v, &f, &params(1.0), dt).unwrap();
        assert!(un.values().iter().all(|&x| x == 0.0));
        // (I - dt lap) v_next = v
        let lap = laplacian_neumann(&vn);
        for i in 0..10 {
            let lhs = vn.values()[i] - dt * lap.values()[i];
            assert!((lhs - v.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cfl_formula() {
        let g = Grid::shared(&[10], &[1.0]).unwrap();
        let v = ScalarField::from_fn(&g, |x| 5.0 * x[0]).unwrap();
        let u = ScalarField::zeros(&g);
        let dt = cfl_dt(&u, &v, &params(1.0));
        assert!((dt - 0.01).abs() < 1e-12);
        let v2 = v.map(|x| 2.0 * x).unwrap();
        assert!((cfl_dt(&u, &v2, &params(1.0)) - 0.005).abs() < 1e-12);
        let flat = ScalarField::constant(&g, 3.0);
        assert!(cfl_dt(&u, &flat, &params(1.0)) > 1e20);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = line(32);
        let u = ScalarField::constant(&g, 1.0);
        let v = ScalarField::from_fn(&g, |x| 50.0 * (x[0] - 0.5).abs()).unwrap();
        let f = ScalarField::zeros(&g);
        match step_forward(&u, &v, &f, &params(1.0), 0.5) {
            Err(Error::Cfl { dt, admissible, .. }) => assert!(admissible < dt),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn z_transform_cases() {
        let g = line(3);
        let z = z_transform(&ScalarField::zeros(&g), 0.1).unwrap();
        assert!(z.values().iter().all(|&x| (x - 0.1).abs() < 1e-16));
        assert!(z_transform(&ScalarField::constant(&g, 1.0), 0.0).is_err());
        let z = z_transform(&ScalarField::constant(&g, 0.21), 0.2).unwrap();
        assert!(z.values().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let neg = ScalarField::new(&g, vec![0.0, -1e-6, 0.0]).unwrap();
        assert!(z_transform(&neg, 0.1).is_err());
    }

    #[test]
    fn free_energy_cases() {
        let g = line(4);
        let v = ScalarField::constant(&g, 0.7);
        assert_eq!(free_energy(&ScalarField::zeros(&g), &v, &params(1.0)).unwrap(), 0.0);
        let c = 1.3f64;
        let u = ScalarField::constant(&g, c);
        let e1 = free_energy(&u, &v, &params(1.0)).unwrap();
        assert!((e1 - 0.25 * ((c + 1.0) * (c + 1.0).ln() - c)).abs() < 1e-14);
        let e2 = free_energy(&u, &v, &params(2.0)).unwrap();
        assert!((e2 - c * c / 4.0).abs() < 1e-14);
        let mut p = params(1.0);
        p.s = 1.0 + 1e-14;
        assert!(free_energy(&u, &v, &p).is_err());
    }

    #[test]
    fn control_support_is_exact() {
        let g = line(4);
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let mask = SubdomainMask::from_box(&g, &[0.0], &[0.5]).unwrap();
        let f = ControlField::constant(tg, mask, 3.0);
        for node in f.series() {
            assert_eq!(node.values(), &[3.0, 3.0, 0.0, 0.0]);
        }
        let dbl = f.map(|x| x + 1.0).unwrap();
        assert_eq!(dbl.node(0).values(), &[4.0, 4.0, 0.0, 0.0]);
        assert!((f.inner(&f).unwrap() - 9.0 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn criterion_closed_form() {
        let g = Grid::shared(&[3, 3], &[1.0, 1.0]).unwrap();
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let u = vec![ScalarField::constant(&g, 2.0); 21];
        let v = vec![ScalarField::constant(&g, 1.0); 21];
        let traj = Trajectory::new(tg, u, v).unwrap();
        let p = params(1.0);
        assert!((criterion_norm(&traj, &p) - 2.0).abs() < 1e-12);
        let f = ControlField::zeros(tg, SubdomainMask::full(&g));
        let rep = diagnostics(&traj, &f, &p).unwrap();
        assert!((rep.final_record().criterion_cum - 2.0).abs() < 1e-12);
        assert_eq!(rep.records[0].criterion_cum, 0.0);
    }
}
