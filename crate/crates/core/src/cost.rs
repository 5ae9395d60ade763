//! Tracking cost
//!
//! ```text
//! J = gamma_u/(s q) int |u - u_d|^{sq} + gamma_v/2 int |v - v_d|^2 + gamma_f/q int_{control} |f|^q
//! ```
//!
//! discretized with midpoint quadrature in space. State terms are summed over
//! nodes `1..=N` (the initial state does not depend on the control), the
//! control term over nodes `0..N-1` (the values that drive a step); both with
//! weight `dt`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{ControlField, Trajectory};
use crate::grid::{same_grid, ScalarField, SubdomainMask};
use crate::tangent_adjoint::{adjoint_pullback, AdjointPair};

/// Admissible control set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlConstraints {
    Unconstrained,
    /// Pointwise bounds `f_min <= f <= f_max`.
    Box { f_min: f64, f_max: f64 },
}

impl ControlConstraints {
    pub fn validate(&self) -> Result<()> {
        if let ControlConstraints::Box { f_min, f_max } = *self {
            if !(f_min.is_finite() && f_max.is_finite()) {
                return Err(Error::invalid("box bounds must be finite"));
            }
            if f_min > f_max {
                return Err(Error::invalid(format!("empty box [{f_min}, {f_max}]")));
            }
        }
        Ok(())
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, ControlConstraints::Box { .. })
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        match *self {
            ControlConstraints::Unconstrained => x,
            ControlConstraints::Box { f_min, f_max } => x.clamp(f_min, f_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_f: f64,
    pub s: f64,
    pub q: f64,
    /// Desired density, one field per time node.
    pub u_d: Vec<ScalarField>,
    /// Desired signal, one field per time node.
    pub v_d: Vec<ScalarField>,
    pub constraints: ControlConstraints,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_u", self.gamma_u), ("gamma_v", self.gamma_v), ("gamma_f", self.gamma_f)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {g}")));
            }
        }
        if self.gamma_u <= 0.0 {
            return Err(Error::invalid("gamma_u must be positive"));
        }
        self.constraints.validate()?;
        if self.gamma_f <= 0.0 && !self.constraints.is_bounded() {
            return Err(Error::invalid("gamma_f = 0 requires a bounded (box) control set"));
        }
        if !(self.s.is_finite() && self.s >= 1.0) {
            return Err(Error::invalid(format!("s must be >= 1, got {}", self.s)));
        }
        if !(self.q.is_finite() && self.q > 2.5) {
            return Err(Error::invalid(format!("q must be > 5/2, got {}", self.q)));
        }
        if self.u_d.len() != self.v_d.len() {
            return Err(Error::Misaligned("u_d and v_d have different lengths".into()));
        }
        Ok(())
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        let nodes = traj.time_grid().nodes();
        if self.u_d.len() != nodes || self.v_d.len() != nodes {
            return Err(Error::Misaligned(format!(
                "desired states need {nodes} nodes, got {} and {}",
                self.u_d.len(),
                self.v_d.len()
            )));
        }
        for w in self.u_d.iter().chain(&self.v_d) {
            same_grid(traj.grid(), w.grid())?;
        }
        Ok(())
    }
}

/// `sgn(x) |x|^r` with `sgn(0) = 0`.
#[inline]
pub fn signed_power(x: f64, r: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if r == 1.0 {
        x
    } else if r == 2.0 {
        x * x.abs()
    } else {
        x.signum() * x.abs().powf(r)
    }
}

#[inline]
fn abs_power(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 3.0 {
        let a = x.abs();
        a * a * a
    } else {
        x.abs().powf(p)
    }
}

/// Control part `gamma_f/q sum_{n<N} dt int |f_n|^q` of the cost.
pub fn control_cost(f: &ControlField, gamma_f: f64, q: f64) -> f64 {
    let dt = f.time_grid().dt();
    let vol = f.grid().cell_volume();
    let sum: f64 = f.series()[..f.time_grid().steps()]
        .iter()
        .map(|node| node.values().iter().map(|&x| abs_power(x, q)).sum::<f64>())
        .sum();
    gamma_f / q * dt * vol * sum
}

/// Discrete tracking cost of a trajectory and its control.
pub fn evaluate_cost(traj: &Trajectory, f: &ControlField, spec: &CostSpec) -> Result<f64> {
    spec.check_traj(traj)?;
    if traj.time_grid() != f.time_grid() {
        return Err(Error::Misaligned("trajectory and control use different time grids".into()));
    }
    let tg = traj.time_grid();
    let dt = tg.dt();
    let vol = traj.grid().cell_volume();
    let sq = spec.s * spec.q;
    let mut track_u = 0.0;
    let mut track_v = 0.0;
    for n in 1..tg.nodes() {
        for ((&u, &ud), (&v, &vd)) in traj.u()[n]
            .values()
            .iter()
            .zip(spec.u_d[n].values())
            .zip(traj.v()[n].values().iter().zip(spec.v_d[n].values()))
        {
            track_u += abs_power(u - ud, sq);
            track_v += (v - vd) * (v - vd);
        }
    }
    let states = dt * vol * (spec.gamma_u / sq * track_u + 0.5 * spec.gamma_v * track_v);
    Ok(states + control_cost(f, spec.gamma_f, spec.q))
}

/// Pointwise derivatives of the state part of the cost:
/// `g_lambda = gamma_u sgn(u - u_d)|u - u_d|^{sq-1}`, `g_eta = gamma_v (v - v_d)`.
pub fn adjoint_sources(traj: &Trajectory, spec: &CostSpec) -> Result<(Vec<ScalarField>, Vec<ScalarField>)> {
    spec.check_traj(traj)?;
    let r = spec.s * spec.q - 1.0;
    let mut g_lambda = Vec::with_capacity(traj.time_grid().nodes());
    let mut g_eta = Vec::with_capacity(traj.time_grid().nodes());
    for n in 0..traj.time_grid().nodes() {
        g_lambda.push(traj.u()[n].zip_map(&spec.u_d[n], |u, ud| spec.gamma_u * signed_power(u - ud, r))?);
        g_eta.push(traj.v()[n].zip_map(&spec.v_d[n], |v, vd| spec.gamma_v * (v - vd))?);
    }
    Ok((g_lambda, g_eta))
}

/// Reduced gradient `gamma_f sgn(f)|f|^{q-1} + v_eff eta` on the control
/// mask, zero at the final node.
///
/// `v_eff` is the state the control multiplies in each step (see
/// [`crate::tangent_adjoint::control_state`]); with the adjoint of the same
/// trajectory this is the exact gradient of `f -> J(S(f), f)`.
pub fn control_gradient(f: &ControlField, traj: &Trajectory, adj: &AdjointPair, spec: &CostSpec) -> Result<ControlField> {
    let pullback = adjoint_pullback(traj, f, adj)?;
    let reg = control_regularization_gradient(f, spec.gamma_f, spec.q);
    reg.combine(1.0, &pullback, 1.0)
}

/// `gamma_f sgn(f)|f|^{q-1}` on the active nodes, zero at the final node.
fn control_regularization_gradient(f: &ControlField, gamma_f: f64, q: f64) -> ControlField {
    let steps = f.time_grid().steps();
    let nodes = f
        .series()
        .iter()
        .enumerate()
        .map(|(n, node)| {
            if n == steps {
                vec![0.0; node.values().len()]
            } else {
                node.values().iter().map(|&x| gamma_f * signed_power(x, q - 1.0)).collect()
            }
        })
        .collect();
    ControlField::from_raw(*f.time_grid(), f.mask().clone(), nodes)
}

/// Gradient for frozen states: `gamma_f sgn(f)|f|^{q-1} + v_sel eta`, where
/// `v_sel` is `v_n` for `f_n >= 0` and `v_{n+1}` otherwise.
pub fn control_gradient_frozen(
    f: &ControlField,
    v: &[ScalarField],
    eta: &[ScalarField],
    gamma_f: f64,
    q: f64,
) -> Result<ControlField> {
    let tg = *f.time_grid();
    check_series(v, eta, tg.nodes())?;
    let reg = control_regularization_gradient(f, gamma_f, q);
    let nc = f.grid().num_cells();
    let mut nodes: Vec<Vec<f64>> = (0..tg.steps())
        .map(|n| {
            let fv = f.node(n).values();
            let e = eta[n].values();
            let r = reg.node(n).values();
            (0..nc)
                .map(|i| {
                    let vs = if fv[i] >= 0.0 { v[n].values()[i] } else { v[n + 1].values()[i] };
                    r[i] + vs * e[i]
                })
                .collect()
        })
        .collect();
    nodes.push(vec![0.0; nc]);
    Ok(ControlField::from_raw(tg, f.mask().clone(), nodes))
}

fn check_series(v: &[ScalarField], eta: &[ScalarField], nodes: usize) -> Result<()> {
    if v.len() != nodes || eta.len() != nodes {
        return Err(Error::Misaligned(format!(
            "state and multiplier series need {nodes} nodes, got {} and {}",
            v.len(),
            eta.len()
        )));
    }
    Ok(())
}

/// Pointwise solution of `gamma_f sgn(f)|f|^{q-1} + v eta = 0`:
/// `f = -sgn(eta) (v |eta| / gamma_f)^{1/(q-1)}` on the mask.
///
/// The state is taken at the same time level [`control_gradient_frozen`]
/// uses for the resulting sign of `f`, so the two are exact inverses. The
/// final node is zero.
pub fn explicit_control(
    v: &[ScalarField],
    eta: &[ScalarField],
    gamma_f: f64,
    q: f64,
    mask: &SubdomainMask,
    time_grid: crate::forward::TimeGrid,
) -> Result<ControlField> {
    if !(gamma_f.is_finite() && gamma_f > 0.0) {
        return Err(Error::invalid(format!("explicit control needs gamma_f > 0, got {gamma_f}")));
    }
    if !(q.is_finite() && q > 1.0) {
        return Err(Error::invalid(format!("explicit control needs q > 1, got {q}")));
    }
    check_series(v, eta, time_grid.nodes())?;
    let grid: &Arc<_> = mask.grid();
    for w in v.iter().chain(eta) {
        same_grid(grid, w.grid())?;
    }
    let nc = grid.num_cells();
    let inv = 1.0 / (q - 1.0);
    let mut nodes: Vec<Vec<f64>> = (0..time_grid.steps())
        .map(|n| {
            let e = eta[n].values();
            (0..nc)
                .map(|i| {
                    let vs = if e[i] > 0.0 { v[n + 1].values()[i] } else { v[n].values()[i] };
                    let mag = (vs.max(0.0) * e[i].abs() / gamma_f).powf(inv);
                    if e[i] > 0.0 {
                        -mag
                    } else if e[i] < 0.0 {
                        mag
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    nodes.push(vec![0.0; nc]);
    Ok(ControlField::from_raw(time_grid, mask.clone(), nodes))
}

/// Pointwise projection onto the admissible set.
pub fn project_control(f: &ControlField, constraints: &ControlConstraints) -> ControlField {
    match constraints {
        ControlConstraints::Unconstrained => f.clone(),
        c => f.map(|x| c.clamp(x)).expect("clamping keeps values finite"),
    }
}
