//! The four batch commands.

use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use kscontrol::cost::{adjoint_sources, evaluate_cost, signed_power};
use kscontrol::forward::{criterion_norm, diagnostics, solve_forward, DiagnosticsRecord};
use kscontrol::io::{read_field_dump, write_diagnostics_csv, write_energy_csv, write_field_dump, write_iterations_csv};
use kscontrol::optimize::{make_tracking_problem, projected_gradient_descent, reduced_gradient};
use kscontrol::tangent_adjoint::{solve_tangent, state_pairing, transpose_check};
use kscontrol::{
    ControlField, CostSpec, Grid, ModelParams, ScalarField, StopReason, SubdomainMask, TimeGrid, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{cosine_value, ControlInit, DesiredStates, FieldInit, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Gradcheck,
    Optimize,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Gradcheck => "gradcheck",
            Command::Optimize => "optimize",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// False when a check failed or the optimizer did not converge.
    pub passed: bool,
    /// One-line human summary for stdout.
    pub message: String,
}

pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let problem = Problem::build(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    match cmd {
        Command::Forward => forward(cfg, &problem, out_dir),
        Command::Diagnose => diagnose(cfg, &problem, out_dir),
        Command::Gradcheck => gradcheck(cfg, &problem, out_dir),
        Command::Optimize => optimize(cfg, &problem, out_dir),
    }
}

/// Independent random streams per consumer, all derived from one seed.
#[derive(Clone, Copy)]
enum Stream {
    U0 = 1,
    V0 = 2,
    Control = 3,
    Check = 4,
}

fn rng(cfg: &RunConfig, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.options.seed);
    r.set_stream(stream as u64);
    r
}

struct Problem {
    grid: Arc<Grid>,
    tg: TimeGrid,
    params: ModelParams,
    mask: SubdomainMask,
    u0: ScalarField,
    v0: ScalarField,
    f0: ControlField,
}

impl Problem {
    fn build(cfg: &RunConfig) -> Result<Problem> {
        let grid = cfg.grid()?;
        let tg = cfg.time_grid()?;
        let params = cfg.model_params()?;
        let lo = cfg.control.mask_lo.clone().unwrap_or_else(|| vec![0.0; grid.dim()]);
        let hi = cfg.control.mask_hi.clone().unwrap_or_else(|| grid.extent().to_vec());
        let mask = SubdomainMask::from_box(&grid, &lo, &hi)?;
        let u0 = initial_field(cfg, &grid, &cfg.initial.u0, Stream::U0)?;
        let v0 = initial_field(cfg, &grid, &cfg.initial.v0, Stream::V0)?;
        let f0 = initial_control(cfg, tg, &mask)?;
        Ok(Problem {
            grid,
            tg,
            params,
            mask,
            u0,
            v0,
            f0,
        })
    }

    fn solve(&self, f: &ControlField) -> Result<Trajectory> {
        Ok(solve_forward(&self.u0, &self.v0, f, &self.params)?)
    }

    fn cost_spec(&self, cfg: &RunConfig) -> Result<CostSpec> {
        let c = &cfg.cost;
        let (u_d, v_d) = match &c.desired {
            DesiredStates::Generate { f_star } => {
                let f_star = ControlField::constant(self.tg, self.mask.clone(), *f_star);
                make_tracking_problem(&self.u0, &self.v0, &f_star, &self.params)?
            }
            DesiredStates::Files { u, v } => (
                load_series(cfg, u, &self.grid, self.tg.nodes())?,
                load_series(cfg, v, &self.grid, self.tg.nodes())?,
            ),
        };
        Ok(CostSpec {
            gamma_u: c.gamma_u,
            gamma_v: c.gamma_v,
            gamma_f: c.gamma_f,
            s: self.params.s,
            q: self.params.q,
            u_d,
            v_d,
            constraints: cfg.control.constraint.to_constraints(),
        })
    }
}

fn load_dump(cfg: &RunConfig, path: &str, grid: &Arc<Grid>) -> Result<Vec<ScalarField>> {
    let full = cfg.resolve_path(path);
    let file = fs::File::open(&full).map_err(|e| CliError::io(format!("cannot open {}: {e}", full.display())))?;
    read_field_dump(BufReader::new(file))
        .and_then(|d| d.into_fields(grid))
        .map_err(|e| CliError::io(format!("{}: {e}", full.display())))
}

fn load_series(cfg: &RunConfig, path: &str, grid: &Arc<Grid>, nodes: usize) -> Result<Vec<ScalarField>> {
    let series = load_dump(cfg, path, grid)?;
    if series.len() != nodes {
        return Err(CliError::io(format!(
            "{path}: expected {nodes} snapshots (one per time node), found {}",
            series.len()
        )));
    }
    Ok(series)
}

fn initial_field(cfg: &RunConfig, grid: &Arc<Grid>, init: &FieldInit, stream: Stream) -> Result<ScalarField> {
    Ok(match init {
        FieldInit::Constant { value } => ScalarField::constant(grid, *value),
        FieldInit::Cosine {
            mean,
            amplitude,
            wavenumbers,
        } => {
            let ext = grid.extent().to_vec();
            ScalarField::from_fn(grid, |x| cosine_value(x, &ext, *mean, *amplitude, wavenumbers))?
        }
        FieldInit::Random { lo, hi } => {
            let mut r = rng(cfg, stream);
            ScalarField::new(grid, (0..grid.num_cells()).map(|_| r.gen_range(*lo..*hi)).collect())?
        }
        FieldInit::File { path } => load_dump(cfg, path, grid)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::io(format!("{path}: dump has no snapshots")))?,
    })
}

fn initial_control(cfg: &RunConfig, tg: TimeGrid, mask: &SubdomainMask) -> Result<ControlField> {
    let grid = mask.grid();
    Ok(match &cfg.control.initial {
        ControlInit::Zero {} => ControlField::zeros(tg, mask.clone()),
        ControlInit::Constant { value } => ControlField::constant(tg, mask.clone(), *value),
        ControlInit::Random { amplitude } => {
            let mut r = rng(cfg, Stream::Control);
            let series = (0..tg.nodes())
                .map(|_| {
                    let vals = (0..grid.num_cells())
                        .map(|_| {
                            let m = r.gen_range(0.2 * amplitude..*amplitude);
                            if r.gen_bool(0.5) {
                                m
                            } else {
                                -m
                            }
                        })
                        .collect();
                    ScalarField::new(grid, vals)
                })
                .collect::<kscontrol::Result<Vec<_>>>()?;
            ControlField::new(tg, mask.clone(), series)?
        }
        ControlInit::File { path } => {
            ControlField::new(tg, mask.clone(), load_series(cfg, path, grid, tg.nodes())?)?
        }
    })
}

fn write_out(out_dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = out_dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    write_out(out_dir, name, text.as_bytes())
}

fn dump(out_dir: &Path, name: &str, series: &[ScalarField]) -> Result<()> {
    let mut buf = Vec::new();
    write_field_dump(&mut buf, series, 0)?;
    write_out(out_dir, name, &buf)
}

fn dump_trajectory(cfg: &RunConfig, out_dir: &Path, traj: &Trajectory) -> Result<()> {
    if cfg.options.dump_fields {
        dump(out_dir, "u.field", traj.u())?;
        dump(out_dir, "v.field", traj.v())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    command: &'static str,
    criterion_norm: f64,
    final_state: &'a DiagnosticsRecord,
    config: &'a RunConfig,
}

fn forward_like(cfg: &RunConfig, p: &Problem, out_dir: &Path, cmd: Command) -> Result<Outcome> {
    let traj = p.solve(&p.f0)?;
    let report = diagnostics(&traj, &p.f0, &p.params)?;
    let mut csv = Vec::new();
    write_diagnostics_csv(&mut csv, &report)?;
    write_out(out_dir, "diagnostics.csv", &csv)?;
    if cmd == Command::Diagnose {
        let mut csv = Vec::new();
        write_energy_csv(&mut csv, &report)?;
        write_out(out_dir, "energy.csv", &csv)?;
    }
    dump_trajectory(cfg, out_dir, &traj)?;
    let last = report.final_record();
    let criterion = criterion_norm(&traj, &p.params);
    write_json(
        out_dir,
        "summary.json",
        &RunSummary {
            command: cmd.name(),
            criterion_norm: criterion,
            final_state: last,
            config: cfg,
        },
    )?;
    Ok(Outcome {
        passed: true,
        message: format!(
            "{}: {} steps to t = {}, mass {:.12e}, criterion {:.6e}",
            cmd.name(),
            p.tg.steps(),
            last.time,
            last.mass,
            criterion
        ),
    })
}

fn forward(cfg: &RunConfig, p: &Problem, out_dir: &Path) -> Result<Outcome> {
    forward_like(cfg, p, out_dir, Command::Forward)
}

fn diagnose(cfg: &RunConfig, p: &Problem, out_dir: &Path) -> Result<Outcome> {
    forward_like(cfg, p, out_dir, Command::Diagnose)
}

#[derive(Serialize)]
struct DirectionCheck {
    transpose_discrepancy: f64,
    adjoint_derivative: f64,
    tangent_derivative: f64,
    finite_difference: f64,
    gradient_rel_error: f64,
    route_rel_error: f64,
}

#[derive(Serialize)]
struct Check {
    max: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn new(values: impl Iterator<Item = f64>, tolerance: f64) -> Check {
        let max = values.fold(0.0, f64::max);
        Check {
            max,
            tolerance,
            pass: max <= tolerance,
        }
    }
}

#[derive(Serialize)]
struct ZeroDirection {
    transpose_discrepancy: f64,
    adjoint_derivative: f64,
    tangent_max_abs: f64,
    pass: bool,
}

#[derive(Serialize)]
struct GradcheckReport<'a> {
    command: &'static str,
    pass: bool,
    fd_epsilon: f64,
    transpose: Check,
    gradient: Check,
    route: Check,
    zero_direction: ZeroDirection,
    directions: Vec<DirectionCheck>,
    config: &'a RunConfig,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn random_series(r: &mut ChaCha8Rng, grid: &Arc<Grid>, nodes: usize) -> Result<Vec<ScalarField>> {
    (0..nodes)
        .map(|_| Ok(ScalarField::new(grid, (0..grid.num_cells()).map(|_| r.gen_range(-1.0..1.0)).collect())?))
        .collect()
}

fn gradcheck(cfg: &RunConfig, p: &Problem, out_dir: &Path) -> Result<Outcome> {
    let opts = &cfg.options;
    let f = &p.f0;
    let traj = p.solve(f)?;
    let spec = p.cost_spec(cfg)?;
    let cost_at = |g: &ControlField| -> Result<f64> { Ok(evaluate_cost(&p.solve(g)?, g, &spec)?) };
    let grad = reduced_gradient(&traj, f, &p.params, &spec)?;
    let (g_lambda, g_eta) = adjoint_sources(&traj, &spec)?;
    let reg = f.map(|x| spec.gamma_f * signed_power(x, spec.q - 1.0))?;

    let mut r = rng(cfg, Stream::Check);
    let mut checks = Vec::with_capacity(opts.directions);
    for _ in 0..opts.directions {
        let dir = ControlField::new(p.tg, p.mask.clone(), random_series(&mut r, &p.grid, p.tg.nodes())?)?;
        let w_u = random_series(&mut r, &p.grid, p.tg.nodes())?;
        let w_v = random_series(&mut r, &p.grid, p.tg.nodes())?;
        let transpose = transpose_check(&traj, f, &p.params, &dir, &w_u, &w_v)?;

        let adjoint = grad.inner(&dir)?;
        let tangent = solve_tangent(&traj, f, &p.params, &dir)?;
        let tangent_dd = state_pairing(&p.tg, &tangent, &g_lambda, &g_eta) + reg.inner(&dir)?;
        let eps = opts.fd_epsilon;
        let fd = (cost_at(&f.combine(1.0, &dir, eps)?)? - cost_at(&f.combine(1.0, &dir, -eps)?)?) / (2.0 * eps);
        checks.push(DirectionCheck {
            transpose_discrepancy: transpose,
            adjoint_derivative: adjoint,
            tangent_derivative: tangent_dd,
            finite_difference: fd,
            gradient_rel_error: rel_err(fd, adjoint),
            route_rel_error: rel_err(tangent_dd, adjoint),
        });
    }

    let zero = ControlField::zeros(p.tg, p.mask.clone());
    let w = random_series(&mut r, &p.grid, p.tg.nodes())?;
    let zt = transpose_check(&traj, f, &p.params, &zero, &w, &w)?;
    let zd = grad.inner(&zero)?;
    let ztan = solve_tangent(&traj, f, &p.params, &zero)?;
    let zmax = ztan.u.iter().chain(&ztan.v).map(|x| x.max_abs()).fold(0.0, f64::max);
    let zero_direction = ZeroDirection {
        transpose_discrepancy: zt,
        adjoint_derivative: zd,
        tangent_max_abs: zmax,
        pass: zt == 0.0 && zd == 0.0 && zmax == 0.0,
    };

    let transpose = Check::new(checks.iter().map(|c| c.transpose_discrepancy), opts.transpose_tol);
    let gradient = Check::new(checks.iter().map(|c| c.gradient_rel_error), opts.gradient_tol);
    let route = Check::new(checks.iter().map(|c| c.route_rel_error), opts.route_tol);
    let pass = transpose.pass && gradient.pass && route.pass && zero_direction.pass;
    let message = format!(
        "gradcheck: {} ({} directions; transpose {:.3e}, gradient {:.3e}, route {:.3e})",
        if pass { "pass" } else { "FAIL" },
        checks.len(),
        transpose.max,
        gradient.max,
        route.max
    );
    write_json(
        out_dir,
        "gradcheck.json",
        &GradcheckReport {
            command: Command::Gradcheck.name(),
            pass,
            fd_epsilon: opts.fd_epsilon,
            transpose,
            gradient,
            route,
            zero_direction,
            directions: checks,
            config: cfg,
        },
    )?;
    Ok(Outcome { passed: pass, message })
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    command: &'static str,
    converged: bool,
    reason: StopReason,
    /// Accepted steps.
    iterations: usize,
    initial_cost: f64,
    final_cost: f64,
    cost_ratio: f64,
    final_residual: f64,
    final_criterion: f64,
    control_lq_norm: f64,
    config: &'a RunConfig,
}

fn optimize(cfg: &RunConfig, p: &Problem, out_dir: &Path) -> Result<Outcome> {
    let spec = p.cost_spec(cfg)?;
    let rep = projected_gradient_descent(&p.u0, &p.v0, &p.f0, &p.params, &spec, &cfg.options.optimize_options())?;
    let mut csv = Vec::new();
    write_iterations_csv(&mut csv, &rep.iterations)?;
    write_out(out_dir, "iterations.csv", &csv)?;
    if cfg.options.dump_fields {
        dump(out_dir, "f.field", rep.control.series())?;
    }
    dump_trajectory(cfg, out_dir, &rep.trajectory)?;
    let fin = *rep.final_record();
    let j0 = rep.initial_cost();
    let summary = OptimizeSummary {
        command: Command::Optimize.name(),
        converged: rep.converged,
        reason: rep.reason,
        iterations: rep.iterations.len() - 1,
        initial_cost: j0,
        final_cost: fin.cost,
        cost_ratio: if j0 > 0.0 { fin.cost / j0 } else { 0.0 },
        final_residual: fin.residual,
        final_criterion: fin.criterion,
        control_lq_norm: rep.control.lp_norm(p.params.q)?,
        config: cfg,
    };
    write_json(out_dir, "summary.json", &summary)?;
    Ok(Outcome {
        passed: rep.converged,
        message: format!(
            "optimize: {} after {} iterations, J {:.6e} -> {:.6e}, residual {:.3e}",
            serde_json::to_value(rep.reason).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default(),
            summary.iterations,
            j0,
            fin.cost,
            fin.residual
        ),
    })
}
