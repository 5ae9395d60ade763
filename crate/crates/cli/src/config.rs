//! Run configuration, read from TOML.
//!
//! Every block except `grid` and `time` may be omitted; missing keys take
//! the defaults below and are written back out in full in each summary file.
//! Unknown keys are rejected. Relative file paths are resolved against the
//! directory of the configuration file.
//!
//! ```toml
//! [grid]
//! dim = 2
//! cells = [8, 8]
//! extent = [1.0, 1.0]
//!
//! [time]
//! final_time = 0.05
//! steps = 10
//!
//! [model]                # s = 1, alpha = 1e-4, q = 3
//! s = 1.0
//!
//! [initial]
//! u0 = { kind = "cosine", mean = 1.0, amplitude = 0.3, wavenumbers = [1.0, 0.0] }
//! v0 = { kind = "constant", value = 1.0 }
//!
//! [control]
//! mask_lo = [0.0, 0.0]
//! mask_hi = [0.5, 1.0]
//! constraint = { kind = "box", f_min = -2.0, f_max = 2.0 }
//! initial = { kind = "random", amplitude = 1.0 }
//!
//! [cost]
//! gamma_u = 1.0
//! gamma_v = 1.0
//! gamma_f = 1e-2
//! desired = { kind = "generate", f_star = 0.5 }
//!
//! [options]
//! seed = 7
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kscontrol::{CgOptions, ControlConstraints, Grid, ModelParams, OptimizeOptions, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub options: OptionsConfig,
    /// Directory relative paths are resolved against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub final_time: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub s: f64,
    pub alpha: f64,
    pub q: f64,
    pub cg_tol: f64,
    pub cg_max_iter_factor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        ModelConfig {
            s: p.s,
            alpha: p.alpha,
            q: p.q,
            cg_tol: p.cg.rel_tol,
            cg_max_iter_factor: p.cg.max_iter_factor,
        }
    }
}

/// How an initial field is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldInit {
    Constant {
        value: f64,
    },
    /// `mean + amplitude * prod_k cos(pi wavenumbers[k] x_k / extent[k])`.
    Cosine {
        mean: f64,
        amplitude: f64,
        wavenumbers: Vec<f64>,
    },
    /// Independent uniform cell values in `[lo, hi)`.
    Random {
        lo: f64,
        hi: f64,
    },
    /// First snapshot of a field dump.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub u0: FieldInit,
    pub v0: FieldInit,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            u0: FieldInit::Constant { value: 1.0 },
            v0: FieldInit::Constant { value: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    Unconstrained {},
    Box { f_min: f64, f_max: f64 },
}

impl ConstraintConfig {
    pub fn to_constraints(&self) -> ControlConstraints {
        match *self {
            ConstraintConfig::Unconstrained {} => ControlConstraints::Unconstrained,
            ConstraintConfig::Box { f_min, f_max } => ControlConstraints::Box { f_min, f_max },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlInit {
    Zero {},
    Constant {
        value: f64,
    },
    /// Magnitudes uniform in `[amplitude/5, amplitude)` with random signs,
    /// so no value sits at the switch between gain and loss.
    Random {
        amplitude: f64,
    },
    /// Field dump with one snapshot per time node.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Lower corner of the control box; defaults to the domain origin.
    pub mask_lo: Option<Vec<f64>>,
    /// Upper corner of the control box; defaults to the domain extent.
    pub mask_hi: Option<Vec<f64>>,
    pub constraint: ConstraintConfig,
    pub initial: ControlInit,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            mask_lo: None,
            mask_hi: None,
            constraint: ConstraintConfig::Unconstrained {},
            initial: ControlInit::Zero {},
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesiredStates {
    /// Forward run with the constant control `f_star` on the mask.
    Generate { f_star: f64 },
    /// Field dumps with one snapshot per time node.
    Files { u: String, v: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_f: f64,
    pub desired: DesiredStates,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            gamma_u: 1.0,
            gamma_v: 1.0,
            gamma_f: 1e-2,
            desired: DesiredStates::Generate { f_star: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionsConfig {
    pub seed: u64,
    /// Write full field dumps next to the reports.
    pub dump_fields: bool,
    pub fd_epsilon: f64,
    pub directions: usize,
    pub transpose_tol: f64,
    pub gradient_tol: f64,
    /// Agreement of the tangent and adjoint directional derivatives.
    pub route_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub grad_tol: f64,
    pub min_step: f64,
    pub barzilai_borwein: bool,
}

impl Default for OptionsConfig {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        OptionsConfig {
            seed: 0,
            dump_fields: false,
            fd_epsilon: 1e-5,
            directions: 20,
            transpose_tol: 1e-10,
            gradient_tol: 1e-5,
            route_tol: 1e-10,
            max_iters: o.max_iters,
            armijo_c: o.armijo_c,
            backtrack_factor: o.backtrack_factor,
            initial_step: o.initial_step,
            grad_tol: o.grad_tol,
            min_step: o.min_step,
            barzilai_borwein: o.barzilai_borwein,
        }
    }
}

impl OptionsConfig {
    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_iters: self.max_iters,
            armijo_c: self.armijo_c,
            backtrack_factor: self.backtrack_factor,
            initial_step: self.initial_step,
            grad_tol: self.grad_tol,
            min_step: self.min_step,
            barzilai_borwein: self.barzilai_borwein,
        }
    }
}

fn check(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(msg))
    }
}

fn positive(x: f64, name: &str) -> Result<()> {
    check(x.is_finite() && x > 0.0, format!("{name} must be positive and finite, got {x}"))
}

impl RunConfig {
    /// Parses and validates a configuration, filling in defaults.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(one_line(&e.to_string())))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    fn resolve(&mut self) -> Result<()> {
        let d = self.grid.dim;
        check((1..=3).contains(&d), format!("grid.dim must be 1, 2 or 3, got {d}"))?;
        check(self.grid.cells.len() == d, "grid.cells needs one entry per dimension")?;
        check(self.grid.extent.len() == d, "grid.extent needs one entry per dimension")?;
        let grid = self.grid()?;
        self.time_grid()?;
        self.model_params()?;

        let lo = self.control.mask_lo.get_or_insert_with(|| vec![0.0; d]).clone();
        let hi = self.control.mask_hi.get_or_insert_with(|| grid.extent().to_vec()).clone();
        check(lo.len() == d && hi.len() == d, "control mask corners need one entry per dimension")?;
        kscontrol::SubdomainMask::from_box(&grid, &lo, &hi).map_err(CliError::from)?;
        self.control.constraint.to_constraints().validate()?;

        for (name, init) in [("initial.u0", &self.initial.u0), ("initial.v0", &self.initial.v0)] {
            match init {
                FieldInit::Constant { value } => check(value.is_finite(), format!("{name}: value must be finite"))?,
                FieldInit::Cosine {
                    mean,
                    amplitude,
                    wavenumbers,
                } => {
                    check(wavenumbers.len() == d, format!("{name}: wavenumbers need one entry per dimension"))?;
                    check(
                        mean.is_finite() && amplitude.is_finite() && wavenumbers.iter().all(|k| k.is_finite()),
                        format!("{name}: parameters must be finite"),
                    )?;
                }
                FieldInit::Random { lo, hi } => {
                    check(lo.is_finite() && hi.is_finite() && lo < hi, format!("{name}: need lo < hi"))?
                }
                FieldInit::File { .. } => {}
            }
        }
        match self.control.initial {
            ControlInit::Constant { value } => check(value.is_finite(), "control.initial value must be finite")?,
            ControlInit::Random { amplitude } => positive(amplitude, "control.initial amplitude")?,
            _ => {}
        }

        let c = &self.cost;
        positive(c.gamma_u, "cost.gamma_u")?;
        check(c.gamma_v.is_finite() && c.gamma_v >= 0.0, "cost.gamma_v must be nonnegative")?;
        check(c.gamma_f.is_finite() && c.gamma_f >= 0.0, "cost.gamma_f must be nonnegative")?;
        check(
            c.gamma_f > 0.0 || self.control.constraint.to_constraints().is_bounded(),
            "cost.gamma_f = 0 requires a box constraint",
        )?;
        if let DesiredStates::Generate { f_star } = c.desired {
            check(f_star.is_finite(), "cost.desired.f_star must be finite")?;
        }

        let o = &self.options;
        positive(o.fd_epsilon, "options.fd_epsilon")?;
        check(o.directions >= 1, "options.directions must be at least 1")?;
        positive(o.transpose_tol, "options.transpose_tol")?;
        positive(o.gradient_tol, "options.gradient_tol")?;
        positive(o.route_tol, "options.route_tol")?;
        o.optimize_options().validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Grid::shared(&self.grid.cells, &self.grid.extent)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.time.final_time, self.time.steps)?)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let mut p = ModelParams::new(m.s, m.alpha, m.q)?;
        positive(m.cg_tol, "model.cg_tol")?;
        check(m.cg_max_iter_factor >= 1, "model.cg_max_iter_factor must be at least 1")?;
        p.cg = CgOptions {
            rel_tol: m.cg_tol,
            max_iter_factor: m.cg_max_iter_factor,
        };
        Ok(p)
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }
}

/// `mean + amplitude * prod cos(...)` evaluated at cell centers.
pub(crate) fn cosine_value(x: &[f64], extent: &[f64], mean: f64, amplitude: f64, k: &[f64]) -> f64 {
    mean + amplitude * (0..x.len()).map(|d| (PI * k[d] * x[d] / extent[d]).cos()).product::<f64>()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
