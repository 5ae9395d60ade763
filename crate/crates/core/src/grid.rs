//! Uniform cell-centered grids on axis-aligned boxes with homogeneous
//! Neumann (no-flux) boundaries.
//!
//! Cell values are stored row-major: axis 0 varies slowest. Face arrays for
//! axis `k` use the same layout with `cells[k] + 1` entries along `k`; the
//! first and last face along each axis are boundary faces and stay zero.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Uniform rectangular grid in one, two or three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    extent: [f64; 3],
    spacing: [f64; 3],
    cell_volume: f64,
}

impl Grid {
    pub fn new(cells: &[usize], extent: &[f64]) -> Result<Grid> {
        let dim = cells.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        if extent.len() != dim {
            return Err(Error::invalid(format!(
                "{} extents given for a {dim}-dimensional grid",
                extent.len()
            )));
        }
        let mut c = [1usize; 3];
        let mut e = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        for k in 0..dim {
            if cells[k] == 0 {
                return Err(Error::invalid(format!("axis {k} has zero cells")));
            }
            if !(extent[k].is_finite() && extent[k] > 0.0) {
                return Err(Error::invalid(format!("axis {k} extent must be positive, got {}", extent[k])));
            }
            c[k] = cells[k];
            e[k] = extent[k];
            h[k] = extent[k] / cells[k] as f64;
        }
        let cell_volume = h[..dim].iter().product();
        Ok(Grid {
            dim,
            cells: c,
            extent: e,
            spacing: h,
            cell_volume,
        })
    }

    /// Convenience constructor returning a shared handle.
    pub fn shared(cells: &[usize], extent: &[f64]) -> Result<Arc<Grid>> {
        Grid::new(cells, extent).map(Arc::new)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn num_cells(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.extent[..self.dim].iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `(outer, n, inner)` block sizes used to walk axis `k`.
    fn axis_layout(&self, k: usize) -> (usize, usize, usize) {
        let outer: usize = self.cells[..k].iter().product();
        let inner: usize = self.cells[k + 1..self.dim].iter().product();
        (outer, self.cells[k], inner)
    }

    /// Number of faces normal to axis `k`, boundary faces included.
    pub fn face_len(&self, k: usize) -> usize {
        let (outer, n, inner) = self.axis_layout(k);
        outer * (n + 1) * inner
    }

    /// Visits every interior face normal to axis `k` as
    /// `(face_index, left_cell, right_cell)`.
    pub(crate) fn for_each_interior_face(&self, k: usize, mut visit: impl FnMut(usize, usize, usize)) {
        let (outer, n, inner) = self.axis_layout(k);
        for o in 0..outer {
            for p in 1..n {
                let face_base = (o * (n + 1) + p) * inner;
                let left_base = (o * n + p - 1) * inner;
                let right_base = left_base + inner;
                for i in 0..inner {
                    visit(face_base + i, left_base + i, right_base + i);
                }
            }
        }
    }

    /// Visits every boundary face normal to axis `k`.
    fn for_each_boundary_face(&self, k: usize, mut visit: impl FnMut(usize)) {
        let (outer, n, inner) = self.axis_layout(k);
        for o in 0..outer {
            for p in [0, n] {
                let base = (o * (n + 1) + p) * inner;
                for i in 0..inner {
                    visit(base + i);
                }
            }
        }
    }

    /// Cell-center coordinates of cell `idx`.
    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rem = idx;
        for k in (0..self.dim).rev() {
            let c = rem % self.cells[k];
            rem /= self.cells[k];
            x[k] = (c as f64 + 0.5) * self.spacing[k];
        }
        x
    }

    pub(crate) fn gradient_into(&self, w: &[f64], faces: &mut [Vec<f64>]) {
        for k in 0..self.dim {
            let out = &mut faces[k];
            out.clear();
            out.resize(self.face_len(k), 0.0);
            let h = self.spacing[k];
            self.for_each_interior_face(k, |f, l, r| out[f] = (w[r] - w[l]) / h);
        }
    }

    /// Accumulates `scale * div(faces)` into `out`.
    pub(crate) fn add_divergence(&self, faces: &[Vec<f64>], scale: f64, out: &mut [f64]) {
        for k in 0..self.dim {
            let flux = &faces[k];
            let h = self.spacing[k];
            self.for_each_interior_face(k, |f, l, r| {
                let q = scale * flux[f] / h;
                out[l] += q;
                out[r] -= q;
            });
        }
    }

    /// Accumulates `scale * laplacian(w)` into `out`.
    pub(crate) fn add_laplacian(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        for k in 0..self.dim {
            let h = self.spacing[k];
            self.for_each_interior_face(k, |_, l, r| {
                let q = scale * ((w[r] - w[l]) / h) / h;
                out[l] += q;
                out[r] -= q;
            });
        }
    }

    /// Volume-weighted dot product of two cell arrays.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Volume-weighted dot product of two face arrays (interior faces only).
    pub fn face_dot(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.dim {
            acc += a[k].iter().zip(&b[k]).map(|(x, y)| x * y).sum::<f64>();
        }
        self.cell_volume * acc
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite value at cell {i}"))),
        None => Ok(()),
    }
}

/// One real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::invalid(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.num_cells()
            )));
        }
        check_finite(&values)?;
        Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Internal constructor for values known to be finite and sized.
    pub(crate) fn from_raw(grid: &Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_cells());
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        assert!(c.is_finite(), "constant field value must be finite");
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![c; grid.num_cells()],
        }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_cells())
            .map(|i| {
                let x = grid.cell_center(i);
                f(&x[..grid.dim()])
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Volume-weighted dot product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.grid.dot(&self.values, &other.values)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<ScalarField> {
        Self::new(&self.grid, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, mut f: impl FnMut(f64, f64) -> f64) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        Self::new(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::Misaligned("fields live on different grids".into()))
    }
}

/// Values on cell faces, one array per axis. Boundary faces are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Arc<Grid>,
    faces: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        VectorField {
            grid: Arc::clone(grid),
            faces: (0..grid.dim()).map(|k| vec![0.0; grid.face_len(k)]).collect(),
        }
    }

    /// Builds a face field; rejects nonzero boundary faces.
    pub fn new(grid: &Arc<Grid>, faces: Vec<Vec<f64>>) -> Result<Self> {
        if faces.len() != grid.dim() {
            return Err(Error::invalid("one face array per axis required"));
        }
        for (k, arr) in faces.iter().enumerate() {
            if arr.len() != grid.face_len(k) {
                return Err(Error::invalid(format!(
                    "axis {k}: {} face values, expected {}",
                    arr.len(),
                    grid.face_len(k)
                )));
            }
            check_finite(arr)?;
            let mut bad = false;
            grid.for_each_boundary_face(k, |f| bad |= arr[f] != 0.0);
            if bad {
                return Err(Error::invalid(format!("axis {k}: nonzero boundary face value")));
            }
        }
        Ok(VectorField {
            grid: Arc::clone(grid),
            faces,
        })
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, faces: Vec<Vec<f64>>) -> Self {
        VectorField {
            grid: Arc::clone(grid),
            faces,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.faces[k]
    }

    pub fn faces(&self) -> &[Vec<f64>] {
        &self.faces
    }

    pub fn max_abs(&self) -> f64 {
        self.faces
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Volume-weighted sum of squared face values.
    pub fn norm_sq(&self) -> f64 {
        self.grid.face_dot(&self.faces, &self.faces)
    }
}

/// Indicator of the control subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    grid: Arc<Grid>,
    indicator: Vec<bool>,
}

impl SubdomainMask {
    pub fn new(grid: &Arc<Grid>, indicator: Vec<bool>) -> Result<Self> {
        if indicator.len() != grid.num_cells() {
            return Err(Error::invalid("mask length does not match grid"));
        }
        if !indicator.iter().any(|&b| b) {
            return Err(Error::invalid("control mask is empty"));
        }
        Ok(SubdomainMask {
            grid: Arc::clone(grid),
            indicator,
        })
    }

    pub fn full(grid: &Arc<Grid>) -> Self {
        SubdomainMask {
            grid: Arc::clone(grid),
            indicator: vec![true; grid.num_cells()],
        }
    }

    /// Cells whose centers lie in the closed box `[lo, hi]`.
    pub fn from_box(grid: &Arc<Grid>, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let d = grid.dim();
        if lo.len() != d || hi.len() != d {
            return Err(Error::invalid("mask box corners must have one entry per axis"));
        }
        let indicator = (0..grid.num_cells())
            .map(|i| {
                let x = grid.cell_center(i);
                (0..d).all(|k| x[k] >= lo[k] && x[k] <= hi[k])
            })
            .collect();
        Self::new(grid, indicator)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.indicator[idx]
    }

    pub fn volume(&self) -> f64 {
        self.indicator.iter().filter(|&&b| b).count() as f64 * self.grid.cell_volume()
    }

    /// Zeroes `values` off the mask.
    pub(crate) fn restrict(&self, values: &mut [f64]) {
        for (v, &m) in values.iter_mut().zip(&self.indicator) {
            if !m {
                *v = 0.0;
            }
        }
    }
}

/// Discrete Neumann Laplacian with mirrored ghost cells.
pub fn laplacian_neumann(w: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; w.values.len()];
    w.grid.add_laplacian(&w.values, 1.0, &mut out);
    ScalarField::from_raw(&w.grid, out)
}

/// Two-point differences on interior faces, zero on boundary faces.
pub fn face_gradient(w: &ScalarField) -> VectorField {
    let mut faces = vec![Vec::new(); w.grid.dim()];
    w.grid.gradient_into(&w.values, &mut faces);
    VectorField::from_raw(&w.grid, faces)
}

/// Conservative divergence of a face flux.
pub fn div_face_flux(flux: &VectorField) -> ScalarField {
    let grid = &flux.grid;
    let mut out = vec![0.0; grid.num_cells()];
    grid.add_divergence(&flux.faces, 1.0, &mut out);
    ScalarField::from_raw(grid, out)
}

/// Midpoint quadrature over the domain.
pub fn integrate(w: &ScalarField) -> f64 {
    w.grid.cell_volume() * w.values.iter().sum::<f64>()
}

/// Discrete `L^p(Omega)` norm; pass `f64::INFINITY` for the max norm.
pub fn lp_space_norm(w: &ScalarField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(lp_norm_slice(w.values(), w.grid.cell_volume(), p))
}

pub(crate) fn lp_norm_slice(values: &[f64], vol: f64, p: f64) -> f64 {
    if p == f64::INFINITY {
        values.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        vol * values.iter().map(|x| x.abs()).sum::<f64>()
    } else if p == 2.0 {
        (vol * values.iter().map(|x| x * x).sum::<f64>()).sqrt()
    } else {
        (vol * values.iter().map(|x| x.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        Err(Error::invalid(format!("norm exponent must be >= 1, got {p}")))
    } else {
        Ok(())
    }
}

/// Discrete `L^{p_time}(0,T; L^{p_space}(Omega))` norm of a uniformly spaced
/// series, rectangle rule in time (every snapshot carries weight `dt`).
pub fn bochner_norm(series: &[ScalarField], p_time: f64, p_space: f64, dt: f64) -> Result<f64> {
    check_exponent(p_time)?;
    check_exponent(p_space)?;
    if series.is_empty() {
        return Err(Error::invalid("empty time series"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let spatial = series.iter().map(|w| lp_norm_slice(w.values(), w.grid.cell_volume(), p_space));
    if p_time == f64::INFINITY {
        Ok(spatial.fold(0.0, f64::max))
    } else {
        let sum: f64 = spatial.map(|n| dt * n.powf(p_time)).sum();
        Ok(sum.powf(1.0 / p_time))
    }
}
