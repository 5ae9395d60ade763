#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use kscontrol::{ControlField, Grid, ModelParams, ScalarField, SubdomainMask, TimeGrid, Trajectory};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `base + sum of a few low cosine modes`, positive for `amp < base / modes`.
pub fn smooth_field(grid: &Arc<Grid>, rng: &mut TestRng, base: f64, amp: f64) -> ScalarField {
    let dim = grid.dim();
    let modes: Vec<(Vec<f64>, f64)> = (0..3)
        .map(|_| {
            let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(0..3) as f64).collect();
            (k, rng.gen_range(-amp..amp))
        })
        .collect();
    let ext = grid.extent().to_vec();
    ScalarField::from_fn(grid, |x| {
        base + modes
            .iter()
            .map(|(k, a)| a * (0..x.len()).map(|d| (PI * k[d] * x[d] / ext[d]).cos()).product::<f64>())
            .sum::<f64>()
    })
    .unwrap()
}

pub fn random_field(grid: &Arc<Grid>, rng: &mut TestRng, lo: f64, hi: f64) -> ScalarField {
    ScalarField::new(grid, (0..grid.num_cells()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_series(grid: &Arc<Grid>, rng: &mut TestRng, nodes: usize, lo: f64, hi: f64) -> Vec<ScalarField> {
    (0..nodes).map(|_| random_field(grid, rng, lo, hi)).collect()
}

/// Control values bounded away from zero so finite differences never cross
/// the sign switch of the splitting.
pub fn random_control(tg: TimeGrid, mask: &SubdomainMask, rng: &mut TestRng, amp: f64) -> ControlField {
    let grid = mask.grid();
    let f = (0..tg.nodes())
        .map(|_| {
            let vals = (0..grid.num_cells())
                .map(|_| {
                    let m = rng.gen_range(0.2 * amp..amp);
                    if rng.gen_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            ScalarField::new(grid, vals).unwrap()
        })
        .collect();
    ControlField::new(tg, mask.clone(), f).unwrap()
}

pub fn random_direction(tg: TimeGrid, mask: &SubdomainMask, rng: &mut TestRng) -> ControlField {
    let grid = mask.grid();
    ControlField::new(tg, mask.clone(), random_series(grid, rng, tg.nodes(), -1.0, 1.0)).unwrap()
}

pub fn random_grid(rng: &mut TestRng, max_side: usize, max_dim: usize) -> Arc<Grid> {
    let dim = rng.gen_range(1..=max_dim);
    let cells: Vec<usize> = (0..dim).map(|_| rng.gen_range(4..=max_side)).collect();
    let extent: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.8..1.5)).collect();
    Grid::shared(&cells, &extent).unwrap()
}

pub fn random_mask(grid: &Arc<Grid>, rng: &mut TestRng) -> SubdomainMask {
    let lo: Vec<f64> = grid.extent().iter().map(|e| rng.gen_range(0.0..0.4) * e).collect();
    let hi: Vec<f64> = grid.extent().iter().zip(&lo).map(|(e, l)| l + rng.gen_range(0.4..0.6) * e).collect();
    SubdomainMask::from_box(grid, &lo, &hi).unwrap_or_else(|_| SubdomainMask::full(grid))
}

/// A random problem instance with its base trajectory.
pub struct Instance {
    pub grid: Arc<Grid>,
    pub tg: TimeGrid,
    pub params: ModelParams,
    pub mask: SubdomainMask,
    pub u0: ScalarField,
    pub v0: ScalarField,
    pub f: ControlField,
    pub traj: Trajectory,
}

pub fn instance(rng: &mut TestRng, grid: Arc<Grid>, steps: usize, final_time: f64, s: f64) -> Instance {
    let tg = TimeGrid::new(final_time, steps).unwrap();
    let params = ModelParams::new(s, 1e-4, 3.0).unwrap();
    let mask = random_mask(&grid, rng);
    let u0 = smooth_field(&grid, rng, 1.0, 0.3);
    let v0 = smooth_field(&grid, rng, 1.0, 0.3);
    let f = random_control(tg, &mask, rng, 1.0);
    let traj = kscontrol::forward::solve_forward(&u0, &v0, &f, &params).unwrap();
    Instance {
        grid,
        tg,
        params,
        mask,
        u0,
        v0,
        f,
        traj,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}
