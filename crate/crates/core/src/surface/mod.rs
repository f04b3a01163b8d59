//! Occupancy grids and iso-surface extraction.
//!
//! A grid with `R` cells per axis stores the field at `(R + 1)^3` lattice
//! points. Dense mode evaluates every point; octree mode starts on a coarse
//! lattice and only subdivides cells whose corners straddle the iso-level
//! (plus one cell of dilation), filling skipped points by trilinear
//! interpolation of the coarse corners.

mod extract;
mod tables;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use extract::marching_cubes;

use crate::features::{feature_matrix, FeatureContext};
use crate::geometry::Aabb;
use crate::implicit_net::OccupancyMlp;
use crate::{Error, Point3, Result, Vec3};

/// Largest resolution accepted without streaming.
pub const MAX_RESOLUTION: usize = 512;
/// Default iso-level for occupancy fields.
pub const ISO_LEVEL: f64 = 0.5;
/// Grid padding around the body as a fraction of its largest extent; leaves
/// room for clothing.
pub const BODY_PADDING: f64 = 0.15;
/// Default coarse lattice resolution for octree evaluation.
pub const DEFAULT_OCTREE_BASE: usize = 32;

const EVAL_CHUNK: usize = 1 << 16;

/// Anything that can be sampled at a batch of points.
pub trait OccupancyField: Sync {
    fn eval_batch(&self, points: &[Point3]) -> Result<Vec<f64>>;
}

impl<F> OccupancyField for F
where
    F: Fn(&Point3) -> f64 + Sync,
{
    fn eval_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        Ok(points.par_iter().map(self).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Dense,
    Octree,
}

/// Scalar samples on a regular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    cells: [usize; 3],
    origin: Point3,
    spacing: Vec3,
    values: Vec<f64>,
    evaluated: usize,
}

impl OccupancyGrid {
    /// Wraps precomputed lattice values (x fastest, then y, then z).
    pub fn from_values(bounds: &Aabb, cells: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if cells.iter().any(|&c| c == 0) || bounds.is_empty() {
            return Err(Error::Parameter("grid needs non-empty bounds and cells".into()));
        }
        let count = cells.iter().map(|c| c + 1).product::<usize>();
        if values.len() != count {
            return Err(Error::Parameter(format!(
                "grid expects {count} values, got {}",
                values.len()
            )));
        }
        let e = bounds.extent();
        let spacing = Vec3::new(
            e.x / cells[0] as f64,
            e.y / cells[1] as f64,
            e.z / cells[2] as f64,
        );
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter("grid bounds must have positive extent".into()));
        }
        Ok(Self {
            cells,
            origin: bounds.min,
            spacing,
            values,
            evaluated: count,
        })
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(bounds: &Aabb, cells: [usize; 3], f: impl Fn(&Point3) -> f64 + Sync) -> Result<Self> {
        let mut grid = Self::from_values(
            bounds,
            cells,
            vec![0.0; cells.iter().map(|c| c + 1).product()],
        )?;
        let points = grid.lattice_points();
        grid.values = points.par_iter().map(|p| f(p)).collect();
        Ok(grid)
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.spacing.norm()
    }

    pub fn bounds(&self) -> Aabb {
        let max = self.origin
            + Vec3::new(
                self.spacing.x * self.cells[0] as f64,
                self.spacing.y * self.cells[1] as f64,
                self.spacing.z * self.cells[2] as f64,
            );
        Aabb {
            min: self.origin,
            max,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point_count(&self) -> usize {
        self.values.len()
    }

    /// Number of lattice points where the field was actually queried.
    pub fn evaluated_count(&self) -> usize {
        self.evaluated
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.dims();
        (k * ny + j) * nx + i
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.origin
            + Vec3::new(
                i as f64 * self.spacing.x,
                j as f64 * self.spacing.y,
                k as f64 * self.spacing.z,
            )
    }

    fn lattice_points(&self) -> Vec<Point3> {
        let [nx, ny, nz] = self.dims();
        let mut pts = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    pts.push(self.point(i, j, k));
                }
            }
        }
        pts
    }
}

/// Occupancy predicted by a trained net from the local features of one
/// subject.
#[derive(Debug, Clone, Copy)]
pub struct NetField<'a> {
    pub net: &'a OccupancyMlp,
    pub ctx: &'a FeatureContext,
}

impl OccupancyField for NetField<'_> {
    fn eval_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        let x = feature_matrix(self.ctx, points)?;
        Ok(self.net.forward_batch(x.view())?.to_vec())
    }
}

/// Evaluates `net` on a cube around the context's body padded by
/// [`BODY_PADDING`].
pub fn evaluate_net(
    net: &OccupancyMlp,
    ctx: &FeatureContext,
    resolution: usize,
    mode: GridMode,
) -> Result<OccupancyGrid> {
    let bounds = cube_bounds(&ctx.body().mesh().bounds(), BODY_PADDING);
    evaluate_grid(&NetField { net, ctx }, &bounds, resolution, mode)
}

/// Cube centred on `bounds` whose side is the largest extent grown by
/// `padding` on each side (as a fraction of that extent).
pub fn cube_bounds(bounds: &Aabb, padding: f64) -> Aabb {
    let e = bounds.extent();
    let half = 0.5 * e.x.max(e.y).max(e.z) * (1.0 + 2.0 * padding);
    let c = bounds.center();
    Aabb {
        min: c - Vec3::repeat(half),
        max: c + Vec3::repeat(half),
    }
}

/// Evaluates `field` on an `R^3`-cell lattice over `bounds`.
pub fn evaluate_grid<F: OccupancyField + ?Sized>(
    field: &F,
    bounds: &Aabb,
    resolution: usize,
    mode: GridMode,
) -> Result<OccupancyGrid> {
    match mode {
        GridMode::Dense => evaluate_dense(field, bounds, resolution),
        GridMode::Octree => evaluate_octree(field, bounds, resolution, DEFAULT_OCTREE_BASE, ISO_LEVEL),
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution == 0 {
        return Err(Error::Parameter("grid resolution must be positive".into()));
    }
    if resolution > MAX_RESOLUTION {
        return Err(Error::Parameter(format!(
            "grid resolution {resolution} exceeds {MAX_RESOLUTION}; streaming evaluation is not supported"
        )));
    }
    Ok(())
}

fn eval_points<F: OccupancyField + ?Sized>(field: &F, points: &[Point3]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(EVAL_CHUNK) {
        let vals = field.eval_batch(chunk)?;
        if vals.len() != chunk.len() {
            return Err(Error::Evaluation(format!(
                "field returned {} values for {} points",
                vals.len(),
                chunk.len()
            )));
        }
        if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "field is not finite at {:?}",
                chunk[bad]
            )));
        }
        out.extend(vals);
    }
    Ok(out)
}

pub fn evaluate_dense<F: OccupancyField + ?Sized>(
    field: &F,
    bounds: &Aabb,
    resolution: usize,
) -> Result<OccupancyGrid> {
    check_resolution(resolution)?;
    let cells = [resolution; 3];
    let mut grid = OccupancyGrid::from_values(bounds, cells, vec![0.0; (resolution + 1).pow(3)])?;
    let points = grid.lattice_points();
    grid.values = eval_points(field, &points)?;
    Ok(grid)
}

/// Coarse-to-fine evaluation starting from a `base`-cell lattice.
pub fn evaluate_octree<F: OccupancyField + ?Sized>(
    field: &F,
    bounds: &Aabb,
    resolution: usize,
    base: usize,
    iso: f64,
) -> Result<OccupancyGrid> {
    check_resolution(resolution)?;
    if !resolution.is_power_of_two() || !base.is_power_of_two() {
        return Err(Error::Parameter(format!(
            "octree evaluation needs power-of-two resolution and base, got {resolution} and {base}"
        )));
    }
    let n = resolution + 1;
    let cells = [resolution; 3];
    let mut grid = OccupancyGrid::from_values(bounds, cells, vec![0.0; n * n * n])?;
    // 0 unknown, 1 evaluated, 2 interpolated
    let mut state = vec![0u8; n * n * n];
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    let mut stride = resolution / base.min(resolution);
    let mut batch = Vec::new();
    let mut batch_idx = Vec::new();
    for k in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            for i in (0..n).step_by(stride) {
                batch.push(grid.point(i, j, k));
                batch_idx.push(idx(i, j, k));
            }
        }
    }
    let vals = eval_points(field, &batch)?;
    for (&ix, v) in batch_idx.iter().zip(vals) {
        grid.values[ix] = v;
        state[ix] = 1;
    }

    while stride > 1 {
        let half = stride / 2;
        let m = resolution / stride;
        let cell = |a: usize, b: usize, c: usize| (c * m + b) * m + a;
        let mut straddle = vec![false; m * m * m];
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    let mut inside = 0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = grid.values
                                    [idx((a + dx) * stride, (b + dy) * stride, (c + dz) * stride)];
                                if v > iso {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    straddle[cell(a, b, c)] = inside != 0 && inside != 8;
                }
            }
        }
        let mut marked = vec![false; m * m * m];
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    if !straddle[cell(a, b, c)] {
                        continue;
                    }
                    for cc in c.saturating_sub(1)..(c + 2).min(m) {
                        for bb in b.saturating_sub(1)..(b + 2).min(m) {
                            for aa in a.saturating_sub(1)..(a + 2).min(m) {
                                marked[cell(aa, bb, cc)] = true;
                            }
                        }
                    }
                }
            }
        }

        batch.clear();
        batch_idx.clear();
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    if !marked[cell(a, b, c)] {
                        continue;
                    }
                    for dz in 0..3 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (i, j, k) =
                                    (a * stride + dx * half, b * stride + dy * half, c * stride + dz * half);
                                let ix = idx(i, j, k);
                                if state[ix] == 0 {
                                    state[ix] = 1;
                                    batch.push(grid.point(i, j, k));
                                    batch_idx.push(ix);
                                }
                            }
                        }
                    }
                }
            }
        }
        let vals = eval_points(field, &batch)?;
        for (&ix, v) in batch_idx.iter().zip(vals) {
            grid.values[ix] = v;
        }

        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    if marked[cell(a, b, c)] {
                        continue;
                    }
                    let corner = |dx: usize, dy: usize, dz: usize| {
                        grid.values[idx((a + dx) * stride, (b + dy) * stride, (c + dz) * stride)]
                    };
                    let cv = [
                        corner(0, 0, 0),
                        corner(1, 0, 0),
                        corner(0, 1, 0),
                        corner(1, 1, 0),
                        corner(0, 0, 1),
                        corner(1, 0, 1),
                        corner(0, 1, 1),
                        corner(1, 1, 1),
                    ];
                    for dz in 0..3 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (i, j, k) =
                                    (a * stride + dx * half, b * stride + dy * half, c * stride + dz * half);
                                let ix = idx(i, j, k);
                                if state[ix] == 0 {
                                    state[ix] = 2;
                                    let (fx, fy, fz) =
                                        (dx as f64 * 0.5, dy as f64 * 0.5, dz as f64 * 0.5);
                                    grid.values[ix] = trilinear(&cv, fx, fy, fz);
                                }
                            }
                        }
                    }
                }
            }
        }
        stride = half;
    }
    grid.evaluated = state.iter().filter(|&&s| s == 1).count();
    debug_assert!(state.iter().all(|&s| s != 0));
    Ok(grid)
}

fn trilinear(c: &[f64; 8], x: f64, y: f64, z: f64) -> f64 {
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let y0 = lerp(lerp(c[0], c[1], x), lerp(c[2], c[3], x), y);
    let y1 = lerp(lerp(c[4], c[5], x), lerp(c[6], c[7], x), y);
    lerp(y0, y1, z)
}
