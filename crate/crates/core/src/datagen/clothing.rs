//! Procedural clothing: a smooth non-negative displacement of the body
//! surface along its vertex normals.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::BodyTemplate;
use crate::geometry::{IndexedMesh, TriMesh};
use crate::{Error, Result, Vec3};

const WAVES: usize = 8;
const ATTEMPTS: usize = 3;
const LOCAL_ROUNDS: usize = 6;
const FOLD_AREA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClothingSpec {
    /// Constant offset as a fraction of body height.
    pub base_offset: f64,
    /// Wrinkle amplitude as a fraction of body height.
    pub wrinkle_amplitude: f64,
    /// Wrinkle frequency in cycles per model unit.
    pub wrinkle_frequency: f64,
    /// Joints whose skinned region stays bare (wrists, hands, feet).
    pub bare_joints: Vec<usize>,
    pub seed: u64,
}

impl Default for ClothingSpec {
    fn default() -> Self {
        Self {
            base_offset: 0.02,
            wrinkle_amplitude: 0.004,
            wrinkle_frequency: 4.0,
            bare_joints: vec![10, 11, 20, 21, 22, 23],
            seed: 0,
        }
    }
}

impl ClothingSpec {
    pub fn none() -> Self {
        Self {
            base_offset: 0.0,
            wrinkle_amplitude: 0.0,
            bare_joints: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.base_offset) || !ok(self.wrinkle_amplitude) || !ok(self.wrinkle_frequency) {
            return Err(Error::Parameter(
                "clothing offsets and frequency must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-vertex clothing coverage in `[0, 1]`: one minus the skin weight the
/// vertex gives to bare joints. Valid for any pose of the template.
pub fn coverage_from_template(template: &BodyTemplate, bare_joints: &[usize]) -> Result<Vec<f64>> {
    let k = template.joint_count();
    if let Some(&j) = bare_joints.iter().find(|&&j| j >= k) {
        return Err(Error::Parameter(format!("bare joint {j} out of range for {k} joints")));
    }
    Ok((0..template.vertex_count())
        .map(|v| {
            let row = template.skin_weight_row(v);
            (1.0 - bare_joints.iter().map(|&j| row[j]).sum::<f64>()).clamp(0.0, 1.0)
        })
        .collect())
}

/// Sum of plane waves with seeded directions and phases, in `[-1, 1]`.
struct Wrinkles {
    waves: Vec<(Vec3, f64)>,
    k: f64,
}

impl Wrinkles {
    fn new(frequency: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..WAVES)
            .map(|_| {
                let d: [f64; 3] = UnitSphere.sample(&mut rng);
                (Vec3::from(d), rng.random_range(0.0..TAU))
            })
            .collect();
        Self {
            waves,
            k: TAU * frequency,
        }
    }

    fn at(&self, p: &Vec3) -> f64 {
        self.waves
            .iter()
            .map(|(d, phase)| (self.k * d.dot(p) + phase).sin())
            .sum::<f64>()
            / WAVES as f64
    }
}

/// Clothes the whole body; see [`synth_clothed_masked`].
pub fn synth_clothed(body: &TriMesh, spec: &ClothingSpec) -> Result<TriMesh> {
    synth_clothed_masked(body, spec, None)
}

/// Displaces every body vertex along its normal by
/// `height * max(0, base + amplitude * wrinkles(p)) * coverage`.
///
/// Offsets are capped where other body parts are close and their slope is
/// bounded. Where the displaced surface still folds or crosses itself the
/// offsets are halved locally, a few rounds; if that does not clear it,
/// all offsets are halved and the attempt repeated.
pub fn synth_clothed_masked(body: &TriMesh, spec: &ClothingSpec, coverage: Option<&[f64]>) -> Result<TriMesh> {
    spec.validate()?;
    if !body.is_watertight() {
        return Err(Error::Mesh("clothing needs a watertight body".into()));
    }
    if let Some(c) = coverage {
        if c.len() != body.vertex_count() {
            return Err(Error::Parameter(format!(
                "coverage has {} entries for {} vertices",
                c.len(),
                body.vertex_count()
            )));
        }
    }
    let height = body.bounds().extent().max();
    let wrinkles = Wrinkles::new(spec.wrinkle_frequency, spec.seed);
    let offsets: Vec<f64> = body
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let raw = spec.base_offset + spec.wrinkle_amplitude * wrinkles.at(&p.coords);
            height * raw.max(0.0) * coverage.map_or(1.0, |c| c[i])
        })
        .collect();
    if offsets.iter().all(|&d| d == 0.0) {
        return Ok(body.clone());
    }
    let body_index = IndexedMesh::new(body.clone());
    let offsets = limit_offsets(body, &body_index, offsets);

    let mut scale = 1.0;
    let mut reason = String::new();
    for attempt in 0..ATTEMPTS {
        let mut d: Vec<f64> = offsets.iter().map(|x| x * scale).collect();
        for _ in 0..LOCAL_ROUNDS {
            let scan = displace(body, &d)?;
            let defects = find_defects(body, &body_index, &d, &scan);
            if defects.acceptable() {
                return Ok(scan);
            }
            reason = defects.describe();
            for &v in &defects.vertices {
                d[v] *= 0.5;
            }
            slope_limit(body, &mut d);
        }
        log::debug!("clothing attempt {attempt} rejected: {reason}");
        scale *= 0.5;
    }
    Err(Error::Mesh(format!(
        "clothing rejected after {ATTEMPTS} attempts: {reason}"
    )))
}

fn displace(body: &TriMesh, offsets: &[f64]) -> Result<TriMesh> {
    let moved = body
        .vertices()
        .iter()
        .zip(body.normals())
        .zip(offsets)
        .map(|((p, n), d)| p + n * *d)
        .collect();
    body.with_positions(moved)
}

/// Caps each offset by the free space along the vertex normal, so that
/// opposite surfaces (between the legs, under the arms) each take less than
/// half of the gap, then bounds the offset slope across edges.
fn limit_offsets(body: &TriMesh, index: &IndexedMesh, offsets: Vec<f64>) -> Vec<f64> {
    // A point at height t above its own surface is at least COS_FACET * t
    // from it on a faceted convex patch; a smaller distance means other
    // geometry is approaching.
    const COS_FACET: f64 = 0.75;
    const SHARE: f64 = 0.8;
    let clear = |p: &crate::Point3, n: &Vec3, t: f64| {
        index
            .closest_point(&(p + n * t))
            .map_or(true, |c| c.distance >= COS_FACET * t)
    };
    let mut d: Vec<f64> = body
        .vertices()
        .par_iter()
        .zip(body.normals())
        .zip(&offsets)
        .map(|((p, n), &d)| {
            if d == 0.0 {
                return d;
            }
            // Clearance is not monotone along the ray: once inside other
            // geometry the distance grows again. Approaching geometry fails
            // the test over a span of several doublings, so march by
            // doubling and bisect below the first failure.
            let top = d / SHARE;
            let mut hi = None;
            let mut lo = 0.0;
            for k in (0..=12).rev() {
                let t = top / f64::from(1u32 << k);
                if clear(p, n, t) {
                    lo = t;
                } else {
                    hi = Some(t);
                    break;
                }
            }
            let Some(mut hi) = hi else {
                return d;
            };
            for _ in 0..12 {
                let mid = 0.5 * (lo + hi);
                if clear(p, n, mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            SHARE * lo
        })
        .collect();
    slope_limit(body, &mut d);
    d
}

/// Lowers offsets until no edge changes by more than `SLOPE` times its
/// length.
fn slope_limit(body: &TriMesh, d: &mut [f64]) {
    const SLOPE: f64 = 0.5;
    let v = body.vertices();
    let edges: Vec<(usize, usize, f64)> = body
        .faces()
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .map(|(a, b)| (a, b, SLOPE * (v[a] - v[b]).norm()))
        .collect();
    for _ in 0..v.len() {
        let mut changed = false;
        for &(a, b, cap) in &edges {
            if d[a] > d[b] + cap {
                d[a] = d[b] + cap;
                changed = true;
            } else if d[b] > d[a] + cap {
                d[b] = d[a] + cap;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// `4 sqrt(3) area / sum of squared edges`: 1 for an equilateral triangle,
/// 0 for a degenerate one.
fn shape_quality(mesh: &TriMesh, f: usize) -> f64 {
    let [a, b, c] = mesh.triangle(f);
    let e2 = (b - a).norm_squared() + (c - b).norm_squared() + (a - c).norm_squared();
    if e2 == 0.0 {
        return 0.0;
    }
    4.0 * 3f64.sqrt() * mesh.face_area(f) / e2
}

struct Defects {
    flipped_fraction: f64,
    crossings: usize,
    /// Vertices of flipped faces and of crossings.
    vertices: Vec<usize>,
}

impl Defects {
    fn acceptable(&self) -> bool {
        self.flipped_fraction <= FOLD_AREA && self.crossings == 0
    }

    fn describe(&self) -> String {
        if self.crossings > 0 {
            format!("scan passes through itself at {} vertices", self.crossings)
        } else {
            format!("flipped faces cover {:.2e} of the area", self.flipped_fraction)
        }
    }
}

/// Folds and self-crossings of the displaced surface.
///
/// A face is folded when its orientation reversed; slivers from the body
/// mesher and from skinning flip under any displacement without visible
/// effect and are not counted. Crossing is probed halfway between each
/// body vertex and its displaced copy: there the scan should wrap the point
/// exactly once more than the body does, and twice more where the scan
/// passes through itself.
fn find_defects(body: &TriMesh, body_index: &IndexedMesh, offsets: &[f64], scan: &TriMesh) -> Defects {
    const MIN_QUALITY: f64 = 0.2;
    let mut vertices = Vec::new();
    let mut flipped = 0.0;
    for f in 0..body.face_count() {
        if body.face_area_vector(f).dot(&scan.face_area_vector(f)) <= 0.0 {
            vertices.extend_from_slice(&body.faces()[f]);
            if shape_quality(body, f) >= MIN_QUALITY {
                flipped += scan.face_area(f);
            }
        }
    }
    let index = IndexedMesh::new(scan.clone());
    let crossing: Vec<usize> = body
        .vertices()
        .par_iter()
        .zip(body.normals())
        .zip(offsets)
        .enumerate()
        .filter(|(_, ((p, n), &d))| {
            if d <= 0.0 {
                return false;
            }
            let q = *p + *n * (0.5 * d);
            index.winding_number(&q) - body_index.winding_number(&q) > 1.5
        })
        .map(|(i, _)| i)
        .collect();
    let crossings = crossing.len();
    vertices.extend(crossing);
    vertices.sort_unstable();
    vertices.dedup();
    Defects {
        flipped_fraction: flipped / scan.area(),
        crossings,
        vertices,
    }
}
