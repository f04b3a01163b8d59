//! Reconstruction metrics: bidirectional point-to-surface Chamfer distance,
//! one-directional scan-to-reconstruction P2S, normal-image error over fixed
//! viewpoints, and the per-pixel L1 normal-map loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_surface, Aabb, IndexedMesh, TriMesh};
use crate::render::{render_normal_map, Camera, NormalMap};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_YAWS_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// Sum whose rounding does not depend on how work was split.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 64 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean unsigned distance from points sampled on `from` to the surface of
/// `to`.
pub fn directed_distance(from: &TriMesh, to: &IndexedMesh, n_samples: usize, seed: u64) -> Result<f64> {
    if to.mesh().is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n_samples == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    let samples = sample_surface(from, n_samples, seed)?;
    let d = samples
        .par_iter()
        .map(|s| to.closest_point(&s.point).map(|c| c.distance))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&d) / d.len() as f64)
}

/// Both directional terms; sampling on either mesh uses the same seed.
pub fn chamfer_terms(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let ia = IndexedMesh::new(a.clone());
    let ib = IndexedMesh::new(b.clone());
    Ok((
        directed_distance(a, &ib, n_samples, seed)?,
        directed_distance(b, &ia, n_samples, seed)?,
    ))
}

pub fn chamfer(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    let (ab, ba) = chamfer_terms(a, b, n_samples, seed)?;
    Ok(0.5 * (ab + ba))
}

/// Scan-to-reconstruction distance; holes in the scan do not count.
pub fn p2s(scan: &TriMesh, recon: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    if scan.is_empty() || recon.is_empty() {
        return Err(Error::EmptyMesh);
    }
    directed_distance(scan, &IndexedMesh::new(recon.clone()), n_samples, seed)
}

/// Per-pixel L1 distance between normal maps (background counts as the
/// zero vector), averaged over all pixels.
pub fn l_pixel(a: &NormalMap, b: &NormalMap) -> Result<f64> {
    a.same_size(b)?;
    let per: Vec<f64> = a
        .normals
        .iter()
        .zip(&b.normals)
        .enumerate()
        .map(|(i, (na, nb))| {
            let va = if a.is_foreground_at(i) { *na } else { Default::default() };
            let vb = if b.is_foreground_at(i) { *nb } else { Default::default() };
            (va - vb).abs().sum()
        })
        .collect();
    Ok(pairwise_sum(&per) / per.len() as f64)
}

/// Mean of [`l_pixel`] over several view pairs.
pub fn l_pixel_views(pairs: &[(&NormalMap, &NormalMap)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Parameter("no views".into()));
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        total += l_pixel(a, b)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean per-pixel L2 difference over the union of foregrounds of two normal
/// maps; `None` if both are empty.
pub fn normal_map_error(a: &NormalMap, b: &NormalMap) -> Result<Option<f64>> {
    a.same_size(b)?;
    let per: Vec<f64> = (0..a.normals.len())
        .filter(|&i| a.is_foreground_at(i) || b.is_foreground_at(i))
        .map(|i| {
            let va = if a.is_foreground_at(i) { a.normals[i] } else { Default::default() };
            let vb = if b.is_foreground_at(i) { b.normals[i] } else { Default::default() };
            (va - vb).norm()
        })
        .collect();
    if per.is_empty() {
        return Ok(None);
    }
    Ok(Some(pairwise_sum(&per) / per.len() as f64))
}

/// Camera framing both meshes, for comparing their normal images.
pub fn comparison_camera(a: &TriMesh, b: &TriMesh, size: usize) -> Camera {
    let bounds = a.bounds().merge(&b.bounds());
    Camera::fit(&bounds, size, size, 0.1)
}

/// Normal-image error averaged over views yawed about the camera target.
pub fn normal_image_error(a: &TriMesh, b: &TriMesh, camera: &Camera, yaws_deg: &[f64]) -> Result<f64> {
    if yaws_deg.is_empty() {
        return Err(Error::Parameter("no viewpoints".into()));
    }
    let pivot = crate::Point3::from(-camera.translation);
    let mut total = 0.0;
    let mut views = 0usize;
    for &yaw in yaws_deg {
        let cam = camera.yawed(yaw.to_radians(), &pivot);
        let ra = render_normal_map(a, &cam);
        let rb = render_normal_map(b, &cam);
        if let Some(e) = normal_map_error(&ra, &rb)? {
            total += e;
            views += 1;
        }
    }
    if views == 0 {
        return Err(Error::Evaluation("both meshes render empty from every viewpoint".into()));
    }
    Ok(total / views as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub raster: usize,
    pub yaws_deg: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            raster: 512,
            yaws_deg: DEFAULT_YAWS_DEG.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub p2s: f64,
    pub normal_error: f64,
    pub n_samples: usize,
    pub viewpoints_deg: Vec<f64>,
}

/// Chamfer, P2S (scan to reconstruction) and normal-image error.
pub fn evaluate(recon: &TriMesh, scan: &TriMesh, cfg: &MetricConfig) -> Result<MetricReport> {
    let (recon_to_scan, scan_to_recon) = chamfer_terms(recon, scan, cfg.n_samples, cfg.seed)?;
    let camera = comparison_camera(scan, recon, cfg.raster);
    Ok(MetricReport {
        chamfer: 0.5 * (recon_to_scan + scan_to_recon),
        p2s: scan_to_recon,
        normal_error: normal_image_error(recon, scan, &camera, &cfg.yaws_deg)?,
        n_samples: cfg.n_samples,
        viewpoints_deg: cfg.yaws_deg.clone(),
    })
}

/// Bounds of all meshes, for shared framing.
pub fn joint_bounds(meshes: &[&TriMesh]) -> Aabb {
    meshes.iter().fold(Aabb::empty(), |acc, m| acc.merge(&m.bounds()))
}
