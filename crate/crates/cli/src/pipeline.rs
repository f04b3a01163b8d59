//! Glue between dataset samples and the core stages.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use clothrecon_core::datagen::{derive_seed, load_record, load_sample, DatasetSample, Manifest, ManifestScan};
use clothrecon_core::features::{feature_matrix, FeatureContext};
use clothrecon_core::geometry::{IndexedMesh, TriMesh};
use clothrecon_core::implicit_net::{sample_training_points, OccupancyMlp, TrainBatch};
use clothrecon_core::surface::{evaluate_net, marching_cubes, ISO_LEVEL};

use crate::config::{ConfigError, ReconstructSection, TrainSection};

/// Largest bounding-box extent; the unit for relative tolerances.
pub fn body_height(mesh: &TriMesh) -> f64 {
    mesh.bounds().extent().max()
}

/// `k` evenly spaced entries (all of them if `k` exceeds the count).
pub fn view_subset(views: &[String], k: usize) -> Vec<String> {
    let n = views.len();
    if k >= n {
        return views.to_vec();
    }
    (0..k).map(|i| views[i * n / k].clone()).collect()
}

/// Sample identifier `scan_id/view`; a bare scan id means its first view.
/// Returns the manifest position of the scan and the view name.
pub fn resolve_sample<'a>(manifest: &'a Manifest, id: &str) -> anyhow::Result<(usize, &'a ManifestScan, String)> {
    let (scan_id, view) = match id.split_once('/') {
        Some((s, v)) => (s, Some(v)),
        None => (id, None),
    };
    let Some((index, scan)) = manifest.scans.iter().enumerate().find(|(_, s)| s.id == scan_id) else {
        bail!(ConfigError(format!("sample {id}: no scan `{scan_id}` in the dataset")));
    };
    let view = match view {
        Some(v) if scan.views.iter().any(|x| x == v) => v.to_string(),
        Some(v) => bail!(ConfigError(format!("sample {id}: scan {scan_id} has no view `{v}`"))),
        None => scan
            .views
            .first()
            .cloned()
            .with_context(|| format!("scan {scan_id} has no views"))?,
    };
    Ok((index, scan, view))
}

pub fn load_view(root: &Path, scan_id: &str, view: &str) -> anyhow::Result<DatasetSample> {
    let record = Arc::new(load_record(root, scan_id).with_context(|| format!("loading scan {scan_id}"))?);
    load_sample(root, record, view).with_context(|| format!("loading {scan_id}/{view}"))
}

/// Features against the sample's body, clothed maps and stored visibility.
pub fn feature_context(sample: &DatasetSample, sdf_clamp: Option<f64>) -> clothrecon_core::Result<FeatureContext> {
    let body = sample.record.body.clone();
    let h = body_height(&body);
    Ok(FeatureContext::with_visibility(
        body,
        sample.clothed.clone(),
        sample.visibility.clone(),
        sample.cameras.clone(),
    )?
    .with_sdf_clamp(sdf_clamp.map(|c| c * h)))
}

/// Labelled training points around the sample's scan, featurized from its
/// view.
pub fn training_batch(sample: &DatasetSample, train: &TrainSection, seed: u64) -> clothrecon_core::Result<TrainBatch> {
    let ctx = feature_context(sample, train.sdf_clamp)?;
    let h = body_height(&sample.record.body);
    let scan = IndexedMesh::new(sample.record.scan.clone());
    let pts = sample_training_points(&scan, train.surface_points, train.uniform_points, train.sigma * h, seed)?;
    let x = feature_matrix(&ctx, &pts.points)?;
    TrainBatch::new(x, pts.labels, pts.kinds)
}

/// Training points for every scan of `split`; `None` when the split is
/// empty. Scan `i` and view `j` use seed stream `(i, j)`.
pub fn split_batch(
    root: &Path,
    manifest: &Manifest,
    split: &str,
    train: &TrainSection,
    seed: u64,
) -> anyhow::Result<Option<TrainBatch>> {
    let mut parts = Vec::new();
    for (i, scan) in manifest.scans.iter().enumerate().filter(|(_, s)| s.split == split) {
        let record = Arc::new(load_record(root, &scan.id).with_context(|| format!("loading scan {}", scan.id))?);
        for (j, view) in view_subset(&scan.views, train.views_per_scan).iter().enumerate() {
            let sample = load_sample(root, record.clone(), view)?;
            let s = derive_seed(derive_seed(seed, i as u64), j as u64);
            parts.push(training_batch(&sample, train, s).with_context(|| format!("sampling {}/{view}", scan.id))?);
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(TrainBatch::concat(&parts)?))
}

/// Iso-surface of the net's occupancy around the context body.
pub struct Reconstruction {
    pub mesh: TriMesh,
    pub evaluated_points: usize,
}

pub fn reconstruct(
    net: &OccupancyMlp,
    ctx: &FeatureContext,
    section: &ReconstructSection,
) -> clothrecon_core::Result<Reconstruction> {
    let grid = evaluate_net(net, ctx, section.resolution, section.mode)?;
    Ok(Reconstruction {
        mesh: marching_cubes(&grid, ISO_LEVEL)?,
        evaluated_points: grid.evaluated_count(),
    })
}
