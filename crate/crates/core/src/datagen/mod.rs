//! Synthetic clothed scans, multi-view rendering and dataset layout.
//!
//! On disk a dataset looks like
//!
//! ```text
//! <root>/manifest.json
//! <root>/scans/<id>/{scan.obj, body.obj, params.json}
//! <root>/scans/<id>/yaw_<deg>/{camera.json, visibility.bin,
//!     clothed_front.png, clothed_back.png, body_front.png, body_back.png}
//! ```
//!
//! PNGs are for inspection only; loaders re-render the maps from the meshes
//! and the stored camera, which reproduces them exactly.

mod clothing;
mod select;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use clothing::{coverage_from_template, synth_clothed, synth_clothed_masked, ClothingSpec};
pub use select::{k_medoids, pose_select, Gmm, SelectConfig, Selection};

use crate::body_model::{perturb_params, BodyParams, BodyTemplate};
use crate::geometry::{read_obj, write_obj, TriMesh};
use crate::render::{render_normal_maps, CameraPair, MapPair, VisBuffer};
use crate::{Error, Result};

/// SplitMix64 step; decorrelates per-item seeds drawn from one master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One synthetic subject: body parameters, posed body and clothed scan.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    pub id: String,
    pub params: BodyParams,
    pub body: TriMesh,
    pub scan: TriMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub yaw_step_deg: u32,
    pub raster: usize,
    /// Uniform pose noise around the template rest pose (radians).
    pub pose_scale: f64,
    pub shape_scale: f64,
    pub clothing: ClothingSpec,
    pub splits: SplitSizes,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            yaw_step_deg: 10,
            raster: 512,
            pose_scale: 0.15,
            shape_scale: 0.5,
            clothing: ClothingSpec::default(),
            splits: SplitSizes {
                train: 2,
                val: 1,
                test: 1,
            },
            seed: 0,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.yaw_step_deg == 0 || 360 % self.yaw_step_deg != 0 {
            return Err(Error::Parameter(format!(
                "yaw step {} must divide 360",
                self.yaw_step_deg
            )));
        }
        if self.raster == 0 {
            return Err(Error::Parameter("raster size must be positive".into()));
        }
        if self.splits.total() == 0 {
            return Err(Error::Parameter("dataset needs at least one scan".into()));
        }
        if !(self.pose_scale >= 0.0 && self.shape_scale >= 0.0) {
            return Err(Error::Parameter("perturbation scales must be >= 0".into()));
        }
        self.clothing.validate()
    }
}

/// Poses whose clothing cannot be placed (touching limbs) are redrawn this
/// many times before giving up.
const POSE_DRAWS: u64 = 8;

/// Random pose and shape around the template, posed and clothed. Scan `i`
/// depends only on the master seed and `i`.
pub fn generate_scans(template: &BodyTemplate, cfg: &DatagenConfig) -> Result<Vec<ScanRecord>> {
    cfg.validate()?;
    let coverage = coverage_from_template(template, &cfg.clothing.bare_joints)?;
    (0..cfg.splits.total())
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for draw in 0..POSE_DRAWS {
                let seed = derive_seed(derive_seed(cfg.seed, i as u64), draw);
                let params = perturb_params(&template.zero_params(), cfg.pose_scale, cfg.shape_scale, seed);
                let body = template.pose_mesh(&params)?;
                let spec = ClothingSpec {
                    seed: derive_seed(seed, 1),
                    ..cfg.clothing.clone()
                };
                match synth_clothed_masked(&body, &spec, Some(&coverage)) {
                    Ok(scan) => {
                        return Ok(ScanRecord {
                            id: format!("scan_{i:04}"),
                            params,
                            body,
                            scan,
                        })
                    }
                    Err(e @ Error::Mesh(_)) => {
                        log::debug!("scan {i}: pose draw {draw} rejected: {e}");
                        last = Some(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Batch {
                index: i,
                source: Box::new(last.expect("at least one draw")),
            })
        })
        .collect()
}

/// All raster products of one scan from one yaw angle.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub record: Arc<ScanRecord>,
    pub yaw_deg: u32,
    pub cameras: CameraPair,
    pub clothed: MapPair,
    pub body_maps: MapPair,
    /// Body faces seen by the front camera.
    pub visibility: VisBuffer,
}

impl DatasetSample {
    pub fn view_name(&self) -> String {
        view_name(self.yaw_deg)
    }
}

pub fn view_name(yaw_deg: u32) -> String {
    format!("yaw_{yaw_deg:03}")
}

/// Camera pair framing both meshes, turned by `yaw_deg` about the vertical
/// axis through their common centre.
pub fn view_cameras(record: &ScanRecord, yaw_deg: u32, raster: usize) -> CameraPair {
    let bounds = record.scan.bounds().merge(&record.body.bounds());
    let base = CameraPair::fit(&bounds, raster);
    CameraPair::new(base.front.yawed((yaw_deg as f64).to_radians(), &bounds.center()))
}

pub fn render_sample(record: Arc<ScanRecord>, yaw_deg: u32, cameras: CameraPair) -> DatasetSample {
    let clothed = render_normal_maps(&record.scan, &cameras);
    let body_maps = render_normal_maps(&record.body, &cameras);
    let mut visible = vec![false; record.body.face_count()];
    for f in body_maps.front.face.iter().filter_map(|&f| usize::try_from(f).ok()) {
        if let Some(v) = visible.get_mut(f) {
            *v = true;
        }
    }
    DatasetSample {
        record,
        yaw_deg,
        cameras,
        clothed,
        body_maps,
        visibility: VisBuffer { visible },
    }
}

/// `360 / yaw_step_deg` samples per scan, camera turned and meshes fixed.
pub fn render_dataset(scans: &[Arc<ScanRecord>], yaw_step_deg: u32, raster: usize) -> Result<Vec<DatasetSample>> {
    if yaw_step_deg == 0 || 360 % yaw_step_deg != 0 {
        return Err(Error::Parameter(format!("yaw step {yaw_step_deg} must divide 360")));
    }
    let jobs: Vec<(Arc<ScanRecord>, u32)> = scans
        .iter()
        .flat_map(|r| (0..360).step_by(yaw_step_deg as usize).map(move |y| (r.clone(), y)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(r, yaw)| {
            let cams = view_cameras(&r, yaw, raster);
            render_sample(r, yaw, cams)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScan {
    pub id: String,
    pub split: String,
    pub views: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub yaw_step_deg: u32,
    pub raster: usize,
    pub split_sizes: SplitSizes,
    pub scans: Vec<ManifestScan>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Vec<&ManifestScan> {
        self.scans.iter().filter(|s| s.split == name).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.scans.iter().map(|s| s.views.len()).sum()
    }
}

/// Seeded assignment of scan indices to train, val and test.
pub fn assign_splits(sizes: &SplitSizes, seed: u64) -> Vec<&'static str> {
    let n = sizes.total();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    let mut out = vec![""; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < sizes.train {
            "train"
        } else if rank < sizes.train + sizes.val {
            "val"
        } else {
            "test"
        };
    }
    out
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, &e.to_string()))
}

pub fn scan_dir(root: &Path, id: &str) -> PathBuf {
    root.join("scans").join(id)
}

/// Generates, renders and writes a dataset; returns the manifest.
pub fn write_dataset(root: &Path, template: &BodyTemplate, cfg: &DatagenConfig) -> Result<Manifest> {
    let records: Vec<Arc<ScanRecord>> = generate_scans(template, cfg)?.into_iter().map(Arc::new).collect();
    let splits = assign_splits(&cfg.splits, cfg.seed);
    let mut scans = Vec::with_capacity(records.len());
    for (record, split) in records.iter().zip(&splits) {
        let dir = scan_dir(root, &record.id);
        create_dir(&dir)?;
        write_obj(&record.scan, dir.join("scan.obj"))?;
        write_obj(&record.body, dir.join("body.obj"))?;
        write_json(&dir.join("params.json"), &record.params)?;
        let samples = render_dataset(std::slice::from_ref(record), cfg.yaw_step_deg, cfg.raster)?;
        samples.par_iter().try_for_each(|s| write_view(&dir.join(s.view_name()), s))?;
        scans.push(ManifestScan {
            id: record.id.clone(),
            split: split.to_string(),
            views: samples.iter().map(DatasetSample::view_name).collect(),
        });
    }
    let manifest = Manifest {
        format: 1,
        seed: cfg.seed,
        yaw_step_deg: cfg.yaw_step_deg,
        raster: cfg.raster,
        split_sizes: cfg.splits,
        scans,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_view(dir: &Path, s: &DatasetSample) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("camera.json"), &s.cameras.front)?;
    let vis = dir.join("visibility.bin");
    fs::write(&vis, s.visibility.to_bytes()).map_err(|e| Error::io(&vis, e))?;
    s.clothed.front.write_png(dir.join("clothed_front.png"))?;
    s.clothed.back.write_png(dir.join("clothed_back.png"))?;
    s.body_maps.front.write_png(dir.join("body_front.png"))?;
    s.body_maps.back.write_png(dir.join("body_back.png"))?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    read_json(&root.join("manifest.json"))
}

pub fn load_record(root: &Path, id: &str) -> Result<ScanRecord> {
    let dir = scan_dir(root, id);
    Ok(ScanRecord {
        id: id.to_string(),
        params: read_json(&dir.join("params.json"))?,
        body: read_obj(dir.join("body.obj"))?,
        scan: read_obj(dir.join("scan.obj"))?,
    })
}

/// Reloads one view, re-rendering its maps from the stored meshes.
pub fn load_sample(root: &Path, record: Arc<ScanRecord>, view: &str) -> Result<DatasetSample> {
    let dir = scan_dir(root, &record.id).join(view);
    let front: crate::render::Camera = read_json(&dir.join("camera.json"))?;
    front.validate()?;
    let yaw_deg = view
        .strip_prefix("yaw_")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::format(&dir, "view folder is not named yaw_<degrees>"))?;
    Ok(render_sample(record, yaw_deg, CameraPair::new(front)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IndexedMesh;
    use crate::render::render_normal_map;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};

    fn tiny_config() -> DatagenConfig {
        DatagenConfig {
            yaw_step_deg: 90,
            raster: 64,
            splits: SplitSizes {
                train: 1,
                val: 0,
                test: 1,
            },
            seed: 3,
            ..Default::default()
        }
    }

    fn template() -> BodyTemplate {
        crate::body_model::build_canonical_template(&Default::default()).unwrap()
    }

    #[test]
    fn view_counts() {
        let t = template();
        let cfg = tiny_config();
        let recs: Vec<_> = generate_scans(&t, &cfg).unwrap().into_iter().map(Arc::new).collect();
        assert_eq!(render_dataset(&recs, 90, 32).unwrap().len(), 8);
        assert_eq!(render_dataset(&recs[..1], 10, 16).unwrap().len(), 36);
        assert!(render_dataset(&recs, 7, 16).is_err());
    }

    #[test]
    fn scans_contain_their_bodies() {
        let t = template();
        for r in generate_scans(&t, &tiny_config()).unwrap() {
            assert!(r.scan.is_watertight());
            let index = IndexedMesh::new(r.scan.clone());
            let inside = r
                .body
                .vertices()
                .iter()
                .filter(|p| index.winding_number(p) > 0.5)
                .count();
            // bare hands and feet sit on the scan surface
            assert!(inside as f64 > 0.8 * r.body.vertex_count() as f64, "{inside}");
        }
    }

    #[test]
    fn half_turn_front_is_zero_back() {
        let t = template();
        let r = Arc::new(generate_scans(&t, &tiny_config()).unwrap().remove(0));
        let a = render_sample(r.clone(), 0, view_cameras(&r, 0, 64));
        let b = render_sample(r.clone(), 180, view_cameras(&r, 180, 64));
        let (f, k) = (&b.clothed.front, &a.clothed.back);
        let mut differ = 0;
        for i in 0..f.normals.len() {
            if f.is_foreground_at(i) != k.is_foreground_at(i) {
                differ += 1;
            } else if f.is_foreground_at(i) {
                assert!((f.normals[i] - k.normals[i]).norm() < 1e-9);
            }
        }
        assert!(differ <= 2, "{differ} pixels differ");
    }

    #[test]
    fn turning_camera_equals_turning_mesh() {
        let t = template();
        let r = Arc::new(generate_scans(&t, &tiny_config()).unwrap().remove(0));
        let cams = view_cameras(&r, 0, 64);
        let pivot = r.scan.bounds().merge(&r.body.bounds()).center();
        let yaw = 40f64.to_radians();
        let rot = Isometry3::from_parts(
            Translation3::from(pivot.coords - UnitQuaternion::from_axis_angle(&crate::Vec3::y_axis(), yaw) * pivot.coords),
            UnitQuaternion::from_axis_angle(&crate::Vec3::y_axis(), yaw),
        );
        let turned_mesh = render_normal_map(&r.scan.transformed(&rot), &cams.front);
        let turned_cam = render_normal_map(&r.scan, &cams.front.yawed(yaw, &pivot));
        let mut differ = 0;
        for i in 0..turned_mesh.normals.len() {
            if turned_mesh.is_foreground_at(i) != turned_cam.is_foreground_at(i) {
                differ += 1;
            } else if turned_mesh.is_foreground_at(i) {
                assert!((turned_mesh.normals[i] - turned_cam.normals[i]).norm() < 1e-6);
            }
        }
        assert!(differ <= 2, "{differ} pixels differ");
    }

    #[test]
    fn splits_follow_sizes() {
        let sizes = SplitSizes {
            train: 5,
            val: 2,
            test: 3,
        };
        let s = assign_splits(&sizes, 1);
        assert_eq!(s.iter().filter(|&&x| x == "train").count(), 5);
        assert_eq!(s.iter().filter(|&&x| x == "val").count(), 2);
        assert_eq!(s, assign_splits(&sizes, 1));
    }

    #[test]
    fn dataset_round_trip_is_deterministic() {
        let t = template();
        let cfg = tiny_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = write_dataset(a.path(), &t, &cfg).unwrap();
        write_dataset(b.path(), &t, &cfg).unwrap();
        assert_eq!(ma.sample_count(), 8);
        let read = |p: &Path| fs::read(p.join("manifest.json")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        assert_eq!(read_manifest(a.path()).unwrap(), ma);

        let id = &ma.scans[0].id;
        let rec = Arc::new(load_record(a.path(), id).unwrap());
        let loaded = load_sample(a.path(), rec.clone(), "yaw_090").unwrap();
        let fresh = render_sample(rec.clone(), 90, view_cameras(&rec, 90, cfg.raster));
        assert_eq!(loaded.clothed, fresh.clothed);
        let original = generate_scans(&t, &cfg).unwrap().remove(0);
        assert_eq!(rec.scan.vertices(), original.scan.vertices());
        assert_eq!(rec.params, original.params);
    }
}
