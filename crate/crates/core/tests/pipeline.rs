use std::sync::Arc;

use clothrecon_core::body_model::{build_canonical_template, load_template, save_template, TemplateConfig};
use clothrecon_core::datagen::{load_record, load_sample, read_manifest, write_dataset, DatagenConfig, SplitSizes};
use clothrecon_core::features::{feature_matrix, FeatureContext};
use clothrecon_core::geometry::{read_obj, write_obj, IndexedMesh};
use clothrecon_core::implicit_net::{
    load_weights, mse, sample_training_points, save_weights, train, Adam, AdamConfig, MlpSpec, OccupancyMlp,
    TrainBatch, TrainConfig,
};
use clothrecon_core::metrics::chamfer;
use clothrecon_core::surface::{evaluate_net, marching_cubes, GridMode, ISO_LEVEL};

fn small_dataset(root: &std::path::Path) -> clothrecon_core::body_model::BodyTemplate {
    let template = build_canonical_template(&TemplateConfig::default()).unwrap();
    let cfg = DatagenConfig {
        yaw_step_deg: 180,
        raster: 64,
        splits: SplitSizes {
            train: 1,
            val: 0,
            test: 0,
        },
        seed: 3,
        ..Default::default()
    };
    write_dataset(root, &template, &cfg).unwrap();
    template
}

#[test]
fn dataset_to_mesh_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let template = small_dataset(dir.path());
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.scans.len(), 1);
    let scan = &manifest.scans[0];
    assert_eq!(scan.views.len(), 2);

    let record = Arc::new(load_record(dir.path(), &scan.id).unwrap());
    assert_eq!(template.pose_mesh(&record.params).unwrap().vertices(), record.body.vertices());
    let sample = load_sample(dir.path(), record.clone(), &scan.views[0]).unwrap();
    let ctx = FeatureContext::with_visibility(
        record.body.clone(),
        sample.clothed.clone(),
        sample.visibility.clone(),
        sample.cameras.clone(),
    )
    .unwrap();

    let h = record.body.bounds().extent().max();
    let pts = sample_training_points(&IndexedMesh::new(record.scan.clone()), 1500, 1500, 0.05 * h, 1).unwrap();
    let data = TrainBatch::new(feature_matrix(&ctx, &pts.points).unwrap(), pts.labels, pts.kinds).unwrap();
    let mut net = OccupancyMlp::new(MlpSpec::with_widths(&[7, 32, 32, 16, 1]), 2).unwrap();
    let before = mse(&net, &data).unwrap();
    let mut adam = Adam::new(
        &net,
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 256,
        seed: 4,
        ..TrainConfig::default()
    };
    train(&mut net, &mut adam, &data, None, &cfg, |_| {}).unwrap();
    let after = mse(&net, &data).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");

    let weights = dir.path().join("net.bin");
    save_weights(&net, &weights, serde_json::json!({ "steps": 400 })).unwrap();
    let (back, meta) = load_weights(&weights).unwrap();
    assert_eq!(meta["steps"], 400);
    let grid = evaluate_net(&back, &ctx, 32, GridMode::Octree).unwrap();
    let mesh = marching_cubes(&grid, ISO_LEVEL).unwrap();
    assert!(!mesh.is_empty());
    assert_eq!(grid, evaluate_net(&net, &ctx, 32, GridMode::Octree).unwrap());
    // a coarse small net only has to land near the scan
    let c = chamfer(&mesh, &record.scan, 3000, 5).unwrap();
    assert!(c < 0.1 * h, "chamfer {c} vs height {h}");

    let obj = dir.path().join("recon.obj");
    write_obj(&mesh, &obj).unwrap();
    assert_eq!(read_obj(&obj).unwrap().face_count(), mesh.face_count());
}

#[test]
fn template_file_round_trip_poses_identically() {
    let dir = tempfile::tempdir().unwrap();
    let template = small_dataset(dir.path());
    let path = dir.path().join("template.bin");
    save_template(&template, &path).unwrap();
    let back = load_template(&path).unwrap();
    let record = load_record(dir.path(), &read_manifest(dir.path()).unwrap().scans[0].id).unwrap();
    assert_eq!(
        back.pose_mesh(&record.params).unwrap(),
        template.pose_mesh(&record.params).unwrap()
    );
}
