//! The five pipeline commands. Each takes a resolved configuration, locks
//! its output directory, writes a resolved-config snapshot beside its
//! outputs and returns a summary of what it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clothrecon_core::body_model::{build_canonical_template, load_template, perturb_params, save_template};
use clothrecon_core::datagen::{derive_seed, read_manifest, view_cameras, write_dataset, Manifest};
use clothrecon_core::geometry::write_obj;
use clothrecon_core::implicit_net::{
    load_checkpoint, load_weights, mse, save_checkpoint, save_weights, train, Adam, OccupancyMlp, TrainConfig,
    TrainRecord,
};
use clothrecon_core::metrics::{chamfer, evaluate, MetricReport};
use clothrecon_core::refine::{alternate_refine, write_trace_csv, LossTerms, RenderProvider};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, Resolved, Stream};
use crate::lock::OutputLock;
use crate::pipeline::{
    body_height, feature_context, load_view, reconstruct, resolve_sample, split_batch, view_subset,
};

pub const TEMPLATE_FILE: &str = "template.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";

fn snapshot(cfg: &Resolved, dir: &Path, command: &str) -> anyhow::Result<()> {
    cfg.write(&dir.join(format!("resolved_{command}.toml")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Generates the synthetic dataset under `paths.dataset`.
pub fn cmd_datagen(cfg: &Resolved) -> anyhow::Result<Manifest> {
    let c = &cfg.config;
    let root = &c.paths.dataset;
    let _lock = OutputLock::acquire(root)?;
    let template = build_canonical_template(&c.template).context("building body template")?;
    let manifest = write_dataset(root, &template, &c.datagen).context("writing dataset")?;
    save_template(&template, root.join(TEMPLATE_FILE))?;
    snapshot(cfg, root, "datagen")?;
    log::info!(
        "wrote {} scans, {} samples to {}",
        manifest.scans.len(),
        manifest.sample_count(),
        root.display()
    );
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_points: usize,
    pub val_points: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub final_step: u64,
    pub stopped_early: bool,
    pub records: Vec<TrainRecord>,
}

fn read_manifest_ctx(root: &Path) -> anyhow::Result<Manifest> {
    read_manifest(root).with_context(|| format!("reading dataset at {} (run `datagen` first?)", root.display()))
}

/// Trains the occupancy net on the train split; with `resume`, continues
/// from the checkpoint in the output directory up to `train.steps`.
pub fn cmd_train(cfg: &Resolved, resume: bool) -> anyhow::Result<TrainReport> {
    let c = &cfg.config;
    let out = &c.paths.output;
    let _lock = OutputLock::acquire(out)?;
    let manifest = read_manifest_ctx(&c.paths.dataset)?;
    let seed = c.stream_seed(Stream::TrainPoints);
    let Some(data) = split_batch(&c.paths.dataset, &manifest, "train", &c.train, seed)? else {
        bail!(ConfigError("the dataset has no training scans".into()));
    };
    let val = if c.train.eval_every > 0 {
        split_batch(&c.paths.dataset, &manifest, "val", &c.train, derive_seed(seed, u64::MAX))?
    } else {
        None
    };

    let checkpoint = out.join(CHECKPOINT_FILE);
    let (mut net, mut adam) = if resume {
        let (net, adam, _) = load_checkpoint(&checkpoint)
            .with_context(|| format!("resuming from {}", checkpoint.display()))?;
        if net.spec() != &c.train.net {
            bail!(ConfigError(format!(
                "checkpoint network {:?} differs from train.net {:?}",
                net.spec(),
                c.train.net
            )));
        }
        (net, adam)
    } else {
        let net = OccupancyMlp::new(c.train.net.clone(), c.stream_seed(Stream::NetInit))?;
        let adam = Adam::new(&net, c.train.adam);
        (net, adam)
    };
    let initial_mse = mse(&net, &data)?;
    let tc = TrainConfig {
        steps: c.train.steps,
        batch_size: c.train.batch_size,
        seed: c.stream_seed(Stream::Minibatch),
        log_every: c.train.log_every,
        eval_every: if val.is_some() { c.train.eval_every } else { 0 },
        patience: c.train.patience,
        min_delta: c.train.min_delta,
    };
    let summary = train(&mut net, &mut adam, &data, val.as_ref(), &tc, |r| {
        log::info!("step {} train mse {:.6} val mse {:?}", r.step, r.train_mse, r.val_mse);
    })?;
    let final_mse = mse(&net, &data)?;

    let meta = json!({
        "steps": adam.step,
        "seed": c.seed,
        "final_mse": final_mse,
    });
    save_weights(&net, &c.paths.weights, meta.clone())?;
    save_checkpoint(&net, &adam, &checkpoint, meta)?;
    append_train_log(&out.join(TRAIN_LOG_FILE), &summary.records, resume)?;
    let report = TrainReport {
        train_points: data.len(),
        val_points: val.as_ref().map_or(0, |v| v.len()),
        initial_mse,
        final_mse,
        final_step: summary.final_step,
        stopped_early: summary.stopped_early,
        records: summary.records,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &report)?;
    snapshot(cfg, out, "train")?;
    Ok(report)
}

fn append_train_log(path: &Path, records: &[TrainRecord], append: bool) -> anyhow::Result<()> {
    let fresh = !append || !path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn load_net(path: &Path) -> anyhow::Result<OccupancyMlp> {
    if !path.exists() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("weights not found at {} (run `train` first)", path.display()),
        )
        .into());
    }
    let (net, _) = load_weights(path).with_context(|| format!("loading weights {}", path.display()))?;
    Ok(net)
}

fn sample_stem(scan: &str, view: &str) -> String {
    format!("{scan}__{view}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub sample: String,
    pub mesh: PathBuf,
    pub watertight: bool,
    pub vertices: usize,
    pub faces: usize,
    pub evaluated_points: usize,
    /// Against the ground-truth scan.
    pub metrics: MetricReport,
}

/// Reconstructs one sample with the trained net and scores it against the
/// ground-truth scan.
pub fn cmd_reconstruct(cfg: &Resolved, sample_id: &str) -> anyhow::Result<ReconstructReport> {
    let c = &cfg.config;
    let net = load_net(&c.paths.weights)?;
    let manifest = read_manifest_ctx(&c.paths.dataset)?;
    let (_, scan, view) = resolve_sample(&manifest, sample_id)?;
    let out = c.paths.output.join("reconstruct");
    let _lock = OutputLock::acquire(&out)?;
    let sample = load_view(&c.paths.dataset, &scan.id, &view)?;
    let ctx = feature_context(&sample, c.train.sdf_clamp)?;
    let recon = reconstruct(&net, &ctx, &c.reconstruct).with_context(|| format!("reconstructing {sample_id}"))?;
    let stem = sample_stem(&scan.id, &view);
    let mesh_path = out.join(format!("{stem}.obj"));
    write_obj(&recon.mesh, &mesh_path)?;
    let mut metric_cfg = c.evaluate.metrics.clone();
    metric_cfg.seed = c.stream_seed(Stream::Evaluate);
    let report = ReconstructReport {
        sample: format!("{}/{view}", scan.id),
        mesh: mesh_path,
        watertight: recon.mesh.is_watertight(),
        vertices: recon.mesh.vertex_count(),
        faces: recon.mesh.face_count(),
        evaluated_points: recon.evaluated_points,
        metrics: evaluate(&recon.mesh, &sample.record.scan, &metric_cfg)?,
    };
    write_json(&out.join(format!("{stem}.json")), &report)?;
    snapshot(cfg, &out, "reconstruct")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub sample: String,
    /// Chamfer from the posed body to the ground-truth body.
    pub chamfer_before: f64,
    pub chamfer_after: f64,
    pub body_height: f64,
    pub loss_before: f64,
    pub loss_after: LossTerms,
    pub iterations: usize,
}

/// Perturbs the ground-truth pose of one sample and refines it against the
/// rendered ground-truth clothed normals.
pub fn cmd_refine(cfg: &Resolved, sample_id: &str) -> anyhow::Result<RefineReport> {
    let c = &cfg.config;
    let root = &c.paths.dataset;
    let manifest = read_manifest_ctx(root)?;
    let (index, scan, view) = resolve_sample(&manifest, sample_id)?;
    let template_path = root.join(TEMPLATE_FILE);
    let template =
        load_template(&template_path).with_context(|| format!("loading {}", template_path.display()))?;
    let stem = sample_stem(&scan.id, &view);
    let out = c.paths.output.join("refine").join(&stem);
    let _lock = OutputLock::acquire(&out)?;
    let sample = load_view(root, &scan.id, &view)?;
    let record = &sample.record;

    let seed = derive_seed(c.stream_seed(Stream::Refine), index as u64);
    let start = perturb_params(&record.params, c.refine.noise_theta, c.refine.noise_beta, seed);
    let cameras = view_cameras(record, sample.yaw_deg, c.refine.raster);
    let provider = RenderProvider(record.scan.clone());
    let outcome = alternate_refine(&start, &template, &provider, &cameras, c.refine.rounds, &c.refine.optimizer)
        .with_context(|| format!("refining {sample_id}"))?;

    let n = c.evaluate.metrics.n_samples;
    let eval_seed = c.stream_seed(Stream::Evaluate);
    let before = chamfer(&template.pose_mesh(&start)?, &record.body, n, eval_seed)?;
    let after = chamfer(&template.pose_mesh(&outcome.params)?, &record.body, n, eval_seed)?;
    let report = RefineReport {
        sample: format!("{}/{view}", scan.id),
        chamfer_before: before,
        chamfer_after: after,
        body_height: body_height(&record.body),
        loss_before: outcome.trace[0].total,
        loss_after: outcome.loss,
        iterations: outcome.trace.len() - 1,
    };
    write_json(&out.join("params.json"), &outcome.params)?;
    write_json(&out.join("report.json"), &report)?;
    write_trace_csv(out.join("trace.csv"), &outcome.trace)?;
    snapshot(cfg, &out, "refine")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample: String,
    pub chamfer: f64,
    pub p2s: f64,
    pub normals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub split: String,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl EvalTable {
    /// Fixed-width text with one row per sample and the split mean last.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<24} {:>12} {:>12} {:>12}\n", "sample", "Chamfer", "P2S", "Normals");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            s += &format!("{:<24} {:>12.6} {:>12.6} {:>12.6}\n", r.sample, r.chamfer, r.p2s, r.normals);
        }
        s
    }
}

/// Scores every scan of `split` (a subset of views each). With
/// `against_gt` the ground-truth scan stands in for the reconstruction,
/// which needs no weights.
pub fn cmd_evaluate(cfg: &Resolved, split: &str, against_gt: bool) -> anyhow::Result<EvalTable> {
    let c = &cfg.config;
    let manifest = read_manifest_ctx(&c.paths.dataset)?;
    let scans = manifest.split(split);
    if scans.is_empty() {
        bail!(ConfigError(format!("split `{split}` has no scans")));
    }
    let net = if against_gt {
        None
    } else {
        Some(load_net(&c.paths.weights)?)
    };
    let out = &c.paths.output;
    let _lock = OutputLock::acquire(out)?;
    let mut metric_cfg = c.evaluate.metrics.clone();
    metric_cfg.seed = c.stream_seed(Stream::Evaluate);
    let mut rows = Vec::new();
    for scan in scans {
        for view in view_subset(&scan.views, c.evaluate.views_per_scan) {
            let sample = load_view(&c.paths.dataset, &scan.id, &view)?;
            let gt = &sample.record.scan;
            let m = match &net {
                None => evaluate(gt, gt, &metric_cfg)?,
                Some(net) => {
                    let ctx = feature_context(&sample, c.train.sdf_clamp)?;
                    let recon = reconstruct(net, &ctx, &c.reconstruct)
                        .with_context(|| format!("reconstructing {}/{view}", scan.id))?;
                    evaluate(&recon.mesh, gt, &metric_cfg)?
                }
            };
            log::info!("{}/{view}: chamfer {:.6} p2s {:.6}", scan.id, m.chamfer, m.p2s);
            rows.push(MetricRow {
                sample: format!("{}/{view}", scan.id),
                chamfer: m.chamfer,
                p2s: m.p2s,
                normals: m.normal_error,
            });
        }
    }
    let n = rows.len() as f64;
    let mean = MetricRow {
        sample: "mean".into(),
        chamfer: rows.iter().map(|r| r.chamfer).sum::<f64>() / n,
        p2s: rows.iter().map(|r| r.p2s).sum::<f64>() / n,
        normals: rows.iter().map(|r| r.normals).sum::<f64>() / n,
    };
    let table = EvalTable {
        split: split.to_string(),
        rows,
        mean,
    };
    write_json(&out.join(format!("evaluate_{split}.json")), &table)?;
    let text_path = out.join(format!("evaluate_{split}.txt"));
    let mut f = fs::File::create(&text_path).with_context(|| format!("writing {}", text_path.display()))?;
    f.write_all(table.to_text().as_bytes())?;
    snapshot(cfg, out, "evaluate")?;
    Ok(table)
}
