use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clothrecon_cli::commands::*;
use clothrecon_cli::config::{resolve, Resolved};
use clothrecon_cli::lock::LOCK_NAME;

const TINY: &str = r#"
seed = 11
[datagen]
yaw_step_deg = 90
raster = 64
[datagen.splits]
train = 1
val = 0
test = 1
[train]
steps = 200
batch_size = 128
log_every = 50
eval_every = 0
surface_points = 600
uniform_points = 600
views_per_scan = 2
[train.net]
widths = [7, 16, 16, 8, 1]
[train.adam]
lr = 1e-3
[reconstruct]
resolution = 32
[refine]
iterations = 12
raster = 64
mode = "pattern-search"
[evaluate]
n_samples = 1500
raster = 48
"#;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    let paths = format!(
        "[paths]\ndataset = {:?}\nweights = {:?}\noutput = {:?}\n",
        root.join("data"),
        root.join("out/weights.bin"),
        root.join("out")
    );
    fs::write(&config, format!("{TINY}\n{paths}")).unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
    }
}

impl Workspace {
    fn cfg(&self, overrides: &[&str]) -> Resolved {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        resolve(Some(&self.config), None, &o).unwrap()
    }

    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
}

fn bin(ws: &Workspace, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_clothrecon"))
        .arg("--config")
        .arg(&ws.config)
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn trained(ws: &Workspace) -> TrainReport {
    cmd_datagen(&ws.cfg(&[])).unwrap();
    cmd_train(&ws.cfg(&[]), false).unwrap()
}

#[test]
fn datagen_counts_splits_and_repeats_byte_for_byte() {
    let ws = workspace();
    let m = cmd_datagen(&ws.cfg(&[])).unwrap();
    assert_eq!(m.scans.len(), 2);
    assert_eq!(m.sample_count(), 8);
    assert_eq!((m.split_sizes.train, m.split_sizes.val, m.split_sizes.test), (1, 0, 1));
    assert_eq!(m.split("train").len(), 1);
    assert_eq!(m.split("test").len(), 1);
    let first = fs::read(ws.data().join("manifest.json")).unwrap();
    assert!(!ws.data().join(LOCK_NAME).exists());
    assert!(ws.data().join("resolved_datagen.toml").exists());

    let again = ws.root.join("again");
    cmd_datagen(&ws.cfg(&[&format!("paths.dataset={:?}", again)])).unwrap();
    assert_eq!(first, fs::read(again.join("manifest.json")).unwrap());
}

#[test]
fn training_lowers_mse_and_is_bit_reproducible() {
    let ws = workspace();
    let r = trained(&ws);
    assert!(r.final_mse < r.initial_mse, "{} -> {}", r.initial_mse, r.final_mse);
    assert_eq!(r.final_step, 200);
    let log = fs::read_to_string(ws.root.join("out").join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    let weights = fs::read(ws.root.join("out/weights.bin")).unwrap();
    let other = ws.root.join("out2");
    let cfg = ws.cfg(&[
        &format!("paths.output={other:?}"),
        &format!("paths.weights={:?}", other.join("weights.bin")),
    ]);
    cmd_train(&cfg, false).unwrap();
    assert_eq!(weights, fs::read(other.join("weights.bin")).unwrap());
}

#[test]
fn resumed_training_continues_the_same_run() {
    let ws = workspace();
    cmd_datagen(&ws.cfg(&[])).unwrap();
    let direct = cmd_train(&ws.cfg(&[]), false).unwrap();
    let direct_weights = fs::read(ws.root.join("out/weights.bin")).unwrap();

    let split = ws.root.join("split");
    let paths = [
        format!("paths.output={split:?}"),
        format!("paths.weights={:?}", split.join("weights.bin")),
    ];
    let half = ws.cfg(&[&paths[0], &paths[1], "train.steps=100"]);
    cmd_train(&half, false).unwrap();
    let rest = cmd_train(&ws.cfg(&[&paths[0], &paths[1]]), true).unwrap();
    assert_eq!(rest.final_step, 200);
    assert_eq!(direct_weights, fs::read(split.join("weights.bin")).unwrap());
    assert_eq!(rest.records, direct.records[2..]);
    let log = fs::read_to_string(split.join(TRAIN_LOG_FILE)).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["50", "100", "150", "200"]);
}

#[test]
fn reconstruct_reports_mesh_and_metrics() {
    let ws = workspace();
    trained(&ws);
    let r = cmd_reconstruct(&ws.cfg(&[]), "scan_0000/yaw_090").unwrap();
    assert_eq!(r.sample, "scan_0000/yaw_090");
    assert!(r.mesh.exists());
    assert!(r.watertight);
    assert!(r.faces > 0);
    assert!(r.metrics.chamfer.is_finite() && r.metrics.p2s.is_finite());
    let json = ws.root.join("out/reconstruct/scan_0000__yaw_090.json");
    let back: ReconstructReport = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn refinement_reduces_body_error_and_rest_is_near_no_op() {
    let ws = workspace();
    cmd_datagen(&ws.cfg(&[])).unwrap();
    let r = cmd_refine(&ws.cfg(&["refine.noise_theta=0.15"]), "scan_0001").unwrap();
    assert!(r.chamfer_after < r.chamfer_before, "{} -> {}", r.chamfer_before, r.chamfer_after);
    assert!(r.loss_after.total <= r.loss_before);
    let trace = fs::read_to_string(ws.root.join("out/refine/scan_0001__yaw_000/trace.csv")).unwrap();
    let totals: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");

    // Starting at the truth the body can only drift toward the clothing.
    let z = cmd_refine(&ws.cfg(&["refine.noise_theta=0.0"]), "scan_0001/yaw_180").unwrap();
    assert!(z.chamfer_before < 1e-9);
    assert!(z.chamfer_after < 0.02 * z.body_height, "{}", z.chamfer_after);
}

#[test]
fn evaluate_table_rows_mean_and_text_agree() {
    let ws = workspace();
    cmd_datagen(&ws.cfg(&["evaluate.views_per_scan=2"])).unwrap();
    let gt = cmd_evaluate(&ws.cfg(&["evaluate.views_per_scan=2"]), "test", true).unwrap();
    assert_eq!(gt.rows.len(), 2);
    for r in gt.rows.iter().chain([&gt.mean]) {
        // closest-point roundoff only
        assert!(r.chamfer < 1e-9 && r.p2s < 1e-9, "{r:?}");
        assert_eq!(r.normals, 0.0);
    }

    let cfg = ws.cfg(&[]);
    cmd_train(&cfg, false).unwrap();
    let t = cmd_evaluate(&cfg, "test", false).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.mean.chamfer, t.rows[0].chamfer);
    let json: EvalTable =
        serde_json::from_str(&fs::read_to_string(ws.root.join("out/evaluate_test.json")).unwrap()).unwrap();
    assert_eq!(json, t);
    let text = fs::read_to_string(ws.root.join("out/evaluate_test.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["sample", "Chamfer", "P2S", "Normals"]);
    for (line, row) in lines[1..].iter().zip(t.rows.iter().chain([&t.mean])) {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[0], row.sample);
        for (s, v) in f[1..].iter().zip([row.chamfer, row.p2s, row.normals]) {
            assert!((s.parse::<f64>().unwrap() - v).abs() <= 5e-7, "{s} vs {v}");
        }
    }
}

fn exit_code(ws: &Workspace, args: &[&str]) -> i32 {
    bin(ws, args).0
}

#[test]
fn exit_codes_follow_failure_class() {
    let ws = workspace();
    assert_eq!(exit_code(&ws, &["-o", "train.nonsense=1", "datagen"]), 2);
    assert_eq!(exit_code(&ws, &["-o", "reconstruct.resolution=48", "datagen"]), 2);
    let (code, err) = bin(&ws, &["reconstruct", "scan_0000"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("weights not found"), "{err}");
    assert_eq!(exit_code(&ws, &["datagen"]), 0);
    assert_eq!(exit_code(&ws, &["refine", "scan_0099"]), 2);
    fs::write(ws.data().join(LOCK_NAME), "1").unwrap();
    assert_eq!(exit_code(&ws, &["datagen"]), 3);
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_clothrecon"))
        .env(clothrecon_cli::THREADS_ENV, "zero")
        .args(["--config", ws.config.to_str().unwrap(), "datagen"])
        .status()
        .unwrap();
    assert_eq!(bad_threads.code(), Some(2));
}

#[test]
fn resolved_snapshot_replays_the_command() {
    let ws = workspace();
    let cfg = ws.cfg(&["datagen.pose_scale=0.1"]);
    let first = cmd_datagen(&cfg).unwrap();
    let snapshot = ws.data().join("resolved_datagen.toml");
    let replay = resolve(Some(Path::new(&snapshot)), None, &[]).unwrap();
    assert_eq!(replay.config, cfg.config);
    let text = fs::read_to_string(&snapshot).unwrap();
    assert!(text.contains("\"datagen.pose_scale\" = \"override\""));
    assert!(text.contains("\"refine.lambda_n\" = \"published\""));
    let again = ws.root.join("replay");
    let mut c = replay;
    c.config.paths.dataset = again.clone();
    assert_eq!(cmd_datagen(&c).unwrap(), first);
}
