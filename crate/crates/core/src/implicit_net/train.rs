use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::OccupancyMlp;
use super::sampling::SampleKind;
use crate::{Error, Result};

/// Feature rows with their occupancy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub kinds: Vec<SampleKind>,
}

impl TrainBatch {
    pub fn new(features: Array2<f64>, labels: Vec<f64>, kinds: Vec<SampleKind>) -> Result<Self> {
        if features.nrows() != labels.len() || labels.len() != kinds.len() {
            return Err(Error::Parameter(format!(
                "batch has {} rows, {} labels and {} tags",
                features.nrows(),
                labels.len(),
                kinds.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            kinds,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            kinds: indices.iter().map(|&i| self.kinds[i]).collect(),
        }
    }

    /// Stacks batches row-wise.
    pub fn concat(parts: &[TrainBatch]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Parameter(format!("cannot stack batches: {e}")))?;
        Ok(Self {
            features,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            kinds: parts.iter().flat_map(|p| p.kinds.iter().copied()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total optimizer steps (a resumed run continues up to this count).
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Steps per logged record; the record holds the mean minibatch MSE.
    pub log_every: u64,
    /// Validation interval in steps; 0 disables validation and early stop.
    pub eval_every: u64,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 512,
            seed: 0,
            log_every: 100,
            eval_every: 0,
            patience: 5,
            min_delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<TrainRecord>,
    pub stopped_early: bool,
    pub final_step: u64,
}

/// Indices of the minibatch for `step`; depends only on seed and step so
/// resumed runs see the same sequence.
pub fn minibatch(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

pub fn mse(net: &OccupancyMlp, data: &TrainBatch) -> Result<f64> {
    let y = net.forward_batch(data.features.view())?;
    Ok(y.iter()
        .zip(&data.labels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / data.len().max(1) as f64)
}

/// Minibatch ADAM on `data` until `adam.step` reaches `cfg.steps` or
/// validation stops improving.
pub fn train(
    net: &mut OccupancyMlp,
    adam: &mut Adam,
    data: &TrainBatch,
    validation: Option<&TrainBatch>,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainSummary> {
    if data.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::Parameter("batch size and log interval must be positive".into()));
    }
    let mut records = Vec::new();
    let mut window = (0.0, 0u64);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut stopped_early = false;
    while adam.step < cfg.steps {
        let step = adam.step + 1;
        let idx = minibatch(data.len(), cfg.batch_size, cfg.seed, step);
        let mb = data.select(&idx);
        let (loss, grads) = net.loss_and_grad(mb.features.view(), &mb.labels)?;
        if !loss.is_finite() {
            return Err(Error::Evaluation(format!("training loss diverged at step {step}")));
        }
        adam.update(net, &grads)?;
        if !net.is_finite() {
            return Err(Error::Evaluation(format!("non-finite weights after step {step}")));
        }
        window.0 += loss;
        window.1 += 1;

        let validate = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        let val_mse = match (validate, validation) {
            (true, Some(v)) => Some(mse(net, v)?),
            _ => None,
        };
        if step % cfg.log_every == 0 || step == cfg.steps || val_mse.is_some() {
            let rec = TrainRecord {
                step,
                train_mse: window.0 / window.1 as f64,
                val_mse,
            };
            window = (0.0, 0);
            on_record(&rec);
            records.push(rec);
        }
        if let Some(v) = val_mse {
            if v < best - cfg.min_delta {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainSummary {
        records,
        stopped_early,
        final_step: adam.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitives, IndexedMesh};
    use crate::implicit_net::{sample_training_points, AdamConfig, MlpSpec};

    /// Sphere with a bump; features are (x, y, z, |p|, 0, 0, 0).
    fn bump_dataset(n: usize) -> TrainBatch {
        let mut mesh = primitives::icosphere(3, 0.5);
        let moved: Vec<_> = mesh
            .vertices()
            .iter()
            .map(|v| {
                let bump = 0.15 * (-(v - crate::Point3::new(0.0, 0.5, 0.0)).norm_squared() / 0.05).exp();
                v + v.coords.normalize() * bump
            })
            .collect();
        mesh = mesh.with_positions(moved).unwrap();
        let scan = IndexedMesh::new(mesh);
        let pts = sample_training_points(&scan, n / 2, n - n / 2, 0.05, 4).unwrap();
        let mut x = Array2::zeros((n, 7));
        for (i, p) in pts.points.iter().enumerate() {
            x[[i, 0]] = p.x;
            x[[i, 1]] = p.y;
            x[[i, 2]] = p.z;
            x[[i, 3]] = p.coords.norm();
        }
        TrainBatch::new(x, pts.labels, pts.kinds).unwrap()
    }

    #[test]
    fn tiny_dataset_converges_monotonically() {
        let data = bump_dataset(500);
        let mut net = OccupancyMlp::new(MlpSpec::with_widths(&[7, 64, 32, 16, 1]), 1).unwrap();
        let mut adam = Adam::new(&net, AdamConfig { lr: 3e-3, ..Default::default() });
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 500,
            log_every: 100,
            ..Default::default()
        };
        let s = train(&mut net, &mut adam, &data, None, &cfg, |_| {}).unwrap();
        assert_eq!(s.records.len(), 20);
        for w in s.records.windows(2) {
            assert!(w[1].train_mse < w[0].train_mse, "{:?}", s.records);
        }
        assert!(mse(&net, &data).unwrap() < 0.01);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = bump_dataset(200);
        let spec = MlpSpec::with_widths(&[7, 16, 16, 8, 1]);
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 32,
            log_every: 10,
            seed: 5,
            ..Default::default()
        };
        let mut a = OccupancyMlp::new(spec.clone(), 2).unwrap();
        let mut adam_a = Adam::new(&a, AdamConfig::default());
        let full = train(&mut a, &mut adam_a, &data, None, &cfg, |_| {}).unwrap();

        let mut b = OccupancyMlp::new(spec, 2).unwrap();
        let mut adam_b = Adam::new(&b, AdamConfig::default());
        let first = train(&mut b, &mut adam_b, &data, None, &TrainConfig { steps: 30, ..cfg.clone() }, |_| {}).unwrap();
        let second = train(&mut b, &mut adam_b, &data, None, &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        let joined: Vec<_> = first.records.iter().chain(&second.records).copied().collect();
        assert_eq!(joined, full.records);
    }

    #[test]
    fn early_stop_on_plateau() {
        let data = bump_dataset(100);
        let mut net = OccupancyMlp::new(MlpSpec::with_widths(&[7, 8, 8, 8, 1]), 3).unwrap();
        // lr 0 never improves validation
        let mut adam = Adam::new(&net, AdamConfig { lr: 0.0, ..Default::default() });
        let cfg = TrainConfig {
            steps: 1000,
            batch_size: 50,
            eval_every: 10,
            patience: 3,
            ..Default::default()
        };
        let s = train(&mut net, &mut adam, &data, Some(&data), &cfg, |_| {}).unwrap();
        assert!(s.stopped_early);
        assert_eq!(s.final_step, 40);
    }

    #[test]
    fn minibatch_is_reproducible() {
        assert_eq!(minibatch(100, 10, 1, 7), minibatch(100, 10, 1, 7));
        assert_ne!(minibatch(100, 10, 1, 7), minibatch(100, 10, 1, 8));
        assert_eq!(minibatch(5, 10, 1, 7), vec![0, 1, 2, 3, 4]);
    }
}
