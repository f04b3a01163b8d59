use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_surface_with, IndexedMesh};
use crate::{Error, Point3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    NearSurface,
    Uniform,
}

/// Query points with ground-truth occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPoints {
    pub points: Vec<Point3>,
    pub labels: Vec<f64>,
    pub kinds: Vec<SampleKind>,
    /// Points left exactly on the scan surface (zero noise); labelled inside.
    pub on_surface: Vec<bool>,
}

impl TrainPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inside_fraction(&self, kind: SampleKind) -> f64 {
        let (n, inside) = self
            .kinds
            .iter()
            .zip(&self.labels)
            .filter(|(k, _)| **k == kind)
            .fold((0usize, 0.0), |(n, s), (_, &l)| (n + 1, s + l));
        if n == 0 {
            0.0
        } else {
            inside / n as f64
        }
    }
}

/// `n_surface` area-uniform surface points jittered by isotropic Gaussian
/// noise of std `sigma`, followed by `n_uniform` points in the scan's
/// bounding box padded by 10%. Labels come from the winding number.
pub fn sample_training_points(
    scan: &IndexedMesh,
    n_surface: usize,
    n_uniform: usize,
    sigma: f64,
    seed: u64,
) -> Result<TrainPoints> {
    if !scan.is_watertight() {
        return Err(Error::Label("training scan is not watertight".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma {sigma} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_surface + n_uniform);
    let mut kinds = Vec::with_capacity(n_surface + n_uniform);
    let mut on_surface = Vec::with_capacity(n_surface + n_uniform);
    let surface = sample_surface_with(scan.mesh(), n_surface, &mut rng)?;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid std");
    for s in surface {
        let offset = if sigma > 0.0 {
            Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            Vec3::zeros()
        };
        points.push(s.point + offset);
        kinds.push(SampleKind::NearSurface);
        on_surface.push(sigma == 0.0);
    }
    let b = scan.mesh().bounds().padded(0.1);
    for _ in 0..n_uniform {
        points.push(Point3::new(
            rng.random_range(b.min.x..=b.max.x),
            rng.random_range(b.min.y..=b.max.y),
            rng.random_range(b.min.z..=b.max.z),
        ));
        kinds.push(SampleKind::Uniform);
        on_surface.push(false);
    }
    let labels = points
        .par_iter()
        .zip(&on_surface)
        .map(|(p, &on)| {
            if on {
                Ok(1.0)
            } else {
                scan.winding_occupancy(p).map(f64::from)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TrainPoints {
        points,
        labels,
        kinds,
        on_surface,
    })
}
