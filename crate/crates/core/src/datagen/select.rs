//! Pose-diverse subset selection: fit a diagonal Gaussian mixture to a
//! reference pose set, keep the candidates it explains worst, cluster them
//! with k-medoids and draw a fixed number per cluster.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const VAR_FLOOR: f64 = 1e-6;
const MAX_REINITS: usize = 5;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean log-likelihood of the training data after each EM iteration.
    pub trace: Vec<f64>,
    /// Components re-seeded after collapsing.
    pub reinits: usize,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let d = data
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Clustering("empty data set".into()))?;
    if d == 0 || data.iter().any(|r| r.len() != d) {
        return Err(Error::Clustering("rows must share a positive dimension".into()));
    }
    if data.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Clustering("data contains non-finite values".into()));
    }
    Ok(d)
}

/// k-means++ style seeding: first centre uniform, later ones with
/// probability proportional to squared distance to the nearest centre.
fn seed_centres(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centres = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[centres[0]])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centres.push(next);
        for (x, d) in data.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &data[next]));
        }
    }
    centres
}

fn global_variance(data: &[Vec<f64>]) -> Vec<f64> {
    let n = data.len() as f64;
    (0..data[0].len())
        .map(|j| {
            let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
            (data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR)
        })
        .collect()
}

impl Gmm {
    /// Expectation-maximization from seeded centres. A component whose
    /// responsibility mass vanishes is re-seeded at the worst-explained
    /// point; more than five re-seeds is an error.
    pub fn fit(data: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<Self> {
        check_rows(data)?;
        let n = data.len();
        if k == 0 || k > n {
            return Err(Error::Clustering(format!("cannot fit {k} components to {n} points")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var_all = global_variance(data);
        let init = Gmm {
            weights: vec![1.0 / k as f64; k],
            means: seed_centres(data, k, &mut rng).into_iter().map(|i| data[i].clone()).collect(),
            variances: vec![var_all; k],
            trace: Vec::new(),
            reinits: 0,
        };
        init.refine(data, max_iter, tol, MAX_REINITS)
    }

    fn refine(mut self, data: &[Vec<f64>], max_iter: usize, tol: f64, max_reinits: usize) -> Result<Self> {
        let n = data.len();
        let k = self.weights.len();
        let d = data[0].len();
        let var_all = global_variance(data);
        self.trace.clear();
        let mut gmm = self;
        let mut resp = vec![vec![0.0; k]; n];
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..max_iter {
            // E step
            let mut ll = 0.0;
            let mut point_ll = vec![0.0; n];
            for (i, x) in data.iter().enumerate() {
                let logs: Vec<f64> = (0..k).map(|c| gmm.weights[c].ln() + gmm.log_component(c, x)).collect();
                let lse = log_sum_exp(&logs);
                for c in 0..k {
                    resp[i][c] = (logs[c] - lse).exp();
                }
                point_ll[i] = lse;
                ll += lse;
            }
            ll /= n as f64;
            gmm.trace.push(ll);
            // M step
            let mut collapsed = false;
            for c in 0..k {
                let mass: f64 = resp.iter().map(|r| r[c]).sum();
                if mass < 1e-8 * n as f64 {
                    gmm.reinits += 1;
                    if gmm.reinits > max_reinits {
                        return Err(Error::Clustering(format!(
                            "mixture component collapsed more than {max_reinits} times"
                        )));
                    }
                    let worst = point_ll
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .expect("non-empty");
                    gmm.means[c] = data[worst].clone();
                    gmm.variances[c] = var_all.clone();
                    gmm.weights[c] = 1.0 / n as f64;
                    collapsed = true;
                    continue;
                }
                let mean: Vec<f64> = (0..d)
                    .map(|j| data.iter().zip(&resp).map(|(x, r)| r[c] * x[j]).sum::<f64>() / mass)
                    .collect();
                let var: Vec<f64> = (0..d)
                    .map(|j| {
                        (data.iter().zip(&resp).map(|(x, r)| r[c] * (x[j] - mean[j]).powi(2)).sum::<f64>()
                            / mass)
                            .max(VAR_FLOOR)
                    })
                    .collect();
                gmm.weights[c] = mass / n as f64;
                gmm.means[c] = mean;
                gmm.variances[c] = var;
            }
            let total: f64 = gmm.weights.iter().sum();
            gmm.weights.iter_mut().for_each(|w| *w /= total);
            if !collapsed && (ll - prev).abs() < tol {
                break;
            }
            prev = if collapsed { f64::NEG_INFINITY } else { ll };
        }
        Ok(gmm)
    }

    fn log_component(&self, c: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
            s += (xi - m).powi(2) / v + v.ln() + (std::f64::consts::TAU).ln();
        }
        -0.5 * s
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.weights.len())
            .map(|c| self.weights[c].ln() + self.log_component(c, x))
            .collect();
        log_sum_exp(&logs)
    }
}

/// Voronoi-iteration k-medoids. Returns medoid indices and each point's
/// cluster.
pub fn k_medoids(data: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_rows(data)?;
    if k == 0 || k > data.len() {
        return Err(Error::Clustering(format!(
            "cannot form {k} clusters from {} points",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = seed_centres(data, k, &mut rng);
    let assign = |medoids: &[usize]| -> Vec<usize> {
        data.iter()
            .map(|x| {
                (0..medoids.len())
                    .min_by(|&a, &b| {
                        sq_dist(x, &data[medoids[a]]).total_cmp(&sq_dist(x, &data[medoids[b]]))
                    })
                    .expect("k > 0")
            })
            .collect()
    };
    let mut labels = assign(&medoids);
    for _ in 0..max_iter {
        let mut changed = false;
        for (c, medoid) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let cost = |m: usize| members.iter().map(|&i| sq_dist(&data[i], &data[m]).sqrt()).sum::<f64>();
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
                .expect("non-empty");
            if best != *medoid && cost(best) < cost(*medoid) {
                *medoid = best;
                changed = true;
            }
        }
        labels = assign(&medoids);
        if !changed {
            break;
        }
    }
    Ok((medoids, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub gmm_components: usize,
    pub n_clusters: usize,
    pub per_cluster: usize,
    /// Fraction of candidates, ordered by likelihood, kept for clustering.
    pub low_fraction: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            gmm_components: 8,
            n_clusters: 50,
            per_cluster: 12,
            low_fraction: 0.5,
            max_iter: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected candidate indices, grouped by cluster.
    pub indices: Vec<usize>,
    /// Candidate log-likelihood under the reference mixture.
    pub log_likelihood: Vec<f64>,
    pub gmm: Gmm,
}

/// Selects `n_clusters * per_cluster` candidates. A cluster smaller than
/// `per_cluster` contributes all its members and the shortfall is taken
/// from the unselected low-likelihood pool, nearest to its medoid first.
pub fn pose_select(reference: &[Vec<f64>], candidates: &[Vec<f64>], cfg: &SelectConfig) -> Result<Selection> {
    let want = cfg.n_clusters * cfg.per_cluster;
    if !(cfg.low_fraction > 0.0 && cfg.low_fraction <= 1.0) {
        return Err(Error::Clustering("low_fraction must lie in (0, 1]".into()));
    }
    let dim = check_rows(candidates)?;
    if check_rows(reference)? != dim {
        return Err(Error::Clustering("reference and candidate dimensions differ".into()));
    }
    let pool_size = (candidates.len() as f64 * cfg.low_fraction).round() as usize;
    if want == 0 || pool_size < want {
        return Err(Error::Clustering(format!(
            "need {want} selections but the low-likelihood pool holds {pool_size} of {} candidates",
            candidates.len()
        )));
    }
    let gmm = Gmm::fit(reference, cfg.gmm_components, cfg.max_iter, 1e-9, cfg.seed)?;
    let log_likelihood: Vec<f64> = candidates.iter().map(|x| gmm.log_density(x)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| log_likelihood[a].total_cmp(&log_likelihood[b]).then(a.cmp(&b)));
    let pool: Vec<usize> = order[..pool_size].to_vec();
    let pool_data: Vec<Vec<f64>> = pool.iter().map(|&i| candidates[i].clone()).collect();
    let (medoids, labels) = k_medoids(&pool_data, cfg.n_clusters, 100, cfg.seed ^ 0x6b6d)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x73616d70);
    let mut taken = vec![false; pool.len()];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_clusters);
    for c in 0..cfg.n_clusters {
        let members: Vec<usize> = (0..pool.len()).filter(|&i| labels[i] == c).collect();
        let chosen: Vec<usize> = if members.len() > cfg.per_cluster {
            let mut pick: Vec<usize> = sample(&mut rng, members.len(), cfg.per_cluster)
                .into_iter()
                .map(|j| members[j])
                .collect();
            pick.sort_unstable();
            pick
        } else {
            members
        };
        for &i in &chosen {
            taken[i] = true;
        }
        groups.push(chosen);
    }
    for (c, group) in groups.iter_mut().enumerate() {
        if group.len() < cfg.per_cluster {
            let m = &pool_data[medoids[c]];
            let mut rest: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
            rest.sort_by(|&a, &b| {
                sq_dist(&pool_data[a], m)
                    .total_cmp(&sq_dist(&pool_data[b], m))
                    .then(a.cmp(&b))
            });
            for i in rest.into_iter().take(cfg.per_cluster - group.len()) {
                taken[i] = true;
                group.push(i);
            }
        }
    }
    let indices = groups.into_iter().flatten().map(|i| pool[i]).collect();
    Ok(Selection {
        indices,
        log_likelihood,
        gmm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(centre: f64, n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 0.1).unwrap();
        (0..n)
            .map(|_| (0..dim).map(|_| centre + nd.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let mut data = blob(0.0, 200, 3, 1);
        data.extend(blob(2.0, 200, 3, 2));
        let g = Gmm::fit(&data, 4, 100, 0.0, 5).unwrap();
        assert_eq!(g.reinits, 0);
        for w in g.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_recovers_separated_means() {
        let mut data = blob(-1.0, 300, 2, 3);
        data.extend(blob(1.0, 300, 2, 4));
        let g = Gmm::fit(&data, 2, 200, 1e-12, 0).unwrap();
        let mut m: Vec<f64> = g.means.iter().map(|m| m[0]).collect();
        m.sort_by(f64::total_cmp);
        assert!((m[0] + 1.0).abs() < 0.05 && (m[1] - 1.0).abs() < 0.05, "{m:?}");
        assert!(g.log_density(&[1.0, 1.0]) > g.log_density(&[5.0, 5.0]));
    }

    fn stranded_component(data: &[Vec<f64>]) -> Gmm {
        Gmm {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0, 0.0], vec![1e6, 1e6]],
            variances: vec![vec![1.0, 1.0], vec![1e-6, 1e-6]],
            trace: Vec::new(),
            reinits: 0,
        }
        .refine(data, 50, 0.0, MAX_REINITS)
        .unwrap()
    }

    #[test]
    fn collapsed_component_is_reseeded() {
        let mut data = blob(0.0, 100, 2, 1);
        data.extend(blob(3.0, 100, 2, 2));
        let g = stranded_component(&data);
        assert_eq!(g.reinits, 1);
        assert!(g.weights.iter().all(|&w| w > 0.3), "{:?}", g.weights);
        let strict = Gmm {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0, 0.0], vec![1e6, 1e6]],
            variances: vec![vec![1.0, 1.0], vec![1e-6, 1e-6]],
            trace: Vec::new(),
            reinits: 0,
        };
        assert!(matches!(strict.refine(&data, 50, 0.0, 0), Err(Error::Clustering(_))));
    }

    #[test]
    fn medoids_split_two_groups() {
        let mut data = blob(0.0, 30, 2, 7);
        data.extend(blob(5.0, 30, 2, 8));
        let (medoids, labels) = k_medoids(&data, 2, 50, 1).unwrap();
        assert_ne!(labels[medoids[0]], labels[medoids[1]]);
        assert!(labels[..30].iter().all(|&l| l == labels[0]));
        assert!(labels[30..].iter().all(|&l| l == labels[30]));
    }

    #[test]
    fn selection_from_the_unfamiliar_blob() {
        let a = blob(0.0, 300, 6, 11);
        let b = blob(3.0, 300, 6, 12);
        let mut candidates = a.clone();
        candidates.extend(b);
        let cfg = SelectConfig {
            n_clusters: 5,
            per_cluster: 12,
            ..Default::default()
        };
        let s = pose_select(&a, &candidates, &cfg).unwrap();
        assert_eq!(s.indices.len(), 60);
        assert!(s.indices.iter().all(|&i| i >= 300));
        let mut u = s.indices.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 60);
    }

    #[test]
    fn identical_sets_still_fill_the_quota() {
        let a = blob(0.0, 100, 4, 21);
        let cfg = SelectConfig {
            n_clusters: 4,
            per_cluster: 5,
            ..Default::default()
        };
        let s = pose_select(&a, &a, &cfg).unwrap();
        assert_eq!(s.indices.len(), 20);
        let again = pose_select(&a, &a, &cfg).unwrap();
        assert_eq!(s.indices, again.indices);
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let a = blob(0.0, 50, 2, 1);
        let cfg = SelectConfig {
            n_clusters: 5,
            per_cluster: 6,
            ..Default::default()
        };
        assert!(pose_select(&a, &a, &cfg).is_err());
    }
}
