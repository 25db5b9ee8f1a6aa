//! K-means (k-means++ seeding, Lloyd iterations), silhouette score and k selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Embedding;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} but only {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no points")]
    Empty,
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("embeddings from different extractors: {0} and {1}")]
    MixedExtractors(String, String),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("assignments length {got} does not match {n} points")]
    AssignmentLength { got: usize, n: usize },
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Fixed seed; when absent a seed is derived from the case id.
    pub seed: Option<u64>,
    pub max_iters: usize,
    pub tol: f64,
    pub frames_per_cluster: usize,
    pub case_budget: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 8,
            seed: None,
            max_iters: 100,
            tol: 1e-6,
            frames_per_cluster: 1,
            case_budget: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k_min < 2 {
            return Err(ClusterError::InvalidConfig("k_min must be >= 2".into()));
        }
        if self.k_min > self.k_max {
            return Err(ClusterError::InvalidConfig(format!(
                "k_min {} > k_max {}",
                self.k_min, self.k_max
            )));
        }
        if !(self.tol > 0.0) {
            return Err(ClusterError::InvalidConfig("tol must be > 0".into()));
        }
        if self.frames_per_cluster < 1 {
            return Err(ClusterError::InvalidConfig(
                "frames_per_cluster must be >= 1".into(),
            ));
        }
        if self.case_budget < 1 {
            return Err(ClusterError::InvalidConfig(
                "case_budget must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn seed_for(&self, case_id: &str) -> u64 {
        self.seed.unwrap_or_else(|| seed_from_case_id(case_id))
    }
}

/// First eight bytes of SHA-256(case_id), little-endian.
pub fn seed_from_case_id(case_id: &str) -> u64 {
    let digest = Sha256::digest(case_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub silhouette: Option<f64>,
    pub iterations: usize,
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        self.vector()
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusterError> {
    let first = points.first().ok_or(ClusterError::Empty)?;
    let d = first.as_ref().len();
    for (index, p) in points.iter().enumerate() {
        if p.as_ref().len() != d {
            return Err(ClusterError::DimMismatch {
                index,
                got: p.as_ref().len(),
                expected: d,
            });
        }
    }
    Ok(d)
}

/// Rejects embeddings that came from different extractors or have different dims.
pub fn check_embeddings(points: &[Embedding]) -> Result<(), ClusterError> {
    check_points(points)?;
    let id = points[0].extractor_id();
    if let Some(other) = points.iter().find(|e| e.extractor_id() != id) {
        return Err(ClusterError::MixedExtractors(
            id.to_string(),
            other.extractor_id().to_string(),
        ));
    }
    Ok(())
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].as_ref().to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            if d2[chosen] == 0.0 {
                // rounding pushed us past the last positive weight
                chosen = d2.iter().rposition(|w| *w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. Deterministic for fixed inputs.
pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusteringResult, ClusterError> {
    let dim = check_points(points)?;
    let n = points.len();
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0usize;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p.as_ref(), &centroids);
            assignments[i] = j;
            inertia += d;
        }
        debug_assert!(
            inertia <= prev_inertia + 1e-9 * prev_inertia.abs().max(1.0),
            "inertia rose from {prev_inertia} to {inertia}"
        );
        prev_inertia = inertia;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        let mut new_centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();

        // re-seed empty clusters with the point farthest from its centroid,
        // taken only from clusters that can spare a member
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| !taken[i] && counts[assignments[i]] > 1)
                .map(|i| {
                    (
                        i,
                        sq_dist(points[i].as_ref(), &new_centroids[assignments[i]]),
                    )
                })
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = donor {
                taken[i] = true;
                counts[assignments[i]] -= 1;
                counts[j] = 1;
                new_centroids[j] = points[i].as_ref().to_vec();
            }
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        centroids = new_centroids;
        if shift < tol {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p.as_ref(), &centroids);
        assignments[i] = j;
        inertia += d;
    }
    Ok(ClusteringResult {
        k,
        assignments,
        centroids,
        inertia,
        silhouette: None,
        iterations,
    })
}

/// Mean silhouette over all points (Euclidean). Singleton members score 0.
pub fn silhouette_score<P: AsRef<[f64]>>(
    points: &[P],
    assignments: &[usize],
) -> Result<f64, ClusterError> {
    check_points(points)?;
    let n = points.len();
    if assignments.len() != n {
        return Err(ClusterError::AssignmentLength {
            got: assignments.len(),
            n,
        });
    }
    let n_labels = assignments.iter().copied().max().unwrap_or(0) + 1;
    let mut sizes = vec![0usize; n_labels];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|s| **s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; n_labels];
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += dist(points[i].as_ref(), points[j].as_ref());
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Index of the best score; exact ties go to the earlier entry.
pub fn pick_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if *s <= scores[b] => {}
            _ if s.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Sweeps k over `[k_min, min(k_max, n-1)]` and keeps the highest silhouette.
/// Fewer than three points, or all points identical, yield a single cluster.
pub fn select_k<P: AsRef<[f64]>>(
    points: &[P],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<ClusteringResult, ClusterError> {
    check_points(points)?;
    let n = points.len();
    let first = points[0].as_ref();
    let all_same = points.iter().all(|p| p.as_ref() == first);
    let k_hi = cfg.k_max.min(n.saturating_sub(1));
    if n < 3 || all_same || k_hi < cfg.k_min {
        return kmeans(points, 1, seed, cfg.max_iters, cfg.tol);
    }
    let mut candidates = Vec::new();
    for k in cfg.k_min..=k_hi {
        let mut r = kmeans(
            points,
            k,
            seed.wrapping_add(k as u64),
            cfg.max_iters,
            cfg.tol,
        )?;
        match silhouette_score(points, &r.assignments) {
            Ok(s) => {
                r.silhouette = Some(s);
                candidates.push(r);
            }
            Err(ClusterError::SingleCluster) => continue,
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|r| r.silhouette.unwrap_or(f64::NEG_INFINITY))
        .collect();
    match pick_best(&scores) {
        Some(i) => Ok(candidates.swap_remove(i)),
        None => kmeans(points, 1, seed, cfg.max_iters, cfg.tol),
    }
}
