//! Per-shot keyframe selection and case-level aggregation.

use serde::{Deserialize, Serialize};

use crate::cluster::{check_embeddings, dist, kmeans, select_k, ClusterError, ClusteringConfig};
use crate::model::{Embedding, FrameRef, Keyframe, Shot};

/// One row of `keyframes.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub asset_id: String,
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub cluster_id: usize,
    pub distance_to_centroid: f64,
    pub shot: Shot,
    /// Image file, relative to the manifest's directory.
    pub file: String,
}

impl ManifestEntry {
    pub fn from_keyframe(kf: &Keyframe, file: impl Into<String>) -> Self {
        Self {
            asset_id: kf.frame.asset_id.clone(),
            frame_index: kf.frame.frame_index,
            timestamp_s: kf.frame.timestamp_s,
            cluster_id: kf.cluster_id,
            distance_to_centroid: kf.distance_to_centroid,
            shot: kf.shot.clone(),
            file: file.into(),
        }
    }

    pub fn to_keyframe(&self) -> Keyframe {
        Keyframe {
            frame: FrameRef {
                asset_id: self.asset_id.clone(),
                frame_index: self.frame_index,
                timestamp_s: self.timestamp_s,
            },
            shot: self.shot.clone(),
            cluster_id: self.cluster_id,
            distance_to_centroid: self.distance_to_centroid,
        }
    }
}

/// Stable JPEG path for a keyframe, relative to the case work directory.
pub fn keyframe_file_name(kf: &Keyframe) -> String {
    format!(
        "keyframes/{}_{:06}.jpg",
        kf.frame.asset_id, kf.frame.frame_index
    )
}

/// Picks representative frames for one shot.
///
/// `frames` and `embeddings` hold exactly the shot's frames, in order. Within each
/// cluster the `frames_per_cluster` nearest frames win; equal distances go to the
/// earlier timestamp. Output is ordered by cluster, then by distance.
pub fn select_shot_keyframes(
    shot: &Shot,
    frames: &[FrameRef],
    embeddings: &[Embedding],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<Vec<Keyframe>, ClusterError> {
    if frames.len() != embeddings.len() {
        return Err(ClusterError::AssignmentLength {
            got: frames.len(),
            n: embeddings.len(),
        });
    }
    check_embeddings(embeddings)?;
    let result = select_k(embeddings, cfg, seed)?;
    let mut out = Vec::new();
    for c in 0..result.k {
        let mut members: Vec<(usize, f64)> = result
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == c)
            .map(|(i, _)| (i, dist(embeddings[i].vector(), &result.centroids[c])))
            .collect();
        members.sort_by(|(ia, da), (ib, db)| {
            da.total_cmp(db)
                .then(frames[*ia].timestamp_s.total_cmp(&frames[*ib].timestamp_s))
                .then(ia.cmp(ib))
        });
        for (i, d) in members.into_iter().take(cfg.frames_per_cluster) {
            out.push(Keyframe {
                frame: frames[i].clone(),
                shot: shot.clone(),
                cluster_id: c,
                distance_to_centroid: d,
            });
        }
    }
    Ok(out)
}

/// Reduces the case's keyframes to at most `case_budget`.
///
/// Under budget everything passes through untouched. Over budget, a k-means with
/// `k = case_budget` keeps the nearest member of each cluster; clusters left empty
/// by the final assignment are back-filled farthest-first from members whose
/// embeddings differ from every selected one. Returns indices into the input,
/// ascending, with cluster ids and distances rewritten to the final clustering.
pub fn aggregate_case_keyframes(
    keyframes: &[Keyframe],
    embeddings: &[Embedding],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<Vec<(usize, Keyframe)>, ClusterError> {
    if keyframes.len() != embeddings.len() {
        return Err(ClusterError::AssignmentLength {
            got: keyframes.len(),
            n: embeddings.len(),
        });
    }
    if keyframes.is_empty() {
        return Err(ClusterError::Empty);
    }
    check_embeddings(embeddings)?;
    if keyframes.len() <= cfg.case_budget {
        return Ok(keyframes.iter().cloned().enumerate().collect());
    }
    let k = cfg.case_budget;
    let result = kmeans(embeddings, k, seed, cfg.max_iters, cfg.tol)?;

    let earlier = |a: usize, b: usize| {
        keyframes[a]
            .frame
            .timestamp_s
            .total_cmp(&keyframes[b].frame.timestamp_s)
            .then(a.cmp(&b))
    };
    let mut chosen: Vec<(usize, usize, f64)> = Vec::with_capacity(k);
    for c in 0..k {
        let best = result
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == c)
            .map(|(i, _)| (i, dist(embeddings[i].vector(), &result.centroids[c])))
            .min_by(|(ia, da), (ib, db)| da.total_cmp(db).then(earlier(*ia, *ib)));
        if let Some((i, d)) = best {
            chosen.push((i, c, d));
        }
    }

    while chosen.len() < k {
        let candidate = (0..keyframes.len())
            .filter(|i| {
                chosen
                    .iter()
                    .all(|(j, _, _)| embeddings[*j].vector() != embeddings[*i].vector())
            })
            .map(|i| {
                let gap = chosen
                    .iter()
                    .map(|(j, _, _)| dist(embeddings[i].vector(), embeddings[*j].vector()))
                    .fold(f64::INFINITY, f64::min);
                (i, gap)
            })
            .max_by(|(ia, ga), (ib, gb)| ga.total_cmp(gb).then(earlier(*ib, *ia)));
        let Some((i, _)) = candidate else { break };
        let c = result.assignments[i];
        chosen.push((i, c, dist(embeddings[i].vector(), &result.centroids[c])));
    }

    chosen.sort_by_key(|(i, _, _)| *i);
    Ok(chosen
        .into_iter()
        .map(|(i, c, d)| {
            let mut kf = keyframes[i].clone();
            kf.cluster_id = c;
            kf.distance_to_centroid = d;
            (i, kf)
        })
        .collect())
}
