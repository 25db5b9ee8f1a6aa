use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vps_core::cluster::{kmeans, pick_best, select_k, silhouette_score, ClusteringConfig};

/// Direct transcription of the silhouette definition.
fn oracle_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let d = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let n = points.len();
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let same: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / same.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &distinct {
            if c == labels[i] {
                continue;
            }
            let others: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            let mean = others
                .iter()
                .map(|&j| d(&points[i], &points[j]))
                .sum::<f64>()
                / others.len() as f64;
            b = b.min(mean);
        }
        let denom = if a > b { a } else { b };
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

fn blobs(seed: u64, per: usize, centers: &[[f64; 2]], sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt() * sigma;
            let t = 2.0 * std::f64::consts::PI * u2;
            pts.push(vec![center[0] + r * t.cos(), center[1] + r * t.sin()]);
            labels.push(c);
        }
    }
    (pts, labels)
}

const CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [10.0, 0.0], [5.0, 10.0]];

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn three_blobs_recover_the_planted_partition() {
    let (pts, planted) = blobs(11, 10, &CENTERS, 0.1);
    // nearest true centre labelling as the brute-force reference
    let nearest: Vec<usize> = pts
        .iter()
        .map(|p| {
            (0..3)
                .min_by(|&a, &b| {
                    let da = (p[0] - CENTERS[a][0]).hypot(p[1] - CENTERS[a][1]);
                    let db = (p[0] - CENTERS[b][0]).hypot(p[1] - CENTERS[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    assert_eq!(nearest, planted);
    let r = kmeans(&pts, 3, 5, 100, 1e-6).unwrap();
    assert!(same_partition(&r.assignments, &planted));
}

#[test]
fn silhouette_sweep_peaks_at_three() {
    let (pts, _) = blobs(12, 10, &CENTERS, 0.1);
    let cfg = ClusteringConfig::default();
    let chosen = select_k(&pts, &cfg, 99).unwrap();
    assert_eq!(chosen.k, 3);
    // the oracle agrees that k = 3 has the top score among the swept clusterings
    let mut scores = Vec::new();
    for k in 2..=8 {
        let r = kmeans(&pts, k, 99u64.wrapping_add(k as u64), 100, 1e-6).unwrap();
        scores.push(oracle_silhouette(&pts, &r.assignments));
    }
    assert_eq!(pick_best(&scores), Some(1));
}

#[test]
fn duplicated_clusters_score_one() {
    let mut pts = vec![vec![0.0, 0.0]; 3];
    pts.extend(vec![vec![9.0, 9.0]; 3]);
    assert_eq!(silhouette_score(&pts, &[0, 0, 0, 1, 1, 1]).unwrap(), 1.0);
}

#[test]
fn lone_point_in_second_cluster_matches_oracle() {
    let pts: Vec<Vec<f64>> = (0..9)
        .map(|i| vec![i as f64, (i * i) as f64 * 0.1])
        .collect();
    let mut labels = vec![0; 9];
    labels[4] = 1;
    let got = silhouette_score(&pts, &labels).unwrap();
    assert!((got - oracle_silhouette(&pts, &labels)).abs() < 1e-12);
}

#[test]
fn degenerate_inputs_use_one_cluster() {
    let cfg = ClusteringConfig::default();
    let two = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
    let r = select_k(&two, &cfg, 0).unwrap();
    assert_eq!(r.k, 1);
    assert_eq!(r.silhouette, None);
    let same = vec![vec![3.0]; 7];
    assert_eq!(select_k(&same, &cfg, 0).unwrap().k, 1);
}

#[test]
fn square_of_duplicated_corners() {
    // Four corners, each twice. k = 4 separates duplicates perfectly (score 1),
    // so the sweep settles there rather than at a tie with k = 2.
    let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let pts: Vec<Vec<f64>> = corners
        .iter()
        .flat_map(|c| [c.to_vec(), c.to_vec()])
        .collect();
    let r = select_k(&pts, &ClusteringConfig::default(), 3).unwrap();
    assert_eq!(r.k, 4);
    assert_eq!(r.silhouette, Some(1.0));
    // on an exact tie the smaller k wins
    assert_eq!(pick_best(&[0.25, 0.4, 0.4]), Some(1));
}

#[test]
fn select_k_is_deterministic() {
    let (pts, _) = blobs(13, 12, &CENTERS, 0.8);
    let cfg = ClusteringConfig::default();
    let a = select_k(&pts, &cfg, 42).unwrap();
    let b = select_k(&pts, &cfg, 42).unwrap();
    assert_eq!(a, b);
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, u64)> {
    (2usize..=60, 1usize..=8, any::<u64>()).prop_flat_map(|(n, dim, seed)| {
        (
            proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, dim), n),
            1usize..=n.min(8),
            Just(seed),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn silhouette_matches_brute_force((pts, k, seed) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k.max(2);
        let labels: Vec<usize> = (0..pts.len()).map(|_| rng.gen_range(0..k)).collect();
        let distinct = { let mut l = labels.clone(); l.sort(); l.dedup(); l.len() };
        prop_assume!(distinct >= 2);
        let got = silhouette_score(&pts, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&got));
        prop_assert!((got - oracle_silhouette(&pts, &labels)).abs() < 1e-9);
    }

    #[test]
    fn converged_points_sit_with_their_nearest_centroid((pts, k, seed) in instance()) {
        let r = kmeans(&pts, k, seed, 100, 1e-6).unwrap();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut inertia = 0.0;
        for (p, &a) in pts.iter().zip(&r.assignments) {
            let own = sq(p, &r.centroids[a]);
            inertia += own;
            for c in &r.centroids {
                prop_assert!(own <= sq(p, c));
            }
        }
        prop_assert!((inertia - r.inertia).abs() <= 1e-9 * inertia.max(1.0));
        prop_assert_eq!(r.centroids.len(), k);
    }

    #[test]
    fn kmeans_is_deterministic((pts, k, seed) in instance()) {
        prop_assert_eq!(kmeans(&pts, k, seed, 50, 1e-6).unwrap(), kmeans(&pts, k, seed, 50, 1e-6).unwrap());
    }
}
