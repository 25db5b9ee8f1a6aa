use std::collections::HashMap;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use vps_core::media::FrameSequence;
use vps_core::model::{FrameRef, Shot};
use vps_core::shots::{
    boundaries_from_scores, detect_shots, histogram_distance, shots_from_boundaries,
    ShotDetectorConfig, ShotError,
};

fn seq(images: Vec<RgbImage>) -> FrameSequence {
    FrameSequence {
        asset_id: "v".into(),
        frames: images
            .into_iter()
            .enumerate()
            .map(|(i, img)| {
                (
                    FrameRef {
                        asset_id: "v".into(),
                        frame_index: i as u64 * 15,
                        timestamp_s: i as f64 * 0.5,
                    },
                    img,
                )
            })
            .collect(),
        native_fps: 30.0,
        sample_stride: 15,
    }
}

fn solid(rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(24, 16, Rgb(rgb))
}

fn spans(shots: &[Shot]) -> Vec<(usize, usize)> {
    shots.iter().map(|s| (s.start_frame, s.end_frame)).collect()
}

/// Independent histogram: bins keyed by (hue sector, sat quarter, value quarter),
/// hue taken from atan2 on the opponent axes.
fn oracle_hist(img: &RgbImage) -> HashMap<(u32, u32, u32), f64> {
    let mut m = HashMap::new();
    let n = (img.width() * img.height()) as f64;
    for p in img.pixels() {
        let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let s = if max > 0.0 { (max - min) / max } else { 0.0 };
        let hue = if max == min {
            0.0
        } else {
            // hexagonal hue; matches the standard piecewise formula on pure colours
            let alpha = r - 0.5 * (g + b);
            let beta = (3f64).sqrt() / 2.0 * (g - b);
            beta.atan2(alpha).to_degrees().rem_euclid(360.0)
        };
        let key = (
            ((hue / 22.5) as u32).min(15),
            ((s * 4.0) as u32).min(3),
            ((max * 4.0) as u32).min(3),
        );
        *m.entry(key).or_insert(0.0) += 1.0 / n;
    }
    m
}

fn oracle_distance(a: &RgbImage, b: &RgbImage) -> f64 {
    let (ha, hb) = (oracle_hist(a), oracle_hist(b));
    let mut keys: Vec<_> = ha.keys().chain(hb.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|k| (ha.get(k).unwrap_or(&0.0) - hb.get(k).unwrap_or(&0.0)).abs())
        .sum()
}

#[test]
fn identical_frames_make_one_shot() {
    let s = detect_shots(
        &seq(vec![solid([30, 90, 60]); 100]),
        &ShotDetectorConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(spans(&s), vec![(0, 99)]);
}

#[test]
fn red_then_blue_splits_at_fifty() {
    let mut frames = vec![solid([255, 0, 0]); 50];
    frames.extend(vec![solid([0, 0, 255]); 50]);
    let series: Vec<f64> = frames
        .windows(2)
        .map(|w| oracle_distance(&w[0], &w[1]))
        .collect();
    let spikes: Vec<usize> = series
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(g, _)| g + 1)
        .collect();
    assert_eq!(spikes, vec![50]);
    assert!((series[49] - 2.0).abs() < 1e-12);

    let s = detect_shots(&seq(frames), &ShotDetectorConfig::default(), None).unwrap();
    assert_eq!(spans(&s), vec![(0, 49), (50, 99)]);
}

#[test]
fn alternating_frames_collapse_into_one_shot() {
    let frames: Vec<_> = (0..40)
        .map(|i| {
            if i % 2 == 0 {
                solid([255, 0, 0])
            } else {
                solid([0, 0, 255])
            }
        })
        .collect();
    let cfg = ShotDetectorConfig {
        min_shot_len: 8,
        ..Default::default()
    };
    let s = detect_shots(&seq(frames), &cfg, None).unwrap();
    assert_eq!(spans(&s), vec![(0, 39)]);
}

#[test]
fn distance_examples() {
    let red = solid([255, 0, 0]);
    let blue = solid([0, 0, 255]);
    assert_eq!(histogram_distance(&red, &red).unwrap(), 0.0);
    assert_eq!(histogram_distance(&red, &blue).unwrap(), 2.0);
    assert!(matches!(
        histogram_distance(&red, &RgbImage::new(2, 2)),
        Err(ShotError::DimensionMismatch { .. })
    ));
}

#[test]
fn empty_sequence_and_bad_config_are_rejected() {
    assert!(matches!(
        detect_shots(&seq(vec![]), &ShotDetectorConfig::default(), None),
        Err(ShotError::EmptySequence)
    ));
    let bad = ShotDetectorConfig {
        boundary_threshold: 2.5,
        ..Default::default()
    };
    assert!(matches!(
        detect_shots(&seq(vec![solid([0, 0, 0])]), &bad, None),
        Err(ShotError::InvalidConfig(_))
    ));
}

#[test]
fn merging_can_yield_more_shots_after_a_boundary_drops() {
    // pieces of 10, 2, 2, 10 frames: the two short ones fold into the first shot;
    // without the middle cut they form one 4-frame piece that stands alone
    let scores_with = |mid: f64| {
        let mut s = vec![0.0; 23];
        s[9] = 1.0;
        s[11] = mid;
        s[13] = 1.0;
        s
    };
    let at = |thr: f64| {
        let b = boundaries_from_scores(&scores_with(0.5), thr);
        shots_from_boundaries("v", 24, &b, 4).len()
    };
    assert_eq!(at(0.35), 2);
    assert_eq!(at(0.6), 3);
}

fn random_image(seed: &[u8], w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let i = ((y * w + x) as usize * 3) % seed.len();
        Rgb([
            seed[i],
            seed[(i + 1) % seed.len()],
            seed[(i + 2) % seed.len()],
        ])
    })
}

proptest! {
    #[test]
    fn shots_partition_the_range(
        n in 1usize..300,
        raw in proptest::collection::vec(0usize..300, 0..40),
        min_len in 1usize..10,
    ) {
        let shots = shots_from_boundaries("v", n, &raw, min_len);
        prop_assert!(!shots.is_empty());
        prop_assert_eq!(shots[0].start_frame, 0);
        prop_assert_eq!(shots.last().unwrap().end_frame, n - 1);
        for w in shots.windows(2) {
            prop_assert_eq!(w[0].end_frame + 1, w[1].start_frame);
        }
        for s in &shots {
            prop_assert!(s.start_frame <= s.end_frame);
        }
        if shots.len() > 1 {
            prop_assert!(shots.iter().all(|s| s.len() >= min_len));
        }
    }

    #[test]
    fn raising_the_threshold_only_removes_boundaries(
        scores in proptest::collection::vec(0.0f64..2.0, 0..120),
        t1 in 0.01f64..2.0,
        dt in 0.0f64..1.0,
    ) {
        let t2 = (t1 + dt).min(2.0);
        let low = boundaries_from_scores(&scores, t1);
        let high = boundaries_from_scores(&scores, t2);
        prop_assert!(high.iter().all(|b| low.contains(b)));
        let n = scores.len() + 1;
        // with no merging the shot count is the boundary count plus one
        prop_assert!(
            shots_from_boundaries("v", n, &high, 1).len()
                <= shots_from_boundaries("v", n, &low, 1).len()
        );
    }

    #[test]
    fn detection_is_deterministic(
        pattern in proptest::collection::vec(0u8..4, 1..60),
    ) {
        let palette = [[255, 0, 0], [0, 0, 255], [0, 200, 0], [250, 250, 250]];
        let frames: Vec<_> = pattern.iter().map(|p| solid(palette[*p as usize])).collect();
        let cfg = ShotDetectorConfig::default();
        let a = detect_shots(&seq(frames.clone()), &cfg, None).unwrap();
        let b = detect_shots(&seq(frames), &cfg, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn distance_is_a_bounded_symmetric_metric(
        a in proptest::collection::vec(any::<u8>(), 3..64),
        b in proptest::collection::vec(any::<u8>(), 3..64),
    ) {
        let (x, y) = (random_image(&a, 9, 7), random_image(&b, 9, 7));
        let dxy = histogram_distance(&x, &y).unwrap();
        let dyx = histogram_distance(&y, &x).unwrap();
        prop_assert!((0.0..=2.0).contains(&dxy));
        prop_assert_eq!(dxy, dyx);
        prop_assert_eq!(histogram_distance(&x, &x).unwrap(), 0.0);
    }
}
