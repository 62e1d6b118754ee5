//! Set-level similarity against a direct-loop oracle, plus its invariances.

use std::collections::BTreeMap;

use codetect::model::{BoundingBox, Detection, MotionClass, Proposal, VideoMeta};
use codetect::similarity::{
    chi2_distance, compute_similarity, gradient_histogram_descriptor, intensity_histogram_descriptor, l2_distance, rotate_crop, rotated_descriptors,
    sample_frames, CropDescriptors, CropSource, RasterCrop, SimilarityError, SimilarityMatrix, SHAPE_DIM,
};
use proptest::prelude::*;

/// Pixels are a smooth pattern of absolute image position, so overlapping
/// boxes see consistent content.
struct Pattern {
    seed: f64,
    quarter_turns: BTreeMap<String, u8>,
}

impl CropSource for Pattern {
    fn crop(&self, video: &str, frame: usize, b: &BoundingBox) -> Result<RasterCrop, SimilarityError> {
        let (w, h) = (b.width().round() as usize, b.height().round() as usize);
        let (x0, y0) = (b.x_min(), b.y_min());
        let s = self.seed + frame as f64 * 0.01;
        let crop = RasterCrop::from_fn(w, h, |r, c| {
            let (x, y) = (x0 + c as f64, y0 + r as f64);
            0.5 + 0.25 * (x * 0.21 + s).sin() + 0.25 * (y * 0.13 * (1.0 + s * 0.1)).cos() * (x * 0.05).sin()
        });
        Ok(rotate_crop(&crop, *self.quarter_turns.get(video).unwrap_or(&0)))
    }
}

fn video(id: &str) -> VideoMeta {
    VideoMeta::new(id, 200.0, 150.0, 12).unwrap()
}

fn stationary(v: &VideoMeta, x: f64, y: f64, w: f64, h: f64) -> Proposal {
    let b = BoundingBox::new(x, y, x + w, y + h).unwrap();
    let boxes = (1..=v.frame_count).map(|t| Detection::new(t, b)).collect();
    Proposal::new(v, boxes, MotionClass::Stationary, 1).unwrap()
}

fn moving(v: &VideoMeta, x: f64, y: f64, w: f64, h: f64, dx: f64) -> Proposal {
    let boxes = (1..=v.frame_count)
        .map(|t| Detection::new(t, BoundingBox::new(x + dx * t as f64, y, x + w + dx * t as f64, y + h).unwrap()))
        .collect();
    Proposal::new(v, boxes, MotionClass::Moving, 1).unwrap()
}

fn corpus() -> BTreeMap<String, Vec<Proposal>> {
    let (a, b) = (video("a"), video("b"));
    let mut m = BTreeMap::new();
    m.insert(
        "a".to_string(),
        vec![
            stationary(&a, 10.0, 10.0, 30.0, 20.0),
            moving(&a, 50.0, 40.0, 24.0, 24.0, 3.0),
            stationary(&a, 100.0, 90.0, 16.0, 40.0),
        ],
    );
    m.insert(
        "b".to_string(),
        vec![
            stationary(&b, 10.0, 10.0, 30.0, 20.0),
            stationary(&b, 120.0, 20.0, 20.0, 20.0),
            moving(&b, 20.0, 80.0, 36.0, 18.0, -1.0),
            stationary(&b, 60.0, 60.0, 12.0, 12.0),
        ],
    );
    m
}

fn all_pairs() -> Vec<(String, String)> {
    vec![("a".into(), "a".into()), ("a".into(), "b".into()), ("b".into(), "b".into())]
}

fn source(turns: &[(&str, u8)]) -> CropDescriptors<Pattern> {
    CropDescriptors::new(Pattern {
        seed: 0.3,
        quarter_turns: turns.iter().map(|(v, k)| (v.to_string(), *k)).collect(),
    })
}

const M: usize = 3;

/// Direct evaluation: every descriptor recomputed, every distance taken with
/// the scalar functions, ranges fitted by hand over all rotation pairs.
fn oracle(props: &BTreeMap<String, Vec<Proposal>>, src: &Pattern) -> BTreeMap<(String, String), Vec<Vec<f64>>> {
    let descs = |v: &str, p: &Proposal| -> Vec<_> {
        sample_frames(p.frame_count(), M)
            .into_iter()
            .map(|t| rotated_descriptors(&src.crop(v, t, &p.at(t).bbox).unwrap()).unwrap())
            .collect()
    };
    let mut raw = BTreeMap::new();
    let (mut amin, mut amax, mut smin, mut smax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (va, vb) in all_pairs() {
        let mut table = Vec::new();
        for p in &props[&va] {
            let mut row = Vec::new();
            for q in &props[&vb] {
                let (dp, dq) = (descs(&va, p), descs(&vb, q));
                let mut per_sample = Vec::new();
                for (x, y) in dp.iter().zip(&dq) {
                    let mut pairs = Vec::new();
                    for r1 in 0..4 {
                        for r2 in 0..4 {
                            let da = chi2_distance(&x.appearance[r1], &y.appearance[r2]).unwrap();
                            let ds = l2_distance(&x.shape[r1], &y.shape[r2]).unwrap();
                            amin = amin.min(da);
                            amax = amax.max(da);
                            smin = smin.min(ds);
                            smax = smax.max(ds);
                            pairs.push((da, ds));
                        }
                    }
                    per_sample.push(pairs);
                }
                row.push(per_sample);
            }
            table.push(row);
        }
        raw.insert((va, vb), table);
    }
    let sim = |d: f64, lo: f64, hi: f64| (1e-3 + 0.999 * (1.0 - (d - lo) / (hi - lo))).ln();
    raw.into_iter()
        .map(|(k, table)| {
            let scores = table
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|per_sample| {
                            let mut best: Vec<f64> = per_sample
                                .into_iter()
                                .map(|pairs| {
                                    pairs
                                        .into_iter()
                                        .map(|(da, ds)| 0.5 * (sim(da, amin, amax) + sim(ds, smin, smax)))
                                        .fold(f64::NEG_INFINITY, f64::max)
                                })
                                .collect();
                            best.sort_by(f64::total_cmp);
                            best[(best.len() - 1) / 2]
                        })
                        .collect()
                })
                .collect();
            (k, scores)
        })
        .collect()
}

fn computed(turns: &[(&str, u8)]) -> SimilarityMatrix {
    compute_similarity(&corpus(), &all_pairs(), &source(turns), M).unwrap()
}

#[test]
fn matches_direct_oracle() {
    let props = corpus();
    let src = Pattern {
        seed: 0.3,
        quarter_turns: BTreeMap::new(),
    };
    let expected = oracle(&props, &src);
    let got = computed(&[]);
    for ((a, b), table) in expected {
        let t = got.table(&a, &b).unwrap();
        for (i, row) in table.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((t[(i, j)] - v).abs() < 1e-9, "{a}{b}[{i}][{j}]: {} vs {v}", t[(i, j)]);
            }
        }
    }
}

#[test]
fn tables_are_symmetric_under_swap() {
    let s = computed(&[]);
    let ab = s.table("a", "b").unwrap();
    let ba = s.table("b", "a").unwrap();
    assert_eq!(ab, ba.t());
    let aa = s.table("a", "a").unwrap();
    assert_eq!(aa, aa.t());
    assert_eq!(s.get("a", 1, "b", 2), s.get("b", 2, "a", 1));
}

#[test]
fn self_similarity_is_maximal() {
    let s = computed(&[]);
    for v in ["a", "b"] {
        let t = s.table(v, v).unwrap();
        for i in 0..t.nrows() {
            assert_eq!(t[(i, i)], 0.0);
            for j in 0..t.ncols() {
                assert!(t[(i, i)] >= t[(i, j)]);
                assert!(t[(i, j)] <= 0.0);
            }
        }
    }
}

#[test]
fn identical_tubes_across_videos_score_zero() {
    let s = computed(&[]);
    // proposal 0 in both videos covers the same pixels over the same frames
    assert!(s.get("a", 0, "b", 0).unwrap().0.abs() < 1e-12);
}

#[test]
fn quarter_turn_of_one_video_leaves_scores_unchanged() {
    let base = computed(&[]);
    for k in 1..4 {
        let turned = computed(&[("b", k)]);
        for (a, b) in base.pairs() {
            let (x, y) = (base.table(a, b).unwrap(), turned.table(a, b).unwrap());
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).abs() < 1e-9, "turn {k} {a}{b}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn missing_video_is_reported() {
    let err = compute_similarity(&corpus(), &[("a".into(), "z".into())], &source(&[]), M).unwrap_err();
    assert_eq!(err, SimilarityError::MissingVideo("z".into()));
}

fn crop_strategy() -> impl Strategy<Value = RasterCrop> {
    (8usize..40, 8usize..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| RasterCrop::new(w, h, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn four_quarter_turns_are_identity(c in crop_strategy(), k in 0u8..4) {
        prop_assert_eq!(rotate_crop(&rotate_crop(&c, k), 4 - k), c);
    }

    #[test]
    fn half_turn_permutes_shape_descriptor(d in prop::collection::vec(0.0f64..1.0, 64 * 64)) {
        // on the native window a half turn reverses block order and the
        // cell order inside each block; unsigned bins are untouched
        let c = RasterCrop::new(64, 64, d).unwrap();
        let h0 = gradient_histogram_descriptor(&c).unwrap().vector;
        let h2 = gradient_histogram_descriptor(&rotate_crop(&c, 2)).unwrap().vector;
        prop_assert_eq!(h0.len(), SHAPE_DIM);
        let blocks = SHAPE_DIM / 36;
        for b in 0..blocks {
            for cell in 0..4 {
                for bin in 0..9 {
                    let x = h0[b * 36 + cell * 9 + bin];
                    let y = h2[(blocks - 1 - b) * 36 + (3 - cell) * 9 + bin];
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotated_descriptors_match_rotated_crops(d in prop::collection::vec(0.0f64..1.0, 64 * 64)) {
        // on the native window every turn is exact, so the shortcut used for
        // the four rotations must agree with describing the turned crop
        let c = RasterCrop::new(64, 64, d).unwrap();
        let r = rotated_descriptors(&c).unwrap();
        for k in 0..4u8 {
            let turned = rotate_crop(&c, k);
            prop_assert_eq!(&r.appearance[k as usize], &intensity_histogram_descriptor(&turned).vector);
            let shape = gradient_histogram_descriptor(&turned).unwrap().vector;
            for (x, y) in r.shape[k as usize].iter().zip(&shape) {
                prop_assert!((x - y).abs() < 1e-9, "turn {}: {} vs {}", k, x, y);
            }
        }
    }

    #[test]
    fn distances_are_symmetric_and_nonnegative(
        a in prop::collection::vec(0.0f64..1.0, 16),
        b in prop::collection::vec(0.0f64..1.0, 16),
    ) {
        prop_assert_eq!(chi2_distance(&a, &b).unwrap(), chi2_distance(&b, &a).unwrap());
        prop_assert_eq!(l2_distance(&a, &b).unwrap(), l2_distance(&b, &a).unwrap());
        prop_assert!(chi2_distance(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(chi2_distance(&a, &a).unwrap(), 0.0);
    }
}
