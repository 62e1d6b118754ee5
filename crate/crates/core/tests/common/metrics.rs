//! Box fixtures with hand-computable overlaps.

use codetect::metrics::{AnnotationTrack, InstanceResult, SetResult, VariantReport};
use codetect::model::{BoundingBox, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

/// Horizontal strip of height `h` inside the 10x10 square at the origin;
/// its IoU with the square is `h / 10`, with another strip `min / max`.
pub fn strip(h: f64) -> BoundingBox {
    bx(0.0, 0.0, 10.0, h)
}

pub fn square() -> BoundingBox {
    bx(0.0, 0.0, 10.0, 10.0)
}

pub fn track(boxes: &[BoundingBox]) -> Vec<Detection> {
    boxes.iter().enumerate().map(|(i, b)| Detection::new(i + 1, *b)).collect()
}

pub fn truth(frames: Vec<Vec<BoundingBox>>) -> AnnotationTrack {
    AnnotationTrack {
        video_id: "v".into(),
        instance_id: "x".into(),
        frames: frames.into_iter().enumerate().map(|(i, b)| (i + 1, b)).collect(),
    }
}

/// Five annotators per frame on nested strips, split across two tracks,
/// plus a single-annotator frame that must be ignored. Returns the tracks
/// and the hand-computed agreement.
pub fn five_annotator_fixture() -> (Vec<AnnotationTrack>, f64) {
    // nested strips: pairwise IoU is the height ratio
    let fixtures = [[2.0, 4.0, 5.0, 8.0, 10.0], [1.0, 3.0, 6.0, 7.0, 9.0], [5.0, 5.0, 5.0, 5.0, 10.0]];
    let mut frame_means = vec![];
    for h in &fixtures {
        let mut sum = 0.0;
        for i in 0..5 {
            for j in i + 1..5 {
                sum += f64::min(h[i], h[j]) / f64::max(h[i], h[j]);
            }
        }
        frame_means.push(sum / 10.0);
    }
    let expected = frame_means.iter().sum::<f64>() / 3.0;
    let t1 = truth(vec![fixtures[0].map(strip).to_vec(), fixtures[1].map(strip).to_vec(), vec![square()]]);
    let t2 = truth(vec![fixtures[2].map(strip).to_vec()]);
    (vec![t1, t2], expected)
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
    bx(x, y, x + rng.random_range(1.0..50.0), y + rng.random_range(1.0..50.0))
}

/// A report over 1..4 sets of 1..4 instances with random tracks and 1..5
/// annotators per frame.
pub fn random_report(seed: u64) -> VariantReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = (0..rng.random_range(1..4))
        .map(|s| {
            let instances = (0..rng.random_range(1..4))
                .map(|_| {
                    let n = rng.random_range(1..8);
                    let out: Vec<BoundingBox> = (0..n).map(|_| random_box(&mut rng)).collect();
                    let annots = (0..n)
                        .map(|_| (0..rng.random_range(1..5)).map(|_| random_box(&mut rng)).collect())
                        .collect();
                    InstanceResult::evaluate(&track(&out), &truth(annots)).unwrap()
                })
                .collect();
            SetResult::new(&format!("s{s}"), instances).unwrap()
        })
        .collect();
    VariantReport::new("random", sets)
}
