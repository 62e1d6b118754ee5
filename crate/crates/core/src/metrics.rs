//! Box overlap scores, their frame/object/set/dataset averages, accuracy
//! curves over IoU thresholds and agreement between human annotators.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, Detection};

/// Number of steps in the threshold sweep `0.00, 0.01, ..., 1.00`.
pub const THRESHOLD_STEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no annotated frame overlaps the output track of {video}/{instance}")]
    NoOverlapFrames { video: String, instance: String },
    #[error("no frame has two or more annotator boxes")]
    InsufficientAnnotators,
    #[error("no instances to average")]
    Empty,
}

/// Threshold grid of the accuracy curves.
pub fn thresholds() -> Vec<f64> {
    (0..=THRESHOLD_STEPS).map(|i| i as f64 / THRESHOLD_STEPS as f64).collect()
}

/// Intersection over union; disjoint boxes give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Human boxes for one object instance, keyed by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub video_id: String,
    pub instance_id: String,
    /// Annotator boxes per annotated frame (at least one each).
    pub frames: BTreeMap<usize, Vec<BoundingBox>>,
}

impl AnnotationTrack {
    /// A single-annotator track from one box per frame.
    pub fn from_boxes(video_id: &str, instance_id: &str, boxes: &[Detection]) -> Self {
        Self {
            video_id: video_id.into(),
            instance_id: instance_id.into(),
            frames: boxes.iter().map(|d| (d.frame, vec![d.bbox])).collect(),
        }
    }
}

/// Mean IoU of an output box against the frame's annotator boxes.
pub fn frame_iou(output: &BoundingBox, annotators: &[BoundingBox]) -> Option<f64> {
    if annotators.is_empty() {
        return None;
    }
    Some(annotators.iter().map(|a| iou(output, a)).sum::<f64>() / annotators.len() as f64)
}

/// 1 if any annotator box reaches the threshold.
pub fn frame_acc(output: &BoundingBox, annotators: &[BoundingBox], threshold: f64) -> Option<f64> {
    if annotators.is_empty() {
        return None;
    }
    Some(if annotators.iter().any(|a| iou(output, a) >= threshold) { 1.0 } else { 0.0 })
}

/// Per-frame values over frames present in both the track and the annotation.
fn per_frame(
    track: &[Detection],
    truth: &AnnotationTrack,
    f: impl Fn(&BoundingBox, &[BoundingBox]) -> Option<f64>,
) -> Result<Vec<f64>, MetricsError> {
    let values: Vec<f64> = track
        .iter()
        .filter_map(|d| truth.frames.get(&d.frame).and_then(|a| f(&d.bbox, a)))
        .collect();
    if values.is_empty() {
        return Err(MetricsError::NoOverlapFrames {
            video: truth.video_id.clone(),
            instance: truth.instance_id.clone(),
        });
    }
    Ok(values)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean frame IoU over the annotated frames of a track.
pub fn object_iou(track: &[Detection], truth: &AnnotationTrack) -> Result<f64, MetricsError> {
    per_frame(track, truth, frame_iou).map(|v| mean(&v))
}

/// Fraction of annotated frames whose best annotator IoU reaches `threshold`.
pub fn object_acc(track: &[Detection], truth: &AnnotationTrack, threshold: f64) -> Result<f64, MetricsError> {
    per_frame(track, truth, |o, a| frame_acc(o, a, threshold)).map(|v| mean(&v))
}

/// Object accuracy at every threshold of the sweep.
pub fn object_acc_curve(track: &[Detection], truth: &AnnotationTrack) -> Result<Vec<f64>, MetricsError> {
    // best annotator IoU per frame decides every threshold at once
    let best = per_frame(track, truth, |o, a| a.iter().map(|b| iou(o, b)).reduce(f64::max))?;
    Ok(thresholds()
        .into_iter()
        .map(|t| best.iter().filter(|b| **b >= t).count() as f64 / best.len() as f64)
        .collect())
}

/// Scores of one output track against its annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub video_id: String,
    pub instance_id: String,
    pub iou_object: f64,
    /// Object accuracy at each sweep threshold.
    pub acc_object: Vec<f64>,
}

impl InstanceResult {
    pub fn evaluate(track: &[Detection], truth: &AnnotationTrack) -> Result<Self, MetricsError> {
        Ok(Self {
            video_id: truth.video_id.clone(),
            instance_id: truth.instance_id.clone(),
            iou_object: object_iou(track, truth)?,
            acc_object: object_acc_curve(track, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub set_id: String,
    pub iou_set: f64,
    pub acc_set: Vec<f64>,
    pub instances: Vec<InstanceResult>,
}

impl SetResult {
    pub fn new(set_id: &str, instances: Vec<InstanceResult>) -> Result<Self, MetricsError> {
        if instances.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = instances.len() as f64;
        let iou_set = instances.iter().map(|i| i.iou_object).sum::<f64>() / n;
        let acc_set = (0..=THRESHOLD_STEPS)
            .map(|t| instances.iter().map(|i| i.acc_object[t]).sum::<f64>() / n)
            .collect();
        Ok(Self {
            set_id: set_id.into(),
            iou_set,
            acc_set,
            instances,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub acc: f64,
}

/// All sets evaluated under one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    /// Mean object IoU over every instance of every set.
    pub iou_dataset: f64,
    /// Mean of the per-set IoU.
    pub mean_iou_set: f64,
    pub acc_curve: Vec<CurvePoint>,
    pub sets: Vec<SetResult>,
}

impl VariantReport {
    pub fn new(variant: &str, sets: Vec<SetResult>) -> Self {
        let all: Vec<&InstanceResult> = sets.iter().flat_map(|s| &s.instances).collect();
        let n = all.len() as f64;
        let (iou_dataset, mean_iou_set) = if all.is_empty() {
            (0.0, 0.0)
        } else {
            (
                all.iter().map(|i| i.iou_object).sum::<f64>() / n,
                sets.iter().map(|s| s.iou_set).sum::<f64>() / sets.len() as f64,
            )
        };
        let acc_curve = thresholds()
            .into_iter()
            .enumerate()
            .map(|(t, threshold)| CurvePoint {
                threshold,
                acc: if all.is_empty() { 0.0 } else { all.iter().map(|i| i.acc_object[t]).sum::<f64>() / n },
            })
            .collect();
        Self {
            variant: variant.into(),
            iou_dataset,
            mean_iou_set,
            acc_curve,
            sets,
        }
    }
}

/// A set that could not be evaluated, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetFailure {
    pub set_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variants: Vec<VariantReport>,
    pub failures: Vec<SetFailure>,
}

impl EvaluationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are finite")
    }

    /// Accuracy curves, one column per variant.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("threshold");
        for v in &self.variants {
            out.push(',');
            out.push_str(&v.variant);
        }
        out.push('\n');
        for (t, threshold) in thresholds().into_iter().enumerate() {
            let _ = write!(out, "{threshold:.2}");
            for v in &self.variants {
                let _ = write!(out, ",{:.6}", v.acc_curve[t].acc);
            }
            out.push('\n');
        }
        out
    }

    /// Per-set IoU, one column per variant.
    pub fn sets_csv(&self) -> String {
        let mut out = String::from("set");
        for v in &self.variants {
            out.push(',');
            out.push_str(&v.variant);
        }
        out.push('\n');
        let ids: Vec<&str> = self
            .variants
            .first()
            .map(|v| v.sets.iter().map(|s| s.set_id.as_str()).collect())
            .unwrap_or_default();
        for id in ids {
            out.push_str(id);
            for v in &self.variants {
                match v.sets.iter().find(|s| s.set_id == id) {
                    Some(s) => {
                        let _ = write!(out, ",{:.6}", s.iou_set);
                    }
                    None => out.push_str(",nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Self-contained gnuplot script: accuracy curves and a bar chart of
    /// dataset IoU per variant, with inline data blocks.
    pub fn gnuplot(&self) -> String {
        let mut out = String::from("$curves << EOD\n");
        out.push_str(&self.curves_csv().replace(',', " "));
        out.push_str("EOD\n$iou << EOD\n");
        for v in &self.variants {
            let _ = writeln!(out, "{} {:.6}", v.variant, v.iou_dataset);
        }
        out.push_str("EOD\n");
        out.push_str("set terminal pngcairo size 1200,500\nset output 'report.png'\nset multiplot layout 1,2\n");
        out.push_str("set title 'accuracy vs IoU threshold'\nset xlabel 'threshold'\nset ylabel 'accuracy'\nset yrange [0:1]\n");
        let plots: Vec<String> = (0..self.variants.len())
            .map(|i| format!("$curves using 1:{} with lines title columnheader({})", i + 2, i + 2))
            .collect();
        let _ = writeln!(out, "plot {}", plots.join(", "));
        out.push_str("set title 'dataset IoU'\nset style fill solid\nset boxwidth 0.6\nunset xlabel\nset ylabel 'IoU'\n");
        out.push_str("plot $iou using 0:2:xtic(1) with boxes notitle\nunset multiplot\n");
        out
    }
}

/// Mean over frames of the mean pairwise IoU among annotator boxes, pooled
/// over every frame with at least two annotators.
pub fn intercoder_agreement(annotations: &[AnnotationTrack]) -> Result<f64, MetricsError> {
    let mut per_frame = Vec::new();
    for track in annotations {
        for boxes in track.frames.values() {
            if boxes.len() < 2 {
                continue;
            }
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    sum += iou(&boxes[i], &boxes[j]);
                    pairs += 1;
                }
            }
            per_frame.push(sum / pairs as f64);
        }
    }
    if per_frame.is_empty() {
        return Err(MetricsError::InsufficientAnnotators);
    }
    Ok(mean(&per_frame))
}
