//! Rotation-invariant appearance and shape similarity between detections and
//! the median-based similarity between proposals.
//!
//! Two channels are compared: an appearance histogram (chi-squared distance)
//! and an oriented-gradient shape descriptor (Euclidean distance). Raw
//! distances of one codetection set are min-max scaled per channel and
//! converted to log similarities `log(eps + (1 - eps)(1 - d))`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, Detection, Proposal, Score};

/// Side of the canonical descriptor window.
pub const WINDOW: usize = 64;
pub const CELL: usize = 8;
pub const ORIENTATION_BINS: usize = 9;
/// Length of the shape descriptor: 7x7 blocks of 2x2 cells of 9 bins.
pub const SHAPE_DIM: usize = (WINDOW / CELL - 1) * (WINDOW / CELL - 1) * 4 * ORIENTATION_BINS;
pub const APPEARANCE_GRID: usize = 4;
pub const INTENSITY_BINS: usize = 8;
pub const APPEARANCE_DIM: usize = APPEARANCE_GRID * APPEARANCE_GRID * INTENSITY_BINS;
/// Smallest crop (either side) accepted by the shape descriptor.
pub const MIN_CROP: usize = 8;
/// Floor of the similarity conversion; `log(SIM_EPSILON)` is the lowest score.
pub const SIM_EPSILON: f64 = 1e-3;

pub const DESCRIPTOR_FORMAT: &str = "codetect-descriptors";
pub const CROP_FORMAT: &str = "codetect-crops";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("crop {0}x{1} is below the {MIN_CROP}x{MIN_CROP} minimum")]
    DegenerateCrop(usize, usize),
    #[error("crop data has {got} values, expected {expected}")]
    CropShape { got: usize, expected: usize },
    #[error("no descriptor for {0}")]
    MissingDescriptor(String),
    #[error("no proposals for video `{0}`")]
    MissingVideo(String),
    #[error("bad input file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Appearance,
    Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub channel: Channel,
    pub vector: Vec<f64>,
}

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Grayscale intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterCrop {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RasterCrop {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, SimilarityError> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(SimilarityError::CropShape {
                got: data.len(),
                expected: width * height,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resized(&self, width: usize, height: usize) -> RasterCrop {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |i: usize, s: f64, n: usize| {
            let p = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let cols: Vec<_> = (0..width).map(|c| axis(c, sx, self.width)).collect();
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            let (r0, r1, fy) = axis(r, sy, self.height);
            for &(c0, c1, fx) in &cols {
                let top = self.at(r0, c0) * (1.0 - fx) + self.at(r0, c1) * fx;
                let bottom = self.at(r1, c0) * (1.0 - fx) + self.at(r1, c1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        RasterCrop { width, height, data }
    }
}

/// Rotates a crop clockwise by `quarter_turns` right angles.
pub fn rotate_crop(crop: &RasterCrop, quarter_turns: u8) -> RasterCrop {
    let mut out = crop.clone();
    for _ in 0..(quarter_turns % 4) {
        let (w, h) = (out.width, out.height);
        // new is h wide, w tall: new[r][c] = old[h - 1 - c][r]
        out = RasterCrop::from_fn(h, w, |r, c| out.at(h - 1 - c, r));
    }
    out
}

/// Per-pixel gradient magnitude and unsigned orientation in bin units
/// (`[0, 9)`, 20 degrees per bin) on a square window.
struct GradientField {
    magnitude: Vec<f64>,
    bin_pos: Vec<f64>,
}

fn gradient_field(win: &RasterCrop) -> GradientField {
    let n = win.width;
    let d = &win.data;
    let mut magnitude = vec![0.0; n * n];
    let mut bin_pos = vec![0.0; n * n];
    let scale = ORIENTATION_BINS as f64 / std::f64::consts::PI;
    for r in 0..n {
        let (up, down) = (r.saturating_sub(1) * n, (r + 1).min(n - 1) * n);
        let row = r * n;
        for c in 0..n {
            let gx = d[row + (c + 1).min(n - 1)] - d[row + c.saturating_sub(1)];
            let gy = d[down + c] - d[up + c];
            let i = row + c;
            let m = (gx * gx + gy * gy).sqrt();
            magnitude[i] = m;
            if m > 0.0 {
                let mut a = gy.atan2(gx);
                if a < 0.0 {
                    a += std::f64::consts::PI;
                }
                let pos = a * scale;
                bin_pos[i] = if pos >= ORIENTATION_BINS as f64 { 0.0 } else { pos };
            }
        }
    }
    GradientField { magnitude, bin_pos }
}

/// Cell histograms over a gradient field, where pixel `(r, c)` reads its
/// gradient from `index(r, c)` and its orientation is shifted by `shift`
/// bins.
fn cell_histograms(field: &GradientField, index: impl Fn(usize, usize) -> usize, shift: f64) -> Vec<f64> {
    let cells = WINDOW / CELL;
    let mut hist = vec![0.0; cells * cells * ORIENTATION_BINS];
    let nb = ORIENTATION_BINS as f64;
    for r in 0..WINDOW {
        for c in 0..WINDOW {
            let i = index(r, c);
            let m = field.magnitude[i];
            if m == 0.0 {
                continue;
            }
            let mut pos = field.bin_pos[i] + shift;
            if pos >= nb {
                pos -= nb;
            }
            let b0 = pos.floor();
            let frac = pos - b0;
            let b0 = b0 as usize % ORIENTATION_BINS;
            let b1 = (b0 + 1) % ORIENTATION_BINS;
            let base = ((r / CELL) * cells + c / CELL) * ORIENTATION_BINS;
            hist[base + b0] += m * (1.0 - frac);
            hist[base + b1] += m * frac;
        }
    }
    hist
}

/// 2x2-cell blocks at stride one, each L2-normalized.
fn normalized_blocks(hist: &[f64]) -> Vec<f64> {
    let cells = WINDOW / CELL;
    let blocks = cells - 1;
    let mut out = Vec::with_capacity(SHAPE_DIM);
    for br in 0..blocks {
        for bc in 0..blocks {
            let start = out.len();
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let base = ((br + dr) * cells + bc + dc) * ORIENTATION_BINS;
                out.extend_from_slice(&hist[base..base + ORIENTATION_BINS]);
            }
            let norm = out[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out[start..].iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    out
}

/// Cell-grid histograms after `k` clockwise quarter turns of the grid. Cells
/// hold the same pixels under a turn, so only their positions move.
fn turn_cells(hist: &[f64], grid: usize, bins: usize, k: u8) -> Vec<f64> {
    let n = grid - 1;
    let mut out = vec![0.0; hist.len()];
    for i in 0..grid {
        for j in 0..grid {
            let (si, sj) = match k % 4 {
                0 => (i, j),
                1 => (n - j, i),
                2 => (n - i, n - j),
                _ => (j, n - i),
            };
            let (dst, src) = ((i * grid + j) * bins, (si * grid + sj) * bins);
            out[dst..dst + bins].copy_from_slice(&hist[src..src + bins]);
        }
    }
    out
}

fn check_crop(crop: &RasterCrop) -> Result<(), SimilarityError> {
    if crop.width < MIN_CROP || crop.height < MIN_CROP {
        return Err(SimilarityError::DegenerateCrop(crop.width, crop.height));
    }
    Ok(())
}

/// Oriented-gradient histogram of a crop resized to the 64x64 window:
/// 8x8-pixel cells, 9 unsigned orientation bins with linear interpolation,
/// 2x2-cell blocks at stride one, each block L2-normalized.
pub fn gradient_histogram_descriptor(crop: &RasterCrop) -> Result<Descriptor, SimilarityError> {
    check_crop(crop)?;
    let win = crop.resized(WINDOW, WINDOW);
    let field = gradient_field(&win);
    Ok(Descriptor {
        channel: Channel::Shape,
        vector: normalized_blocks(&cell_histograms(&field, |r, c| r * WINDOW + c, 0.0)),
    })
}

/// Coarse intensity histogram: 4x4 spatial grid times 8 intensity bins over
/// the 64x64 window, L1-normalized.
pub fn intensity_histogram_descriptor(crop: &RasterCrop) -> Descriptor {
    let win = crop.resized(WINDOW, WINDOW);
    Descriptor {
        channel: Channel::Appearance,
        vector: intensity_histogram(&win, |r, c| r * WINDOW + c),
    }
}

fn intensity_histogram(win: &RasterCrop, index: impl Fn(usize, usize) -> usize) -> Vec<f64> {
    let mut h = vec![0.0; APPEARANCE_DIM];
    let cell = WINDOW / APPEARANCE_GRID;
    for r in 0..WINDOW {
        for c in 0..WINDOW {
            let v = win.data[index(r, c)].clamp(0.0, 1.0);
            let bin = ((v * INTENSITY_BINS as f64) as usize).min(INTENSITY_BINS - 1);
            h[((r / cell) * APPEARANCE_GRID + c / cell) * INTENSITY_BINS + bin] += 1.0;
        }
    }
    let total = (WINDOW * WINDOW) as f64;
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Both channels of a detection under 0..=3 clockwise quarter turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedDescriptors {
    pub appearance: [Vec<f64>; 4],
    pub shape: [Vec<f64>; 4],
}

/// Source pixel of window pixel `(r, c)` after `k` clockwise quarter turns.
fn rotated_index(k: u8, r: usize, c: usize) -> usize {
    let n = WINDOW - 1;
    match k % 4 {
        0 => r * WINDOW + c,
        1 => (n - c) * WINDOW + r,
        2 => (n - r) * WINDOW + (n - c),
        _ => c * WINDOW + (n - r),
    }
}

/// Descriptors of a crop and its three quarter-turn rotations. The window is
/// resized once and rotated exactly; a quarter turn shifts unsigned gradient
/// orientation by 90 degrees (4.5 bins).
pub fn rotated_descriptors(crop: &RasterCrop) -> Result<RotatedDescriptors, SimilarityError> {
    check_crop(crop)?;
    let win = crop.resized(WINDOW, WINDOW);
    let field = gradient_field(&win);
    // a half turn moves cells without changing orientations, so turns 2
    // and 3 reuse the cell histograms of turns 0 and 1
    let even = cell_histograms(&field, |r, c| rotated_index(0, r, c), 0.0);
    let odd = cell_histograms(&field, |r, c| rotated_index(1, r, c), ORIENTATION_BINS as f64 / 2.0);
    let cells = WINDOW / CELL;
    let shape = [0u8, 1, 2, 3].map(|k| {
        let base = if k % 2 == 0 { &even } else { &odd };
        normalized_blocks(&turn_cells(base, cells, ORIENTATION_BINS, k - k % 2))
    });
    let intensity = intensity_histogram(&win, |r, c| r * WINDOW + c);
    let appearance = [0u8, 1, 2, 3].map(|k| turn_cells(&intensity, APPEARANCE_GRID, INTENSITY_BINS, k));
    Ok(RotatedDescriptors { appearance, shape })
}

/// `0.5 * sum (a - b)^2 / (a + b)`, skipping empty bins.
pub fn chi2_distance(h1: &[f64], h2: &[f64]) -> Result<f64, SimilarityError> {
    if h1.len() != h2.len() {
        return Err(SimilarityError::DimMismatch(h1.len(), h2.len()));
    }
    Ok(0.5
        * h1.iter()
            .zip(h2)
            .map(|(a, b)| {
                let s = a + b;
                if s > 0.0 {
                    (a - b) * (a - b) / s
                } else {
                    0.0
                }
            })
            .sum::<f64>())
}

pub fn l2_distance(d1: &[f64], d2: &[f64]) -> Result<f64, SimilarityError> {
    if d1.len() != d2.len() {
        return Err(SimilarityError::DimMismatch(d1.len(), d2.len()));
    }
    Ok(d1.iter().zip(d2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Min-max scaling of one channel's raw distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Self { min: 0.0, max: 0.0 };
        }
        Self { min, max }
    }

    /// Scaled distance in `[0, 1]`; a degenerate range maps to 0.
    pub fn scale(&self, d: f64) -> f64 {
        if self.max > self.min {
            ((d - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Log similarity of a scaled distance.
pub fn distance_to_score(scaled: f64) -> Score {
    Score((SIM_EPSILON + (1.0 - SIM_EPSILON) * (1.0 - scaled)).ln())
}

/// Scales raw distances of one channel and converts them to log similarities.
pub fn normalize_distances(raw: &[f64]) -> (Vec<f64>, Vec<Score>) {
    let mm = MinMax::fit(raw.iter().copied());
    let scaled: Vec<f64> = raw.iter().map(|d| mm.scale(*d)).collect();
    let scores = scaled.iter().map(|d| distance_to_score(*d)).collect();
    (scaled, scores)
}

/// Best mean channel similarity over all 16 rotation pairs.
pub fn detection_similarity(
    a: &RotatedDescriptors,
    b: &RotatedDescriptors,
    appearance: &MinMax,
    shape: &MinMax,
) -> Result<Score, SimilarityError> {
    let mut best = f64::NEG_INFINITY;
    for r1 in 0..4 {
        for r2 in 0..4 {
            let da = chi2_distance(&a.appearance[r1], &b.appearance[r2])?;
            let ds = l2_distance(&a.shape[r1], &b.shape[r2])?;
            let s = 0.5 * (distance_to_score(appearance.scale(da)).0 + distance_to_score(shape.scale(ds)).0);
            best = best.max(s);
        }
    }
    Ok(Score(best))
}

/// Lower median (index `(n - 1) / 2` of the sorted values).
pub fn lower_median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Frames of `M` evenly spaced samples of a `T`-frame tube:
/// `1 + (i - 1)(T - 1) / (M - 1)` for `i = 1..=M`, the middle frame when `M = 1`.
pub fn sample_frames(frame_count: usize, m: usize) -> Vec<usize> {
    if m <= 1 {
        return vec![frame_count.div_ceil(2).max(1)];
    }
    (0..m).map(|i| 1 + i * (frame_count - 1) / (m - 1)).collect()
}

pub fn sample_detections(p: &Proposal, m: usize) -> Vec<Detection> {
    sample_frames(p.frame_count(), m).into_iter().map(|t| *p.at(t)).collect()
}

/// Median over samples of the per-sample detection similarity.
pub fn proposal_similarity(
    a: &[Arc<RotatedDescriptors>],
    b: &[Arc<RotatedDescriptors>],
    appearance: &MinMax,
    shape: &MinMax,
) -> Result<Score, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimMismatch(a.len(), b.len()));
    }
    let per = a
        .iter()
        .zip(b)
        .map(|(x, y)| detection_similarity(x, y, appearance, shape).map(|s| s.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Score(lower_median(per).unwrap_or(f64::NEG_INFINITY)))
}

/// Grayscale pixels for a detection.
pub trait CropSource: Send + Sync {
    fn crop(&self, video: &str, frame: usize, bbox: &BoundingBox) -> Result<RasterCrop, SimilarityError>;
}

/// Descriptors for a detection, one per quarter turn.
pub trait DescriptorSource: Send + Sync {
    fn descriptors(&self, video: &str, det: &Detection) -> Result<Arc<RotatedDescriptors>, SimilarityError>;
}

type DetKey = (String, usize, [u64; 4]);

fn det_key(video: &str, frame: usize, bbox: &BoundingBox) -> DetKey {
    (video.to_string(), frame, bbox.to_array().map(f64::to_bits))
}

/// Computes descriptors from crops, caching them per detection.
pub struct CropDescriptors<C> {
    crops: C,
    cache: Mutex<HashMap<DetKey, Arc<RotatedDescriptors>>>,
}

impl<C: CropSource> CropDescriptors<C> {
    pub fn new(crops: C) -> Self {
        Self {
            crops,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<C: CropSource> DescriptorSource for CropDescriptors<C> {
    fn descriptors(&self, video: &str, det: &Detection) -> Result<Arc<RotatedDescriptors>, SimilarityError> {
        let key = det_key(video, det.frame, &det.bbox);
        if let Some(d) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(d.clone());
        }
        let crop = self.crops.crop(video, det.frame, &det.bbox)?;
        let d = Arc::new(rotated_descriptors(&crop)?);
        self.cache.lock().expect("cache lock").insert(key, d.clone());
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub crop: RasterCrop,
}

/// Crops of one video as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub entries: Vec<CropEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorEntry {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub descriptors: RotatedDescriptors,
}

/// Precomputed descriptors of one video as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub entries: Vec<DescriptorEntry>,
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<(), SimilarityError> {
    if format != expected || version != FORMAT_VERSION {
        return Err(SimilarityError::Format(format!(
            "expected {expected} v{FORMAT_VERSION}, got {format} v{version}"
        )));
    }
    Ok(())
}

/// Crops looked up by exact detection.
#[derive(Debug, Default)]
pub struct IngestedCrops {
    crops: HashMap<DetKey, RasterCrop>,
}

impl IngestedCrops {
    pub fn add(&mut self, file: CropFile) -> Result<(), SimilarityError> {
        check_header(&file.format, file.version, CROP_FORMAT)?;
        for e in file.entries {
            RasterCrop::new(e.crop.width, e.crop.height, e.crop.data.clone())?;
            self.crops.insert(det_key(&file.video, e.frame, &e.bbox), e.crop);
        }
        Ok(())
    }
}

impl CropSource for IngestedCrops {
    fn crop(&self, video: &str, frame: usize, bbox: &BoundingBox) -> Result<RasterCrop, SimilarityError> {
        self.crops
            .get(&det_key(video, frame, bbox))
            .cloned()
            .ok_or_else(|| SimilarityError::MissingDescriptor(format!("{video} frame {frame} {:?}", bbox.to_array())))
    }
}

/// Descriptors looked up by exact detection.
#[derive(Debug, Default)]
pub struct IngestedDescriptors {
    entries: HashMap<DetKey, Arc<RotatedDescriptors>>,
}

impl IngestedDescriptors {
    pub fn add(&mut self, file: DescriptorFile) -> Result<(), SimilarityError> {
        check_header(&file.format, file.version, DESCRIPTOR_FORMAT)?;
        for e in file.entries {
            let d = &e.descriptors;
            for k in 0..4 {
                if d.appearance[k].len() != d.appearance[0].len() || d.shape[k].len() != d.shape[0].len() {
                    return Err(SimilarityError::Format("descriptor dims differ across rotations".into()));
                }
            }
            self.entries
                .insert(det_key(&file.video, e.frame, &e.bbox), Arc::new(e.descriptors));
        }
        Ok(())
    }
}

impl DescriptorSource for IngestedDescriptors {
    fn descriptors(&self, video: &str, det: &Detection) -> Result<Arc<RotatedDescriptors>, SimilarityError> {
        self.entries
            .get(&det_key(video, det.frame, &det.bbox))
            .cloned()
            .ok_or_else(|| {
                SimilarityError::MissingDescriptor(format!("{video} frame {} {:?}", det.frame, det.bbox.to_array()))
            })
    }
}

/// Log similarity tables between the proposals of video pairs of one
/// codetection set, after set-wide normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub appearance_range: MinMax,
    pub shape_range: MinMax,
    tables: BTreeMap<String, BTreeMap<String, Array2<f64>>>,
}

impl SimilarityMatrix {
    /// Table indexed `[proposal of a][proposal of b]`.
    pub fn table(&self, a: &str, b: &str) -> Option<Array2<f64>> {
        if let Some(t) = self.tables.get(a).and_then(|m| m.get(b)) {
            return Some(t.clone());
        }
        self.tables.get(b).and_then(|m| m.get(a)).map(|t| t.t().to_owned())
    }

    pub fn get(&self, a: &str, ka: usize, b: &str, kb: usize) -> Option<Score> {
        if let Some(t) = self.tables.get(a).and_then(|m| m.get(b)) {
            return t.get((ka, kb)).map(|v| Score(*v));
        }
        self.tables
            .get(b)
            .and_then(|m| m.get(a))
            .and_then(|t| t.get((kb, ka)))
            .map(|v| Score(*v))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tables
            .iter()
            .flat_map(|(a, m)| m.keys().map(move |b| (a.as_str(), b.as_str())))
    }
}

/// Sample-major stacked descriptors of one video's proposals.
struct VideoStack {
    k: usize,
    /// per sample: row of each proposal's descriptors in the matrices
    rows: Vec<Vec<usize>>,
    /// per sample: (4U x dim) matrices over the U distinct descriptors,
    /// row `4 * u + rotation`
    appearance: Vec<Array2<f64>>,
    shape: Vec<Array2<f64>>,
}

fn stack_video(video: &str, proposals: &[Proposal], m: usize, source: &dyn DescriptorSource) -> Result<VideoStack, SimilarityError> {
    let k = proposals.len();
    let frames = proposals.first().map(|p| sample_frames(p.frame_count(), m)).unwrap_or_default();
    let mut rows = Vec::with_capacity(frames.len());
    let mut appearance = Vec::with_capacity(frames.len());
    let mut shape = Vec::with_capacity(frames.len());
    for &t in &frames {
        // tubes sharing a detection share its descriptors; distances are
        // computed once per distinct descriptor
        let mut distinct: Vec<Arc<RotatedDescriptors>> = Vec::new();
        let mut seen: HashMap<*const RotatedDescriptors, usize> = HashMap::new();
        let mut index = Vec::with_capacity(k);
        for p in proposals {
            let d = source.descriptors(video, p.at(t))?;
            let u = *seen.entry(Arc::as_ptr(&d)).or_insert_with(|| {
                distinct.push(d.clone());
                distinct.len() - 1
            });
            index.push(u);
        }
        let da = distinct.first().map_or(0, |d| d.appearance[0].len());
        let ds = distinct.first().map_or(0, |d| d.shape[0].len());
        let mut a = Array2::zeros((4 * distinct.len(), da));
        let mut s = Array2::zeros((4 * distinct.len(), ds));
        for (i, d) in distinct.iter().enumerate() {
            for r in 0..4 {
                if d.appearance[r].len() != da {
                    return Err(SimilarityError::DimMismatch(d.appearance[r].len(), da));
                }
                if d.shape[r].len() != ds {
                    return Err(SimilarityError::DimMismatch(d.shape[r].len(), ds));
                }
                a.row_mut(4 * i + r).assign(&ndarray::ArrayView1::from(&d.appearance[r]));
                s.row_mut(4 * i + r).assign(&ndarray::ArrayView1::from(&d.shape[r]));
            }
        }
        rows.push(index);
        appearance.push(a);
        shape.push(s);
    }
    Ok(VideoStack {
        k,
        rows,
        appearance,
        shape,
    })
}

fn pairwise_l2(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut g = a.dot(&b.t());
    for ((i, j), v) in g.indexed_iter_mut() {
        let sq = na[i] + nb[j] - 2.0 * *v;
        *v = if sq > 1e-9 * (na[i] + nb[j]) {
            sq.sqrt()
        } else {
            // near-identical rows lose all precision to cancellation
            let (ra, rb) = (a.row(i), b.row(j));
            ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
    }
    g
}

fn pairwise_chi2(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        let ra = ra.as_slice().expect("contiguous rows");
        for (j, rb) in b.rows().into_iter().enumerate() {
            let rb = rb.as_slice().expect("contiguous rows");
            let mut s = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let t = x + y;
                if t > 0.0 {
                    s += (x - y) * (x - y) / t;
                }
            }
            out[(i, j)] = 0.5 * s;
        }
    }
    out
}

/// Similarity tables for every requested video pair (a pair may repeat a
/// video). Raw distances of all pairs are gathered first; the per-channel
/// min-max range is fitted over that whole population, then every table is
/// filled with the median over samples of the best rotation-pair score.
pub fn compute_similarity(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    pairs: &[(String, String)],
    source: &dyn DescriptorSource,
    m: usize,
) -> Result<SimilarityMatrix, SimilarityError> {
    let mut wanted: BTreeSet<(String, String)> = BTreeSet::new();
    for (a, b) in pairs {
        let key = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        wanted.insert(key);
    }
    let mut stacks: BTreeMap<&str, VideoStack> = BTreeMap::new();
    for (a, b) in &wanted {
        for v in [a, b] {
            if !stacks.contains_key(v.as_str()) {
                let props = proposals.get(v).ok_or_else(|| SimilarityError::MissingVideo(v.clone()))?;
                stacks.insert(v.as_str(), stack_video(v, props, m, source)?);
            }
        }
    }

    // phase one: raw distances
    let mut raw: Vec<((String, String), Vec<(Array2<f64>, Array2<f64>)>)> = Vec::new();
    for (a, b) in &wanted {
        let (sa, sb) = (&stacks[a.as_str()], &stacks[b.as_str()]);
        let samples = sa.shape.len().min(sb.shape.len());
        let mut per = Vec::with_capacity(samples);
        for s in 0..samples {
            if sa.appearance[s].ncols() != sb.appearance[s].ncols() {
                return Err(SimilarityError::DimMismatch(sa.appearance[s].ncols(), sb.appearance[s].ncols()));
            }
            if sa.shape[s].ncols() != sb.shape[s].ncols() {
                return Err(SimilarityError::DimMismatch(sa.shape[s].ncols(), sb.shape[s].ncols()));
            }
            per.push((
                pairwise_chi2(&sa.appearance[s], &sb.appearance[s]),
                pairwise_l2(&sa.shape[s], &sb.shape[s]),
            ));
        }
        raw.push(((a.clone(), b.clone()), per));
    }

    // phase two: set-wide scaling
    let appearance_range = MinMax::fit(raw.iter().flat_map(|(_, per)| per.iter().flat_map(|(a, _)| a.iter().copied())));
    let shape_range = MinMax::fit(raw.iter().flat_map(|(_, per)| per.iter().flat_map(|(_, s)| s.iter().copied())));

    let mut tables: BTreeMap<String, BTreeMap<String, Array2<f64>>> = BTreeMap::new();
    for ((a, b), per) in raw {
        let (sa, sb) = (&stacks[a.as_str()], &stacks[b.as_str()]);
        let best: Vec<Array2<f64>> = per
            .iter()
            .map(|(da, ds)| {
                let mut out = Array2::from_elem((da.nrows() / 4, da.ncols() / 4), f64::NEG_INFINITY);
                for ((i, j), v) in out.indexed_iter_mut() {
                    for r1 in 0..4 {
                        for r2 in 0..4 {
                            let (x, y) = (4 * i + r1, 4 * j + r2);
                            let s = 0.5
                                * (distance_to_score(appearance_range.scale(da[(x, y)])).0
                                    + distance_to_score(shape_range.scale(ds[(x, y)])).0);
                            if s > *v {
                                *v = s;
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let mut table = Array2::zeros((sa.k, sb.k));
        for ((i, j), v) in table.indexed_iter_mut() {
            let samples = best.iter().enumerate().map(|(s, t)| t[(sa.rows[s][i], sb.rows[s][j])]);
            *v = lower_median(samples.collect()).unwrap_or(f64::NEG_INFINITY);
        }
        tables.entry(a).or_default().insert(b, table);
    }
    Ok(SimilarityMatrix {
        appearance_range,
        shape_range,
        tables,
    })
}
