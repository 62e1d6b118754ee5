//! Geometric and video-level domain types shared by every scoring stage.
//!
//! Frames are 1-indexed throughout: a video with `frame_count = T` has frames
//! `1..=T`, mirroring the first/last-frame notation used by the predicates.
//! Boxes live in continuous pixel coordinates of their video frame.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("video dimensions must be positive and finite, got {width}x{height}")]
    InvalidDimensions { width: f64, height: f64 },
    #[error("video must have at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame rate must be positive, got {0}")]
    InvalidFps(f64),
    #[error("non-finite box coordinate")]
    NonFiniteBox,
    #[error("degenerate box [{0}, {1}, {2}, {3}]")]
    DegenerateBox(f64, f64, f64, f64),
    #[error("frame {frame} outside 1..={frame_count}")]
    FrameOutOfRange { frame: usize, frame_count: usize },
    #[error("proposal for video `{video}` has {got} boxes, expected {expected}")]
    WrongLength {
        video: String,
        got: usize,
        expected: usize,
    },
    #[error("proposal belongs to video `{got}`, expected `{expected}`")]
    WrongVideo { got: String, expected: String },
    #[error("proposal box at position {0} has non-consecutive frame index")]
    NonConsecutive(usize),
    #[error("stationary proposal changes size at frame {0}")]
    StationaryResized(usize),
    #[error("flow grid: {0}")]
    FlowShape(String),
}

/// Axis-aligned box `[x_min, y_min, x_max, y_max]` in pixel coordinates.
///
/// Always non-degenerate: `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(ModelError::NonFiniteBox);
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(ModelError::DegenerateBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Clamps the coordinates into the frame of `video` before validating.
    pub fn clamped(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        video: &VideoMeta,
    ) -> Result<Self, ModelError> {
        let cx = |x: f64| x.clamp(0.0, video.width);
        let cy = |y: f64| y.clamp(0.0, video.height);
        Self::new(cx(x_min), cy(y_min), cx(x_max), cy(y_max))
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        box_area(self)
    }

    /// Center in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Shifts the box (size preserved) so that it lies inside the frame.
    /// Boxes larger than the frame along an axis are cropped on that axis.
    pub fn shifted_inside(&self, video: &VideoMeta) -> Self {
        fn fit(lo: f64, hi: f64, limit: f64) -> (f64, f64) {
            let len = hi - lo;
            if len >= limit {
                (0.0, limit)
            } else if lo < 0.0 {
                (0.0, len)
            } else if hi > limit {
                (limit - len, limit)
            } else {
                (lo, hi)
            }
        }
        let (x_min, x_max) = fit(self.x_min, self.x_max, video.width);
        let (y_min, y_max) = fit(self.y_min, self.y_max, video.height);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn within(&self, video: &VideoMeta) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= video.width && self.y_max <= video.height
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ModelError;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Deserialize)]
struct VideoMetaRaw {
    id: String,
    width: f64,
    height: f64,
    frame_count: usize,
    #[serde(default = "default_fps")]
    fps: f64,
}

/// Identity and geometry of one video clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VideoMetaRaw")]
pub struct VideoMeta {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub frame_count: usize,
    pub fps: f64,
}

impl TryFrom<VideoMetaRaw> for VideoMeta {
    type Error = ModelError;
    fn try_from(r: VideoMetaRaw) -> Result<Self, Self::Error> {
        let mut v = VideoMeta::new(r.id, r.width, r.height, r.frame_count)?;
        if !(r.fps.is_finite() && r.fps > 0.0) {
            return Err(ModelError::InvalidFps(r.fps));
        }
        v.fps = r.fps;
        Ok(v)
    }
}

impl VideoMeta {
    pub fn new(
        id: impl Into<String>,
        width: f64,
        height: f64,
        frame_count: usize,
    ) -> Result<Self, ModelError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(ModelError::InvalidDimensions { width, height });
        }
        if frame_count < 2 {
            return Err(ModelError::TooFewFrames(frame_count));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            frame_count,
            fps: default_fps(),
        })
    }

    pub fn frame_area(&self) -> f64 {
        self.width * self.height
    }

    pub fn check_frame(&self, frame: usize) -> Result<(), ModelError> {
        if frame == 0 || frame > self.frame_count {
            Err(ModelError::FrameOutOfRange {
                frame,
                frame_count: self.frame_count,
            })
        } else {
            Ok(())
        }
    }
}

/// A box observed in one frame, optionally with an in-plane orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<f64>,
}

impl Detection {
    pub fn new(frame: usize, bbox: BoundingBox) -> Self {
        Self {
            frame,
            bbox,
            orientation: None,
        }
    }

    pub fn with_orientation(mut self, radians: f64) -> Self {
        self.orientation = Some(wrap_angle(radians));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Moving,
    Stationary,
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotionClass::Moving => f.write_str("moving"),
            MotionClass::Stationary => f.write_str("stationary"),
        }
    }
}

/// Size tolerance (pixels) when checking that stationary tubes keep their size.
const SIZE_TOLERANCE: f64 = 1e-6;

/// An object tube: exactly one detection per frame of its video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    video_id: String,
    boxes: Vec<Detection>,
    motion: MotionClass,
    seed_frame: usize,
}

impl Proposal {
    pub fn new(
        video: &VideoMeta,
        boxes: Vec<Detection>,
        motion: MotionClass,
        seed_frame: usize,
    ) -> Result<Self, ModelError> {
        let p = Self {
            video_id: video.id.clone(),
            boxes,
            motion,
            seed_frame,
        };
        p.validate(video)?;
        Ok(p)
    }

    /// Checks the tube invariants against `video`. Deserialized proposals
    /// must pass through here before use.
    pub fn validate(&self, video: &VideoMeta) -> Result<(), ModelError> {
        if self.video_id != video.id {
            return Err(ModelError::WrongVideo {
                got: self.video_id.clone(),
                expected: video.id.clone(),
            });
        }
        if self.boxes.len() != video.frame_count {
            return Err(ModelError::WrongLength {
                video: video.id.clone(),
                got: self.boxes.len(),
                expected: video.frame_count,
            });
        }
        video.check_frame(self.seed_frame)?;
        for (i, d) in self.boxes.iter().enumerate() {
            if d.frame != i + 1 {
                return Err(ModelError::NonConsecutive(i));
            }
        }
        if self.motion == MotionClass::Stationary {
            let first = self.boxes[0].bbox;
            for d in &self.boxes[1..] {
                if (d.bbox.width() - first.width()).abs() > SIZE_TOLERANCE
                    || (d.bbox.height() - first.height()).abs() > SIZE_TOLERANCE
                {
                    return Err(ModelError::StationaryResized(d.frame));
                }
            }
        }
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }
    pub fn motion(&self) -> MotionClass {
        self.motion
    }
    pub fn seed_frame(&self) -> usize {
        self.seed_frame
    }
    pub fn boxes(&self) -> &[Detection] {
        &self.boxes
    }
    pub fn frame_count(&self) -> usize {
        self.boxes.len()
    }

    /// Detection at 1-based frame `t`.
    pub fn at(&self, t: usize) -> &Detection {
        &self.boxes[t - 1]
    }

    pub fn has_orientation(&self) -> bool {
        self.boxes.iter().all(|d| d.orientation.is_some())
    }

    /// Attaches an orientation to every detection.
    pub fn with_orientations(mut self, mut f: impl FnMut(&Detection) -> Option<f64>) -> Self {
        for d in &mut self.boxes {
            d.orientation = f(d).map(wrap_angle);
        }
        self
    }
}

/// One frame of a dense flow field sampled on a regular grid of square cells.
///
/// Cell `(c, r)` covers pixels `[c*cell_px, (c+1)*cell_px) x [r*cell_px, (r+1)*cell_px)`
/// and stores the flow vector `(u, v)` in pixels per frame, pointing from this
/// frame to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFrame {
    pub cols: usize,
    pub rows: usize,
    pub cell_px: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowFrame {
    pub fn zeros(cols: usize, rows: usize, cell_px: f64) -> Self {
        Self {
            cols,
            rows,
            cell_px,
            u: vec![0.0; cols * rows],
            v: vec![0.0; cols * rows],
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.cols == 0 || self.rows == 0 {
            return Err(ModelError::FlowShape("grid must be at least 1x1".into()));
        }
        if !(self.cell_px.is_finite() && self.cell_px > 0.0) {
            return Err(ModelError::FlowShape(format!("invalid cell size {}", self.cell_px)));
        }
        let n = self.cols * self.rows;
        if self.u.len() != n || self.v.len() != n {
            return Err(ModelError::FlowShape(format!(
                "expected {n} vectors per component, got u={} v={}",
                self.u.len(),
                self.v.len()
            )));
        }
        if self.u.iter().chain(self.v.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::FlowShape("non-finite flow value".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn set(&mut self, col: usize, row: usize, u: f64, v: f64) {
        let i = self.index(col, row);
        self.u[i] = u;
        self.v[i] = v;
    }

    /// Area-weighted average of `value(cell)` over the cells overlapping `b`.
    /// Returns 0 when the box does not overlap the grid.
    fn box_average(&self, b: &BoundingBox, mut value: impl FnMut(usize) -> [f64; 2]) -> [f64; 2] {
        let c = self.cell_px;
        let c0 = ((b.x_min() / c).floor().max(0.0)) as usize;
        let r0 = ((b.y_min() / c).floor().max(0.0)) as usize;
        let c1 = ((b.x_max() / c).ceil() as usize).min(self.cols);
        let r1 = ((b.y_max() / c).ceil() as usize).min(self.rows);
        let mut acc = [0.0; 2];
        let mut weight = 0.0;
        for row in r0..r1 {
            let y_lo = (row as f64 * c).max(b.y_min());
            let y_hi = ((row + 1) as f64 * c).min(b.y_max());
            if y_hi <= y_lo {
                continue;
            }
            for col in c0..c1 {
                let x_lo = (col as f64 * c).max(b.x_min());
                let x_hi = ((col + 1) as f64 * c).min(b.x_max());
                if x_hi <= x_lo {
                    continue;
                }
                let w = (x_hi - x_lo) * (y_hi - y_lo);
                let val = value(self.index(col, row));
                acc[0] += w * val[0];
                acc[1] += w * val[1];
                weight += w;
            }
        }
        if weight > 0.0 {
            [acc[0] / weight, acc[1] / weight]
        } else {
            [0.0, 0.0]
        }
    }

    pub fn mean_magnitude_in(&self, b: &BoundingBox) -> f64 {
        self.box_average(b, |i| [self.u[i].hypot(self.v[i]), 0.0])[0]
    }

    pub fn mean_vector_in(&self, b: &BoundingBox) -> (f64, f64) {
        let [u, v] = self.box_average(b, |i| [self.u[i], self.v[i]]);
        (u, v)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.u.len() as f64;
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).sum::<f64>() / n
    }
}

/// Optical flow for a whole video: one [`FlowFrame`] per frame `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FlowFrame>", into = "Vec<FlowFrame>")]
pub struct FlowGrid {
    frames: Vec<FlowFrame>,
    frame_means: Vec<f64>,
}

impl FlowGrid {
    pub fn new(frames: Vec<FlowFrame>) -> Result<Self, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::FlowShape("no frames".into()));
        }
        for f in &frames {
            f.validate()?;
        }
        let frame_means = frames.iter().map(FlowFrame::mean_magnitude).collect();
        Ok(Self {
            frames,
            frame_means,
        })
    }

    /// A zero flow field covering `video` with a single cell per frame.
    pub fn zeros(video: &VideoMeta) -> Self {
        let cell = video.width.max(video.height);
        Self::new(vec![FlowFrame::zeros(1, 1, cell); video.frame_count]).expect("valid grid")
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn covers(&self, video: &VideoMeta) -> bool {
        self.frames.len() == video.frame_count
    }

    /// Flow at 1-based frame `t`.
    pub fn frame(&self, t: usize) -> &FlowFrame {
        &self.frames[t - 1]
    }

    pub fn frames(&self) -> &[FlowFrame] {
        &self.frames
    }

    pub fn mean_magnitude_in(&self, t: usize, b: &BoundingBox) -> f64 {
        self.frame(t).mean_magnitude_in(b)
    }

    pub fn mean_vector_in(&self, t: usize, b: &BoundingBox) -> (f64, f64) {
        self.frame(t).mean_vector_in(b)
    }

    /// Mean flow magnitude over the whole of frame `t`.
    pub fn frame_mean_magnitude(&self, t: usize) -> f64 {
        self.frame_means[t - 1]
    }
}

impl TryFrom<Vec<FlowFrame>> for FlowGrid {
    type Error = ModelError;
    fn try_from(frames: Vec<FlowFrame>) -> Result<Self, Self::Error> {
        Self::new(frames)
    }
}

impl From<FlowGrid> for Vec<FlowFrame> {
    fn from(g: FlowGrid) -> Self {
        g.frames
    }
}

/// Log-domain score. `-inf` is a legal value and is absorbing under addition.
/// Ordering is total with `-inf` as the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub f64);

impl Score {
    pub const ZERO: Score = Score(0.0);
    pub const NEG_INFINITY: Score = Score(f64::NEG_INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_neg_infinite(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        if self.is_neg_infinite() || rhs.is_neg_infinite() {
            Score::NEG_INFINITY
        } else {
            Score(self.0 + rhs.0)
        }
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::ZERO, Add::add)
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl From<f64> for Score {
    fn from(v: f64) -> Self {
        Score(v)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Box center normalized by frame width and height.
pub fn normalized_center(d: &Detection, video: &VideoMeta) -> (f64, f64) {
    let (cx, cy) = d.bbox.center();
    (cx / video.width, cy / video.height)
}

/// Euclidean distance between normalized centers (unit-square metric).
pub fn normalized_dist(d1: &Detection, d2: &Detection, video: &VideoMeta) -> f64 {
    let (x1, y1) = normalized_center(d1, video);
    let (x2, y2) = normalized_center(d2, video);
    (x1 - x2).hypot(y1 - y2)
}

pub fn box_area(b: &BoundingBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}
