//! Planted synthetic scenes: rendered frames, flow, candidates and
//! annotations whose ground-truth tubes satisfy their sentences by
//! construction.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::AnnotationTrack;
use crate::model::{BoundingBox, Detection, FlowFrame, FlowGrid, ModelError, VideoMeta};
use crate::pipeline::{
    write_json, AnnotationFile, AppearanceEntry, Manifest, OrientationFile, OrientedBox, PipelineError, SetData, SetEntry,
    VideoData, VideoEntry, ANNOTATION_FORMAT, FORMAT_VERSION, ORIENTATION_FORMAT,
};
use crate::proposals::{CandidateFile, FlowFile};
use crate::rng::{derive_seed, rng_from_seed, splitmix64, Rng};
use crate::similarity::{CropDescriptors, CropSource, RasterCrop, SimilarityError};

pub const SCENE_FORMAT: &str = "codetect-scene";
/// Flow grid resolution in pixels; planted positions are multiples of it.
pub const FLOW_CELL_PX: f64 = 4.0;
/// Motion bleeds this far past a moving object's boundary, as estimated
/// flow does.
pub const FLOW_BLEED_PX: f64 = 4.0;
pub const MOVER_SIZE: [f64; 2] = [24.0, 24.0];
pub const REFERENCE_SIZE: [f64; 2] = [40.0, 32.0];
/// Vertical offset of a pour target below the poured object's final center.
pub const POUR_DROP: f64 = 56.0;
const MARGIN: f64 = 4.0;

/// Object classes the generator draws from; all are nouns of the kitchen
/// lexicon.
pub const CLASSES: [&str; 10] = [
    "cup", "bowl", "bottle", "box", "bucket", "basket", "apple", "cabbage", "pot", "jar",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scene: {0}")]
    SpecInfeasible(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Parallel stripes at the given direction.
    Stripes(f64),
    Checker,
    Rings,
    Dots,
}

/// Procedural surface of one class, in object-normalized coordinates so
/// that appearance survives resizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub pattern: Pattern,
    /// Cycles across the object.
    pub frequency: f64,
    pub base: f64,
    pub contrast: f64,
}

impl Texture {
    /// Intensity at normalized offset `(a, b)` from the object center.
    pub fn value(&self, a: f64, b: f64) -> f64 {
        let f = TAU * self.frequency;
        let p = match self.pattern {
            Pattern::Stripes(dir) => 0.5 + 0.5 * (f * (a * dir.cos() + b * dir.sin())).sin(),
            Pattern::Checker => {
                if (f * a).sin() * (f * b).sin() >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Rings => 0.5 + 0.5 * (f * a.hypot(b)).cos(),
            Pattern::Dots => {
                if (f * a).cos() * (f * b).cos() > 0.3 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        self.base + self.contrast * (p - 0.5)
    }
}

pub fn class_texture(class: &str) -> Option<Texture> {
    let t = |pattern, frequency, base, contrast| Texture {
        pattern,
        frequency,
        base,
        contrast,
    };
    Some(match class {
        "cup" => t(Pattern::Stripes(0.0), 3.0, 0.3, 0.5),
        "bowl" => t(Pattern::Rings, 3.0, 0.6, 0.6),
        "bottle" => t(Pattern::Stripes(FRAC_PI_2), 2.0, 0.7, 0.4),
        "box" => t(Pattern::Checker, 2.0, 0.4, 0.6),
        "bucket" => t(Pattern::Dots, 3.0, 0.25, 0.5),
        "basket" => t(Pattern::Checker, 4.0, 0.6, 0.5),
        "apple" => t(Pattern::Rings, 2.0, 0.2, 0.3),
        "cabbage" => t(Pattern::Dots, 4.0, 0.75, 0.4),
        "pot" => t(Pattern::Stripes(FRAC_PI_4), 4.0, 0.45, 0.7),
        "jar" => t(Pattern::Rings, 5.0, 0.5, 0.8),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    PickUp,
    PutDown,
    CarryNear,
    TakeOut,
    Pour,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::PickUp,
        Scenario::PutDown,
        Scenario::CarryNear,
        Scenario::TakeOut,
        Scenario::Pour,
    ];

    pub fn has_reference(self) -> bool {
        !matches!(self, Scenario::PickUp | Scenario::PutDown)
    }

    pub fn sentence(self, mover: &str, reference: Option<&str>) -> String {
        let y = reference.unwrap_or("table");
        match self {
            Scenario::PickUp => format!("The person picked up the {mover}."),
            Scenario::PutDown => format!("The person put the {mover} down."),
            Scenario::CarryNear => format!("The person carried the {mover} to the left near the {y}."),
            Scenario::TakeOut => format!("The person took the {mover} out of the {y}."),
            Scenario::Pour => format!("The person poured the {mover} into the {y}."),
        }
    }
}

/// How a planted object moves. Positions change by a fixed step per frame
/// over `steps` frames starting after frame `onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Trajectory {
    Static,
    Linear { dx: f64, dy: f64 },
    Lift { dy: f64 },
    Lower { dy: f64 },
    /// Translation plus an orientation ramp of `turn` radians.
    RotateWithOrientation { dx: f64, dy: f64, turn: f64 },
}

impl Trajectory {
    fn step(&self) -> (f64, f64) {
        match *self {
            Trajectory::Static => (0.0, 0.0),
            Trajectory::Linear { dx, dy } | Trajectory::RotateWithOrientation { dx, dy, .. } => (dx, dy),
            Trajectory::Lift { dy } => (0.0, -dy.abs()),
            Trajectory::Lower { dy } => (0.0, dy.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub class: String,
    /// Sentence instance the object realizes; `None` for distractors.
    pub instance_id: Option<String>,
    pub size: [f64; 2],
    /// Top-left corner at frame 1.
    pub origin: [f64; 2],
    pub trajectory: Trajectory,
    pub onset: usize,
    pub steps: usize,
}

impl PlantedObject {
    fn progress(&self, t: usize) -> f64 {
        t.saturating_sub(self.onset).min(self.steps) as f64
    }

    pub fn top_left(&self, t: usize) -> (f64, f64) {
        let (dx, dy) = self.trajectory.step();
        let k = self.progress(t);
        (self.origin[0] + k * dx, self.origin[1] + k * dy)
    }

    pub fn bbox(&self, t: usize) -> BoundingBox {
        let (x, y) = self.top_left(t);
        BoundingBox::new(x, y, x + self.size[0], y + self.size[1]).expect("planted sizes are positive")
    }

    pub fn angle(&self, t: usize) -> f64 {
        match self.trajectory {
            Trajectory::RotateWithOrientation { turn, .. } => turn * self.progress(t) / self.steps.max(1) as f64,
            _ => 0.0,
        }
    }

    pub fn is_moving(&self) -> bool {
        self.trajectory.step() != (0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Standard deviation of per-pixel intensity noise.
    pub pixel: f64,
    /// Standard deviation of per-cell flow noise, px per frame.
    pub flow: f64,
    /// Maximum jitter of candidate copies, px.
    pub jitter: f64,
    /// Jittered candidate copies per object.
    pub jitter_copies: usize,
    /// Random candidate boxes per frame.
    pub random_boxes: usize,
}

impl NoiseParams {
    pub fn moderate() -> Self {
        Self {
            pixel: 0.04,
            flow: 0.3,
            jitter: 4.0,
            jitter_copies: 4,
            random_boxes: 30,
        }
    }

    pub fn noiseless() -> Self {
        Self {
            pixel: 0.0,
            flow: 0.0,
            jitter: 2.0,
            ..Self::moderate()
        }
    }
}

/// Complete description of one synthetic video; everything else is derived
/// from it deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub format: String,
    pub version: u32,
    pub video: VideoMeta,
    pub scenario: Scenario,
    pub sentence: String,
    /// Phases of the smooth background shared by a set.
    pub background: [f64; 2],
    pub noise: NoiseParams,
    pub seed: u64,
    /// Drawn in order; later objects occlude earlier ones.
    pub objects: Vec<PlantedObject>,
}

/// Uniform in `[0, 1)` from a hashed key.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal from a hashed key (Box-Muller).
fn gaussian(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(a ^ splitmix64(b ^ splitmix64(c))));
    let u1 = unit(h).max(f64::MIN_POSITIVE);
    let u2 = unit(splitmix64(h));
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for o in &self.objects {
            if class_texture(&o.class).is_none() {
                return Err(SynthError::UnknownClass(o.class.clone()));
            }
            for t in 1..=self.video.frame_count {
                if !o.bbox(t).within(&self.video) {
                    return Err(SynthError::SpecInfeasible(format!(
                        "{} leaves the {}x{} frame at frame {t}",
                        o.class, self.video.width, self.video.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn instances(&self) -> impl Iterator<Item = &PlantedObject> {
        self.objects.iter().filter(|o| o.instance_id.is_some())
    }

    fn background(&self, x: f64, y: f64) -> f64 {
        0.5 + 0.15 * (0.031 * x + self.background[0]).sin() * (0.043 * y + self.background[1]).cos()
    }

    /// Noise-free intensity at image point `(x, y)` of frame `t`.
    pub fn clean_intensity(&self, x: f64, y: f64, t: usize) -> f64 {
        for o in self.objects.iter().rev() {
            let b = o.bbox(t);
            if x >= b.x_min() && x < b.x_max() && y >= b.y_min() && y < b.y_max() {
                let (cx, cy) = b.center();
                let (a, c) = ((x - cx) / b.width(), (y - cy) / b.height());
                let (s, co) = (-o.angle(t)).sin_cos();
                let tex = class_texture(&o.class).expect("validated class");
                return tex.value(a * co - c * s, a * s + c * co);
            }
        }
        self.background(x, y)
    }

    pub fn intensity(&self, x: f64, y: f64, t: usize) -> f64 {
        let v = self.clean_intensity(x, y, t);
        if self.noise.pixel > 0.0 {
            let n = gaussian(self.seed, x.floor() as i64 as u64, y.floor() as i64 as u64, t as u64);
            v + self.noise.pixel * n
        } else {
            v
        }
    }

    /// Crop sampled at the pixel centers of a box rounded to whole pixels.
    pub fn crop(&self, frame: usize, b: &BoundingBox) -> Result<RasterCrop, SimilarityError> {
        let w = b.width().round().max(1.0) as usize;
        let h = b.height().round().max(1.0) as usize;
        let (sx, sy) = (b.width() / w as f64, b.height() / h as f64);
        RasterCrop::new(
            w,
            h,
            (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .map(|(r, c)| self.intensity(b.x_min() + (c as f64 + 0.5) * sx, b.y_min() + (r as f64 + 0.5) * sy, frame))
                .collect(),
        )
    }

    /// Flow consistent with the planted motion: the displacement from frame
    /// `t` to `t + 1` fills every cell either box covers, widened by
    /// [`FLOW_BLEED_PX`], so both forward and backward advection recover the
    /// track. The last frame is zero.
    pub fn flow(&self) -> FlowGrid {
        let cols = (self.video.width / FLOW_CELL_PX).ceil() as usize;
        let rows = (self.video.height / FLOW_CELL_PX).ceil() as usize;
        let n = self.video.frame_count;
        let frames = (1..=n)
            .map(|t| {
                let mut f = FlowFrame::zeros(cols, rows, FLOW_CELL_PX);
                if t == n {
                    return f;
                }
                if self.noise.flow > 0.0 {
                    for row in 0..rows {
                        for col in 0..cols {
                            let g = |k| gaussian(self.seed ^ 0xf10f, (col as u64) << 1 | k, row as u64, t as u64);
                            f.set(col, row, self.noise.flow * g(0), self.noise.flow * g(1));
                        }
                    }
                }
                for o in self.objects.iter().filter(|o| o.is_moving()) {
                    let (a, b) = (o.top_left(t), o.top_left(t + 1));
                    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                    if dx == 0.0 && dy == 0.0 {
                        continue;
                    }
                    let cells = |bx: BoundingBox| {
                        let cell = |v: f64| (v / FLOW_CELL_PX).max(0.0);
                        let c0 = cell(bx.x_min() - FLOW_BLEED_PX).floor() as usize;
                        let c1 = (cell(bx.x_max() + FLOW_BLEED_PX).ceil() as usize).min(cols);
                        let r0 = cell(bx.y_min() - FLOW_BLEED_PX).floor() as usize;
                        let r1 = (cell(bx.y_max() + FLOW_BLEED_PX).ceil() as usize).min(rows);
                        (r0..r1).flat_map(move |row| (c0..c1).map(move |col| (col, row)))
                    };
                    let mut covered: Vec<(usize, usize)> = cells(o.bbox(t)).chain(cells(o.bbox(t + 1))).collect();
                    covered.sort_unstable();
                    covered.dedup();
                    for (col, row) in covered {
                        let i = f.index(col, row);
                        f.set(col, row, dx + f.u[i], dy + f.v[i]);
                    }
                }
                f
            })
            .collect();
        FlowGrid::new(frames).expect("grid shape is consistent")
    }

    /// Two ranked generators: planted boxes with jittered copies, then
    /// random boxes.
    pub fn candidates(&self) -> Vec<Vec<Vec<BoundingBox>>> {
        let mut rng = rng_from_seed(derive_seed(self.seed, "candidates"));
        let (w, h) = (self.video.width, self.video.height);
        let mut planted = Vec::with_capacity(self.video.frame_count);
        let mut random = Vec::with_capacity(self.video.frame_count);
        for t in 1..=self.video.frame_count {
            let exact: Vec<BoundingBox> = self.objects.iter().map(|o| o.bbox(t)).collect();
            let mut frame = exact.clone();
            for _ in 0..self.noise.jitter_copies {
                for b in &exact {
                    let j = self.noise.jitter;
                    let mut d = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
                    let (x0, y0, x1, y1) = (b.x_min() + d(), b.y_min() + d(), b.x_max() + d(), b.y_max() + d());
                    frame.push(BoundingBox::clamped(x0, y0, x1, y1, &self.video).unwrap_or(*b));
                }
            }
            planted.push(frame);
            random.push(
                (0..self.noise.random_boxes)
                    .map(|_| {
                        let bw = rng.random_range(16.0..=52.0);
                        let bh = rng.random_range(16.0..=52.0);
                        let x = rng.random_range(0.0..=w - bw);
                        let y = rng.random_range(0.0..=h - bh);
                        BoundingBox::new(x, y, x + bw, y + bh).expect("positive size")
                    })
                    .collect(),
            );
        }
        vec![planted, random]
    }

    /// Single-annotator tracks equal to the planted boxes.
    pub fn annotations(&self) -> Vec<AnnotationTrack> {
        self.instances()
            .map(|o| {
                let boxes: Vec<Detection> =
                    (1..=self.video.frame_count).map(|t| Detection::new(t, o.bbox(t))).collect();
                AnnotationTrack::from_boxes(&self.video.id, o.instance_id.as_deref().expect("instance"), &boxes)
            })
            .collect()
    }

    pub fn orientations(&self) -> Vec<Vec<OrientedBox>> {
        (1..=self.video.frame_count)
            .map(|t| {
                self.objects
                    .iter()
                    .map(|o| OrientedBox {
                        bbox: o.bbox(t),
                        angle: o.angle(t),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn video_data(&self) -> VideoData {
        VideoData {
            meta: self.video.clone(),
            sentence: self.sentence.clone(),
            candidates: self.candidates(),
            flow: self.flow(),
            orientations: Some(self.orientations()),
            annotations: self.annotations(),
        }
    }
}

/// Renders crops of synthetic videos on demand.
pub struct SceneFrames {
    scenes: HashMap<String, SceneSpec>,
}

impl SceneFrames {
    pub fn new(scenes: Vec<SceneSpec>) -> Self {
        Self {
            scenes: scenes.into_iter().map(|s| (s.video.id.clone(), s)).collect(),
        }
    }
}

impl CropSource for SceneFrames {
    fn crop(&self, video: &str, frame: usize, b: &BoundingBox) -> Result<RasterCrop, SimilarityError> {
        self.scenes
            .get(video)
            .ok_or_else(|| SimilarityError::MissingVideo(video.to_string()))?
            .crop(frame, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: f64,
    pub height: f64,
    pub frames: usize,
    pub videos: usize,
    pub min_classes: usize,
    pub max_classes: usize,
    pub distractors: usize,
    pub noise: NoiseParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 320.0,
            height: 180.0,
            frames: 40,
            videos: 5,
            min_classes: 2,
            max_classes: 3,
            distractors: 3,
            noise: NoiseParams::moderate(),
        }
    }
}

impl SynthConfig {
    pub fn noiseless() -> Self {
        Self {
            noise: NoiseParams::noiseless(),
            ..Self::default()
        }
    }
}

/// Role assignment of one video.
#[derive(Debug, Clone, PartialEq)]
struct Cast {
    scenario: Scenario,
    mover: String,
    reference: Option<String>,
}

fn cast_set(config: &SynthConfig, rng: &mut Rng) -> Result<Vec<Cast>, SynthError> {
    if config.min_classes < 2 || config.max_classes < config.min_classes || config.max_classes > CLASSES.len() {
        return Err(SynthError::SpecInfeasible("class count range".into()));
    }
    if config.videos < config.min_classes || config.videos < 2 {
        return Err(SynthError::SpecInfeasible("too few videos for every class to recur".into()));
    }
    let k = rng.random_range(config.min_classes..=config.max_classes);
    let mut pool: Vec<&str> = CLASSES.to_vec();
    pool.shuffle(rng);
    let classes = &pool[..k];
    for _ in 0..1000 {
        let cast: Vec<Cast> = (0..config.videos)
            .map(|_| {
                let scenario = Scenario::ALL[rng.random_range(0..Scenario::ALL.len())];
                let mover = classes[rng.random_range(0..k)];
                let reference = scenario.has_reference().then(|| {
                    let others: Vec<&str> = classes.iter().copied().filter(|c| *c != mover).collect();
                    others[rng.random_range(0..others.len())].to_string()
                });
                Cast {
                    scenario,
                    mover: mover.to_string(),
                    reference,
                }
            })
            .collect();
        let recurs = classes.iter().all(|c| {
            cast.iter()
                .filter(|v| v.mover == *c || v.reference.as_deref() == Some(*c))
                .count()
                >= 2
        });
        if recurs {
            return Ok(cast);
        }
    }
    Err(SynthError::SpecInfeasible("could not make every class recur".into()))
}

/// Mover and optional reference for one scenario with the mover's frame-1
/// corner at `(x, y)`.
fn plant(cast: &Cast, x: f64, y: f64, leftward: bool) -> Vec<PlantedObject> {
    let side = if leftward { -1.0 } else { 1.0 };
    let (trajectory, onset) = match cast.scenario {
        Scenario::PickUp => (Trajectory::Lift { dy: 4.0 }, 4),
        Scenario::PutDown => (Trajectory::Lower { dy: 4.0 }, 4),
        Scenario::CarryNear => (Trajectory::Linear { dx: -8.0, dy: 0.0 }, 4),
        Scenario::TakeOut => (Trajectory::Linear { dx: 8.0 * side, dy: -4.0 }, 12),
        Scenario::Pour => (
            Trajectory::RotateWithOrientation {
                dx: 4.0 * side,
                dy: -4.0,
                turn: FRAC_PI_2,
            },
            4,
        ),
    };
    let mover = PlantedObject {
        class: cast.mover.clone(),
        instance_id: Some(cast.mover.clone()),
        size: MOVER_SIZE,
        origin: [x, y],
        trajectory,
        onset,
        steps: 24,
    };
    let mut out = Vec::with_capacity(2);
    if let Some(r) = &cast.reference {
        let (start, end) = (mover.bbox(1).center(), mover.bbox(mover.onset + mover.steps).center());
        let (cx, cy) = match cast.scenario {
            Scenario::CarryNear => (end.0 - 8.0, end.1 + 4.0),
            Scenario::TakeOut => start,
            _ => (end.0, end.1 + POUR_DROP),
        };
        out.push(PlantedObject {
            class: r.clone(),
            instance_id: Some(r.clone()),
            size: REFERENCE_SIZE,
            origin: [cx - REFERENCE_SIZE[0] / 2.0, cy - REFERENCE_SIZE[1] / 2.0],
            trajectory: Trajectory::Static,
            onset: 0,
            steps: 0,
        });
    }
    out.push(mover);
    out
}

fn inside(b: &BoundingBox, w: f64, h: f64) -> bool {
    b.x_min() >= MARGIN && b.y_min() >= MARGIN && b.x_max() <= w - MARGIN && b.y_max() <= h - MARGIN
}

fn gap_overlap(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x_min() < b.x_max() + MARGIN
        && b.x_min() < a.x_max() + MARGIN
        && a.y_min() < b.y_max() + MARGIN
        && b.y_min() < a.y_max() + MARGIN
}

fn scene_for(
    cast: &Cast,
    video: VideoMeta,
    config: &SynthConfig,
    classes: &[String],
    background: [f64; 2],
    seed: u64,
) -> Result<SceneSpec, SynthError> {
    let mut rng = rng_from_seed(derive_seed(seed, "layout"));
    let (w, h, n) = (config.width, config.height, config.frames);
    let leftward = rng.random_bool(0.5);
    let grid = |limit: f64| (0..).map(|i| i as f64 * FLOW_CELL_PX).take_while(move |v| *v <= limit);
    let mut placements = Vec::new();
    for y in grid(h) {
        for x in grid(w) {
            let objs = plant(cast, x, y, leftward);
            if objs.iter().all(|o| (1..=n).all(|t| inside(&o.bbox(t), w, h))) {
                placements.push(objs);
            }
        }
    }
    if placements.is_empty() {
        return Err(SynthError::SpecInfeasible(format!("{:?} does not fit in {w}x{h}", cast.scenario)));
    }
    let planted = placements.swap_remove(rng.random_range(0..placements.len()));
    let swept: Vec<BoundingBox> = planted.iter().flat_map(|o| (1..=n).map(|t| o.bbox(t))).collect();
    let mut distractors: Vec<PlantedObject> = Vec::with_capacity(config.distractors);
    let mut attempts = 0;
    while distractors.len() < config.distractors {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SynthError::SpecInfeasible("no room for distractors".into()));
        }
        let size = if rng.random_bool(0.5) { MOVER_SIZE } else { REFERENCE_SIZE };
        let x = (rng.random_range(0.0..(w - size[0]) / FLOW_CELL_PX)).floor() * FLOW_CELL_PX;
        let y = (rng.random_range(0.0..(h - size[1]) / FLOW_CELL_PX)).floor() * FLOW_CELL_PX;
        let b = BoundingBox::new(x, y, x + size[0], y + size[1])?;
        if !inside(&b, w, h)
            || swept.iter().any(|s| gap_overlap(s, &b))
            || distractors.iter().any(|d| gap_overlap(&d.bbox(1), &b))
        {
            continue;
        }
        distractors.push(PlantedObject {
            class: classes[rng.random_range(0..classes.len())].clone(),
            instance_id: None,
            size,
            origin: [x, y],
            trajectory: Trajectory::Static,
            onset: 0,
            steps: 0,
        });
    }
    distractors.extend(planted);
    let spec = SceneSpec {
        format: SCENE_FORMAT.into(),
        version: FORMAT_VERSION,
        video,
        scenario: cast.scenario,
        sentence: cast.scenario.sentence(&cast.mover, cast.reference.as_deref()),
        background,
        noise: config.noise,
        seed,
        objects: distractors,
    };
    spec.validate()?;
    Ok(spec)
}

/// Scenes of one codetection set. Every class of the set is planted in at
/// least two videos and also appears among the distractors' classes.
pub fn generate_set(config: &SynthConfig, set_id: &str, dataset_seed: u64) -> Result<Vec<SceneSpec>, SynthError> {
    let set_seed = derive_seed(dataset_seed, set_id);
    let mut rng = rng_from_seed(derive_seed(set_seed, "cast"));
    let cast = cast_set(config, &mut rng)?;
    let mut classes: Vec<String> = cast
        .iter()
        .flat_map(|c| std::iter::once(c.mover.clone()).chain(c.reference.clone()))
        .collect();
    classes.sort();
    classes.dedup();
    let background = [rng.random_range(0.0..TAU), rng.random_range(0.0..PI)];
    cast.iter()
        .enumerate()
        .map(|(i, c)| {
            let id = format!("{set_id}_v{i}");
            let video = VideoMeta::new(id.clone(), config.width, config.height, config.frames)?;
            scene_for(c, video, config, &classes, background, derive_seed(set_seed, &id))
        })
        .collect()
}

pub fn set_id(index: usize) -> String {
    format!("set{index:02}")
}

/// `count` sets named `set00`, `set01`, ...
pub fn generate_dataset(config: &SynthConfig, count: usize, seed: u64) -> Result<Vec<(String, Vec<SceneSpec>)>, SynthError> {
    (0..count)
        .map(|i| {
            let id = set_id(i);
            generate_set(config, &id, seed).map(|s| (id, s))
        })
        .collect()
}

/// In-memory pipeline input for one synthetic set.
pub fn set_data(set_id: &str, scenes: &[SceneSpec]) -> SetData {
    SetData {
        set_id: set_id.to_string(),
        videos: scenes.iter().map(SceneSpec::video_data).collect(),
        appearance: Arc::new(CropDescriptors::new(SceneFrames::new(scenes.to_vec()))),
    }
}

/// Writes every input file of a synthetic dataset under `dir` and returns
/// the manifest that lists them, paths relative to `dir`.
pub fn write_bundle(dir: &Path, sets: &[(String, Vec<SceneSpec>)]) -> Result<Manifest, PipelineError> {
    let mut entries = Vec::with_capacity(sets.len());
    for (set_id, scenes) in sets {
        let sub = PathBuf::from(set_id);
        std::fs::create_dir_all(dir.join(&sub)).map_err(|source| PipelineError::Io {
            path: dir.join(&sub),
            source,
        })?;
        let mut videos = Vec::with_capacity(scenes.len());
        for s in scenes {
            let id = &s.video.id;
            let file = |suffix: &str| sub.join(format!("{id}.{suffix}.json"));
            let data = s.video_data();
            let mut candidates = Vec::new();
            for (g, frames) in data.candidates.into_iter().enumerate() {
                let p = file(&format!("candidates{g}"));
                write_json(&dir.join(&p), &CandidateFile::new(id, frames))?;
                candidates.push(p);
            }
            let flow = file("flow");
            write_json(&dir.join(&flow), &FlowFile::new(id, &data.flow))?;
            let annotations = file("annotations");
            write_json(
                &dir.join(&annotations),
                &AnnotationFile {
                    format: ANNOTATION_FORMAT.into(),
                    version: FORMAT_VERSION,
                    video: id.clone(),
                    tracks: data.annotations,
                },
            )?;
            let orientations = file("orientations");
            write_json(
                &dir.join(&orientations),
                &OrientationFile {
                    format: ORIENTATION_FORMAT.into(),
                    version: FORMAT_VERSION,
                    video: id.clone(),
                    frames: data.orientations.unwrap_or_default(),
                },
            )?;
            let scene = file("scene");
            write_json(&dir.join(&scene), s)?;
            videos.push(VideoEntry {
                video: s.video.clone(),
                sentence: s.sentence.clone(),
                candidates,
                flow,
                annotations,
                orientations: Some(orientations),
                appearance: AppearanceEntry::Scene(scene),
            });
        }
        entries.push(SetEntry {
            set_id: set_id.clone(),
            run_id: None,
            videos,
        });
    }
    Ok(Manifest::new("kitchen", entries))
}
