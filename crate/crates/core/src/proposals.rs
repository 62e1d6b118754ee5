//! Object proposals: tubes sampled from per-frame candidates by optical flow
//! and propagated through the whole video with a pluggable tracker.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, Detection, FlowFrame, FlowGrid, ModelError, MotionClass, Proposal, VideoMeta};

/// Added to flow magnitudes before inverting them for stationary sampling.
pub const FLOW_EPSILON: f64 = 1e-6;
/// Candidates covering more than this fraction of the frame are dropped.
pub const MAX_CANDIDATE_FRACTION: f64 = 1.0 / 20.0;
/// Tracks collapsing below this size (pixels) are rejected.
pub const MIN_TRACK_PX: f64 = 1.0;

pub const CANDIDATE_FORMAT: &str = "codetect-candidates";
pub const FLOW_FORMAT: &str = "codetect-flow";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("no candidates in frame {0}")]
    EmptyCandidates(usize),
    #[error("track collapsed below {MIN_TRACK_PX}px at frame {0}")]
    DegenerateTrack(usize),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} covers {got} frames, video has {expected}")]
    Coverage {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("bad input file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Proposals per video.
    pub k: usize,
    /// Candidates kept per frame.
    pub n: usize,
    /// Probability of drawing the moving class.
    pub moving_prob: f64,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 240,
            n: 500,
            moving_prob: 1.0 / 3.0,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ProposalError> {
        if self.k == 0 || self.n == 0 {
            return Err(ProposalError::InvalidConfig("K and N must be at least 1".into()));
        }
        if !(self.moving_prob > 0.0 && self.moving_prob < 1.0) {
            return Err(ProposalError::InvalidConfig(format!(
                "moving probability {} outside (0, 1)",
                self.moving_prob
            )));
        }
        Ok(())
    }
}

/// One generator's candidates for one video, as stored on disk. Each box is
/// `[x_min, y_min, x_max, y_max]`; a fifth value (confidence) is accepted
/// and ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub frames: Vec<Vec<Vec<f64>>>,
}

impl CandidateFile {
    pub fn new(video: &str, frames: Vec<Vec<BoundingBox>>) -> Self {
        Self {
            format: CANDIDATE_FORMAT.into(),
            version: FORMAT_VERSION,
            video: video.into(),
            frames: frames
                .into_iter()
                .map(|f| f.into_iter().map(|b| b.to_array().to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProposalError> {
        let f: Self = serde_json::from_str(text)?;
        if f.format != CANDIDATE_FORMAT || f.version != FORMAT_VERSION {
            return Err(ProposalError::Format(format!(
                "expected {CANDIDATE_FORMAT} v{FORMAT_VERSION}, got {} v{}",
                f.format, f.version
            )));
        }
        Ok(f)
    }

    /// Boxes per frame clamped into the video; boxes with no area left
    /// after clamping are dropped.
    pub fn boxes(&self, video: &VideoMeta) -> Result<Vec<Vec<BoundingBox>>, ProposalError> {
        if self.frames.len() != video.frame_count {
            return Err(ProposalError::Coverage {
                what: "candidate file",
                got: self.frames.len(),
                expected: video.frame_count,
            });
        }
        self.frames
            .iter()
            .map(|frame| {
                let mut out = Vec::with_capacity(frame.len());
                for b in frame {
                    if b.len() != 4 && b.len() != 5 {
                        return Err(ProposalError::Format(format!("box with {} values", b.len())));
                    }
                    match BoundingBox::clamped(b[0], b[1], b[2], b[3], video) {
                        Ok(bb) => out.push(bb),
                        Err(ModelError::DegenerateBox(..)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Optical flow for one video as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub frames: Vec<FlowFrame>,
}

impl FlowFile {
    pub fn new(video: &str, grid: &FlowGrid) -> Self {
        Self {
            format: FLOW_FORMAT.into(),
            version: FORMAT_VERSION,
            video: video.into(),
            frames: grid.frames().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProposalError> {
        let f: Self = serde_json::from_str(text)?;
        if f.format != FLOW_FORMAT || f.version != FORMAT_VERSION {
            return Err(ProposalError::Format(format!(
                "expected {FLOW_FORMAT} v{FORMAT_VERSION}, got {} v{}",
                f.format, f.version
            )));
        }
        Ok(f)
    }

    pub fn grid(self, video: &VideoMeta) -> Result<FlowGrid, ProposalError> {
        let grid = FlowGrid::new(self.frames)?;
        if !grid.covers(video) {
            return Err(ProposalError::Coverage {
                what: "flow file",
                got: grid.frame_count(),
                expected: video.frame_count,
            });
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BoundingBox,
    /// Index of the generator file the candidate came from.
    pub generator: usize,
}

/// Merged per-frame candidates of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    frames: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn new(frames: Vec<Vec<Candidate>>) -> Self {
        Self { frames }
    }

    /// Merges several generators' ranked candidate lists into at most `n`
    /// per frame. Oversized boxes are dropped first; each generator then
    /// contributes an equal share of its top-ranked boxes, a short
    /// generator's share is filled from the others, and the result is
    /// interleaved round-robin.
    pub fn merge(video: &VideoMeta, generators: &[Vec<Vec<BoundingBox>>], n: usize) -> Result<Self, ProposalError> {
        for g in generators {
            if g.len() != video.frame_count {
                return Err(ProposalError::Coverage {
                    what: "candidate generator",
                    got: g.len(),
                    expected: video.frame_count,
                });
            }
        }
        let limit = video.frame_area() * MAX_CANDIDATE_FRACTION;
        let count = generators.len().max(1);
        let frames = (0..video.frame_count)
            .map(|f| {
                let lists: Vec<Vec<BoundingBox>> = generators
                    .iter()
                    .map(|g| g[f].iter().copied().filter(|b| b.area() <= limit).collect())
                    .collect();
                let mut take: Vec<usize> = (0..lists.len())
                    .map(|i| (n / count + usize::from(i < n % count)).min(lists[i].len()))
                    .collect();
                let mut missing = n.saturating_sub(take.iter().sum());
                while missing > 0 {
                    let mut progressed = false;
                    for (i, l) in lists.iter().enumerate() {
                        if missing > 0 && take[i] < l.len() {
                            take[i] += 1;
                            missing -= 1;
                            progressed = true;
                        }
                    }
                    if !progressed {
                        break;
                    }
                }
                let mut out = Vec::with_capacity(n);
                let longest = take.iter().copied().max().unwrap_or(0);
                for r in 0..longest {
                    for (g, l) in lists.iter().enumerate() {
                        if r < take[g] {
                            out.push(Candidate { bbox: l[r], generator: g });
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Candidates of 1-based frame `t`.
    pub fn frame(&self, t: usize) -> &[Candidate] {
        &self.frames[t - 1]
    }
}

/// Propagates a box by one frame.
pub trait Tracker: Send + Sync {
    fn step(
        &self,
        video: &VideoMeta,
        flow: &FlowGrid,
        bbox: &BoundingBox,
        from: usize,
        to: usize,
        motion: MotionClass,
    ) -> Result<BoundingBox, ProposalError>;
}

/// Moves a box by the mean flow vector inside it, keeping its size;
/// stationary boxes stay where they are.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowAdvection;

impl Tracker for FlowAdvection {
    fn step(
        &self,
        video: &VideoMeta,
        flow: &FlowGrid,
        bbox: &BoundingBox,
        from: usize,
        to: usize,
        motion: MotionClass,
    ) -> Result<BoundingBox, ProposalError> {
        if bbox.width() < MIN_TRACK_PX || bbox.height() < MIN_TRACK_PX {
            return Err(ProposalError::DegenerateTrack(to));
        }
        if motion == MotionClass::Stationary {
            return Ok(*bbox);
        }
        // flow at frame t maps t to t + 1
        let (dx, dy) = if to > from {
            flow.mean_vector_in(from, bbox)
        } else {
            let (u, v) = flow.mean_vector_in(to, bbox);
            (-u, -v)
        };
        let moved = bbox.translated(dx, dy).shifted_inside(video);
        if moved.width() < MIN_TRACK_PX || moved.height() < MIN_TRACK_PX {
            return Err(ProposalError::DegenerateTrack(to));
        }
        Ok(moved)
    }
}

/// Sampling weight of every frame: its mean flow magnitude.
pub fn frame_weights(flow: &FlowGrid) -> Vec<f64> {
    (1..=flow.frame_count()).map(|t| flow.frame_mean_magnitude(t)).collect()
}

/// Sampling weight of each candidate in frame `t` for the given class.
pub fn candidate_weights(cands: &[Candidate], t: usize, motion: MotionClass, flow: &FlowGrid) -> Vec<f64> {
    cands
        .iter()
        .map(|c| {
            let m = flow.mean_magnitude_in(t, &c.bbox);
            match motion {
                MotionClass::Moving => m,
                MotionClass::Stationary => 1.0 / (m + FLOW_EPSILON),
            }
        })
        .collect()
}

/// Index drawn proportionally to `weights`; uniform when they sum to zero.
pub fn weighted_choice<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    match WeightedIndex::new(weights) {
        Ok(d) => d.sample(rng),
        Err(_) => rng.random_range(0..weights.len()),
    }
}

/// Frame (1-based) drawn proportionally to its mean flow magnitude.
pub fn sample_seed_frame<R: Rng + ?Sized>(flow: &FlowGrid, rng: &mut R) -> usize {
    weighted_choice(&frame_weights(flow), rng) + 1
}

pub fn sample_motion_class<R: Rng + ?Sized>(moving_prob: f64, rng: &mut R) -> MotionClass {
    if rng.random::<f64>() < moving_prob {
        MotionClass::Moving
    } else {
        MotionClass::Stationary
    }
}

/// Candidate of frame `t` drawn by flow (moving) or inverse flow (stationary).
pub fn sample_candidate<R: Rng + ?Sized>(
    cands: &[Candidate],
    t: usize,
    motion: MotionClass,
    flow: &FlowGrid,
    rng: &mut R,
) -> Result<BoundingBox, ProposalError> {
    if cands.is_empty() {
        return Err(ProposalError::EmptyCandidates(t));
    }
    let w = candidate_weights(cands, t, motion, flow);
    Ok(cands[weighted_choice(&w, rng)].bbox)
}

/// Tracks a seed detection backwards to frame 1 and forwards to frame T.
pub fn propagate(
    video: &VideoMeta,
    seed: Detection,
    motion: MotionClass,
    tracker: &dyn Tracker,
    flow: &FlowGrid,
) -> Result<Proposal, ProposalError> {
    video.check_frame(seed.frame)?;
    if !flow.covers(video) {
        return Err(ProposalError::Coverage {
            what: "flow",
            got: flow.frame_count(),
            expected: video.frame_count,
        });
    }
    let t_seed = seed.frame;
    let mut boxes = vec![seed.bbox; video.frame_count];
    for t in (1..t_seed).rev() {
        boxes[t - 1] = tracker.step(video, flow, &boxes[t], t + 1, t, motion)?;
    }
    for t in (t_seed + 1)..=video.frame_count {
        boxes[t - 1] = tracker.step(video, flow, &boxes[t - 2], t - 1, t, motion)?;
    }
    let dets = boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| Detection::new(i + 1, b))
        .collect();
    Ok(Proposal::new(video, dets, motion, t_seed)?)
}

/// Draws `config.k` tubes: frame by flow, class by `moving_prob`, candidate
/// by (inverse) flow, then propagation.
pub fn generate_proposals<R: Rng + ?Sized>(
    video: &VideoMeta,
    candidates: &CandidateSet,
    flow: &FlowGrid,
    config: &SamplerConfig,
    tracker: &dyn Tracker,
    rng: &mut R,
) -> Result<Vec<Proposal>, ProposalError> {
    config.validate()?;
    if candidates.frame_count() != video.frame_count {
        return Err(ProposalError::Coverage {
            what: "candidates",
            got: candidates.frame_count(),
            expected: video.frame_count,
        });
    }
    if !flow.covers(video) {
        return Err(ProposalError::Coverage {
            what: "flow",
            got: flow.frame_count(),
            expected: video.frame_count,
        });
    }
    let weights = frame_weights(flow);
    (0..config.k)
        .map(|_| {
            let t = weighted_choice(&weights, rng) + 1;
            let motion = sample_motion_class(config.moving_prob, rng);
            let bbox = sample_candidate(candidates.frame(t), t, motion, flow, rng)?;
            propagate(video, Detection::new(t, bbox), motion, tracker, flow)
        })
        .collect()
}
