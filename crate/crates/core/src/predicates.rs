//! Predicate catalogue and the closed-form scores used to rate how well one
//! or two tubes satisfy a sentential predicate.
//!
//! Every score is a log-likelihood-like value in `[-inf, 0]`. Endpoint
//! quantities (values "at the first frame" or "at the last frame") are
//! averaged over a window of `L` frames at either end of the tube.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalized_center, normalized_dist, wrap_angle, FlowGrid, Proposal, Score, VideoMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredicateError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{name}` takes {expected} argument(s), got {got}")]
    WrongArity {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("proposal carries no orientation channel")]
    MissingOrientation,
    #[error("proposals come from different videos (`{0}` vs `{1}`)")]
    VideoMismatch(String, String),
    #[error("proposal has {got} frames but the context video has {expected}")]
    FrameCountMismatch { got: usize, expected: usize },
    #[error("flow grid covers {got} frames, video has {expected}")]
    FlowCoverage { got: usize, expected: usize },
    #[error("frame {0} has no frame {1} frames earlier")]
    NoLookback(usize, usize),
}

macro_rules! catalogue {
    ($($variant:ident => $name:literal, $arity:literal;)*) => {
        /// The predicate catalogue. Names are the external contract used in
        /// rule files and reports.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Predicate {
            $($variant,)*
        }

        impl Predicate {
            pub const ALL: &'static [Predicate] = &[$(Predicate::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Predicate::$variant => $name,)*
                }
            }

            pub fn arity(self) -> usize {
                match self {
                    $(Predicate::$variant => $arity,)*
                }
            }
        }

        impl FromStr for Predicate {
            type Err = PredicateError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(Predicate::$variant),)*
                    _ => Err(PredicateError::UnknownPredicate(s.to_string())),
                }
            }
        }
    };
}

catalogue! {
    Move => "move", 1;
    MoveUp => "moveUp", 1;
    MoveDown => "moveDown", 1;
    MoveVertical => "moveVertical", 1;
    MoveLeftwards => "moveLeftwards", 1;
    MoveRightwards => "moveRightwards", 1;
    MoveHorizontal => "moveHorizontal", 1;
    Rotate => "rotate", 1;
    Towards => "towards", 2;
    AwayFrom => "awayFrom", 2;
    LeftOfStart => "leftOfStart", 2;
    LeftOfEnd => "leftOfEnd", 2;
    RightOfStart => "rightOfStart", 2;
    RightOfEnd => "rightOfEnd", 2;
    OnTopOfStart => "onTopOfStart", 2;
    OnTopOfEnd => "onTopOfEnd", 2;
    NearStart => "nearStart", 2;
    NearEnd => "nearEnd", 2;
    InStart => "inStart", 2;
    InEnd => "inEnd", 2;
    BelowStart => "belowStart", 2;
    BelowEnd => "belowEnd", 2;
    AboveStart => "aboveStart", 2;
    AboveEnd => "aboveEnd", 2;
    Over => "over", 2;
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which motion-only term a predicate places on one of its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowTerm {
    /// `medFlMg`: the argument is expected to move.
    Move,
    /// `tempCoher`: the argument is expected to stay put.
    TempCoher,
}

impl Predicate {
    /// The motion-only terms appearing in this predicate's formula, as
    /// `(argument index, term)` pairs, with multiplicity.
    pub fn flow_terms(self) -> &'static [(usize, FlowTerm)] {
        use Predicate::*;
        match self {
            Move | MoveUp | MoveDown | MoveVertical | MoveLeftwards | MoveRightwards
            | MoveHorizontal | Rotate | Towards | AwayFrom => &[(0, FlowTerm::Move)],
            InStart | InEnd => &[(1, FlowTerm::TempCoher), (1, FlowTerm::TempCoher)],
            _ => &[(1, FlowTerm::TempCoher)],
        }
    }
}

/// Thresholds and shape parameters of the predicate scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateConstants {
    pub dist_large: f64,
    pub dist_small: f64,
    pub angle: f64,
    /// Logistic slope of the soft distance gates (negative).
    pub slope: f64,
    /// von Mises concentration for rotation likelihoods.
    pub kappa: f64,
    /// Frames to look back when measuring rotation.
    pub lookback: usize,
    /// Frames averaged at each end of a tube.
    pub endpoint_window: usize,
    /// Floor of the normalized flow score, `log(floor)` is its minimum.
    pub flow_floor: f64,
}

impl Default for PredicateConstants {
    fn default() -> Self {
        Self {
            dist_large: 0.25,
            dist_small: 0.05,
            angle: PI / 2.0,
            slope: -20.0,
            kappa: 4.0,
            lookback: 30,
            endpoint_window: 15,
            flow_floor: 1e-3,
        }
    }
}

/// Min/max of raw median flow magnitudes over the proposals of one
/// codetection set; maps a raw median to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRange {
    pub min: f64,
    pub max: f64,
}

impl FlowRange {
    pub fn from_raw(values: impl IntoIterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            // empty population
            return Self { min: 0.0, max: 0.0 };
        }
        Self { min, max }
    }

    /// Min-max normalization clipped to `[0, 1]`. A degenerate range maps
    /// everything to 1 so that the flow term is neutral.
    pub fn normalize(&self, raw: f64) -> f64 {
        if self.max > self.min {
            ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }
}

/// Read-only evaluation context for one video.
#[derive(Debug, Clone)]
pub struct PredicateContext<'a> {
    pub video: &'a VideoMeta,
    pub flow: &'a FlowGrid,
    pub constants: PredicateConstants,
    pub flow_range: FlowRange,
}

impl<'a> PredicateContext<'a> {
    pub fn new(
        video: &'a VideoMeta,
        flow: &'a FlowGrid,
        constants: PredicateConstants,
        flow_range: FlowRange,
    ) -> Result<Self, PredicateError> {
        if !flow.covers(video) {
            return Err(PredicateError::FlowCoverage {
                got: flow.frame_count(),
                expected: video.frame_count,
            });
        }
        Ok(Self {
            video,
            flow,
            constants,
            flow_range,
        })
    }

    fn check(&self, p: &Proposal) -> Result<(), PredicateError> {
        if p.video_id() != self.video.id {
            return Err(PredicateError::VideoMismatch(
                p.video_id().to_string(),
                self.video.id.clone(),
            ));
        }
        if p.frame_count() != self.video.frame_count {
            return Err(PredicateError::FrameCountMismatch {
                got: p.frame_count(),
                expected: self.video.frame_count,
            });
        }
        Ok(())
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Soft gate `log(1 / (1 + exp(-slope * (x - a))))` with an explicit slope.
pub fn dist_less_than_with(x: f64, a: f64, slope: f64) -> Score {
    Score(-softplus(-slope * (x - a)))
}

/// Soft `x < a` gate with the default slope of -20.
pub fn dist_less_than(x: f64, a: f64) -> Score {
    dist_less_than_with(x, a, PredicateConstants::default().slope)
}

/// Soft `x > a` gate: `dist_less_than(-x, -a)`.
pub fn dist_greater_than(x: f64, a: f64) -> Score {
    dist_less_than(-x, -a)
}

pub fn dist_greater_than_with(x: f64, a: f64, slope: f64) -> Score {
    dist_less_than_with(-x, -a, slope)
}

/// Modified Bessel function of the first kind, order zero, by its power
/// series `sum_k ((x/2)^k / k!)^2`.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// von Mises log-density of `alpha` with location `beta` and concentration `kappa`.
pub fn has_rotation_with(alpha: f64, beta: f64, kappa: f64) -> Score {
    Score(kappa * (alpha - beta).cos() - (2.0 * PI).ln() - bessel_i0(kappa).ln())
}

pub fn has_rotation(alpha: f64, beta: f64) -> Score {
    has_rotation_with(alpha, beta, PredicateConstants::default().kappa)
}

/// 0 when the first box is strictly smaller than the second, `-inf` otherwise.
pub fn smaller_area(a1: f64, a2: f64) -> Score {
    if a1 < a2 {
        Score::ZERO
    } else {
        Score::NEG_INFINITY
    }
}

pub fn smaller(d1: &crate::model::Detection, d2: &crate::model::Detection) -> Score {
    smaller_area(d1.bbox.area(), d2.bbox.area())
}

/// Lower median (index `(n-1)/2` of the sorted values). `None` when empty.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Median over frames of the mean flow magnitude inside the tube's box.
pub fn raw_med_flow_mag(p: &Proposal, flow: &FlowGrid) -> f64 {
    let mut per_frame: Vec<f64> = p
        .boxes()
        .iter()
        .map(|d| flow.mean_magnitude_in(d.frame, &d.bbox))
        .collect();
    lower_median(&mut per_frame).unwrap_or(0.0)
}

/// The `move` term: raw median flow normalized over the codetection set and
/// mapped to `log(floor + (1 - floor) * m)`.
pub fn med_flow_mag(p: &Proposal, ctx: &PredicateContext) -> Score {
    let m = ctx.flow_range.normalize(raw_med_flow_mag(p, ctx.flow));
    let floor = ctx.constants.flow_floor;
    Score((floor + (1.0 - floor) * m).ln())
}

/// Mean soft "did not move" gate over consecutive frame pairs; higher for
/// stationary tubes.
pub fn temp_coher(p: &Proposal, ctx: &PredicateContext) -> Score {
    let c = &ctx.constants;
    let boxes = p.boxes();
    let pairs = boxes.len() - 1;
    let sum: f64 = boxes
        .windows(2)
        .map(|w| dist_less_than_with(normalized_dist(&w[0], &w[1], ctx.video), c.dist_small, c.slope).0)
        .sum();
    Score(sum / pairs as f64)
}

/// Rotation of the tube content between frame `t - lookback` and `t`,
/// wrapped into `(-pi, pi]`.
pub fn rot_angle(p: &Proposal, t: usize, lookback: usize) -> Result<f64, PredicateError> {
    if t <= lookback || t > p.frame_count() {
        return Err(PredicateError::NoLookback(t, lookback));
    }
    let now = p.at(t).orientation.ok_or(PredicateError::MissingOrientation)?;
    let before = p.at(t - lookback).orientation.ok_or(PredicateError::MissingOrientation)?;
    Ok(wrap_angle(now - before))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Start,
    End,
}

fn window(end: End, frame_count: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    let len = len.max(1).min(frame_count);
    match end {
        End::Start => 1..=len,
        End::End => (frame_count - len + 1)..=frame_count,
    }
}

/// Geometry helpers evaluated on one video.
struct Geometry<'c> {
    video: &'c VideoMeta,
    window: usize,
}

impl Geometry<'_> {
    fn mean_over(&self, end: End, frames: usize, f: impl Fn(usize) -> f64) -> f64 {
        let w = window(end, frames, self.window);
        let n = (w.end() - w.start() + 1) as f64;
        w.map(f).sum::<f64>() / n
    }

    fn x(&self, p: &Proposal, t: usize) -> f64 {
        normalized_center(p.at(t), self.video).0
    }

    fn y(&self, p: &Proposal, t: usize) -> f64 {
        normalized_center(p.at(t), self.video).1
    }

    /// Averaged `x(p^(T)) - x(p^(1))`.
    fn dx(&self, p: &Proposal) -> f64 {
        let n = p.frame_count();
        self.mean_over(End::End, n, |t| self.x(p, t)) - self.mean_over(End::Start, n, |t| self.x(p, t))
    }

    fn dy(&self, p: &Proposal) -> f64 {
        let n = p.frame_count();
        self.mean_over(End::End, n, |t| self.y(p, t)) - self.mean_over(End::Start, n, |t| self.y(p, t))
    }

    fn rel_x(&self, end: End, p1: &Proposal, p2: &Proposal) -> f64 {
        self.mean_over(end, p1.frame_count(), |t| self.x(p1, t) - self.x(p2, t))
    }

    fn rel_y(&self, end: End, p1: &Proposal, p2: &Proposal) -> f64 {
        self.mean_over(end, p1.frame_count(), |t| self.y(p1, t) - self.y(p2, t))
    }

    fn abs_rel_x(&self, end: End, p1: &Proposal, p2: &Proposal) -> f64 {
        self.mean_over(end, p1.frame_count(), |t| (self.x(p1, t) - self.x(p2, t)).abs())
    }

    fn dist(&self, end: End, p1: &Proposal, p2: &Proposal) -> f64 {
        self.mean_over(end, p1.frame_count(), |t| normalized_dist(p1.at(t), p2.at(t), self.video))
    }

    fn area(&self, end: End, p: &Proposal) -> f64 {
        self.mean_over(end, p.frame_count(), |t| p.at(t).bbox.area())
    }
}

/// Best rotation evidence over all frames with a full look-back.
/// `-inf` when the tube is too short to have any.
pub fn best_rotation(p: &Proposal, c: &PredicateConstants) -> Result<Score, PredicateError> {
    if !p.has_orientation() {
        return Err(PredicateError::MissingOrientation);
    }
    let mut best = Score::NEG_INFINITY;
    for t in (c.lookback + 1)..=p.frame_count() {
        let a = rot_angle(p, t, c.lookback)?;
        best = best.max(has_rotation_with(a, c.angle, c.kappa));
    }
    Ok(best)
}

/// Score of a one-argument predicate on a tube.
pub fn eval_unary(pred: Predicate, p: &Proposal, ctx: &PredicateContext) -> Result<Score, PredicateError> {
    use Predicate::*;
    if pred.arity() != 1 {
        return Err(PredicateError::WrongArity {
            name: pred.name(),
            expected: pred.arity(),
            got: 1,
        });
    }
    ctx.check(p)?;
    let c = &ctx.constants;
    let g = Geometry {
        video: ctx.video,
        window: c.endpoint_window,
    };
    let lt = |x: f64, a: f64| dist_less_than_with(x, a, c.slope);
    let gt = |x: f64, a: f64| dist_greater_than_with(x, a, c.slope);
    let mv = med_flow_mag(p, ctx);
    let term = match pred {
        Move => Score::ZERO,
        MoveUp => lt(g.dy(p), -c.dist_large),
        MoveDown => gt(g.dy(p), c.dist_large),
        MoveVertical => gt(g.dy(p).abs(), c.dist_large),
        MoveLeftwards => lt(g.dx(p), -c.dist_large),
        MoveRightwards => gt(g.dx(p), c.dist_large),
        MoveHorizontal => gt(g.dx(p).abs(), c.dist_large),
        Rotate => best_rotation(p, c)?,
        _ => unreachable!("arity checked"),
    };
    Ok(mv + term)
}

/// Score of a two-argument predicate on a pair of tubes from one video.
pub fn eval_binary(
    pred: Predicate,
    p1: &Proposal,
    p2: &Proposal,
    ctx: &PredicateContext,
) -> Result<Score, PredicateError> {
    use Predicate::*;
    if pred.arity() != 2 {
        return Err(PredicateError::WrongArity {
            name: pred.name(),
            expected: pred.arity(),
            got: 2,
        });
    }
    if p1.video_id() != p2.video_id() {
        return Err(PredicateError::VideoMismatch(
            p1.video_id().to_string(),
            p2.video_id().to_string(),
        ));
    }
    ctx.check(p1)?;
    ctx.check(p2)?;
    let c = &ctx.constants;
    let g = Geometry {
        video: ctx.video,
        window: c.endpoint_window,
    };
    let lt = |x: f64, a: f64| dist_less_than_with(x, a, c.slope);
    let gt = |x: f64, a: f64| dist_greater_than_with(x, a, c.slope);
    let near = |end: End| lt(g.dist(end, p1, p2), 2.0 * c.dist_small);
    let on_top = |end: End| {
        let dy = g.rel_y(end, p1, p2);
        gt(dy, -2.0 * c.dist_large) + lt(dy, 0.0) + lt(g.abs_rel_x(end, p1, p2), 2.0 * c.dist_small)
    };

    let score = match pred {
        Towards | AwayFrom => {
            let change = g.dist(End::End, p1, p2) - g.dist(End::Start, p1, p2);
            let gate = if pred == Towards {
                lt(change, -c.dist_large)
            } else {
                gt(change, c.dist_large)
            };
            med_flow_mag(p1, ctx) + gate
        }
        _ => {
            let tc = temp_coher(p2, ctx);
            let relation = match pred {
                LeftOfStart => lt(g.rel_x(End::Start, p1, p2), -c.dist_small),
                LeftOfEnd => lt(g.rel_x(End::End, p1, p2), -c.dist_small),
                RightOfStart => gt(g.rel_x(End::Start, p1, p2), c.dist_small),
                RightOfEnd => gt(g.rel_x(End::End, p1, p2), c.dist_small),
                OnTopOfStart => on_top(End::Start),
                OnTopOfEnd => on_top(End::End),
                NearStart => near(End::Start),
                NearEnd => near(End::End),
                // in = tempCoher + near (which carries its own tempCoher) + smaller
                InStart => {
                    tc + near(End::Start)
                        + smaller_area(g.area(End::Start, p1), g.area(End::Start, p2))
                }
                InEnd => tc + near(End::End) + smaller_area(g.area(End::End, p1), g.area(End::End, p2)),
                BelowStart => gt(g.rel_y(End::Start, p1, p2), c.dist_small),
                BelowEnd => gt(g.rel_y(End::End, p1, p2), c.dist_small),
                AboveStart => lt(g.rel_y(End::Start, p1, p2), -c.dist_small),
                AboveEnd => lt(g.rel_y(End::End, p1, p2), -c.dist_small),
                Over => (1..=p1.frame_count())
                    .map(|t| {
                        let dy = g.y(p1, t) - g.y(p2, t);
                        let dx = (g.x(p1, t) - g.x(p2, t)).abs();
                        lt(dy, -c.dist_small) + lt(dx, c.dist_large)
                    })
                    .max()
                    .unwrap_or(Score::NEG_INFINITY),
                _ => unreachable!("arity checked"),
            };
            tc + relation
        }
    };
    Ok(score)
}

/// Evaluates a predicate on one or two tubes, dispatching on arity.
pub fn eval(pred: Predicate, args: &[&Proposal], ctx: &PredicateContext) -> Result<Score, PredicateError> {
    match args {
        [p] if pred.arity() == 1 => eval_unary(pred, p, ctx),
        [p1, p2] if pred.arity() == 2 => eval_binary(pred, p1, p2, ctx),
        _ => Err(PredicateError::WrongArity {
            name: pred.name(),
            expected: pred.arity(),
            got: args.len(),
        }),
    }
}

/// `log(1/2)`, the value of any soft gate exactly at its threshold.
pub const LOG_HALF: f64 = -LN_2;
