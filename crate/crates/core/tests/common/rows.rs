//! Hand-built tubes and primitive oracles for every catalogue row.

use std::f64::consts::PI;

use codetect::model::{BoundingBox, Detection, FlowFrame, FlowGrid, MotionClass, Proposal, Score, VideoMeta};
use codetect::predicates::{eval_binary, eval_unary, FlowRange, Predicate, PredicateConstants, PredicateContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const W: f64 = 256.0;
pub const H: f64 = 256.0;
pub const T: usize = 40;
pub const TOL: f64 = 1e-12;

// high-precision reference values
pub const LN_FLOOR: f64 = -6.907_755_278_982_137;
pub const TC_STATIC: f64 = -0.313_261_687_518_222_834;
pub const ROT_ALIGNED: f64 = -0.262_849_861_924_804_793;
pub const ROT_QUARTER: f64 = -4.262_849_861_924_804_793;

pub const STILL: (f64, f64) = (0.5, 0.5);

/// Independent soft gate: `-ln(1 + e^{20 (x - a)})`.
pub fn lt(x: f64, a: f64) -> f64 {
    -(20.0 * (x - a)).exp().ln_1p()
}

pub fn gt(x: f64, a: f64) -> f64 {
    lt(-x, -a)
}

pub fn video() -> VideoMeta {
    VideoMeta::new("v", W, H, T).unwrap()
}

/// A tube whose normalized center is `start` over frames 1..=15, `end` over
/// frames 26..=40, and linearly interpolated in between.
pub fn tube(start: (f64, f64), end: (f64, f64), size: f64) -> Proposal {
    tube_with(start, end, size, |_| None)
}

pub fn center_at(start: (f64, f64), end: (f64, f64), t: usize) -> (f64, f64) {
    let s = ((t as f64 - 15.0) / 11.0).clamp(0.0, 1.0);
    (start.0 + s * (end.0 - start.0), start.1 + s * (end.1 - start.1))
}

pub fn tube_with(start: (f64, f64), end: (f64, f64), size: f64, orient: impl Fn(usize) -> Option<f64>) -> Proposal {
    let v = video();
    let boxes = (1..=T)
        .map(|t| {
            let (cx, cy) = center_at(start, end, t);
            let half = size / 2.0;
            let b = BoundingBox::new(cx * W - half, cy * H - half, cx * W + half, cy * H + half).unwrap();
            let d = Detection::new(t, b);
            match orient(t) {
                Some(a) => d.with_orientation(a),
                None => d,
            }
        })
        .collect();
    Proposal::new(&v, boxes, MotionClass::Moving, 1).unwrap()
}

/// Mean of the soft "did not move" gate over consecutive pairs.
pub fn tc_oracle(start: (f64, f64), end: (f64, f64)) -> f64 {
    let sum: f64 = (1..T)
        .map(|t| {
            let a = center_at(start, end, t);
            let b = center_at(start, end, t + 1);
            lt(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(), 0.05)
        })
        .sum();
    sum / (T - 1) as f64
}

pub struct Fixture {
    pub video: VideoMeta,
    pub flow: FlowGrid,
}

impl Fixture {
    pub fn new() -> Self {
        let video = video();
        let flow = FlowGrid::zeros(&video);
        Self { video, flow }
    }

    /// Zero flow with range [0, 1]: every move term sits at the floor.
    pub fn ctx(&self) -> PredicateContext<'_> {
        PredicateContext::new(&self.video, &self.flow, PredicateConstants::default(), FlowRange { min: 0.0, max: 1.0 })
            .unwrap()
    }
}

pub fn unary(p: Predicate, tube: &Proposal) -> Score {
    let f = Fixture::new();
    eval_unary(p, tube, &f.ctx()).unwrap()
}

pub fn binary(p: Predicate, a: &Proposal, b: &Proposal) -> Score {
    let f = Fixture::new();
    eval_binary(p, a, b, &f.ctx()).unwrap()
}

/// One row evaluated on a hand-built configuration, with its oracle value.
pub struct RowCase {
    pub predicate: Predicate,
    pub what: &'static str,
    pub got: Score,
    pub want: f64,
}

impl RowCase {
    pub fn holds(&self) -> bool {
        if self.want == f64::NEG_INFINITY {
            return self.got.0 == f64::NEG_INFINITY;
        }
        (self.got.0 - self.want).abs() <= TOL
    }
}

fn case(predicate: Predicate, what: &'static str, got: Score, want: f64) -> RowCase {
    RowCase { predicate, what, got, want }
}

fn uniform_flow_move() -> Score {
    let v = video();
    let mut frame = FlowFrame::zeros(16, 16, 16.0);
    frame.u.iter_mut().for_each(|u| *u = 1.0);
    let flow = FlowGrid::new(vec![frame; T]).unwrap();
    let ctx = PredicateContext::new(&v, &flow, PredicateConstants::default(), FlowRange { min: 0.0, max: 2.0 }).unwrap();
    eval_unary(Predicate::Move, &tube(STILL, STILL, 16.0), &ctx).unwrap()
}

/// Every row of the catalogue against the composition of its primitive
/// oracles.
pub fn row_cases() -> Vec<RowCase> {
    use Predicate::*;
    let still = tube(STILL, STILL, 16.0);
    let up = tube((0.5, 0.75), (0.5, 0.25), 16.0);
    let down = tube((0.5, 0.25), (0.5, 0.75), 16.0);
    let mut out = vec![
        case(Move, "zero flow", unary(Move, &still), LN_FLOOR),
        case(Move, "uniform flow at mid range", uniform_flow_move(), (1e-3 + 0.999 * 0.5f64).ln()),
        case(MoveUp, "rises half a frame", unary(MoveUp, &up), LN_FLOOR + lt(-0.5, -0.25)),
        case(MoveUp, "static", unary(MoveUp, &still), LN_FLOOR + lt(0.0, -0.25)),
        case(MoveDown, "falls half a frame", unary(MoveDown, &down), LN_FLOOR + gt(0.5, 0.25)),
        case(MoveDown, "static", unary(MoveDown, &still), LN_FLOOR + gt(0.0, 0.25)),
        case(MoveDown, "static, literal", unary(MoveDown, &still), LN_FLOOR - 5.006_715_348_489_118),
        case(MoveVertical, "rises half a frame", unary(MoveVertical, &up), LN_FLOOR + gt(0.5, 0.25)),
        case(
            MoveLeftwards,
            "left by 0.375",
            unary(MoveLeftwards, &tube((0.75, 0.5), (0.375, 0.5), 16.0)),
            LN_FLOOR + lt(-0.375, -0.25),
        ),
        case(
            MoveRightwards,
            "right by 0.375",
            unary(MoveRightwards, &tube((0.375, 0.5), (0.75, 0.5), 16.0)),
            LN_FLOOR + gt(0.375, 0.25),
        ),
        case(
            MoveHorizontal,
            "at threshold",
            unary(MoveHorizontal, &tube((0.75, 0.5), (0.5, 0.5), 16.0)),
            LN_FLOOR + 0.5f64.ln(),
        ),
        case(
            Rotate,
            "quarter turn",
            unary(Rotate, &tube_with(STILL, STILL, 16.0, |t| Some(if t <= 10 { 0.0 } else { PI / 2.0 }))),
            LN_FLOOR + ROT_ALIGNED,
        ),
        case(
            Rotate,
            "no turn",
            unary(Rotate, &tube_with(STILL, STILL, 16.0, |_| Some(1.0))),
            LN_FLOOR + ROT_QUARTER,
        ),
    ];

    let target = tube((0.625, 0.5), (0.625, 0.5), 16.0);
    // distance 0.5 -> 0.25
    out.push(case(
        Towards,
        "halves the gap",
        binary(Towards, &tube((0.125, 0.5), (0.375, 0.5), 16.0), &target),
        LN_FLOOR + 0.5f64.ln(),
    ));
    // distance 0.125 -> 0.5
    out.push(case(
        AwayFrom,
        "opens the gap",
        binary(AwayFrom, &tube((0.5, 0.5), (0.125, 0.5), 16.0), &target),
        LN_FLOOR + gt(0.375, 0.25),
    ));

    let crossing = tube((0.25, 0.5), (0.75, 0.5), 16.0);
    out.extend([
        case(LeftOfStart, "crosses rightwards", binary(LeftOfStart, &crossing, &still), TC_STATIC + lt(-0.25, -0.05)),
        case(LeftOfEnd, "crosses rightwards", binary(LeftOfEnd, &crossing, &still), TC_STATIC + lt(0.25, -0.05)),
        case(RightOfStart, "crosses rightwards", binary(RightOfStart, &crossing, &still), TC_STATIC + gt(-0.25, 0.05)),
        case(RightOfEnd, "crosses rightwards", binary(RightOfEnd, &crossing, &still), TC_STATIC + gt(0.25, 0.05)),
    ]);
    let drifting = ((0.25, 0.25), (0.75, 0.5));
    out.push(case(
        RightOfStart,
        "moving reference",
        binary(RightOfStart, &still, &tube(drifting.0, drifting.1, 16.0)),
        tc_oracle(drifting.0, drifting.1) + gt(0.5 - 0.25, 0.05),
    ));

    let table = tube(STILL, STILL, 32.0);
    let hop = tube((0.53125, 0.375), (0.125, 0.125), 16.0);
    let top = |dy: f64, dx: f64| TC_STATIC + gt(dy, -0.5) + lt(dy, 0.0) + lt(dx, 0.1);
    out.push(case(OnTopOfStart, "starts on top", binary(OnTopOfStart, &hop, &table), top(0.375 - 0.5, 0.03125)));
    out.push(case(OnTopOfEnd, "ends aside", binary(OnTopOfEnd, &hop, &table), top(0.125 - 0.5, 0.375)));

    let arrive = tube((0.5625, 0.5), (0.5, 0.5), 16.0);
    out.extend([
        case(NearStart, "starts close", binary(NearStart, &arrive, &still), TC_STATIC + lt(0.0625, 0.1)),
        case(NearEnd, "ends coincident", binary(NearEnd, &arrive, &still), TC_STATIC + lt(0.0, 0.1)),
        case(NearEnd, "ends coincident, literal", binary(NearEnd, &arrive, &still), TC_STATIC - 0.126_928_011_042_972_496),
    ]);

    let leave = tube((0.5625, 0.5), (0.25, 0.5), 16.0);
    let moving_big = tube((0.5625, 0.5), (0.25, 0.5), 32.0);
    out.extend([
        case(InStart, "starts inside", binary(InStart, &leave, &table), 2.0 * TC_STATIC + lt(0.0625, 0.1)),
        case(InEnd, "ends outside", binary(InEnd, &leave, &table), 2.0 * TC_STATIC + lt(0.25, 0.1)),
        case(InStart, "container smaller", binary(InStart, &moving_big, &still), f64::NEG_INFINITY),
        case(InEnd, "container smaller", binary(InEnd, &moving_big, &still), f64::NEG_INFINITY),
        case(InStart, "equal areas", binary(InStart, &still, &still), f64::NEG_INFINITY),
    ]);

    out.extend([
        case(BelowStart, "rises past", binary(BelowStart, &up, &still), TC_STATIC + gt(0.25, 0.05)),
        case(BelowEnd, "rises past", binary(BelowEnd, &up, &still), TC_STATIC + gt(-0.25, 0.05)),
        case(AboveStart, "rises past", binary(AboveStart, &up, &still), TC_STATIC + lt(0.25, -0.05)),
        case(AboveEnd, "rises past", binary(AboveEnd, &up, &still), TC_STATIC + lt(-0.25, -0.05)),
    ]);

    let (s, e) = ((0.125, 0.75), (0.5, 0.25));
    let arc = tube(s, e, 16.0);
    let best = (1..=T)
        .map(|t| {
            let (x, y) = center_at(s, e, t);
            lt(y - 0.5, -0.05) + lt((x - 0.5).abs(), 0.25)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(case(Over, "best frame", binary(Over, &arc, &still), TC_STATIC + best));
    out.push(case(Over, "best frame, closed form", binary(Over, &arc, &still), TC_STATIC + lt(-0.25, -0.05) + lt(0.0, 0.25)));
    out
}

/// A tube with integer pixel corners in the power-of-two frame, where
/// reflections are exact in floating point.
pub type RawTube = Vec<(u32, u32, u32, u32)>;

pub fn build(video: &VideoMeta, raw: &[(u32, u32, u32, u32)], reflect_x: bool, reflect_y: bool) -> Proposal {
    let boxes = raw
        .iter()
        .enumerate()
        .map(|(i, &(x, y, w, h))| {
            let (mut x0, mut y0, mut x1, mut y1) = (x as f64, y as f64, (x + w) as f64, (y + h) as f64);
            if reflect_x {
                (x0, x1) = (W - x1, W - x0);
            }
            if reflect_y {
                (y0, y1) = (H - y1, H - y0);
            }
            Detection::new(i + 1, BoundingBox::new(x0, y0, x1, y1).unwrap())
        })
        .collect();
    Proposal::new(video, boxes, MotionClass::Moving, 1).unwrap()
}

pub fn random_tube(rng: &mut ChaCha8Rng, frames: usize) -> RawTube {
    (0..frames)
        .map(|_| (rng.random_range(0..200), rng.random_range(0..200), rng.random_range(1..56), rng.random_range(1..56)))
        .collect()
}

/// Whether left/right swap exactly under x-reflection and above/below under
/// y-reflection, for one pair of tubes.
pub fn mirror_holds(a: &[(u32, u32, u32, u32)], b: &[(u32, u32, u32, u32)]) -> bool {
    use Predicate::*;
    let video = VideoMeta::new("v", W, H, a.len()).unwrap();
    let flow = FlowGrid::zeros(&video);
    let ctx = PredicateContext::new(&video, &flow, PredicateConstants::default(), FlowRange { min: 0.0, max: 1.0 }).unwrap();
    let score = |p, x: &Proposal, y: &Proposal| eval_binary(p, x, y, &ctx).unwrap().0;
    let (p1, p2) = (build(&video, a, false, false), build(&video, b, false, false));
    let (m1, m2) = (build(&video, a, true, false), build(&video, b, true, false));
    let (v1, v2) = (build(&video, a, false, true), build(&video, b, false, true));
    [(LeftOfStart, RightOfStart), (LeftOfEnd, RightOfEnd)]
        .into_iter()
        .all(|(l, r)| score(l, &p1, &p2) == score(r, &m1, &m2) && score(r, &p1, &p2) == score(l, &m1, &m2))
        && [(AboveStart, BelowStart), (AboveEnd, BelowEnd)]
            .into_iter()
            .all(|(ab, be)| score(ab, &p1, &p2) == score(be, &v1, &v2) && score(be, &p1, &p2) == score(ab, &v1, &v2))
}

/// Mirror check over `count` random tube pairs drawn from `seed`.
pub fn mirror_sweep(seed: u64, count: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let frames = rng.random_range(2..40);
            let (a, b) = (random_tube(&mut rng, frames), random_tube(&mut rng, frames));
            mirror_holds(&a, &b)
        })
        .count()
}
