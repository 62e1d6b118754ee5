//! End-to-end runs over codetection sets: parse, propose, score, compare,
//! infer and evaluate, with every set isolated from the others' failures.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{run_variants, similarity_pairs, Assignment, BpConfig, CodetectionGraph, InferenceError, Variant, VideoInput};
use crate::metrics::{AnnotationTrack, EvaluationReport, InstanceResult, MetricsError, SetFailure, SetResult, VariantReport};
use crate::model::{BoundingBox, Detection, FlowGrid, ModelError, Proposal, VideoMeta};
use crate::predicates::{raw_med_flow_mag, FlowRange, PredicateConstants, PredicateContext, PredicateError};
use crate::proposals::{generate_proposals, CandidateFile, CandidateSet, FlowAdvection, FlowFile, ProposalError, SamplerConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::semparse::{ParseError, PredicateConjunction, RuleSet};
use crate::similarity::{
    compute_similarity, CropDescriptors, CropFile, DescriptorFile, DescriptorSource, IngestedCrops, IngestedDescriptors,
    RotatedDescriptors, SimilarityError, SimilarityMatrix,
};
use crate::synth::{SceneFrames, SceneSpec};

pub const MANIFEST_FORMAT: &str = "codetect-manifest";
pub const ANNOTATION_FORMAT: &str = "codetect-annotations";
pub const ORIENTATION_FORMAT: &str = "codetect-orientations";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("proposals: {0}")]
    Proposal(#[from] ProposalError),
    #[error("predicates: {0}")]
    Predicate(#[from] PredicateError),
    #[error("similarity: {0}")]
    Similarity(#[from] SimilarityError),
    #[error("inference: {0}")]
    Inference(#[from] InferenceError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no annotation for {video}/{instance}")]
    MissingAnnotation { video: String, instance: String },
    #[error("invalid config: {0}")]
    Config(String),
}

impl PipelineError {
    /// Pipeline stage the error arose in.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Parse(_) => "parse",
            PipelineError::Proposal(_) => "propose",
            PipelineError::Predicate(_) => "predicates",
            PipelineError::Similarity(_) => "similarity",
            PipelineError::Inference(_) => "infer",
            PipelineError::Metrics(_) | PipelineError::MissingAnnotation { .. } => "evaluate",
            PipelineError::Model(_) | PipelineError::Io { .. } | PipelineError::Format { .. } => "load",
            PipelineError::Config(_) => "config",
        }
    }
}

/// A box with the orientation of the object it covers, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub angle: f64,
}

/// Orientation channel for one video: oriented object boxes per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub frames: Vec<Vec<OrientedBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub format: String,
    pub version: u32,
    pub video: String,
    pub tracks: Vec<AnnotationTrack>,
}

/// Orientation of a detection: that of the oriented box it overlaps most,
/// 0 when it overlaps none.
pub fn orientation_of(d: &Detection, frames: &[Vec<OrientedBox>]) -> f64 {
    frames
        .get(d.frame - 1)
        .into_iter()
        .flatten()
        .map(|o| (d.bbox.intersection_area(&o.bbox), o.angle))
        .filter(|(a, _)| *a > 0.0)
        .fold(None, |best: Option<(f64, f64)>, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .map_or(0.0, |(_, angle)| angle)
}

/// Inputs of one video, in memory.
#[derive(Debug, Clone)]
pub struct VideoData {
    pub meta: VideoMeta,
    pub sentence: String,
    /// Per generator, per frame.
    pub candidates: Vec<Vec<Vec<BoundingBox>>>,
    pub flow: FlowGrid,
    pub orientations: Option<Vec<Vec<OrientedBox>>>,
    pub annotations: Vec<AnnotationTrack>,
}

/// One codetection set: videos processed under one graph and one
/// normalization.
#[derive(Clone)]
pub struct SetData {
    pub set_id: String,
    pub videos: Vec<VideoData>,
    pub appearance: Arc<dyn DescriptorSource>,
}

/// Dispatches descriptor lookups to a per-video source.
#[derive(Default)]
pub struct PerVideoSource {
    sources: HashMap<String, Arc<dyn DescriptorSource>>,
}

impl PerVideoSource {
    pub fn insert(&mut self, video: &str, source: Arc<dyn DescriptorSource>) {
        self.sources.insert(video.to_string(), source);
    }
}

impl DescriptorSource for PerVideoSource {
    fn descriptors(&self, video: &str, det: &Detection) -> Result<Arc<RotatedDescriptors>, SimilarityError> {
        self.sources
            .get(video)
            .ok_or_else(|| SimilarityError::MissingDescriptor(format!("no appearance source for {video}")))?
            .descriptors(video, det)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Candidates kept per frame.
    pub n: usize,
    /// Proposals per video.
    pub k: usize,
    /// Detections sampled per proposal for similarity.
    pub m: usize,
    /// Frames averaged at each end of a tube.
    pub l: usize,
    pub seed: u64,
    pub moving_prob: f64,
    pub bp: BpConfig,
    pub variants: Vec<Variant>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 500,
            k: 240,
            m: 20,
            l: 15,
            seed: 0,
            moving_prob: 1.0 / 3.0,
            bp: BpConfig::default(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl PipelineConfig {
    /// Desk-scale defaults for synthetic sets.
    pub fn synthetic() -> Self {
        Self {
            n: 60,
            k: 40,
            m: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.m == 0 || self.l == 0 {
            return Err(PipelineError::Config("M and L must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(PipelineError::Config("no variants requested".into()));
        }
        self.sampler(0).validate()?;
        self.bp.validate()?;
        Ok(())
    }

    fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            k: self.k,
            n: self.n,
            moving_prob: self.moving_prob,
            rng_seed: seed,
        }
    }

    fn constants(&self) -> PredicateConstants {
        PredicateConstants {
            endpoint_window: self.l,
            ..PredicateConstants::default()
        }
    }
}

/// Proposals of one video under the set's seed stream, with orientations
/// attached when the video has an orientation channel.
pub fn propose_video(video: &VideoData, set_seed: u64, config: &PipelineConfig) -> Result<Vec<Proposal>, PipelineError> {
    let seed = derive_seed(set_seed, &video.meta.id);
    let cands = CandidateSet::merge(&video.meta, &video.candidates, config.n)?;
    let mut rng = rng_from_seed(seed);
    let props = generate_proposals(&video.meta, &cands, &video.flow, &config.sampler(seed), &FlowAdvection, &mut rng)?;
    Ok(match &video.orientations {
        Some(frames) => props
            .into_iter()
            .map(|p| p.with_orientations(|d| Some(orientation_of(d, frames))))
            .collect(),
        None => props,
    })
}

/// Selected tube of one instance under one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub video_id: String,
    pub instance_id: String,
    pub proposal: usize,
}

/// Results of one set for every requested variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SetOutcome {
    pub set_id: String,
    pub results: Vec<(Variant, SetResult, Vec<Selection>)>,
}

/// Parses the sentence of every video of the set.
pub fn parse_set(set: &SetData, rules: &RuleSet) -> Result<Vec<PredicateConjunction>, PipelineError> {
    set.videos
        .iter()
        .map(|v| rules.parse_sentence(&v.sentence).map_err(PipelineError::from))
        .collect()
}

/// Proposals of every video of the set, under the set's seed stream.
pub fn propose_set(set: &SetData, config: &PipelineConfig) -> Result<Vec<Vec<Proposal>>, PipelineError> {
    let set_seed = derive_seed(config.seed, &set.set_id);
    set.videos.iter().map(|v| propose_video(v, set_seed, config)).collect()
}

fn video_inputs<'a>(
    set: &'a SetData,
    conjunctions: &'a [PredicateConjunction],
    proposals: &'a [Vec<Proposal>],
    config: &PipelineConfig,
) -> Result<Vec<VideoInput<'a>>, PipelineError> {
    let range = FlowRange::from_raw(
        set.videos
            .iter()
            .zip(proposals)
            .flat_map(|(v, ps)| ps.iter().map(|p| raw_med_flow_mag(p, &v.flow))),
    );
    set.videos
        .iter()
        .zip(conjunctions)
        .zip(proposals)
        .map(|((v, c), ps)| {
            Ok(VideoInput {
                conjunction: c,
                proposals: ps,
                ctx: PredicateContext::new(&v.meta, &v.flow, config.constants(), range)?,
            })
        })
        .collect()
}

/// Similarity tables for every same-class video pair, or `None` when no
/// requested variant has class edges or no class repeats.
pub fn similarity_set(
    set: &SetData,
    conjunctions: &[PredicateConjunction],
    proposals: &[Vec<Proposal>],
    config: &PipelineConfig,
) -> Result<Option<SimilarityMatrix>, PipelineError> {
    let inputs = video_inputs(set, conjunctions, proposals, config)?;
    let pairs = similarity_pairs(&inputs);
    if !config.variants.iter().any(|v| v.uses_similarity()) || pairs.is_empty() {
        return Ok(None);
    }
    let by_video: BTreeMap<String, Vec<Proposal>> =
        set.videos.iter().zip(proposals).map(|(v, ps)| (v.meta.id.clone(), ps.clone())).collect();
    Ok(Some(compute_similarity(&by_video, &pairs, set.appearance.as_ref(), config.m)?))
}

/// Builds and solves the graph of every requested variant.
pub fn infer_set(
    set: &SetData,
    conjunctions: &[PredicateConjunction],
    proposals: &[Vec<Proposal>],
    similarity: Option<&SimilarityMatrix>,
    config: &PipelineConfig,
) -> Result<Vec<(Variant, CodetectionGraph, Assignment)>, PipelineError> {
    let inputs = video_inputs(set, conjunctions, proposals, config)?;
    Ok(run_variants(&set.set_id, &inputs, similarity, &config.variants, &config.bp)?)
}

/// Scores selected tubes against the set's annotations.
pub fn evaluate_selections(set: &SetData, proposals: &[Vec<Proposal>], selections: &[Selection]) -> Result<SetResult, PipelineError> {
    let mut instances = Vec::with_capacity(selections.len());
    for sel in selections {
        let missing = || PipelineError::MissingAnnotation {
            video: sel.video_id.clone(),
            instance: sel.instance_id.clone(),
        };
        let vi = set.videos.iter().position(|v| v.meta.id == sel.video_id).ok_or_else(missing)?;
        let truth = set.videos[vi]
            .annotations
            .iter()
            .find(|a| a.instance_id == sel.instance_id)
            .ok_or_else(missing)?;
        let track = proposals[vi].get(sel.proposal).ok_or_else(|| {
            PipelineError::Config(format!("{}/{} selects proposal {} of {}", sel.video_id, sel.instance_id, sel.proposal, proposals[vi].len()))
        })?;
        instances.push(InstanceResult::evaluate(track.boxes(), truth)?);
    }
    Ok(SetResult::new(&set.set_id, instances)?)
}

/// Selections read off a solved graph.
pub fn selections(graph: &CodetectionGraph, assignment: &Assignment) -> Vec<Selection> {
    graph
        .vertices
        .iter()
        .zip(&assignment.labels)
        .map(|(v, &label)| Selection {
            video_id: v.video_id.clone(),
            instance_id: v.instance_id.clone(),
            proposal: label,
        })
        .collect()
}

/// Runs every variant on one set.
pub fn run_set(set: &SetData, rules: &RuleSet, config: &PipelineConfig) -> Result<SetOutcome, PipelineError> {
    config.validate()?;
    let conjunctions = parse_set(set, rules)?;
    let proposals = propose_set(set, config)?;
    let similarity = similarity_set(set, &conjunctions, &proposals, config)?;
    let mut results = Vec::with_capacity(config.variants.len());
    for (variant, graph, assignment) in infer_set(set, &conjunctions, &proposals, similarity.as_ref(), config)? {
        let chosen = selections(&graph, &assignment);
        results.push((variant, evaluate_selections(set, &proposals, &chosen)?, chosen));
    }
    Ok(SetOutcome {
        set_id: set.set_id.clone(),
        results,
    })
}

/// A set that either loaded or failed to load.
pub type SetInput = Result<SetData, SetFailure>;

pub fn failure(set_id: &str, e: &PipelineError) -> SetFailure {
    SetFailure {
        set_id: set_id.to_string(),
        stage: e.stage().to_string(),
        message: e.to_string(),
    }
}

/// Runs all sets in parallel and assembles the report in set order. A
/// failing set is listed under `failures` and leaves the others untouched.
pub fn run_pipeline(sets: Vec<SetInput>, rules: &RuleSet, config: &PipelineConfig) -> EvaluationReport {
    let outcomes: Vec<Result<SetOutcome, SetFailure>> = sets
        .into_par_iter()
        .map(|s| s.and_then(|set| run_set(&set, rules, config).map_err(|e| failure(&set.set_id, &e))))
        .collect();
    assemble(&outcomes, &config.variants)
}

fn assemble(outcomes: &[Result<SetOutcome, SetFailure>], variants: &[Variant]) -> EvaluationReport {
    let mut report = EvaluationReport::default();
    for &variant in variants {
        let sets = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .filter_map(|o| o.results.iter().find(|r| r.0 == variant).map(|r| r.1.clone()))
            .collect();
        report.variants.push(VariantReport::new(variant.name(), sets));
    }
    report.failures = outcomes.iter().filter_map(|o| o.as_ref().err().cloned()).collect();
    report
}

/// Dataset description: sets of videos with their input files, paths
/// relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Built-in rule set name.
    #[serde(default = "default_rules")]
    pub rules: String,
    pub sets: Vec<SetEntry>,
}

fn default_rules() -> String {
    "kitchen".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub set_id: String,
    #[serde(default)]
    pub run_id: Option<u32>,
    pub videos: Vec<VideoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video: VideoMeta,
    pub sentence: String,
    pub candidates: Vec<PathBuf>,
    pub flow: PathBuf,
    pub annotations: PathBuf,
    #[serde(default)]
    pub orientations: Option<PathBuf>,
    pub appearance: AppearanceEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppearanceEntry {
    /// Procedural scene description rendered on demand.
    Scene(PathBuf),
    Crops(PathBuf),
    Descriptors(PathBuf),
}

impl Manifest {
    pub fn new(rules: &str, sets: Vec<SetEntry>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: FORMAT_VERSION,
            rules: rules.into(),
            sets,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let m: Manifest = read_json(path)?;
        if m.format != MANIFEST_FORMAT || m.version != FORMAT_VERSION {
            return Err(PipelineError::Format {
                path: path.into(),
                message: format!("expected {MANIFEST_FORMAT} v{FORMAT_VERSION}"),
            });
        }
        Ok(m)
    }

    /// Loads every set, turning load errors into per-set failures.
    pub fn load_sets(&self, base: &Path) -> Vec<SetInput> {
        self.sets
            .iter()
            .map(|s| load_set(s, base).map_err(|e| failure(&s.set_id, &e)))
            .collect()
    }
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.into(),
        source,
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string(value).map_err(|e| PipelineError::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.into(),
        source,
    })
}

fn check_header(path: &Path, format: &str, version: u32, expected: &str, video: &str, want_video: &str) -> Result<(), PipelineError> {
    if format != expected || version != FORMAT_VERSION || video != want_video {
        return Err(PipelineError::Format {
            path: path.into(),
            message: format!("expected {expected} v{FORMAT_VERSION} for video {want_video}"),
        });
    }
    Ok(())
}

/// Reads the files of one set.
pub fn load_set(entry: &SetEntry, base: &Path) -> Result<SetData, PipelineError> {
    let mut videos = Vec::with_capacity(entry.videos.len());
    let mut appearance = PerVideoSource::default();
    for v in &entry.videos {
        let meta = &v.video;
        let candidates = v
            .candidates
            .iter()
            .map(|p| {
                let path = base.join(p);
                CandidateFile::from_json(&read_text(&path)?)?.boxes(meta).map_err(PipelineError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let flow = FlowFile::from_json(&read_text(&base.join(&v.flow))?)?.grid(meta)?;
        let path = base.join(&v.annotations);
        let annotations: AnnotationFile = read_json(&path)?;
        check_header(&path, &annotations.format, annotations.version, ANNOTATION_FORMAT, &annotations.video, &meta.id)?;
        let orientations = match &v.orientations {
            Some(p) => {
                let path = base.join(p);
                let o: OrientationFile = read_json(&path)?;
                check_header(&path, &o.format, o.version, ORIENTATION_FORMAT, &o.video, &meta.id)?;
                Some(o.frames)
            }
            None => None,
        };
        let source: Arc<dyn DescriptorSource> = match &v.appearance {
            AppearanceEntry::Scene(p) => {
                let scene: SceneSpec = read_json(&base.join(p))?;
                Arc::new(CropDescriptors::new(SceneFrames::new(vec![scene])))
            }
            AppearanceEntry::Crops(p) => {
                let mut crops = IngestedCrops::default();
                crops.add(read_json::<CropFile>(&base.join(p))?)?;
                Arc::new(CropDescriptors::new(crops))
            }
            AppearanceEntry::Descriptors(p) => {
                let mut d = IngestedDescriptors::default();
                d.add(read_json::<DescriptorFile>(&base.join(p))?)?;
                Arc::new(d)
            }
        };
        appearance.insert(&meta.id, source);
        videos.push(VideoData {
            meta: meta.clone(),
            sentence: v.sentence.clone(),
            candidates,
            flow,
            orientations,
            annotations: annotations.tracks,
        });
    }
    Ok(SetData {
        set_id: entry.set_id.clone(),
        videos,
        appearance: Arc::new(appearance),
    })
}
