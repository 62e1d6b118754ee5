//! Subcommand implementations. Stage commands recompute their upstream
//! stages from the manifest; every stage is deterministic under the seed,
//! so the results match those of an end-to-end run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use codetect::inference::{Assignment, Variant};
use codetect::metrics::{EvaluationReport, SetFailure, VariantReport};
use codetect::pipeline::{
    evaluate_selections, failure, infer_set, parse_set, propose_set, read_json, read_text, run_pipeline, selections,
    similarity_set, write_json, write_text, Manifest, PipelineConfig, PipelineError, Selection, SetData, SetInput,
};
use codetect::semparse::{PredicateConjunction, RuleSet};
use codetect::synth::{generate_dataset, write_bundle, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::{EvaluateArgs, Outcome, ParseArgs, PipelineArgs, PlotArgs, StageArgs, SynthArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const FAILURES_FILE: &str = "failures.json";

fn rules(name: &str) -> Result<RuleSet> {
    RuleSet::builtin(name).with_context(|| format!("unknown rule set `{name}` (expected kitchen or cad120)"))
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.into(), source })
}

/// A loaded manifest with the configuration it runs under.
struct Dataset {
    rules: RuleSet,
    config: PipelineConfig,
    sets: Vec<SetInput>,
}

impl Dataset {
    fn open(args: &PipelineArgs) -> Result<Self> {
        let config = args.config();
        config.validate()?;
        let manifest = Manifest::load(&args.sets)?;
        let base = args.sets.parent().unwrap_or(Path::new("."));
        let rules = rules(args.rules.as_deref().unwrap_or(&manifest.rules))?;
        let sets = manifest.load_sets(base);
        Ok(Self { rules, config, sets })
    }

    /// Runs `stage` on every loaded set, collecting failures per set.
    fn each_set(&self, mut stage: impl FnMut(&SetData) -> Result<(), PipelineError>) -> Vec<SetFailure> {
        let mut failures = Vec::new();
        for input in &self.sets {
            match input {
                Ok(set) => {
                    if let Err(e) = stage(set) {
                        failures.push(failure(&set.set_id, &e));
                    }
                }
                Err(f) => failures.push(f.clone()),
            }
        }
        failures
    }
}

/// Reports per-set failures on stderr and in `failures.json`.
fn finish(out: &Path, failures: &[SetFailure]) -> Result<Outcome> {
    if failures.is_empty() {
        return Ok(Outcome::Complete);
    }
    for f in failures {
        eprintln!("set {} failed at {}: {}", f.set_id, f.stage, f.message);
    }
    write_json(&out.join(FAILURES_FILE), &failures)?;
    Ok(Outcome::Partial)
}

#[derive(Debug, Serialize)]
struct ParseRecord {
    sentence: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    conjunction: Option<PredicateConjunction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn parse(args: &ParseArgs) -> Result<Outcome> {
    let rules = rules(&args.rules)?;
    let mut sentences = Vec::new();
    if let Some(path) = &args.input {
        sentences.extend(read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    sentences.extend(args.sentences.iter().cloned());
    if sentences.is_empty() {
        bail!("no sentences given");
    }
    let records: Vec<ParseRecord> = sentences
        .into_iter()
        .map(|sentence| match rules.parse_sentence(&sentence) {
            Ok(c) => ParseRecord {
                sentence,
                conjunction: Some(c),
                error: None,
            },
            Err(e) => ParseRecord {
                sentence,
                conjunction: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let text = serde_json::to_string_pretty(&records)?;
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => println!("{text}"),
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!("{:?}: {}", r.sentence, r.error.as_deref().unwrap_or_default());
    }
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::Partial })
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    let mut config = if args.noiseless {
        SynthConfig::noiseless()
    } else {
        SynthConfig::default()
    };
    config.videos = args.videos;
    let sets = generate_dataset(&config, args.count, args.seed)?;
    create_dir(&args.out)?;
    let manifest = write_bundle(&args.out, &sets)?;
    let path = args.out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    println!("{}", path.display());
    Ok(Outcome::Complete)
}

pub fn propose(args: &StageArgs) -> Result<Outcome> {
    let ds = Dataset::open(&args.pipeline)?;
    create_dir(&args.out)?;
    let failures = ds.each_set(|set| {
        let proposals = propose_set(set, &ds.config)?;
        let dir = args.out.join(&set.set_id);
        create_dir(&dir)?;
        for (video, props) in set.videos.iter().zip(&proposals) {
            write_json(&dir.join(format!("{}.proposals.json", video.meta.id)), props)?;
        }
        Ok(())
    });
    finish(&args.out, &failures)
}

pub fn similarity(args: &StageArgs) -> Result<Outcome> {
    let ds = Dataset::open(&args.pipeline)?;
    create_dir(&args.out)?;
    let failures = ds.each_set(|set| {
        let conjunctions = parse_set(set, &ds.rules)?;
        let proposals = propose_set(set, &ds.config)?;
        let sim = similarity_set(set, &conjunctions, &proposals, &ds.config)?;
        write_json(&args.out.join(format!("{}.similarity.json", set.set_id)), &sim)
    });
    finish(&args.out, &failures)
}

/// Solution of one variant on one set.
#[derive(Debug, Serialize, Deserialize)]
struct VariantSolution {
    variant: Variant,
    assignment: Assignment,
    selections: Vec<Selection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InferenceRecord {
    set_id: String,
    solutions: Vec<VariantSolution>,
}

fn inference_path(dir: &Path, set_id: &str) -> PathBuf {
    dir.join(format!("{set_id}.inference.json"))
}

pub fn infer(args: &StageArgs) -> Result<Outcome> {
    let ds = Dataset::open(&args.pipeline)?;
    create_dir(&args.out)?;
    let failures = ds.each_set(|set| {
        let conjunctions = parse_set(set, &ds.rules)?;
        let proposals = propose_set(set, &ds.config)?;
        let sim = similarity_set(set, &conjunctions, &proposals, &ds.config)?;
        let solutions = infer_set(set, &conjunctions, &proposals, sim.as_ref(), &ds.config)?
            .into_iter()
            .map(|(variant, graph, assignment)| VariantSolution {
                variant,
                selections: selections(&graph, &assignment),
                assignment,
            })
            .collect();
        let record = InferenceRecord {
            set_id: set.set_id.clone(),
            solutions,
        };
        write_json(&inference_path(&args.out, &set.set_id), &record)
    });
    finish(&args.out, &failures)
}

fn write_report(out: &Path, report: &EvaluationReport) -> Result<()> {
    create_dir(out)?;
    write_text(&out.join(REPORT_FILE), &report.to_json())?;
    write_text(&out.join("curves.csv"), &report.curves_csv())?;
    write_text(&out.join("sets.csv"), &report.sets_csv())?;
    write_text(&out.join("report.gp"), &report.gnuplot())?;
    Ok(())
}

fn summarize(report: &EvaluationReport) {
    for v in &report.variants {
        println!(
            "{:<9} iou_dataset={:.4} mean_iou_set={:.4} sets={}",
            v.variant,
            v.iou_dataset,
            v.mean_iou_set,
            v.sets.len()
        );
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    let ds = Dataset::open(&args.stage.pipeline)?;
    let variants = &ds.config.variants;
    let mut per_variant = vec![Vec::new(); variants.len()];
    let failures = ds.each_set(|set| {
        let record: InferenceRecord = read_json(&inference_path(&args.selections, &set.set_id))?;
        let proposals = propose_set(set, &ds.config)?;
        let mut results = Vec::with_capacity(variants.len());
        for v in variants {
            let sol = record.solutions.iter().find(|s| s.variant == *v).ok_or_else(|| {
                PipelineError::Config(format!("no {v} solution for set {}", set.set_id))
            })?;
            results.push(evaluate_selections(set, &proposals, &sol.selections)?);
        }
        for (slot, r) in per_variant.iter_mut().zip(results) {
            slot.push(r);
        }
        Ok(())
    });
    let report = EvaluationReport {
        variants: variants
            .iter()
            .zip(per_variant)
            .map(|(v, sets)| VariantReport::new(v.name(), sets))
            .collect(),
        failures: failures.clone(),
    };
    write_report(&args.stage.out, &report)?;
    summarize(&report);
    finish(&args.stage.out, &failures)
}

pub fn run(args: &StageArgs) -> Result<Outcome> {
    let ds = Dataset::open(&args.pipeline)?;
    let report = run_pipeline(ds.sets, &ds.rules, &ds.config);
    write_report(&args.out, &report)?;
    summarize(&report);
    finish(&args.out, &report.failures)
}

pub fn plot(args: &PlotArgs) -> Result<Outcome> {
    let report: EvaluationReport = read_json(&args.report)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("curves.csv"), &report.curves_csv())?;
    write_text(&args.out.join("sets.csv"), &report.sets_csv())?;
    write_text(&args.out.join("report.gp"), &report.gnuplot())?;
    Ok(Outcome::Complete)
}
