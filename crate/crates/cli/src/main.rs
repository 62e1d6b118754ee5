//! `codetect`: command-line driver for sentence-directed video codetection.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codetect::inference::Variant;
use codetect::pipeline::PipelineConfig;

/// Exit status for a run in which some sets failed and the others completed.
const PARTIAL_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "codetect", version, about = "Sentence-directed video object codetection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse sentences into predicate conjunctions (JSON).
    Parse(ParseArgs),
    /// Write a seeded synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Sample object proposals for every video of a manifest.
    Propose(StageArgs),
    /// Compute set-level similarity tables.
    Similarity(StageArgs),
    /// Build and solve the graph of every set and variant.
    Infer(StageArgs),
    /// Score the selections written by `infer` against the annotations.
    Evaluate(EvaluateArgs),
    /// End-to-end run: parse, propose, score, infer and evaluate.
    Run(StageArgs),
    /// Emit curve CSV and a gnuplot script from a report.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Built-in rule set: kitchen or cad120.
    #[arg(long, default_value = "kitchen")]
    rules: String,
    /// File with one sentence per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sentences given inline.
    sentences: Vec<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of codetection sets.
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Videos per set.
    #[arg(long, default_value_t = 5)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop pixel and flow noise and halve candidate jitter.
    #[arg(long)]
    noiseless: bool,
    /// Directory receiving the bundle and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// N=500, K=240, M=20, L=15.
    Full,
    /// N=60, K=40, M=3, L=15.
    Synthetic,
}

/// Dataset and pipeline parameters shared by the stage commands.
#[derive(Debug, Args)]
struct PipelineArgs {
    /// Manifest listing the codetection sets.
    #[arg(long)]
    sets: PathBuf,
    /// Parameter defaults that the flags below override.
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    /// Candidates kept per frame.
    #[arg(long)]
    n: Option<usize>,
    /// Proposals per video.
    #[arg(long)]
    k: Option<usize>,
    /// Detections sampled per proposal for similarity.
    #[arg(long)]
    m: Option<usize>,
    /// Frames averaged at each end of a tube.
    #[arg(long)]
    l: Option<usize>,
    /// Variants to run; repeat or separate with commas. All when absent.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variant: Vec<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    bp_iters: Option<usize>,
    #[arg(long)]
    bp_damping: Option<f64>,
    /// Rule set overriding the one named in the manifest.
    #[arg(long)]
    rules: Option<String>,
}

#[derive(Debug, Args)]
struct StageArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Directory written by `infer`.
    #[arg(long)]
    selections: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Report JSON written by `run` or `evaluate`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut c = match self.preset {
            Preset::Full => PipelineConfig::default(),
            Preset::Synthetic => PipelineConfig::synthetic(),
        };
        c.n = self.n.unwrap_or(c.n);
        c.k = self.k.unwrap_or(c.k);
        c.m = self.m.unwrap_or(c.m);
        c.l = self.l.unwrap_or(c.l);
        c.seed = self.seed;
        c.bp.max_iters = self.bp_iters.unwrap_or(c.bp.max_iters);
        c.bp.damping = self.bp_damping.unwrap_or(c.bp.damping);
        if !self.variant.is_empty() {
            c.variants = self.variant.clone();
        }
        c
    }
}

/// Whether every set (or sentence) went through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Complete,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse(a) => commands::parse(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Propose(a) => commands::propose(&a),
        Command::Similarity(a) => commands::similarity(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Run(a) => commands::run(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(PARTIAL_FAILURE),
        Err(e) => {
            // library errors already spell out their causes
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
