//! Command-line front end for the `cte` binary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use cte_core::aggregate::{aggregate, rank};
use cte_core::consistency::{ClassWeighting, Metric, DEFAULT_ALPHA, DEFAULT_DEGENERATE_EPS};
use cte_core::output::{
    self, ranking_rows, scatter_svg, RankingDocument, ReportDocument, SCHEMA_VERSION,
};
use cte_core::perturb::{apply_spec, PerturbationSpec};
use cte_core::pipeline::{self, run_pipeline, RunConfig, DEFAULT_OUT_DIR};
use cte_core::rankstats::{
    evaluate, CorrelationReport, PermutationConfig, DEFAULT_PERMUTATION_SEED,
};
use cte_core::score::{expected_cells, score_manifest, ScoreConfig};
use cte_core::synthlab::{generate_study, Ladder, StudyConfig, StudyTask};
use cte_core::tensor_io::{load_manifest, read_image, write_image};
use cte_core::{write_json, Error, ErrorClass};

pub const EXIT_IO: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "cte",
    version,
    about = "Consistency-based transferability estimation for segmentation models"
)]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply perturbation specs to a directory of NPY images.
    Perturb(PerturbArgs),
    /// Score every (model, image, perturbation) cell of a manifest.
    Score(ScoreArgs),
    /// Aggregate a consistency CSV into a model ranking.
    Rank(RankArgs),
    /// Correlate a ranking with ground-truth performance.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic study with a known model ordering.
    Synth(SynthArgs),
    /// score, rank and (if the manifest has performance scores) evaluate.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Consistency metric; defaults to nhd for semantic tasks, ars for instance.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Restrict semantic metrics to per-class unions and average.
    #[arg(long)]
    pub per_class: bool,
    /// ARS balance between perturbed (α) and reference (1-α) marginals.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Class weighting for per-class averages: union or frequency.
    #[arg(long, default_value = "union")]
    pub class_weighting: ClassWeighting,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Directory of input images (`<image_id>.npy`).
    #[arg(long)]
    pub images: PathBuf,
    /// JSON array of perturbation specs.
    #[arg(long)]
    pub specs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Output directory [default: `results` next to the manifest].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Consistency CSV written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Manifest used to check completeness and name the dataset.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "dataset")]
    pub dataset_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ranking CSV written by `rank` or `pipeline`.
    #[arg(long)]
    pub ranking: PathBuf,
    /// CSV with columns `model,score`.
    #[arg(long)]
    pub performance: PathBuf,
    /// Seed for Monte-Carlo permutation p-values.
    #[arg(long, default_value_t = DEFAULT_PERMUTATION_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// semantic or instance.
    #[arg(long)]
    pub task: StudyTask,
    #[arg(long, default_value_t = 8)]
    pub models: usize,
    #[arg(long, default_value_t = 16)]
    pub images: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Give every model the same amplitude (a degenerate study).
    #[arg(long)]
    pub identical: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Output directory [default: `results` next to the manifest].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for Monte-Carlo permutation p-values.
    #[arg(long, default_value_t = DEFAULT_PERMUTATION_SEED)]
    pub seed: u64,
}

fn default_out(manifest: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        manifest
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(DEFAULT_OUT_DIR)
    })
}

impl PipelineArgs {
    pub fn run_config(self, jobs: usize) -> RunConfig {
        RunConfig {
            out: default_out(&self.manifest, self.out),
            manifest: self.manifest,
            metric: self.metric.metric,
            per_class: self.metric.per_class,
            alpha: self.metric.alpha,
            class_weighting: self.metric.class_weighting,
            seed: self.seed,
            jobs,
        }
    }
}

/// Maps an error to the process exit code of its failure class.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.class() {
                ErrorClass::Io => EXIT_IO,
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::DegenerateStat => EXIT_DEGENERATE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("CTE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Perturb(a) => pipeline::thread_pool(jobs)?.install(|| perturb(a)),
        Command::Score(a) => pipeline::thread_pool(jobs)?.install(|| score(a)),
        Command::Rank(a) => rank_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Synth(a) => pipeline::thread_pool(jobs)?.install(|| synth(a)),
        Command::Pipeline(a) => {
            let outcome = run_pipeline(&a.run_config(jobs))?;
            print_ranking(&outcome.ranking);
            if let Some(r) = &outcome.report {
                print_report(&r.report);
            }
            eprintln!("outputs written to {}", outcome.out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Provenance {
    image: String,
    perturbation: String,
    strength: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_seed: Option<u64>,
    path: PathBuf,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

fn perturb(a: PerturbArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.specs).map_err(|e| Error::Io {
        path: a.specs.clone(),
        source: e,
    })?;
    let specs: Vec<PerturbationSpec> = serde_json::from_str(&text)
        .map_err(|e| Error::Invalid(format!("{}: {e}", a.specs.display())))?;
    let mut ids = std::collections::HashSet::new();
    for s in &specs {
        s.validate()?;
        if !ids.insert(s.id.as_str()) {
            bail!(Error::Invalid(format!(
                "duplicate perturbation id `{}`",
                s.id
            )));
        }
    }
    let mut images: Vec<(String, PathBuf)> = std::fs::read_dir(&a.images)
        .map_err(|e| Error::Io {
            path: a.images.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "npy"))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    images.sort();
    if images.is_empty() {
        bail!(Error::Invalid(format!(
            "no .npy images in {}",
            a.images.display()
        )));
    }
    let input_specs: Vec<&PerturbationSpec> = specs
        .iter()
        .filter(|s| {
            let ok = s.kind.is_input_space();
            if !ok {
                tracing::info!(id = %s.id, "skipping feature-space perturbation");
            }
            ok
        })
        .collect();

    let records = images
        .par_iter()
        .map(|(id, path)| -> cte_core::Result<Vec<Provenance>> {
            let x = read_image(path)?;
            let dtype = cte_core::tensor_io::npy::read_npy(path)?.dtype;
            input_specs
                .iter()
                .map(|spec| {
                    let p = apply_spec(spec, id, &x)?;
                    let rel = PathBuf::from(&spec.id).join(format!("{id}.npy"));
                    write_image(a.out.join(&rel), &p.image, dtype)?;
                    Ok(Provenance {
                        image: id.clone(),
                        perturbation: spec.id.clone(),
                        strength: p.strength,
                        noise_seed: p.noise_seed,
                        path: rel,
                    })
                })
                .collect()
        })
        .collect::<cte_core::Result<Vec<_>>>()?;
    let records: Vec<Provenance> = records.into_iter().flatten().collect();
    write_json(&a.out.join(PROVENANCE_FILE), &records)?;
    eprintln!(
        "{} perturbed images written to {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let cfg = ScoreConfig {
        metric: a
            .metric
            .metric
            .unwrap_or_else(|| ScoreConfig::default_metric(manifest.task)),
        per_class: a.metric.per_class,
        alpha: a.metric.alpha,
        class_weighting: a.metric.class_weighting,
        degenerate_eps: DEFAULT_DEGENERATE_EPS,
    };
    cfg.check_task(manifest.task)?;
    let rows = score_manifest(&manifest, &cfg)?;
    let out = default_out(&a.manifest, a.out).join(pipeline::SCORES_FILE);
    output::write_scores_csv(&out, &rows)?;
    eprintln!(
        "{} cells scored with {}, written to {}",
        rows.len(),
        cfg.metric,
        out.display()
    );
    Ok(())
}

fn rank_cmd(a: RankArgs) -> anyhow::Result<()> {
    let rows = output::read_scores_csv(&a.scores)?;
    let (dataset_id, expected) = match &a.manifest {
        Some(m) => {
            let m = load_manifest(m)?;
            let cells = expected_cells(&m);
            (m.dataset_id, Some(cells))
        }
        None => (a.dataset_id, None),
    };
    let records = aggregate(&dataset_id, &rows, expected.as_deref())?;
    let ranking = rank(&records)?;
    let metric = records[0].metric;
    output::write_ranking_csv(
        &a.out.join(pipeline::RANKING_CSV),
        &ranking_rows(&ranking, &records),
    )?;
    let doc = RankingDocument {
        schema_version: SCHEMA_VERSION,
        dataset_id,
        metric,
        ranking,
        records,
    };
    write_json(&a.out.join(pipeline::RANKING_JSON), &doc)?;
    print_ranking(&doc);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let ranking = output::read_ranking_csv(&a.ranking)?;
    let perf = output::read_performance_csv(&a.performance)?;
    let scores: Vec<(String, f64)> = ranking.into_iter().map(|r| (r.model, r.cte)).collect();
    let perf: Vec<(String, f64)> = perf.into_iter().map(|r| (r.model, r.score)).collect();
    let report = evaluate(&scores, &perf, &PermutationConfig::with_seed(a.seed))?;
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        dataset_id: None,
        metric: None,
        report,
    };
    write_json(&a.out.join(pipeline::REPORT_JSON), &doc)?;
    cte_core::write_atomic(
        &a.out.join(pipeline::SCATTER_SVG),
        scatter_svg(&doc.report, "CTE vs performance").as_bytes(),
    )?;
    print_report(&doc.report);
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = StudyConfig::new(a.task, a.models, a.images, a.seed);
    cfg.image_size = a.size;
    if a.identical {
        cfg.ladder = Ladder::Identical { amplitude: 0.35 };
    }
    let summary = generate_study(&cfg, &a.out)?;
    eprintln!(
        "{}: {} models × {} images written to {} (ladder monotone: {})",
        summary.dataset_id,
        a.models,
        a.images,
        a.out.display(),
        summary.ladder_monotone
    );
    Ok(())
}

fn print_ranking(doc: &RankingDocument) {
    println!("rank  model                 cte");
    for e in &doc.ranking.entries {
        println!("{:>4}  {:<20} {:.6}", e.rank, e.model_id, e.cte);
    }
}

fn print_report(r: &CorrelationReport) {
    for (name, c) in [
        ("kendall_tau", &r.kendall_tau),
        ("spearman_rho", &r.spearman_rho),
        ("pearson_r", &r.pearson_r),
    ] {
        println!(
            "{name:<13} {:+.4}{:<2}  p={:.5}",
            c.value, c.significance, c.p_value
        );
    }
}
