//! score → aggregate → rank → evaluate over one manifest, with every artifact
//! written atomically into an output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, rank};
use crate::consistency::{ClassWeighting, Metric, DEFAULT_ALPHA, DEFAULT_DEGENERATE_EPS};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};
use crate::output::{
    ranking_rows, scatter_svg, write_ranking_csv, write_scores_csv, RankingDocument,
    ReportDocument, SCHEMA_VERSION,
};
use crate::rankstats::{evaluate, PermutationConfig, DEFAULT_PERMUTATION_SEED};
use crate::score::{expected_cells, score_manifest, ScoreConfig};
use crate::tensor_io::load_manifest;

/// Output directory used when none is given, relative to the manifest.
pub const DEFAULT_OUT_DIR: &str = "results";
pub const SCORES_FILE: &str = "consistency.csv";
pub const RANKING_JSON: &str = "ranking.json";
pub const RANKING_CSV: &str = "ranking.csv";
pub const REPORT_JSON: &str = "report.json";
pub const SCATTER_SVG: &str = "scatter.svg";
pub const RUN_INFO: &str = "run_info.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// `None` picks the task default (NHD semantic, ARS instance).
    pub metric: Option<Metric>,
    pub per_class: bool,
    pub alpha: f64,
    pub class_weighting: ClassWeighting,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            manifest: manifest.into(),
            metric: None,
            per_class: false,
            alpha: DEFAULT_ALPHA,
            class_weighting: ClassWeighting::Union,
            out: out.into(),
            seed: DEFAULT_PERMUTATION_SEED,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub ranking: RankingDocument,
    /// `None` when the manifest carries no performance scores.
    pub report: Option<ReportDocument>,
    pub out: PathBuf,
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let started = SystemTime::now();
    let manifest = load_manifest(&cfg.manifest)?;
    let metric = cfg
        .metric
        .unwrap_or_else(|| ScoreConfig::default_metric(manifest.task));
    let score_cfg = ScoreConfig {
        metric,
        per_class: cfg.per_class,
        alpha: cfg.alpha,
        class_weighting: cfg.class_weighting,
        degenerate_eps: DEFAULT_DEGENERATE_EPS,
    };
    score_cfg.check_task(manifest.task)?;
    if manifest.n_models() < 2 {
        return Err(Error::Invalid("ranking needs at least 2 models".into()));
    }
    tracing::info!(
        dataset = %manifest.dataset_id,
        models = manifest.n_models(),
        images = manifest.n_images(),
        perturbations = manifest.n_perturbations(),
        %metric,
        "scoring"
    );

    let rows = thread_pool(cfg.jobs)?.install(|| score_manifest(&manifest, &score_cfg))?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_scores_csv(&cfg.out.join(SCORES_FILE), &rows)?;

    let records = aggregate(
        &manifest.dataset_id,
        &rows,
        Some(&expected_cells(&manifest)),
    )?;
    let ranking = rank(&records)?;
    for r in records.iter().filter(|r| !r.degenerate_warnings.is_empty()) {
        tracing::warn!(
            model = %r.model_id,
            images = r.degenerate_warnings.len(),
            "degenerate reference predictions; high consistency may reflect mode collapse"
        );
    }
    write_ranking_csv(
        &cfg.out.join(RANKING_CSV),
        &ranking_rows(&ranking, &records),
    )?;
    let ranking_doc = RankingDocument {
        schema_version: SCHEMA_VERSION,
        dataset_id: manifest.dataset_id.clone(),
        metric,
        ranking,
        records,
    };
    write_json(&cfg.out.join(RANKING_JSON), &ranking_doc)?;

    let report = match &manifest.performance {
        None => {
            tracing::info!("manifest has no performance scores; skipping evaluation");
            None
        }
        Some(perf) => {
            let scores: Vec<(String, f64)> = ranking_doc
                .records
                .iter()
                .map(|r| (r.model_id.clone(), r.cte))
                .collect();
            let perf: Vec<(String, f64)> = perf.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let report = evaluate(&scores, &perf, &PermutationConfig::with_seed(cfg.seed))?;
            let doc = ReportDocument {
                schema_version: SCHEMA_VERSION,
                dataset_id: Some(manifest.dataset_id.clone()),
                metric: Some(metric),
                report,
            };
            write_json(&cfg.out.join(REPORT_JSON), &doc)?;
            let title = format!(
                "{} / CTE-{}",
                manifest.dataset_id,
                metric.to_string().to_uppercase()
            );
            write_atomic(
                &cfg.out.join(SCATTER_SVG),
                scatter_svg(&doc.report, &title).as_bytes(),
            )?;
            Some(doc)
        }
    };

    write_run_info(&cfg.out, cfg, started)?;
    Ok(PipelineOutcome {
        ranking: ranking_doc,
        report,
        out: cfg.out.clone(),
    })
}

/// Timestamps live here so the main outputs stay byte-reproducible.
fn write_run_info(out: &Path, cfg: &RunConfig, started: SystemTime) -> Result<()> {
    let secs = |t: SystemTime| {
        t.duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    };
    write_json(
        &out.join(RUN_INFO),
        &serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "started_unix": secs(started),
            "finished_unix": secs(SystemTime::now()),
            "config": cfg,
        }),
    )
}
