//! Scores every `(model, image, perturbation)` cell of a manifest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{CellKey, ScoreRow};
use crate::consistency::{
    ars_consistency, degenerate_output_flag_with, ei_consistency, ei_consistency_per_class,
    nhd_consistency_weighted, ClassWeighting, ConsistencyValue, Metric, DEFAULT_ALPHA,
    DEFAULT_DEGENERATE_EPS,
};
use crate::error::{Error, Result};
use crate::tensor_io::{
    read_label_map, read_prob_map, LabelMap, Manifest, Prediction, ProbMap, Task,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub metric: Metric,
    /// EI only: restrict to per-class unions like NHD.
    pub per_class: bool,
    pub alpha: f64,
    pub class_weighting: ClassWeighting,
    pub degenerate_eps: f64,
}

impl ScoreConfig {
    pub fn new(metric: Metric) -> Self {
        ScoreConfig {
            metric,
            per_class: false,
            alpha: DEFAULT_ALPHA,
            class_weighting: ClassWeighting::Union,
            degenerate_eps: DEFAULT_DEGENERATE_EPS,
        }
    }

    /// Default metric for a task: NHD for semantic, ARS for instance.
    pub fn default_metric(task: Task) -> Metric {
        if task.is_semantic() {
            Metric::Nhd
        } else {
            Metric::Ars
        }
    }

    pub fn check_task(&self, task: Task) -> Result<()> {
        match (self.metric, task.is_semantic()) {
            (Metric::Ars, true) => Err(Error::Invalid(
                "metric ars requires an instance task".into(),
            )),
            (Metric::Ei | Metric::Nhd, false) => Err(Error::Invalid(format!(
                "metric {} requires a semantic task; use ars for instance segmentation",
                self.metric
            ))),
            _ if self.per_class && self.metric == Metric::Ars => {
                Err(Error::Invalid("--per-class does not apply to ars".into()))
            }
            _ if !(0.0..=1.0).contains(&self.alpha) => Err(Error::Invalid(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            ))),
            _ => Ok(()),
        }
    }
}

struct Loaded {
    labels: LabelMap,
    probs: Option<ProbMap>,
}

fn load(pred: &Prediction, task: Task, need_probs: bool) -> Result<Loaded> {
    let labels = read_label_map(&pred.path)?;
    if let Some(c) = task.num_classes() {
        labels.check_classes(c).map_err(|e| Error::InvalidArray {
            path: pred.path.clone(),
            reason: e.to_string(),
        })?;
    }
    let probs = if need_probs {
        let path = pred.prob_path.as_ref().ok_or_else(|| {
            Error::Invalid(format!(
                "metric ei needs prob_path for ({}, {}, {})",
                pred.model,
                pred.image,
                pred.perturbation.as_deref().unwrap_or("null")
            ))
        })?;
        let probs = read_prob_map(path)?;
        let c = task.num_classes().unwrap_or(2) as usize;
        if probs.classes() != 1 && probs.classes() != c {
            return Err(Error::InvalidArray {
                path: path.clone(),
                reason: format!("{} channels for a {c}-class task", probs.classes()),
            });
        }
        if probs.shape() != labels.shape() {
            return Err(Error::ShapeMismatch {
                left: labels.shape(),
                right: probs.shape(),
            });
        }
        Some(probs)
    } else {
        None
    };
    Ok(Loaded { labels, probs })
}

fn consistency(cfg: &ScoreConfig, task: Task, r: &Loaded, p: &Loaded) -> Result<ConsistencyValue> {
    let classes = task.num_classes().unwrap_or(2);
    match cfg.metric {
        Metric::Ei => {
            let rp = (r.probs.as_ref().unwrap(), &r.labels);
            let pp = (p.probs.as_ref().unwrap(), &p.labels);
            if cfg.per_class {
                ei_consistency_per_class(rp, pp, classes, cfg.class_weighting)
            } else {
                ei_consistency(rp, pp)
            }
        }
        Metric::Nhd => nhd_consistency_weighted(&r.labels, &p.labels, classes, cfg.class_weighting),
        Metric::Ars => match ars_consistency(&r.labels, &p.labels, cfg.alpha) {
            Err(Error::DegenerateReference) => Ok(ConsistencyValue {
                value: if p.labels.foreground_count() == 0 {
                    1.0
                } else {
                    0.0
                },
                metric: Metric::Ars,
                n_effective: 0,
            }),
            other => other,
        },
    }
}

/// Score all cells. Rows come back in manifest order (model, image, then
/// perturbed entries) regardless of how many threads ran.
pub fn score_manifest(manifest: &Manifest, cfg: &ScoreConfig) -> Result<Vec<ScoreRow>> {
    cfg.check_task(manifest.task)?;
    let task = manifest.task;
    let need_probs = cfg.metric == Metric::Ei;
    let groups: Vec<(&str, &str)> = manifest
        .models
        .iter()
        .flat_map(|m| {
            manifest
                .images
                .iter()
                .map(move |i| (m.as_str(), i.as_str()))
        })
        .collect();

    let per_group: Vec<Vec<ScoreRow>> = groups
        .par_iter()
        .map(|&(model, image)| {
            let reference = load(manifest.reference(model, image), task, need_probs)?;
            let flagged =
                degenerate_output_flag_with(&reference.labels, cfg.degenerate_eps).flagged;
            if flagged {
                tracing::warn!(
                    model,
                    image,
                    "reference prediction looks degenerate (mode collapse)"
                );
            }
            manifest
                .perturbed(model, image)
                .map(|pred| {
                    let perturbed = load(pred, task, need_probs)?;
                    if perturbed.labels.shape() != reference.labels.shape() {
                        return Err(Error::ShapeMismatch {
                            left: reference.labels.shape(),
                            right: perturbed.labels.shape(),
                        });
                    }
                    let v = consistency(cfg, task, &reference, &perturbed)?;
                    Ok(ScoreRow {
                        model: model.to_owned(),
                        image: image.to_owned(),
                        perturbation: pred.perturbation.clone().unwrap_or_default(),
                        metric: v.metric,
                        value: v.value,
                        n_effective: v.n_effective,
                        ref_degenerate: flagged,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_group.into_iter().flatten().collect())
}

/// Cells the manifest declares, in scoring order.
pub fn expected_cells(manifest: &Manifest) -> Vec<CellKey> {
    manifest
        .cells()
        .into_iter()
        .map(|(r, p)| {
            CellKey::new(
                &r.model,
                &r.image,
                p.perturbation.as_deref().unwrap_or_default(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_task_compatibility() {
        let ars = ScoreConfig::new(Metric::Ars);
        assert!(ars.check_task(Task::SemanticBinary).is_err());
        assert!(ars.check_task(Task::Instance).is_ok());
        let nhd = ScoreConfig::new(Metric::Nhd);
        assert!(nhd.check_task(Task::Instance).is_err());
        assert!(nhd.check_task(Task::SemanticMulticlass(4)).is_ok());
        let mut bad_alpha = ars;
        bad_alpha.alpha = 1.5;
        assert!(bad_alpha.check_task(Task::Instance).is_err());
    }
}
