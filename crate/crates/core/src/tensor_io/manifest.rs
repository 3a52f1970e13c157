//! Experiment manifest: one JSON file binding models, images, perturbations
//! and prediction files. Relative paths resolve against the manifest's own
//! directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::PerturbationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    SemanticBinary,
    SemanticMulticlass,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    SemanticBinary,
    SemanticMulticlass(u32),
    Instance,
}

impl Task {
    pub fn is_semantic(self) -> bool {
        !matches!(self, Task::Instance)
    }

    /// Class count for semantic tasks.
    pub fn num_classes(self) -> Option<u32> {
        match self {
            Task::SemanticBinary => Some(2),
            Task::SemanticMulticlass(c) => Some(c),
            Task::Instance => None,
        }
    }
}

/// One entry of `predictions[]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub model: String,
    pub image: String,
    pub perturbation: Option<String>,
    /// Label map (NPY, integer dtype).
    pub path: PathBuf,
    /// Probability map (NPY, float dtype); required by the EI metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_path: Option<PathBuf>,
}

/// The manifest exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDocument {
    pub dataset_id: String,
    pub task: TaskName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<u32>,
    pub models: Vec<String>,
    pub images: Vec<String>,
    pub perturbations: Vec<PerturbationSpec>,
    pub predictions: Vec<PredictionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub model: String,
    pub image: String,
    pub perturbation: Option<String>,
    pub path: PathBuf,
    pub prob_path: Option<PathBuf>,
}

/// A validated manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub dataset_id: String,
    pub task: Task,
    pub models: Vec<String>,
    pub images: Vec<String>,
    pub perturbations: Vec<PerturbationSpec>,
    pub predictions: Vec<Prediction>,
    pub performance: Option<BTreeMap<String, f64>>,
    references: HashMap<(String, String), usize>,
    perturbed: HashMap<(String, String), Vec<usize>>,
}

impl Manifest {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_perturbations(&self) -> usize {
        self.perturbations.len()
    }

    pub fn reference(&self, model: &str, image: &str) -> &Prediction {
        &self.predictions[self.references[&(model.to_owned(), image.to_owned())]]
    }

    /// Perturbed predictions of `(model, image)` in manifest order.
    pub fn perturbed(&self, model: &str, image: &str) -> impl Iterator<Item = &Prediction> {
        self.perturbed
            .get(&(model.to_owned(), image.to_owned()))
            .into_iter()
            .flatten()
            .map(|&i| &self.predictions[i])
    }

    /// Every `(reference, perturbed)` pair to score, ordered by model, image,
    /// then manifest order of the perturbed entries.
    pub fn cells(&self) -> Vec<(&Prediction, &Prediction)> {
        let mut out = Vec::new();
        for m in &self.models {
            for i in &self.images {
                let r = self.reference(m, i);
                out.extend(self.perturbed(m, i).map(|p| (r, p)));
            }
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    validate(doc, &root)
}

/// Cross-check a parsed document. `root` is the directory relative paths are
/// resolved against.
pub fn validate(doc: ManifestDocument, root: &Path) -> Result<Manifest> {
    let bad = |msg: String| Err(Error::Manifest(msg));

    let task = match (doc.task, doc.num_classes) {
        (TaskName::SemanticBinary, None | Some(2)) => Task::SemanticBinary,
        (TaskName::SemanticBinary, Some(c)) => {
            return bad(format!("semantic-binary requires num_classes 2, got {c}"))
        }
        (TaskName::SemanticMulticlass, Some(c)) if c >= 2 => Task::SemanticMulticlass(c),
        (TaskName::SemanticMulticlass, _) => {
            return bad("semantic-multiclass requires num_classes >= 2".into())
        }
        (TaskName::Instance, _) => Task::Instance,
    };

    let models = unique("model", &doc.models)?;
    let images = unique("image", &doc.images)?;
    if models.is_empty() || images.is_empty() {
        return bad("manifest needs at least one model and one image".into());
    }
    let mut pert_ids = HashSet::new();
    for spec in &doc.perturbations {
        if !pert_ids.insert(spec.id.as_str()) {
            return bad(format!("duplicate perturbation id `{}`", spec.id));
        }
        spec.validate()?;
    }
    if pert_ids.is_empty() {
        return bad("manifest declares no perturbations".into());
    }

    let mut seen = HashSet::new();
    let mut references = HashMap::new();
    let mut perturbed: HashMap<(String, String), Vec<usize>> = HashMap::new();
    let mut predictions = Vec::with_capacity(doc.predictions.len());
    for (idx, entry) in doc.predictions.into_iter().enumerate() {
        let label = format!(
            "({}, {}, {})",
            entry.model,
            entry.image,
            entry.perturbation.as_deref().unwrap_or("null")
        );
        if !models.contains(entry.model.as_str()) {
            return bad(format!("prediction {label} references unknown model"));
        }
        if !images.contains(entry.image.as_str()) {
            return bad(format!("prediction {label} references unknown image"));
        }
        if let Some(p) = &entry.perturbation {
            if !pert_ids.contains(p.as_str()) {
                return bad(format!(
                    "prediction {label} references unknown perturbation"
                ));
            }
        }
        if !seen.insert((
            entry.model.clone(),
            entry.image.clone(),
            entry.perturbation.clone(),
        )) {
            return bad(format!("duplicate prediction key {label}"));
        }
        let resolve = |p: &Path| -> Result<PathBuf> {
            let full = if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            };
            match std::fs::metadata(&full) {
                Ok(m) if m.is_file() => Ok(full),
                _ => Err(Error::Manifest(format!(
                    "prediction {label}: dangling file reference {}",
                    full.display()
                ))),
            }
        };
        let path = resolve(&entry.path)?;
        let prob_path = entry.prob_path.as_deref().map(resolve).transpose()?;
        let key = (entry.model.clone(), entry.image.clone());
        match entry.perturbation {
            None => {
                references.insert(key, idx);
            }
            Some(_) => perturbed.entry(key).or_default().push(idx),
        }
        predictions.push(Prediction {
            model: entry.model,
            image: entry.image,
            perturbation: entry.perturbation,
            path,
            prob_path,
        });
    }

    for m in &doc.models {
        for i in &doc.images {
            let key = (m.clone(), i.clone());
            if !references.contains_key(&key) {
                return bad(format!("missing unperturbed reference for ({m}, {i})"));
            }
            if perturbed.get(&key).is_none_or(Vec::is_empty) {
                return bad(format!("no perturbed prediction for ({m}, {i})"));
            }
        }
    }

    if let Some(perf) = &doc.performance {
        for (k, v) in perf {
            if !models.contains(k.as_str()) {
                return bad(format!("performance score for unknown model `{k}`"));
            }
            if !v.is_finite() {
                return bad(format!("performance score for `{k}` is not finite"));
            }
        }
    }

    Ok(Manifest {
        root: root.to_path_buf(),
        dataset_id: doc.dataset_id,
        task,
        models: doc.models,
        images: doc.images,
        perturbations: doc.perturbations,
        predictions,
        performance: doc.performance,
        references,
        perturbed,
    })
}

fn unique<'a>(what: &str, ids: &'a [String]) -> Result<HashSet<&'a str>> {
    let mut set = HashSet::new();
    for id in ids {
        if !set.insert(id.as_str()) {
            return Err(Error::Manifest(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(set)
}
