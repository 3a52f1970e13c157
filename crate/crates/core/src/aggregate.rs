//! Per-image mean over perturbations, median over images, and the
//! descending ranking of models by the resulting score.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::consistency::Metric;
use crate::error::{Error, Result};

/// One scored `(model, image, perturbation)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub image: String,
    pub perturbation: String,
    pub metric: Metric,
    pub value: f64,
    pub n_effective: usize,
    /// Degenerate-output flag of the `(model, image)` reference prediction.
    pub ref_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub model: String,
    pub image: String,
    pub perturbation: String,
}

impl CellKey {
    pub fn new(
        model: impl Into<String>,
        image: impl Into<String>,
        perturbation: impl Into<String>,
    ) -> Self {
        CellKey {
            model: model.into(),
            image: image.into(),
            perturbation: perturbation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub model_id: String,
    pub dataset_id: String,
    pub metric: Metric,
    pub cte: f64,
    pub n_images: usize,
    pub per_image: BTreeMap<String, f64>,
    /// Images whose reference prediction looks mode-collapsed.
    pub degenerate_warnings: Vec<String>,
}

/// Midpoint median; input order does not matter.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Build one [`TransferRecord`] per model.
///
/// With `expected` set, each listed cell must have exactly one row (a missing
/// one is reported by name) and models/images follow its order. Without it the
/// rows themselves define the table.
pub fn aggregate(
    dataset_id: &str,
    rows: &[ScoreRow],
    expected: Option<&[CellKey]>,
) -> Result<Vec<TransferRecord>> {
    let mut metric = None;
    let mut by_cell: HashMap<CellKey, &ScoreRow> = HashMap::with_capacity(rows.len());
    for row in rows {
        match metric {
            None => metric = Some(row.metric),
            Some(m) if m != row.metric => {
                return Err(Error::Invalid(format!(
                    "score table mixes metrics {m} and {}",
                    row.metric
                )))
            }
            _ => {}
        }
        let key = CellKey::new(&row.model, &row.image, &row.perturbation);
        if by_cell.insert(key, row).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate score for ({}, {}, {})",
                row.model, row.image, row.perturbation
            )));
        }
    }
    let metric = metric.ok_or_else(|| Error::Invalid("empty score table".into()))?;

    let owned_cells: Vec<CellKey>;
    let cells: &[CellKey] = match expected {
        Some(cells) => {
            for c in cells {
                if !by_cell.contains_key(c) {
                    return Err(Error::MissingCell {
                        model: c.model.clone(),
                        image: c.image.clone(),
                        perturbation: c.perturbation.clone(),
                    });
                }
            }
            cells
        }
        None => {
            owned_cells = rows
                .iter()
                .map(|r| CellKey::new(&r.model, &r.image, &r.perturbation))
                .collect();
            &owned_cells
        }
    };

    // model -> image -> values, keeping first-seen model order
    let mut order: Vec<&str> = Vec::new();
    let mut table: HashMap<&str, BTreeMap<&str, Vec<f64>>> = HashMap::new();
    let mut flagged: HashMap<&str, BTreeMap<&str, bool>> = HashMap::new();
    for c in cells {
        let row = by_cell[c];
        if !table.contains_key(c.model.as_str()) {
            order.push(&c.model);
        }
        table
            .entry(&c.model)
            .or_default()
            .entry(&c.image)
            .or_default()
            .push(row.value);
        *flagged
            .entry(&c.model)
            .or_default()
            .entry(&c.image)
            .or_default() |= row.ref_degenerate;
    }

    Ok(order
        .into_iter()
        .map(|model| {
            let per_image: BTreeMap<String, f64> = table
                .remove(model)
                .unwrap_or_default()
                .into_iter()
                .map(|(image, mut values)| (image.to_owned(), mean(&mut values)))
                .collect();
            let values: Vec<f64> = per_image.values().copied().collect();
            let degenerate_warnings = flagged[model]
                .iter()
                .filter(|(_, &f)| f)
                .map(|(i, _)| (*i).to_owned())
                .collect();
            TransferRecord {
                model_id: model.to_owned(),
                dataset_id: dataset_id.to_owned(),
                metric,
                cte: median(&values).unwrap_or(f64::NAN),
                n_images: values.len(),
                per_image,
                degenerate_warnings,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub model_id: String,
    pub cte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankEntry>,
    /// Groups of models sharing an identical score, in ranking order.
    pub tie_groups: Vec<Vec<String>>,
}

impl Ranking {
    pub fn order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.model_id.as_str()).collect()
    }
}

/// Descending by score, ties broken by model id.
pub fn rank(records: &[TransferRecord]) -> Result<Ranking> {
    let scores: Vec<(String, f64)> = records
        .iter()
        .map(|r| (r.model_id.clone(), r.cte))
        .collect();
    rank_scores(&scores)
}

pub fn rank_scores(scores: &[(String, f64)]) -> Result<Ranking> {
    if scores.len() < 2 {
        return Err(Error::Invalid(format!(
            "ranking needs at least 2 models, got {}",
            scores.len()
        )));
    }
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..]
            .iter()
            .take_while(|e| e.1 == sorted[i].1)
            .count()
            + i;
        if j - i > 1 {
            tie_groups.push(sorted[i..j].iter().map(|e| e.0.clone()).collect());
        }
        i = j;
    }
    Ok(Ranking {
        entries: sorted
            .iter()
            .enumerate()
            .map(|(i, (m, s))| RankEntry {
                rank: i + 1,
                model_id: m.clone(),
                cte: *s,
            })
            .collect(),
        tie_groups,
    })
}
