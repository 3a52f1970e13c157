//! Kendall τ-b, Spearman ρ and Pearson r with two-sided permutation p-values.
//!
//! p-values count permutations of `y` whose |statistic| reaches the observed
//! one. Up to [`EXACT_MAX_N`] elements every permutation is enumerated; above
//! that a seeded Monte-Carlo sample of [`MONTE_CARLO_DRAWS`] shuffles is used
//! and the estimate is `(hits + 1) / (draws + 1)`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, Stream};

pub const EXACT_MAX_N: usize = 8;
pub const MONTE_CARLO_DRAWS: usize = 100_000;
/// Seed of the Monte-Carlo permutation stream unless overridden.
pub const DEFAULT_PERMUTATION_SEED: u64 = 0x0C7E_5EED;
/// Absolute slack when comparing a permuted |statistic| to the observed one.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub exact_max_n: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            exact_max_n: EXACT_MAX_N,
            draws: MONTE_CARLO_DRAWS,
            seed: DEFAULT_PERMUTATION_SEED,
        }
    }
}

impl PermutationConfig {
    pub fn with_seed(seed: u64) -> Self {
        PermutationConfig {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PValueMethod {
    Exact { permutations: u64 },
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Invalid(
            "correlation needs at least 2 observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("correlation inputs must be finite".into()));
    }
    Ok(())
}

fn pair_counts(x: &[f64], y: &[f64]) -> (i64, i64, i64, i64) {
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0, 0, 0, 0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    (concordant, discordant, tie_x, tie_y)
}

/// τ-b coefficient; `None` if either side is entirely tied.
fn tau_b_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let (c, d, tx, ty) = pair_counts(x, y);
    let denom = ((c + d + tx) as f64 * (c + d + ty) as f64).sqrt();
    (denom > 0.0).then(|| (c - d) as f64 / denom)
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Average (fractional) ranks, 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    tau_b_raw(x, y)
        .ok_or_else(|| Error::UndefinedCorrelation("Kendall tau: all values tied".into()))
}

pub fn spearman_coefficient(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    pearson_raw(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("Spearman rho: zero rank variance".into()))
}

pub fn pearson_coefficient(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    pearson_raw(x, y).ok_or_else(|| Error::UndefinedCorrelation("Pearson r: zero variance".into()))
}

fn permutation_p(
    x: &[f64],
    y: &[f64],
    observed: f64,
    cfg: &PermutationConfig,
    stat: impl Fn(&[f64], &[f64]) -> Option<f64>,
) -> (f64, PValueMethod) {
    let threshold = observed.abs() - TIE_TOLERANCE;
    let hit = |perm: &[f64]| stat(x, perm).is_some_and(|s| s.abs() >= threshold);
    let n = x.len();
    if n <= cfg.exact_max_n {
        // Heap's algorithm, iterative
        let mut perm = y.to_vec();
        let mut c = vec![0usize; n];
        let mut total: u64 = 1;
        let mut hits: u64 = u64::from(hit(&perm));
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                total += 1;
                hits += u64::from(hit(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        (
            hits as f64 / total as f64,
            PValueMethod::Exact {
                permutations: total,
            },
        )
    } else {
        let stream = Stream::derive(cfg.seed, domain::PERMUTATION, "");
        let mut perm = y.to_vec();
        let mut hits = 0usize;
        for d in 0..cfg.draws {
            perm.copy_from_slice(y);
            let base = (d * n) as u64;
            for i in (1..n).rev() {
                let j = stream.below(base + i as u64, i as u64 + 1) as usize;
                perm.swap(i, j);
            }
            hits += usize::from(hit(&perm));
        }
        (
            (hits + 1) as f64 / (cfg.draws + 1) as f64,
            PValueMethod::MonteCarlo {
                draws: cfg.draws,
                seed: cfg.seed,
            },
        )
    }
}

pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Correlation> {
    kendall_tau_with(x, y, &PermutationConfig::default())
}

pub fn kendall_tau_with(x: &[f64], y: &[f64], cfg: &PermutationConfig) -> Result<Correlation> {
    let coefficient = tau_b(x, y)?;
    let (p_value, method) = permutation_p(x, y, coefficient, cfg, tau_b_raw);
    Ok(Correlation {
        coefficient,
        p_value,
        method,
    })
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Correlation> {
    spearman_rho_with(x, y, &PermutationConfig::default())
}

pub fn spearman_rho_with(x: &[f64], y: &[f64], cfg: &PermutationConfig) -> Result<Correlation> {
    let coefficient = spearman_coefficient(x, y)?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (p_value, method) = permutation_p(&rx, &ry, coefficient, cfg, pearson_raw);
    Ok(Correlation {
        coefficient,
        p_value,
        method,
    })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation> {
    pearson_r_with(x, y, &PermutationConfig::default())
}

pub fn pearson_r_with(x: &[f64], y: &[f64], cfg: &PermutationConfig) -> Result<Correlation> {
    let coefficient = pearson_coefficient(x, y)?;
    let (p_value, method) = permutation_p(x, y, coefficient, cfg, pearson_raw);
    Ok(Correlation {
        coefficient,
        p_value,
        method,
    })
}

/// Stars used in result tables: `**` for p < 0.01, `*` for p < 0.05.
pub fn significance(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub value: f64,
    pub p_value: f64,
    pub significance: String,
    pub p_method: PValueMethod,
}

impl From<Correlation> for CoefficientReport {
    fn from(c: Correlation) -> Self {
        CoefficientReport {
            value: c.coefficient,
            p_value: c.p_value,
            significance: significance(c.p_value).to_owned(),
            p_method: c.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub model: String,
    pub cte: f64,
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub kendall_tau: CoefficientReport,
    pub spearman_rho: CoefficientReport,
    pub pearson_r: CoefficientReport,
    pub tie_handling: String,
    pub p_value_scheme: String,
    pub points: Vec<ModelPoint>,
}

fn index_unique<'a>(side: &str, pairs: &'a [(String, f64)]) -> Result<HashMap<&'a str, f64>> {
    let mut map = HashMap::with_capacity(pairs.len());
    for (k, v) in pairs {
        if map.insert(k.as_str(), *v).is_some() {
            return Err(Error::KeyMismatch(format!(
                "duplicate model `{k}` in {side}"
            )));
        }
    }
    Ok(map)
}

/// Correlate CTE scores with ground-truth performance, aligned by model id.
/// Points follow the order of `scores`.
pub fn evaluate(
    scores: &[(String, f64)],
    performance: &[(String, f64)],
    cfg: &PermutationConfig,
) -> Result<CorrelationReport> {
    let cte = index_unique("scores", scores)?;
    let perf = index_unique("performance", performance)?;
    let a: HashSet<&str> = cte.keys().copied().collect();
    let b: HashSet<&str> = perf.keys().copied().collect();
    if a != b {
        let mut only_a: Vec<_> = a.difference(&b).collect();
        let mut only_b: Vec<_> = b.difference(&a).collect();
        only_a.sort();
        only_b.sort();
        return Err(Error::KeyMismatch(format!(
            "models only in scores: {only_a:?}; only in performance: {only_b:?}"
        )));
    }
    if scores.len() < 3 {
        return Err(Error::Invalid(format!(
            "evaluation needs at least 3 models, got {}",
            scores.len()
        )));
    }
    let points: Vec<ModelPoint> = scores
        .iter()
        .map(|(m, s)| ModelPoint {
            model: m.clone(),
            cte: *s,
            performance: perf[m.as_str()],
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.cte).collect();
    let y: Vec<f64> = points.iter().map(|p| p.performance).collect();

    let scheme = if x.len() <= cfg.exact_max_n {
        "two-sided permutation test, exact enumeration".to_owned()
    } else {
        format!(
            "two-sided permutation test, Monte-Carlo {} draws, seed {}, p = (hits+1)/(draws+1)",
            cfg.draws, cfg.seed
        )
    };
    Ok(CorrelationReport {
        n: points.len(),
        kendall_tau: kendall_tau_with(&x, &y, cfg)?.into(),
        spearman_rho: spearman_rho_with(&x, &y, cfg)?.into(),
        pearson_r: pearson_r_with(&x, &y, cfg)?.into(),
        tie_handling: "Kendall tau-b; Spearman on average ranks".into(),
        p_value_scheme: scheme,
        points,
    })
}
