//! Property tests against brute-force oracles written independently of the
//! library code.

use std::collections::BTreeMap;

use cte_core::aggregate::{aggregate, median, rank, rank_scores, ScoreRow};
use cte_core::consistency::{
    ars_consistency, ei_consistency, nhd_consistency, nhd_consistency_weighted, ClassWeighting,
    Metric,
};
use cte_core::perturb::{PerturbationKind, PerturbationSpec};
use cte_core::rankstats::{kendall_tau, spearman_coefficient, spearman_rho, tau_b, PValueMethod};
use cte_core::tensor_io::{
    load_manifest, write_label_map, LabelMap, ManifestDocument, PredictionEntry, ProbMap, TaskName,
};
use proptest::prelude::*;

fn label_map(
    max_side: usize,
    max_label: u32,
) -> impl Strategy<Value = (usize, usize, Vec<u32>, Vec<u32>)> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0..=max_label, h * w),
            prop::collection::vec(0..=max_label, h * w),
        )
    })
}

fn iou(a: &[u32], b: &[u32]) -> f64 {
    let inter = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x == 1 && **y == 1)
        .count();
    let union = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x == 1 || **y == 1)
        .count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Ordered pixel pairs inside the reference foreground.
fn ars_pairs(r: &[u32], p: &[u32], alpha: f64) -> f64 {
    let idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] != 0).collect();
    let (mut both, mut same_p, mut same_r) = (0u64, 0u64, 0u64);
    for &i in &idx {
        for &j in &idx {
            let sp = p[i] == p[j];
            let sr = r[i] == r[j];
            both += u64::from(sp && sr);
            same_p += u64::from(sp);
            same_r += u64::from(sr);
        }
    }
    both as f64 / (alpha * same_p as f64 + (1.0 - alpha) * same_r as f64)
}

fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-1000i32..1000, n)
        .prop_map(|s| s.into_iter().map(f64::from).collect())
}

fn shuffled(n: usize) -> impl Strategy<Value = Vec<f64>> {
    Just((0..n).map(|v| v as f64).collect::<Vec<f64>>()).prop_shuffle()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    // Lehmer codes 0..n!
    let total: usize = (1..=n).product();
    (0..total)
        .map(|mut code| {
            let mut pool: Vec<usize> = (0..n).collect();
            let mut out = Vec::with_capacity(n);
            for k in (1..=n).rev() {
                let f: usize = (1..k).product();
                out.push(pool.remove(code / f));
                code %= f;
            }
            out
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn nhd_binary_is_iou_and_symmetric((h, w, a, b) in label_map(12, 1)) {
        let ra = LabelMap::new(h, w, a.clone()).unwrap();
        let rb = LabelMap::new(h, w, b.clone()).unwrap();
        let ab = nhd_consistency(&ra, &rb, 2).unwrap().value;
        let ba = nhd_consistency(&rb, &ra, 2).unwrap().value;
        prop_assert!((ab - iou(&a, &b)).abs() <= 1e-12);
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn nhd_multiclass_symmetric_and_bounded((h, w, a, b) in label_map(10, 3)) {
        let ra = LabelMap::new(h, w, a).unwrap();
        let rb = LabelMap::new(h, w, b).unwrap();
        for wt in [ClassWeighting::Union, ClassWeighting::Frequency] {
            let ab = nhd_consistency_weighted(&ra, &rb, 4, wt).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&ab));
        }
        let ab = nhd_consistency(&ra, &rb, 4).unwrap().value;
        let ba = nhd_consistency(&rb, &ra, 4).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert_eq!(nhd_consistency(&ra, &ra, 4).unwrap().value, 1.0);
    }

    #[test]
    fn ars_matches_pair_counting((h, w, r, p) in label_map(8, 5), alpha in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0])) {
        let rm = LabelMap::new(h, w, r.clone()).unwrap();
        let pm = LabelMap::new(h, w, p.clone()).unwrap();
        match ars_consistency(&rm, &pm, alpha) {
            Ok(v) => {
                let oracle = ars_pairs(&r, &p, alpha);
                prop_assert!((v.value - oracle).abs() <= 1e-12 * oracle.max(1.0));
                prop_assert_eq!(ars_consistency(&rm, &rm, alpha).unwrap().value, 1.0);
            }
            Err(_) => prop_assert!(r.iter().all(|&v| v == 0)),
        }
    }

    #[test]
    fn ei_bounded_by_agreement(
        (h, w, a, b) in label_map(10, 1),
        seed in prop::collection::vec(0.0f64..=1.0, 200),
    ) {
        let n = h * w;
        // probabilities consistent with the labels
        let prob = |labels: &[u32], off: usize| -> Vec<f64> {
            labels.iter().enumerate().map(|(i, &l)| {
                let c = 0.5 + 0.5 * seed[(i + off) % seed.len()];
                if l == 1 { c } else { 1.0 - c }
            }).collect()
        };
        let pa = ProbMap::binary(h, w, prob(&a, 0)).unwrap();
        let pb = ProbMap::binary(h, w, prob(&b, 7)).unwrap();
        let la = LabelMap::new(h, w, a.clone()).unwrap();
        let lb = LabelMap::new(h, w, b.clone()).unwrap();
        let v = ei_consistency((&pa, &la), (&pb, &lb)).unwrap().value;
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / n as f64;
        prop_assert!(v >= 0.0 && v <= agree + 1e-12);
        let sure = |l: &[u32]| ProbMap::binary(h, w, l.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let exact = ei_consistency((&sure(&a), &la), (&sure(&b), &lb)).unwrap().value;
        prop_assert!((exact - agree).abs() <= 1e-12);
    }

    #[test]
    fn median_survives_minority_outliers(
        values in prop::collection::vec(0.0f64..1.0, 3..40),
        junk in prop::collection::vec(prop::sample::select(vec![-1e9, 1e9]), 0..40),
    ) {
        let n = values.len();
        let k = junk.len().min((n - 1) / 2);
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let mut corrupted = values.clone();
        corrupted[..k].copy_from_slice(&junk[..k]);
        let m = median(&corrupted).unwrap();
        prop_assert!(m >= lo && m <= hi);
        let mut rev = corrupted.clone();
        rev.reverse();
        prop_assert_eq!(median(&rev), median(&corrupted));
    }

    #[test]
    fn ranking_invariant_under_monotone_maps(xs in distinct(6)) {
        let scores: Vec<(String, f64)> = xs.iter().enumerate().map(|(i, &v)| (format!("m{i}"), v)).collect();
        let mapped: Vec<(String, f64)> = scores.iter().map(|(k, v)| (k.clone(), (v / 500.0).exp() * 3.0 + 1.0)).collect();
        let (a, b) = (rank_scores(&scores).unwrap(), rank_scores(&mapped).unwrap());
        prop_assert_eq!(a.order(), b.order());
    }

    #[test]
    fn correlation_symmetries(x in distinct(7), y in distinct(7)) {
        let t = tau_b(&x, &y).unwrap();
        prop_assert!((t - tau_b(&y, &x).unwrap()).abs() <= 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((t + tau_b(&x, &neg).unwrap()).abs() <= 1e-12);
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 5.0).collect();
        prop_assert!((t - tau_b(&cubed, &y).unwrap()).abs() <= 1e-12);
        let r = spearman_coefficient(&x, &y).unwrap();
        prop_assert!((r - spearman_coefficient(&cubed, &y).unwrap()).abs() <= 1e-12);
        prop_assert!((r + spearman_coefficient(&x, &neg).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&t) && (-1.0..=1.0).contains(&r));
    }

    #[test]
    fn exact_p_values_match_enumeration(n in 3usize..=6, x in shuffled(6), y in shuffled(6)) {
        let x = &x[..n].to_vec();
        let y = &y[..n].to_vec();
        for (which, coef) in [("tau", tau_b as fn(&[f64], &[f64]) -> _), ("rho", spearman_coefficient)] {
            let obs = coef(x, y).unwrap();
            let perms = permutations(n);
            let hits = perms.iter().filter(|p| {
                let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
                coef(x, &yp).unwrap().abs() >= obs.abs() - 1e-12
            }).count();
            let expected = hits as f64 / perms.len() as f64;
            let got = if which == "tau" { kendall_tau(x, y).unwrap() } else { spearman_rho(x, y).unwrap() };
            let exact = matches!(got.method, PValueMethod::Exact { .. });
            prop_assert!(exact);
            prop_assert!((got.p_value - expected).abs() <= 1e-12, "{} {} vs {}", which, got.p_value, expected);
        }
    }
}

#[test]
fn aggregation_is_order_free() {
    let mut rows = Vec::new();
    for (m, vals) in [("a", [0.9, 0.1, 0.5]), ("b", [0.4, 0.6, 0.2])] {
        for (i, v) in vals.iter().enumerate() {
            rows.push(ScoreRow {
                model: m.into(),
                image: format!("i{i}"),
                perturbation: "g".into(),
                metric: Metric::Nhd,
                value: *v,
                n_effective: 1,
                ref_degenerate: false,
            });
        }
    }
    let forward = aggregate("d", &rows, None).unwrap();
    rows.reverse();
    let mut backward = aggregate("d", &rows, None).unwrap();
    backward.sort_by(|x, y| x.model_id.cmp(&y.model_id));
    assert_eq!(forward, backward);
    assert_eq!(rank(&forward).unwrap().order(), vec!["a", "b"]);
}

fn write_study(dir: &std::path::Path, extra: &[bool]) -> ManifestDocument {
    // extra[k]: cell k carries a second perturbed prediction
    let map = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
    let models = vec!["m1".to_string(), "m2".to_string()];
    let images = vec!["i1".to_string(), "i2".to_string()];
    let mut predictions = Vec::new();
    let mut k = 0;
    for m in &models {
        for i in &images {
            let perts: &[Option<&str>] = if extra[k] {
                &[None, Some("g"), Some("h")]
            } else {
                &[None, Some("g")]
            };
            k += 1;
            for p in perts {
                let name = format!("{m}_{i}_{}.npy", p.unwrap_or("ref"));
                write_label_map(dir.join(&name), &map).unwrap();
                predictions.push(PredictionEntry {
                    model: m.clone(),
                    image: i.clone(),
                    perturbation: p.map(str::to_string),
                    path: name.into(),
                    prob_path: None,
                });
            }
        }
    }
    ManifestDocument {
        dataset_id: "d".into(),
        task: TaskName::SemanticBinary,
        num_classes: None,
        models,
        images,
        perturbations: vec![
            PerturbationSpec::new("g", PerturbationKind::Gauss, 0.01, 0.05, 1),
            PerturbationSpec::new("h", PerturbationKind::Brightness, 0.0, 0.1, 2),
        ],
        predictions,
        performance: Some(BTreeMap::new()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn manifest_accepted_iff_complete(extra in prop::collection::vec(any::<bool>(), 4)) {
        let dir = tempfile::tempdir().unwrap();
        let doc = write_study(dir.path(), &extra);
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
        prop_assert!(load_manifest(&path).is_ok());
        for drop in 0..doc.predictions.len() {
            let mut d = doc.clone();
            let gone = d.predictions.remove(drop);
            let still_complete = gone.perturbation.is_some()
                && d.predictions.iter().any(|e| e.model == gone.model && e.image == gone.image && e.perturbation.is_some());
            std::fs::write(&path, serde_json::to_vec(&d).unwrap()).unwrap();
            prop_assert_eq!(load_manifest(&path).is_ok(), still_complete, "dropping {:?}", gone);
        }
    }
}
