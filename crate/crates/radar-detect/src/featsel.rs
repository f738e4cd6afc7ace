//! Feature ranking and single-pass guided backward elimination.
//!
//! Two rankers vote on an evaluation order: greedy joint-mutual-information
//! selection on equal-frequency-binned data, and a Relief-style neighborhood
//! weighter with a per-instance adaptive radius. The combined order then
//! drives a backward elimination that assesses every feature exactly once,
//! worst-ranked first, keeping a removal only when the validation score does
//! not drop by more than a tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureCatalog;

/// Default bin count for all mutual-information estimates.
pub const MI_BINS: usize = 10;

/// Default elimination tolerance (macro-F1 points).
pub const ELIMINATION_TOL: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Best-first evaluation order (permutation of catalog indices).
    pub order: Vec<usize>,
    /// Greedy objective value at the step each feature was selected.
    pub jmi_scores: Vec<f64>,
    pub multisurf_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub classifier_tag: String,
    /// Surviving catalog indices, ascending.
    pub kept: Vec<usize>,
    /// Score trajectory: baseline, then the running best after each
    /// committed removal.
    pub scores: Vec<f64>,
}

fn check_matrix(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::InputMismatch("empty feature matrix".into()));
    }
    let f = x[0].len();
    if f == 0 {
        return Err(Error::InputMismatch("zero features".into()));
    }
    if x.iter().any(|row| row.len() != f) {
        return Err(Error::InputMismatch("ragged feature matrix".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InputMismatch(format!(
            "{} samples vs {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field: "feature matrix" });
    }
    Ok(f)
}

/// Equal-frequency discretization: thresholds at the k·n/bins-th order
/// statistics; a value's bin is the number of thresholds strictly below it.
fn discretize(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..bins)
        .map(|k| sorted[(k * n).div_ceil(bins) - 1])
        .collect();
    column
        .iter()
        .map(|&v| thresholds.iter().filter(|&&t| t < v).count())
        .collect()
}

fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    // BTreeMaps fix the summation order, keeping scores bit-equal across
    // runs.
    use std::collections::BTreeMap;
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&i, &j) in a.iter().zip(b) {
        *joint.entry((i, j)).or_insert(0.0) += 1.0;
        *pa.entry(i).or_insert(0.0) += 1.0;
        *pb.entry(j).or_insert(0.0) += 1.0;
    }
    let mut mi = 0.0;
    for (&(i, j), &nij) in &joint {
        let pij = nij / n;
        mi += pij * (pij / (pa[&i] / n * pb[&j] / n)).ln();
    }
    mi.max(0.0)
}

/// Greedy joint-mutual-information ranking. Returns `(feature, score)` in
/// selection order: the first feature maximizes I(X;Y), every later pick
/// maximizes the summed pairwise joint information with the already-selected
/// set. Ties go to the lower catalog index.
pub fn jmi_rank(x: &[Vec<f64>], y: &[usize], bins: usize) -> Result<Vec<(usize, f64)>> {
    let f = check_matrix(x, y)?;
    if bins < 2 {
        return Err(Error::InvalidConfig("bins must be >= 2".into()));
    }
    {
        let mut classes: Vec<usize> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InputMismatch("need at least 2 classes".into()));
        }
    }
    let n = x.len();
    let columns: Vec<Vec<usize>> = (0..f)
        .map(|j| {
            let col: Vec<f64> = x.iter().map(|row| row[j]).collect();
            discretize(&col, bins)
        })
        .collect();

    let single: Vec<f64> = columns.iter().map(|c| mutual_information(c, y)).collect();
    let mut remaining: Vec<usize> = (0..f).collect();
    let mut selected: Vec<(usize, f64)> = Vec::with_capacity(f);

    let first = *remaining
        .iter()
        .max_by(|&&a, &&b| single[a].partial_cmp(&single[b]).unwrap().then(b.cmp(&a)))
        .unwrap();
    remaining.retain(|&k| k != first);
    selected.push((first, single[first]));

    // joint (pair, label) MI, memoized across greedy steps
    let mut pair_cache: std::collections::HashMap<(usize, usize), f64> = Default::default();
    let pair_mi = |a: usize, b: usize, cache: &mut std::collections::HashMap<(usize, usize), f64>| {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = cache.get(&key) {
            return v;
        }
        let merged: Vec<usize> = (0..n)
            .map(|i| columns[key.0][i] * bins + columns[key.1][i])
            .collect();
        let v = mutual_information(&merged, y);
        cache.insert(key, v);
        v
    };

    while !remaining.is_empty() {
        let mut best = (remaining[0], f64::NEG_INFINITY);
        for &k in &remaining {
            let obj: f64 = selected.iter().map(|&(j, _)| pair_mi(k, j, &mut pair_cache)).sum();
            if obj > best.1 {
                best = (k, obj);
            }
        }
        remaining.retain(|&k| k != best.0);
        selected.push(best);
    }
    Ok(selected)
}

/// Relief-style feature weights with a per-instance neighborhood radius.
///
/// Features are min-max normalized; distances are Manhattan. For each
/// instance, neighbors are the others closer than (mean distance − half its
/// standard deviation); per-feature differences to same-class neighbors
/// lower the weight, differences to other-class neighbors raise it, both
/// averaged per instance and over instances.
pub fn multisurf_rank(x: &[Vec<f64>], y: &[usize]) -> Result<Vec<f64>> {
    let f = check_matrix(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(Error::InputMismatch("need at least 3 samples".into()));
    }
    {
        let mut counts: std::collections::HashMap<usize, usize> = Default::default();
        for &c in y {
            *counts.entry(c).or_insert(0) += 1;
        }
        if counts.values().any(|&c| c < 2) {
            return Err(Error::InputMismatch("every present class needs >= 2 samples".into()));
        }
    }
    // min-max normalize; constant features collapse to 0
    let mut norm = vec![vec![0.0f64; f]; n];
    for j in 0..f {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in x {
            lo = lo.min(row[j]);
            hi = hi.max(row[j]);
        }
        if hi > lo {
            for (out, row) in norm.iter_mut().zip(x) {
                out[j] = (row[j] - lo) / (hi - lo);
            }
        }
    }
    let dist = |a: usize, b: usize| -> f64 {
        norm[a].iter().zip(&norm[b]).map(|(p, q)| (p - q).abs()).sum()
    };
    let mut weights = vec![0.0f64; f];
    let mut hit_diff = vec![0.0f64; f];
    let mut miss_diff = vec![0.0f64; f];
    for i in 0..n {
        let dists: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(i, j)).collect();
        let t = dists.iter().sum::<f64>() / dists.len() as f64;
        let var = dists.iter().map(|d| (d - t).powi(2)).sum::<f64>() / dists.len() as f64;
        let radius = t - var.sqrt() / 2.0;
        let (mut hits, mut misses) = (0usize, 0usize);
        hit_diff.fill(0.0);
        miss_diff.fill(0.0);
        let mut di = 0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dists[di];
            di += 1;
            if d >= radius {
                continue;
            }
            let same = y[j] == y[i];
            for k in 0..f {
                let delta = (norm[i][k] - norm[j][k]).abs();
                if same {
                    hit_diff[k] += delta;
                } else {
                    miss_diff[k] += delta;
                }
            }
            if same {
                hits += 1;
            } else {
                misses += 1;
            }
        }
        for k in 0..f {
            let h = if hits > 0 { hit_diff[k] / hits as f64 } else { 0.0 };
            let m = if misses > 0 { miss_diff[k] / misses as f64 } else { 0.0 };
            weights[k] += m - h;
        }
    }
    for w in weights.iter_mut() {
        *w /= n as f64;
    }
    Ok(weights)
}

/// Merges the two rankings by mean rank position (ascending combined rank,
/// ties broken by the JMI position).
pub fn combine_rankings(jmi: &[(usize, f64)], multisurf_weights: &[f64]) -> Result<FeatureRanking> {
    let f = jmi.len();
    if f != multisurf_weights.len() {
        return Err(Error::InputMismatch(format!(
            "jmi ranks {f} features, multisurf {}",
            multisurf_weights.len()
        )));
    }
    let mut jmi_pos = vec![usize::MAX; f];
    for (pos, &(feat, _)) in jmi.iter().enumerate() {
        if feat >= f || jmi_pos[feat] != usize::MAX {
            return Err(Error::InputMismatch("jmi order is not a permutation".into()));
        }
        jmi_pos[feat] = pos;
    }
    let mut ms_order: Vec<usize> = (0..f).collect();
    ms_order.sort_by(|&a, &b| {
        multisurf_weights[b]
            .partial_cmp(&multisurf_weights[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut ms_pos = vec![0usize; f];
    for (pos, &feat) in ms_order.iter().enumerate() {
        ms_pos[feat] = pos;
    }
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        let ca = (jmi_pos[a] + ms_pos[a]) as f64 / 2.0;
        let cb = (jmi_pos[b] + ms_pos[b]) as f64 / 2.0;
        ca.partial_cmp(&cb).unwrap().then(jmi_pos[a].cmp(&jmi_pos[b]))
    });
    let mut jmi_scores = vec![0.0; f];
    for &(feat, score) in jmi {
        jmi_scores[feat] = score;
    }
    Ok(FeatureRanking {
        order,
        jmi_scores,
        multisurf_weights: multisurf_weights.to_vec(),
    })
}

/// Convenience: run both rankers and combine.
pub fn rank_features(x: &[Vec<f64>], y: &[usize], bins: usize) -> Result<FeatureRanking> {
    let jmi = jmi_rank(x, y, bins)?;
    let ms = multisurf_rank(x, y)?;
    combine_rankings(&jmi, &ms)
}

/// Single-pass backward elimination along the ranking, worst feature first.
///
/// `train_score` trains on the given (ascending) feature indices and returns
/// a validation score in [0,1]; it is called once for the full set and once
/// per assessed feature. A removal is committed when the score stays within
/// `tol` of the best seen. The last surviving feature is never removed.
pub fn guided_backward_eliminate(
    ranking: &FeatureRanking,
    tag: impl Into<String>,
    mut train_score: impl FnMut(&[usize]) -> Result<f64>,
    tol: f64,
) -> Result<FeatureSubset> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::InvalidConfig("tol must be finite and >= 0".into()));
    }
    let f = ranking.order.len();
    if f == 0 {
        return Err(Error::InputMismatch("empty ranking".into()));
    }
    let checked = |score: f64, feature: Option<usize>| -> Result<f64> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::TrainingFailed {
                feature,
                msg: format!("score {score} outside [0,1]"),
            });
        }
        Ok(score)
    };
    let mut kept: Vec<usize> = (0..f).collect();
    let mut best = checked(
        train_score(&kept).map_err(|e| Error::TrainingFailed {
            feature: None,
            msg: e.to_string(),
        })?,
        None,
    )?;
    let mut scores = vec![best];
    for &feat in ranking.order.iter().rev() {
        if kept.len() == 1 {
            break;
        }
        let tentative: Vec<usize> = kept.iter().copied().filter(|&k| k != feat).collect();
        let score = checked(
            train_score(&tentative).map_err(|e| Error::TrainingFailed {
                feature: Some(feat),
                msg: e.to_string(),
            })?,
            Some(feat),
        )?;
        if score >= best - tol {
            kept = tentative;
            best = best.max(score);
            scores.push(best);
        }
    }
    Ok(FeatureSubset {
        classifier_tag: tag.into(),
        kept,
        scores,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SubsetFile {
    catalog_version: String,
    subsets: Vec<FeatureSubset>,
}

pub fn save_subsets(
    path: impl AsRef<std::path::Path>,
    catalog: &FeatureCatalog,
    subsets: &[FeatureSubset],
) -> Result<()> {
    let path = path.as_ref();
    let file = SubsetFile {
        catalog_version: catalog.version.clone(),
        subsets: subsets.to_vec(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_subsets(
    path: impl AsRef<std::path::Path>,
    catalog: &FeatureCatalog,
) -> Result<Vec<FeatureSubset>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SubsetFile = serde_json::from_str(&raw)?;
    if file.catalog_version != catalog.version {
        return Err(Error::CatalogMismatch(format!(
            "subsets were built for catalog {}, current is {}",
            file.catalog_version, catalog.version
        )));
    }
    for s in &file.subsets {
        if s.kept.is_empty() || s.kept.iter().any(|&k| k >= catalog.len()) {
            return Err(Error::CatalogMismatch(format!(
                "subset {} references features outside the catalog",
                s.classifier_tag
            )));
        }
    }
    Ok(file.subsets)
}
