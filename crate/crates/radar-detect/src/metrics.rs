//! Evaluation scores for clustering, classification and the full pipeline.
//!
//! The clustering score is a V-measure variant: homogeneity is computed over
//! all detections (background counts as one class, noise as one cluster) but
//! completeness only over detections of labeled objects, so splitting the
//! background into many clusters costs nothing while splitting an object
//! does. Classification uses macro-averaged F1. Pipeline quality combines a
//! point-level F1 with instance-level detection scores based on
//! detection-point IoU inside 150 ms evaluation windows.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, NOISE};
use crate::data::{ClassLabel, Sequence};
use crate::error::{Error, Result};

/// Evaluation window length for instance matching, seconds.
pub const EVAL_WINDOW: f64 = 0.15;

fn entropy(counts: impl IntoIterator<Item = usize>, total: f64) -> f64 {
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * p.ln();
        }
    }
    h
}

/// Harmonic mean of the two V-measure parts (0 when both are 0).
pub fn harmonic(h: f64, c: f64) -> f64 {
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}

/// Clustering quality against ground-truth object instances.
///
/// Returns `(homogeneity, completeness, v1)`. Homogeneity uses every
/// detection: ground-truth classes are the labeled instances plus one
/// background class, predicted clusters are the assignment's clusters plus
/// one noise cluster. Completeness is restricted to detections of labeled
/// instances; with no labeled instance present it is vacuously 1.
pub fn v_measure(pred: &ClusterAssignment, seq: &Sequence) -> Result<(f64, f64, f64)> {
    if pred.len() != seq.detections.len() {
        return Err(Error::InputMismatch(format!(
            "assignment covers {} detections, sequence has {}",
            pred.len(),
            seq.detections.len()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Ok((1.0, 1.0, 1.0));
    }
    // contingency over (class, cluster); background instance id: None.
    // Ordered maps keep the entropy sums in a fixed order, so equal inputs
    // give bit-equal scores run to run.
    let mut joint: BTreeMap<(Option<u32>, i64), usize> = BTreeMap::new();
    let mut by_class: BTreeMap<Option<u32>, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<i64, usize> = BTreeMap::new();
    for (d, &k) in seq.detections.iter().zip(&pred.labels) {
        let c = d.gt_instance;
        *joint.entry((c, k)).or_insert(0) += 1;
        *by_class.entry(c).or_insert(0) += 1;
        *by_cluster.entry(k).or_insert(0) += 1;
    }
    let total = n as f64;
    let h_c = entropy(by_class.values().copied(), total);
    // H(C|K) = sum over clusters of p(k) * H(C inside k)
    let mut h_c_given_k = 0.0;
    for (&k, &nk) in &by_cluster {
        let inside: Vec<usize> = by_class
            .keys()
            .filter_map(|&c| joint.get(&(c, k)).copied())
            .collect();
        h_c_given_k += nk as f64 / total * entropy(inside, nk as f64);
    }
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };

    // completeness on the labeled subset only
    let labeled: Vec<(u32, i64)> = seq
        .detections
        .iter()
        .zip(&pred.labels)
        .filter_map(|(d, &k)| d.gt_instance.map(|c| (c, k)))
        .collect();
    let completeness = if labeled.is_empty() {
        1.0
    } else {
        let sub_total = labeled.len() as f64;
        let mut sub_joint: BTreeMap<(u32, i64), usize> = BTreeMap::new();
        let mut sub_class: BTreeMap<u32, usize> = BTreeMap::new();
        let mut sub_cluster: BTreeMap<i64, usize> = BTreeMap::new();
        for &(c, k) in &labeled {
            *sub_joint.entry((c, k)).or_insert(0) += 1;
            *sub_class.entry(c).or_insert(0) += 1;
            *sub_cluster.entry(k).or_insert(0) += 1;
        }
        let h_k = entropy(sub_cluster.values().copied(), sub_total);
        let mut h_k_given_c = 0.0;
        for (&c, &nc) in &sub_class {
            let inside: Vec<usize> = sub_cluster
                .keys()
                .filter_map(|&k| sub_joint.get(&(c, k)).copied())
                .collect();
            h_k_given_c += nc as f64 / sub_total * entropy(inside, nc as f64);
        }
        if h_k == 0.0 {
            1.0
        } else {
            1.0 - h_k_given_c / h_k
        }
    };
    Ok((homogeneity, completeness, harmonic(homogeneity, completeness)))
}

/// Per-class one-vs-rest F1 from a confusion matrix (rows = ground truth,
/// columns = prediction) and their unweighted mean. Zero-denominator
/// precision/recall are 0; a class with zero support and zero predictions
/// gets F1 0.
pub fn macro_f1(confusion: &[Vec<u64>]) -> Result<(Vec<f64>, f64)> {
    let k = confusion.len();
    if k < 2 {
        return Err(Error::InputMismatch("confusion matrix needs K >= 2".into()));
    }
    if confusion.iter().any(|row| row.len() != k) {
        return Err(Error::InputMismatch("confusion matrix must be square".into()));
    }
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let row: f64 = confusion[c].iter().sum::<u64>() as f64;
        let col: f64 = confusion.iter().map(|r| r[c]).sum::<u64>() as f64;
        let recall = if row > 0.0 { tp / row } else { 0.0 };
        let precision = if col > 0.0 { tp / col } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(f1);
    }
    let macro_value = per_class.iter().sum::<f64>() / k as f64;
    Ok((per_class, macro_value))
}

/// Point-level macro F1 over the three classes. `None` means "no prediction"
/// (filtered out / noise) and counts as predicted background; `None` ground
/// truth likewise.
pub fn point_f1(pred: &[Option<ClassLabel>], gt: &[Option<ClassLabel>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InputMismatch(format!(
            "{} predictions vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    let mut confusion = vec![vec![0u64; 3]; 3];
    for (p, g) in pred.iter().zip(gt) {
        let p = p.unwrap_or(ClassLabel::StaticGarbage).index();
        let g = g.unwrap_or(ClassLabel::StaticGarbage).index();
        confusion[g][p] += 1;
    }
    Ok(macro_f1(&confusion)?.1)
}

/// One evaluated ground-truth instance inside one evaluation window: the
/// best-overlapping predicted cluster and whether its label matched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub gt_instance: u32,
    pub window: i64,
    pub cluster: i64,
    pub iou: f64,
    pub label_match: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn tpr(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// No negatives at all counts as perfect rejection.
    pub fn tnr(&self) -> f64 {
        if self.tn + self.fp == 0 {
            1.0
        } else {
            self.tn as f64 / (self.tn + self.fp) as f64
        }
    }

    pub fn baac(&self) -> f64 {
        0.5 * (self.tpr() + self.tnr())
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Instance-level detection scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceReport {
    /// Label-strict per-VRU-class counts, indexed Pedestrian then Bicycle.
    pub strict: [BinaryCounts; 2],
    /// Mean of per-class F1 over the two VRU classes.
    pub instance_f1: f64,
    /// Binary VRU counts (either VRU label accepted).
    pub vru: BinaryCounts,
    pub tpr_vru: f64,
    pub tnr_vru: f64,
    pub baac_vru: f64,
    pub matches: Vec<InstanceMatch>,
}

impl InstanceReport {
    pub fn empty() -> InstanceReport {
        InstanceReport {
            strict: [BinaryCounts::default(); 2],
            instance_f1: 0.0,
            vru: BinaryCounts::default(),
            tpr_vru: 0.0,
            tnr_vru: 1.0,
            baac_vru: 0.5,
            matches: Vec::new(),
        }
    }

    fn finish(mut self) -> InstanceReport {
        self.instance_f1 = 0.5 * (self.strict[0].f1() + self.strict[1].f1());
        self.tpr_vru = self.vru.tpr();
        self.tnr_vru = self.vru.tnr();
        self.baac_vru = self.vru.baac();
        self
    }

    pub fn merge(reports: impl IntoIterator<Item = InstanceReport>) -> InstanceReport {
        let mut total = InstanceReport::empty();
        for r in reports {
            for c in 0..2 {
                total.strict[c].tp += r.strict[c].tp;
                total.strict[c].fp += r.strict[c].fp;
                total.strict[c].fn_ += r.strict[c].fn_;
                total.strict[c].tn += r.strict[c].tn;
            }
            total.vru.tp += r.vru.tp;
            total.vru.fp += r.vru.fp;
            total.vru.fn_ += r.vru.fn_;
            total.vru.tn += r.vru.tn;
            total.matches.extend(r.matches);
        }
        total.finish()
    }
}

/// Scores object detection per 150 ms evaluation window.
///
/// In each window, a ground-truth VRU instance is detected when one predicted
/// cluster reaches detection-point IoU >= 0.5 on the window's points (best
/// IoU wins, each cluster matches at most one instance). The strict variant
/// also requires the predicted class label to equal the instance class; the
/// binary variant accepts either VRU class. Extra clusters overlapping an
/// instance are false positives, VRU-labeled clusters on pure background are
/// false positives, background-labeled clusters away from objects are true
/// negatives. Counts are summed over windows. Clusters missing from
/// `cluster_classes` count as background-labeled.
pub fn instance_scores(
    pred: &ClusterAssignment,
    seq: &Sequence,
    cluster_classes: &HashMap<i64, ClassLabel>,
) -> Result<InstanceReport> {
    if pred.len() != seq.detections.len() {
        return Err(Error::InputMismatch(format!(
            "assignment covers {} detections, sequence has {}",
            pred.len(),
            seq.detections.len()
        )));
    }
    let mut report = InstanceReport::empty();
    if pred.is_empty() {
        return Ok(report.finish());
    }
    let t0 = seq.detections[0].t;
    // group detections into evaluation windows
    let mut windows: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, d) in seq.detections.iter().enumerate() {
        windows.entry(((d.t - t0) / EVAL_WINDOW).floor() as i64).or_default().push(i);
    }
    let class_of = |k: i64| cluster_classes.get(&k).copied().unwrap_or(ClassLabel::StaticGarbage);

    for (win, members) in windows {
        // point sets per gt VRU instance and per predicted cluster
        let mut gt_sets: BTreeMap<u32, (ClassLabel, Vec<usize>)> = BTreeMap::new();
        let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for &i in &members {
            let d = &seq.detections[i];
            if let (Some(inst), Some(class)) = (d.gt_instance, d.gt_class) {
                if class.is_vru() {
                    gt_sets.entry(inst).or_insert_with(|| (class, Vec::new())).1.push(i);
                }
            }
            if pred.labels[i] != NOISE {
                clusters.entry(pred.labels[i]).or_default().push(i);
            }
        }

        // best cluster per instance by IoU (computed on window point sets)
        let candidates: Vec<(u32, ClassLabel, Option<(i64, f64)>)> = gt_sets
            .iter()
            .map(|(&inst, (class, gt_pts))| {
                let mut best: Option<(i64, f64)> = None;
                for (&k, cl_pts) in &clusters {
                    let inter = cl_pts.iter().filter(|i| gt_pts.contains(i)).count();
                    if inter == 0 {
                        continue;
                    }
                    let union = cl_pts.len() + gt_pts.len() - inter;
                    let iou = inter as f64 / union as f64;
                    if best.map(|(_, b)| iou > b).unwrap_or(true) {
                        best = Some((k, iou));
                    }
                }
                (inst, *class, best)
            })
            .collect();

        // which clusters touch any VRU instance at all
        let mut overlapping: BTreeMap<i64, u32> = BTreeMap::new(); // cluster -> instance of largest overlap
        for (&k, cl_pts) in &clusters {
            let mut best: Option<(usize, u32)> = None;
            for (&inst, (_, gt_pts)) in &gt_sets {
                let inter = cl_pts.iter().filter(|i| gt_pts.contains(i)).count();
                if inter > 0 && best.map(|(b, _)| inter > b).unwrap_or(true) {
                    best = Some((inter, inst));
                }
            }
            if let Some((_, inst)) = best {
                overlapping.insert(k, inst);
            }
        }

        // one matching pass per variant: strict label equality vs any-VRU
        let run = |label_ok: &dyn Fn(ClassLabel, ClassLabel) -> bool| -> (Vec<(u32, ClassLabel, Option<i64>)>, std::collections::HashSet<i64>) {
            let mut used: std::collections::HashSet<i64> = Default::default();
            let mut out = Vec::new();
            for (inst, class, best) in &candidates {
                let matched = match best {
                    Some((k, iou))
                        if *iou >= 0.5 && label_ok(class_of(*k), *class) && !used.contains(k) =>
                    {
                        used.insert(*k);
                        Some(*k)
                    }
                    _ => None,
                };
                out.push((*inst, *class, matched));
            }
            (out, used)
        };

        let (strict_matches, strict_used) = run(&|pred_c, gt_c| pred_c == gt_c);
        let (vru_matches, vru_used) = run(&|pred_c, _| pred_c.is_vru());

        for (inst, class, matched) in &strict_matches {
            let c = class.index(); // 0 or 1: VRU classes only
            match matched {
                Some(_) => report.strict[c].tp += 1,
                None => report.strict[c].fn_ += 1,
            }
            let best = candidates.iter().find(|(i, _, _)| i == inst).unwrap().2;
            report.matches.push(InstanceMatch {
                gt_instance: *inst,
                window: win,
                cluster: best.map(|(k, _)| k).unwrap_or(NOISE),
                iou: best.map(|(_, iou)| iou).unwrap_or(0.0),
                label_match: best.map(|(k, _)| class_of(k) == *class).unwrap_or(false),
            });
        }
        for (_, _, matched) in &vru_matches {
            match matched {
                Some(_) => report.vru.tp += 1,
                None => report.vru.fn_ += 1,
            }
        }

        // unmatched clusters: false positives or true negatives
        for &k in clusters.keys() {
            let pred_class = class_of(k);
            if !strict_used.contains(&k) {
                match overlapping.get(&k) {
                    Some(inst) => {
                        // duplicate or mislabeled cluster on an object
                        let attributed = if pred_class.is_vru() {
                            pred_class
                        } else {
                            gt_sets[inst].0
                        };
                        report.strict[attributed.index()].fp += 1;
                    }
                    None if pred_class.is_vru() => report.strict[pred_class.index()].fp += 1,
                    None => {} // strict F1 never uses true negatives
                }
            }
            if !vru_used.contains(&k) {
                if pred_class.is_vru() {
                    report.vru.fp += 1;
                } else if overlapping.get(&k).is_none() {
                    report.vru.tn += 1;
                }
            }
        }
    }
    Ok(report.finish())
}

/// Everything the pipeline reports, in one serializable bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v1: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    pub confusion: Vec<Vec<u64>>,
    pub point_f1: f64,
    pub instance_f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub tpr_vru: f64,
    pub tnr_vru: f64,
    pub baac_vru: f64,
}

impl MetricsReport {
    pub fn new() -> MetricsReport {
        MetricsReport {
            homogeneity: 0.0,
            completeness: 0.0,
            v1: 0.0,
            macro_f1: 0.0,
            per_class_f1: BTreeMap::new(),
            confusion: vec![vec![0; 3]; 3],
            point_f1: 0.0,
            instance_f1: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            tpr_vru: 0.0,
            tnr_vru: 1.0,
            baac_vru: 0.5,
        }
    }

    pub fn set_instances(&mut self, inst: &InstanceReport) {
        self.instance_f1 = inst.instance_f1;
        self.tp = inst.vru.tp;
        self.fp = inst.vru.fp;
        self.fn_ = inst.vru.fn_;
        self.tn = inst.vru.tn;
        self.tpr_vru = inst.tpr_vru;
        self.tnr_vru = inst.tnr_vru;
        self.baac_vru = inst.baac_vru;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table with clustering, classification and combined
    /// sections.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:6.2} %", 100.0 * v);
        let mut out = String::new();
        out.push_str("=== clustering ===\n");
        out.push_str(&format!("homogeneity   {}\n", pct(self.homogeneity)));
        out.push_str(&format!("completeness  {}\n", pct(self.completeness)));
        out.push_str(&format!("V1            {}\n", pct(self.v1)));
        out.push_str("=== classification ===\n");
        out.push_str(&format!("macro F1      {}\n", pct(self.macro_f1)));
        for (class, f1) in &self.per_class_f1 {
            out.push_str(&format!("  F1[{class}]   {}\n", pct(*f1)));
        }
        out.push_str("confusion (rows gt, cols pred: ped bike static)\n");
        for row in &self.confusion {
            out.push_str(&format!(
                "  {:>6} {:>6} {:>6}\n",
                row[0],
                row.get(1).copied().unwrap_or(0),
                row.get(2).copied().unwrap_or(0)
            ));
        }
        out.push_str("=== combined pipeline ===\n");
        out.push_str(&format!("point F1      {}\n", pct(self.point_f1)));
        out.push_str(&format!("instance F1   {}\n", pct(self.instance_f1)));
        out.push_str(&format!(
            "TP {} FP {} FN {} TN {}\n",
            self.tp, self.fp, self.fn_, self.tn
        ));
        out.push_str(&format!("TPR (VRU)     {}\n", pct(self.tpr_vru)));
        out.push_str(&format!("TNR (VRU)     {}\n", pct(self.tnr_vru)));
        out.push_str(&format!("BAAC (VRU)    {}\n", pct(self.baac_vru)));
        out
    }
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Detection;

    fn labeled_seq(spec: &[(f64, Option<u32>, Option<ClassLabel>)]) -> Sequence {
        let detections: Vec<Detection> = spec
            .iter()
            .enumerate()
            .map(|(i, &(t, inst, class))| Detection {
                t,
                r: 10.0 + i as f64 * 0.1,
                phi: 0.0,
                vr: 1.0,
                amp: 10.0,
                sensor_id: 0,
                gt_instance: inst,
                gt_class: class,
            })
            .collect();
        Sequence {
            id: "m".into(),
            duration: detections.last().map(|d| d.t).unwrap_or(0.0),
            detections,
            sensor_profile_id: "A".into(),
        }
    }

    fn assign(labels: Vec<i64>) -> ClusterAssignment {
        ClusterAssignment {
            windows: vec![0; labels.len()],
            n_clusters: labels.iter().filter(|&&l| l > 0).map(|&l| l).max().unwrap_or(0) as usize,
            labels,
        }
    }

    const P: Option<ClassLabel> = Some(ClassLabel::Pedestrian);
    const B: Option<ClassLabel> = Some(ClassLabel::Bicycle);

    #[test]
    fn v_measure_perfect_clustering() {
        let seq = labeled_seq(&[
            (0.0, Some(1), P),
            (0.0, Some(1), P),
            (0.0, Some(2), B),
            (0.0, Some(2), B),
            (0.0, None, None),
        ]);
        let pred = assign(vec![1, 1, 2, 2, NOISE]);
        let (h, c, v1) = v_measure(&pred, &seq).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);
        assert!((v1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn v_measure_split_object_costs_completeness() {
        // object 1 (4 pts) intact, object 2 (6 pts) split 3/3, 4 background noise
        let mut spec = vec![(0.0, Some(1), P); 4];
        spec.extend(vec![(0.0, Some(2), B); 6]);
        spec.extend(vec![(0.0, None, None); 4]);
        let seq = labeled_seq(&spec);
        let mut labels = vec![1i64; 4];
        labels.extend([2, 2, 2, 3, 3, 3]);
        labels.extend([NOISE; 4]);
        let (h, c, v1) = v_measure(&assign(labels), &seq).unwrap();
        assert!((h - 1.0).abs() < 1e-12, "clusters are pure: h = {h}");
        // subset: classes 4/6, clusters 4/3/3
        let hk = entropy([4usize, 3, 3], 10.0);
        let hk_given_c = 0.6 * entropy([3usize, 3], 6.0);
        let want_c = 1.0 - hk_given_c / hk;
        assert!((c - want_c).abs() < 1e-12);
        assert!(c < 1.0 && v1 < 1.0);
        assert!((v1 - harmonic(h, c)).abs() < 1e-15);
    }

    #[test]
    fn v_measure_ignores_background_fragmentation() {
        // objects perfect, background split into 3 pure clusters
        let mut spec = vec![(0.0, Some(1), P); 3];
        spec.extend(vec![(0.0, None, None); 6]);
        let seq = labeled_seq(&spec);
        let mut labels = vec![1i64; 3];
        labels.extend([2, 2, 3, 3, 4, 4]);
        let (h, c, v1) = v_measure(&assign(labels), &seq).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);
        assert!((v1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn v_measure_no_labeled_objects_is_vacuously_complete() {
        let seq = labeled_seq(&[(0.0, None, None), (0.0, None, None)]);
        let (_, c, _) = v_measure(&assign(vec![1, 2]), &seq).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn v_measure_mixed_cluster_costs_homogeneity() {
        // one cluster mixing an object with background
        let seq = labeled_seq(&[(0.0, Some(1), P), (0.0, Some(1), P), (0.0, None, None)]);
        let (h, c, v1) = v_measure(&assign(vec![1, 1, 1]), &seq).unwrap();
        assert!(h < 1.0);
        assert!((c - 1.0).abs() < 1e-12);
        assert!(v1 < 1.0);
    }

    #[test]
    fn harmonic_mean_arithmetic() {
        assert!((harmonic(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(harmonic(0.0, 0.0), 0.0);
        assert_eq!(harmonic(1.0, 1.0), 1.0);
    }

    #[test]
    fn macro_f1_perfect_diagonal() {
        let m = vec![vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 2]];
        let (per, avg) = macro_f1(&m).unwrap();
        assert_eq!(per, vec![1.0, 1.0, 1.0]);
        assert_eq!(avg, 1.0);
    }

    #[test]
    fn macro_f1_mixed_classes() {
        // per-class F1 = 1.0, 0.5, 0.0
        let m = vec![vec![5, 0, 0], vec![0, 1, 1], vec![0, 1, 0]];
        let (per, avg) = macro_f1(&m).unwrap();
        assert!((per[0] - 1.0).abs() < 1e-12);
        assert!((per[1] - 0.5).abs() < 1e-12);
        assert_eq!(per[2], 0.0);
        assert!((avg - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_two_class_hand_values() {
        let m = vec![vec![8, 2], vec![3, 7]];
        let (per, avg) = macro_f1(&m).unwrap();
        assert!((per[0] - 0.7619).abs() < 1e-4);
        assert!((per[1] - 0.7368).abs() < 1e-4);
        assert!((avg - 0.7494).abs() < 1e-4);
        // orientation guard: rows are ground truth, so class-0 recall is
        // 8/10 while precision is 8/11; a transposed (swapped) matrix must
        // swap them
        let tp = 8.0f64;
        let recall = tp / 10.0;
        let precision = tp / 11.0;
        assert!((recall - precision).abs() > 1e-3);
        let t = vec![vec![8, 3], vec![2, 7]];
        let col0: u64 = t.iter().map(|r| r[0]).sum();
        assert_eq!(tp / col0 as f64, recall);
    }

    #[test]
    fn macro_f1_zero_support_and_empty() {
        let m = vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 0]];
        let (per, avg) = macro_f1(&m).unwrap();
        assert_eq!(per[2], 0.0);
        assert!((avg - 2.0 / 3.0).abs() < 1e-12);
        assert!(macro_f1(&[vec![1u64]]).is_err());
        assert!(macro_f1(&[vec![1u64, 2], vec![1]]).is_err());
    }

    #[test]
    fn point_f1_examples() {
        let gt = vec![P, B, Some(ClassLabel::StaticGarbage)];
        assert!((point_f1(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
        // everything predicted background on balanced 3-class gt
        let pred = vec![None, None, None];
        let got = point_f1(&pred, &gt).unwrap();
        assert!((got - 0.5 / 3.0).abs() < 1e-9, "{got}");
        // joint permutation leaves the score unchanged
        let pred = vec![P, B, None, P, B];
        let gt = vec![P, P, None, B, B];
        let a = point_f1(&pred, &gt).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let pred_p: Vec<_> = perm.iter().map(|&i| pred[i]).collect();
        let gt_p: Vec<_> = perm.iter().map(|&i| gt[i]).collect();
        assert_eq!(a, point_f1(&pred_p, &gt_p).unwrap());
        assert!(point_f1(&pred, &gt[..3]).is_err());
    }

    fn vru_scene(
        spec: &[(f64, Option<u32>, Option<ClassLabel>, i64)],
        classes: &[(i64, ClassLabel)],
    ) -> (ClusterAssignment, Sequence, HashMap<i64, ClassLabel>) {
        let seq = labeled_seq(
            &spec
                .iter()
                .map(|&(t, i, c, _)| (t, i, c))
                .collect::<Vec<_>>(),
        );
        let labels: Vec<i64> = spec.iter().map(|&(_, _, _, l)| l).collect();
        (assign(labels), seq, classes.iter().copied().collect())
    }

    #[test]
    fn instance_iou_boundary_is_inclusive() {
        // cluster covers points {1,2,3}, instance covers {2,3,4}: IoU 2/4
        let (pred, seq, classes) = vru_scene(
            &[
                (0.0, None, None, 1),
                (0.0, Some(7), P, 1),
                (0.0, Some(7), P, 1),
                (0.0, Some(7), P, NOISE),
            ],
            &[(1, ClassLabel::Pedestrian)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        assert_eq!(r.strict[0].tp, 1);
        assert_eq!(r.vru.tp, 1);
        assert_eq!(r.matches.len(), 1);
        assert!((r.matches[0].iou - 0.5).abs() < 1e-12);
    }

    #[test]
    fn instance_f1_formula_on_counts() {
        // one matched ped, one missed ped, one spurious ped cluster
        let (pred, seq, classes) = vru_scene(
            &[
                (0.0, Some(1), P, 1),
                (0.0, Some(1), P, 1),
                (0.0, Some(2), P, NOISE),
                (0.0, Some(2), P, NOISE),
                (0.0, None, None, 2),
                (0.0, None, None, 2),
            ],
            &[(1, ClassLabel::Pedestrian), (2, ClassLabel::Pedestrian)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        assert_eq!((r.strict[0].tp, r.strict[0].fp, r.strict[0].fn_), (1, 1, 1));
        assert!((r.strict[0].f1() - 0.5).abs() < 1e-12);
        assert!((r.instance_f1 - 0.25).abs() < 1e-12); // bicycle contributes 0
    }

    #[test]
    fn missed_everything_with_clean_rejection_gives_baac_half() {
        // gt ped never clustered; one background cluster elsewhere
        let (pred, seq, classes) = vru_scene(
            &[
                (0.0, Some(1), P, NOISE),
                (0.0, Some(1), P, NOISE),
                (0.0, None, None, 1),
                (0.0, None, None, 1),
            ],
            &[(1, ClassLabel::StaticGarbage)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        assert_eq!((r.vru.tp, r.vru.fp, r.vru.fn_, r.vru.tn), (0, 0, 1, 1));
        assert_eq!(r.tpr_vru, 0.0);
        assert_eq!(r.tnr_vru, 1.0);
        assert!((r.baac_vru - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mislabeled_instance_strict_fn_fp_but_binary_tp() {
        // bicycle perfectly segmented but classified pedestrian
        let (pred, seq, classes) = vru_scene(
            &[
                (0.0, Some(1), B, 1),
                (0.0, Some(1), B, 1),
                (0.0, Some(1), B, 1),
            ],
            &[(1, ClassLabel::Pedestrian)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        // strict: bicycle FN, pedestrian FP
        assert_eq!(r.strict[ClassLabel::Bicycle.index()].fn_, 1);
        assert_eq!(r.strict[ClassLabel::Pedestrian.index()].fp, 1);
        assert_eq!(r.strict[0].tp + r.strict[1].tp, 0);
        // binary accepts the VRU label
        assert_eq!((r.vru.tp, r.vru.fp, r.vru.fn_), (1, 0, 0));
    }

    #[test]
    fn duplicate_cluster_on_object_is_fp() {
        // two clusters on one ped: larger matches, smaller is an FP
        let (pred, seq, classes) = vru_scene(
            &[
                (0.0, Some(1), P, 1),
                (0.0, Some(1), P, 1),
                (0.0, Some(1), P, 1),
                (0.0, Some(1), P, 2),
            ],
            &[(1, ClassLabel::Pedestrian), (2, ClassLabel::Pedestrian)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        assert_eq!((r.strict[0].tp, r.strict[0].fp), (1, 1));
        assert_eq!((r.vru.tp, r.vru.fp), (1, 1));
    }

    #[test]
    fn windows_are_scored_independently() {
        // same instance over two 150 ms windows: detected in the first,
        // missed in the second
        let (pred, seq, classes) = vru_scene(
            &[
                (0.00, Some(1), P, 1),
                (0.01, Some(1), P, 1),
                (0.16, Some(1), P, NOISE),
                (0.17, Some(1), P, NOISE),
            ],
            &[(1, ClassLabel::Pedestrian)],
        );
        let r = instance_scores(&pred, &seq, &classes).unwrap();
        assert_eq!((r.vru.tp, r.vru.fn_), (1, 1));
        assert!((r.tpr_vru - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binary_tp_never_below_strict_tp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..30);
            let spec: Vec<(f64, Option<u32>, Option<ClassLabel>, i64)> = (0..n)
                .map(|_| {
                    let t = rng.gen_range(0..3) as f64 * 0.15;
                    let inst = match rng.gen_range(0..3) {
                        0 => None,
                        i => Some(i as u32),
                    };
                    let class = inst.map(|i| if i == 1 { ClassLabel::Pedestrian } else { ClassLabel::Bicycle });
                    let label = match rng.gen_range(0..4) {
                        0 => NOISE,
                        l => l as i64,
                    };
                    (t, inst, class, label)
                })
                .collect();
            let classes: Vec<(i64, ClassLabel)> = (1..4)
                .map(|k| {
                    (
                        k as i64,
                        ClassLabel::from_index(rng.gen_range(0..3)).unwrap(),
                    )
                })
                .collect();
            let (pred, seq, classes) = vru_scene(&spec, &classes);
            let r = instance_scores(&pred, &seq, &classes).unwrap();
            assert!(r.vru.tp >= r.strict[0].tp + r.strict[1].tp);
        }
    }

    #[test]
    fn report_serializes_and_renders() {
        let mut rep = MetricsReport::new();
        rep.v1 = 0.84;
        rep.macro_f1 = 0.9;
        rep.per_class_f1.insert("ped".into(), 0.95);
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"fn\""));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.v1, rep.v1);
        let table = rep.render_table();
        assert!(table.contains("V1"));
        assert!(table.contains("BAAC"));
        assert!(table.contains("84.00"));
    }
}
