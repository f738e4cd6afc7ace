//! End-to-end orchestration: per-stage ceiling analysis plus the combined
//! detector score.
//!
//! Three entry points mirror the three evaluation angles: clustering quality
//! with no classifier involved, classification quality on ground-truth
//! cluster samples, and the full prefilter -> cluster -> sample -> extract ->
//! decide chain scored against ground truth.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    chunk_history, train_ensemble, EnsembleModel, SequenceExample, TrainConfig, MAX_FRAMES,
};
use crate::clustering::{
    cluster_stream, cluster_stream_unfiltered, ClusterAssignment, ClusterConfig, FilterConfig,
};
use crate::data::{ClassLabel, Sequence};
use crate::error::{Error, Result};
use crate::features::{extract, sample_clusters, FeatureCatalog, FeatureVector};
use crate::featsel::FeatureSubset;
use crate::metrics::{instance_scores, macro_f1, point_f1, v_measure, InstanceReport, MetricsReport};

/// Clustering quality of one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterScore {
    pub sequence_id: String,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v1: f64,
}

/// Runs prefilter + stream clustering on every sequence and scores the
/// result against ground-truth instances.
pub fn cluster_scores(
    dataset: &[Sequence],
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
) -> Result<Vec<ClusterScore>> {
    dataset
        .iter()
        .map(|seq| {
            let assign = cluster_stream(seq, fcfg, ccfg)?;
            let (homogeneity, completeness, v1) = v_measure(&assign, seq)?;
            Ok(ClusterScore {
                sequence_id: seq.id.clone(),
                homogeneity,
                completeness,
                v1,
            })
        })
        .collect()
}

/// Clustering ceiling: cluster real detections, score against ground truth,
/// no classifier involved. Reported values are unweighted means over the
/// sequences.
pub fn run_ceiling_clustering(
    dataset: &[Sequence],
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
) -> Result<MetricsReport> {
    let scores = cluster_scores(dataset, fcfg, ccfg)?;
    if scores.is_empty() {
        return Err(Error::InputMismatch("empty dataset".into()));
    }
    let n = scores.len() as f64;
    let mut report = MetricsReport::new();
    report.homogeneity = scores.iter().map(|s| s.homogeneity).sum::<f64>() / n;
    report.completeness = scores.iter().map(|s| s.completeness).sum::<f64>() / n;
    report.v1 = scores.iter().map(|s| s.v1).sum::<f64>() / n;
    Ok(report)
}

/// One cluster's chronological feature frames plus its member class counts.
struct Track {
    cluster: i64,
    frames: Vec<FeatureVector>,
    counts: [u64; 3],
}

impl Track {
    /// Majority class of the member detections; background wins ties.
    fn label(&self) -> ClassLabel {
        let best = *self.counts.iter().max().unwrap();
        if self.counts[ClassLabel::StaticGarbage.index()] == best {
            return ClassLabel::StaticGarbage;
        }
        ClassLabel::ALL
            .into_iter()
            .find(|c| self.counts[c.index()] == best)
            .unwrap()
    }
}

fn cluster_tracks(
    assign: &ClusterAssignment,
    seq: &Sequence,
    catalog: &FeatureCatalog,
) -> Result<Vec<Track>> {
    let samples = sample_clusters(assign, seq)?;
    let mut tracks: Vec<Track> = Vec::new();
    for sample in &samples {
        let frame = extract(sample, catalog);
        let mut counts = [0u64; 3];
        for d in &sample.detections {
            counts[d.gt_class.unwrap_or(ClassLabel::StaticGarbage).index()] += 1;
        }
        match tracks.last_mut() {
            Some(t) if t.cluster == sample.source_cluster => {
                t.frames.push(frame);
                for c in 0..3 {
                    t.counts[c] += counts[c];
                }
            }
            _ => tracks.push(Track {
                cluster: sample.source_cluster,
                frames: vec![frame],
                counts,
            }),
        }
    }
    Ok(tracks)
}

/// Classifier examples for a labeled dataset.
///
/// Every ground-truth instance contributes its 150 ms feature frames, split
/// into history chunks. The background class comes from stripping all
/// ground-truth points and clustering the remainder with the same clustering
/// config (no prefilter), so background examples look like what the cluster
/// stage would hand the classifier.
/// The sequence with every ground-truth-labeled detection removed.
/// Clustering what is left yields background samples.
pub fn background_residue(seq: &Sequence) -> Sequence {
    Sequence {
        id: format!("{}#bg", seq.id),
        detections: seq
            .detections
            .iter()
            .filter(|d| d.gt_instance.is_none())
            .cloned()
            .collect(),
        duration: seq.duration,
        sensor_profile_id: seq.sensor_profile_id.clone(),
    }
}

pub fn build_examples(dataset: &[Sequence], ccfg: &ClusterConfig) -> Result<Vec<SequenceExample>> {
    let catalog = FeatureCatalog::standard();
    let mut examples = Vec::new();
    for seq in dataset {
        let gt = ClusterAssignment::from_ground_truth(seq);
        let mut foreground = 0usize;
        for track in cluster_tracks(&gt, seq, &catalog)? {
            let label = track.label();
            let chunks = chunk_history(&track.frames, label);
            foreground += chunks.len();
            examples.extend(chunks);
        }
        let residue = background_residue(seq);
        if residue.detections.is_empty() {
            continue;
        }
        let assign = cluster_stream_unfiltered(&residue, ccfg)?;
        let mut background = Vec::new();
        for track in cluster_tracks(&assign, &residue, &catalog)? {
            background.extend(chunk_history(&track.frames, ClassLabel::StaticGarbage));
        }
        // A permissive config can shred dense clutter into thousands of
        // one-point clusters; an even stride caps the class at rough
        // parity instead of letting it drown the set.
        let cap = foreground.max(8);
        if background.len() > cap {
            background = (0..cap)
                .map(|k| background[k * background.len() / cap].clone())
                .collect();
        }
        examples.extend(background);
    }
    Ok(examples)
}

/// Builds examples from the dataset and trains the six-net ensemble on them.
/// `subsets` defaults to every net seeing the full catalog.
pub fn train_from_sequences(
    dataset: &[Sequence],
    ccfg: &ClusterConfig,
    subsets: Option<&[FeatureSubset]>,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<EnsembleModel> {
    let examples = build_examples(dataset, ccfg)?;
    if examples.is_empty() {
        return Err(Error::InputMismatch("dataset yields no classifier examples".into()));
    }
    let width = examples[0].frames[0].values.len();
    match subsets {
        Some(s) => train_ensemble(&examples, s, hidden, cfg),
        None => train_ensemble(&examples, &crate::classifier::full_subsets(width), hidden, cfg),
    }
}

/// Classification ceiling: examples come from ground-truth instances (plus
/// clustered residue for background), each decided by the ensemble.
pub fn run_ceiling_classification(
    dataset: &[Sequence],
    model: &EnsembleModel,
    ccfg: &ClusterConfig,
) -> Result<MetricsReport> {
    let examples = build_examples(dataset, ccfg)?;
    if examples.is_empty() {
        return Err(Error::InputMismatch("dataset yields no classifier examples".into()));
    }
    let mut confusion = vec![vec![0u64; 3]; 3];
    for ex in &examples {
        let (pred, _) = model.decide(&ex.frames)?;
        confusion[ex.label.index()][pred.index()] += 1;
    }
    let (per_class, macro_value) = macro_f1(&confusion)?;
    let mut report = MetricsReport::new();
    report.macro_f1 = macro_value;
    for (class, f1) in ClassLabel::ALL.into_iter().zip(per_class) {
        report.per_class_f1.insert(class.as_token().to_string(), f1);
    }
    report.confusion = confusion;
    Ok(report)
}

/// Decides one class per cluster by feeding its most recent (up to 8) feature
/// frames to the ensemble.
pub fn decide_clusters(
    assign: &ClusterAssignment,
    seq: &Sequence,
    model: &EnsembleModel,
) -> Result<HashMap<i64, ClassLabel>> {
    let catalog = FeatureCatalog::standard();
    let mut classes = HashMap::new();
    for track in cluster_tracks(assign, seq, &catalog)? {
        let tail = &track.frames[track.frames.len().saturating_sub(MAX_FRAMES)..];
        let (label, _) = model.decide(tail)?;
        classes.insert(track.cluster, label);
    }
    Ok(classes)
}

/// Per-point predicted classes: clustered points get their cluster's class,
/// noise / filtered / unmapped clusters count as background.
pub fn point_labels(
    assign: &ClusterAssignment,
    classes: &HashMap<i64, ClassLabel>,
) -> Vec<Option<ClassLabel>> {
    assign
        .labels
        .iter()
        .map(|&l| {
            if l > 0 {
                Some(*classes.get(&l).unwrap_or(&ClassLabel::StaticGarbage))
            } else {
                Some(ClassLabel::StaticGarbage)
            }
        })
        .collect()
}

/// Combined pipeline outcome for one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedScore {
    pub sequence_id: String,
    pub point_f1: f64,
    pub instances: InstanceReport,
}

fn score_assignment(
    seq: &Sequence,
    assign: &ClusterAssignment,
    model: &EnsembleModel,
) -> Result<CombinedScore> {
    let classes = decide_clusters(assign, seq, model)?;
    let pred = point_labels(assign, &classes);
    let gt: Vec<Option<ClassLabel>> = seq.detections.iter().map(|d| d.gt_class).collect();
    Ok(CombinedScore {
        sequence_id: seq.id.clone(),
        point_f1: point_f1(&pred, &gt)?,
        instances: instance_scores(assign, seq, &classes)?,
    })
}

/// Full chain per sequence: prefilter -> stream clustering -> sampling ->
/// features -> ensemble decision, scored against ground truth.
pub fn combined_scores(
    dataset: &[Sequence],
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
    model: &EnsembleModel,
) -> Result<Vec<CombinedScore>> {
    dataset
        .iter()
        .map(|seq| score_assignment(seq, &cluster_stream(seq, fcfg, ccfg)?, model))
        .collect()
}

/// Same scoring with ground-truth clustering substituted for the cluster
/// stage; upper-bounds what the combined chain can reach point-wise.
pub fn oracle_combined_scores(
    dataset: &[Sequence],
    model: &EnsembleModel,
) -> Result<Vec<CombinedScore>> {
    dataset
        .iter()
        .map(|seq| score_assignment(seq, &ClusterAssignment::from_ground_truth(seq), model))
        .collect()
}

/// Combined pipeline over a dataset: point F1 is the unweighted mean over
/// sequences, instance counts are pooled before computing rates.
pub fn run_combined(
    dataset: &[Sequence],
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
    model: &EnsembleModel,
) -> Result<MetricsReport> {
    let rows = combined_scores(dataset, fcfg, ccfg, model)?;
    if rows.is_empty() {
        return Err(Error::InputMismatch("empty dataset".into()));
    }
    let mut report = MetricsReport::new();
    report.point_f1 = rows.iter().map(|r| r.point_f1).sum::<f64>() / rows.len() as f64;
    let pooled = InstanceReport::merge(rows.iter().map(|r| r.instances.clone()));
    report.set_instances(&pooled);
    Ok(report)
}

/// Prefilter throughput split by ground truth, measured on whole sequences.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub vru_total: u64,
    pub vru_kept: u64,
    pub clutter_total: u64,
    pub clutter_kept: u64,
}

impl FilterStats {
    pub fn vru_retention(&self) -> f64 {
        if self.vru_total == 0 {
            1.0
        } else {
            self.vru_kept as f64 / self.vru_total as f64
        }
    }

    pub fn clutter_removal(&self) -> f64 {
        if self.clutter_total == 0 {
            1.0
        } else {
            1.0 - self.clutter_kept as f64 / self.clutter_total as f64
        }
    }
}

/// Counts per-point filter outcomes under the same sliding windows the
/// stream clusterer uses, so the rates describe what clustering actually
/// gets to see.
pub fn filter_stats(
    dataset: &[Sequence],
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
) -> Result<FilterStats> {
    let mut stats = FilterStats::default();
    for seq in dataset {
        let kept = crate::clustering::stream_survivors(seq, fcfg, ccfg)?;
        for (d, &k) in seq.detections.iter().zip(&kept) {
            if d.gt_instance.is_some() {
                stats.vru_total += 1;
                stats.vru_kept += k as u64;
            } else {
                stats.clutter_total += 1;
                stats.clutter_kept += k as u64;
            }
        }
    }
    Ok(stats)
}
