//! Cluster sampling and per-sample feature extraction.
//!
//! Clusters are cut into non-overlapping 150 ms samples; each sample yields a
//! fixed 52-entry feature vector: eight order/moment statistics for each of
//! the four base units (range, angle, amplitude, radial velocity), ten
//! geometric shape features and a ten-entry micro-Doppler group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::{CartesianDetection, ClassLabel, Sequence};
use crate::error::{Error, Result};

/// Sample length in seconds.
pub const SAMPLE_LEN: f64 = 0.15;

pub const CATALOG_VERSION: &str = "52-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGroup {
    RangeStats,
    AngleStats,
    AmplitudeStats,
    DopplerStats,
    Geometric,
    MicroDoppler,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: &'static str,
    pub group: FeatureGroup,
    pub formula: &'static str,
}

#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    descriptors: Vec<FeatureDescriptor>,
    pub version: String,
}

const STAT_FORMULAS: [&str; 8] = ["min", "max", "spread", "std", "mean", "median", "skew", "mad"];

const GEO_FORMULAS: [&str; 10] = [
    "count",
    "hull_area",
    "hull_perimeter",
    "circularity",
    "box_length",
    "box_width",
    "box_aspect",
    "mean_pairwise_dist",
    "x_spread",
    "y_spread",
];

impl FeatureCatalog {
    pub fn standard() -> FeatureCatalog {
        let mut descriptors = Vec::with_capacity(52);
        let units: [(&str, FeatureGroup); 4] = [
            ("r", FeatureGroup::RangeStats),
            ("phi", FeatureGroup::AngleStats),
            ("amp", FeatureGroup::AmplitudeStats),
            ("vr", FeatureGroup::DopplerStats),
        ];
        for (unit, group) in units {
            for formula in STAT_FORMULAS {
                let name: &'static str = Box::leak(format!("{unit}_{formula}").into_boxed_str());
                descriptors.push(FeatureDescriptor { name, group, formula });
            }
        }
        for formula in GEO_FORMULAS {
            let name: &'static str = Box::leak(format!("geo_{formula}").into_boxed_str());
            descriptors.push(FeatureDescriptor {
                name,
                group: FeatureGroup::Geometric,
                formula,
            });
        }
        for i in 0..8 {
            let name: &'static str = Box::leak(format!("mdop_hist_{i}").into_boxed_str());
            descriptors.push(FeatureDescriptor {
                name,
                group: FeatureGroup::MicroDoppler,
                formula: Box::leak(format!("hist_{i}").into_boxed_str()),
            });
        }
        descriptors.push(FeatureDescriptor {
            name: "mdop_vr_iqr",
            group: FeatureGroup::MicroDoppler,
            formula: "vr_iqr",
        });
        descriptors.push(FeatureDescriptor {
            name: "mdop_frac_above_median",
            group: FeatureGroup::MicroDoppler,
            formula: "frac_above_median",
        });
        FeatureCatalog {
            descriptors,
            version: CATALOG_VERSION.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.descriptors.iter().map(|d| d.name).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.descriptors.iter().position(|d| d.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub catalog_version: String,
}

/// One 150 ms slice of a cluster.
#[derive(Debug, Clone)]
pub struct ClusterSample {
    pub detections: Vec<CartesianDetection>,
    pub t_start: f64,
    pub t_end: f64,
    pub source_cluster: i64,
    pub gt_class: Option<ClassLabel>,
}

fn majority_class(detections: &[CartesianDetection]) -> Option<ClassLabel> {
    if detections.iter().all(|d| d.gt_class.is_none() && d.gt_instance.is_none()) {
        return None;
    }
    // unlabeled members count as background
    let mut counts = [0usize; 3];
    for d in detections {
        counts[d.gt_class.unwrap_or(ClassLabel::StaticGarbage).index()] += 1;
    }
    let best = *counts.iter().max().unwrap();
    if counts[ClassLabel::StaticGarbage.index()] == best {
        return Some(ClassLabel::StaticGarbage);
    }
    ClassLabel::ALL.into_iter().find(|c| counts[c.index()] == best)
}

/// Cuts every cluster of `assignment` into consecutive 150 ms bins starting
/// at the cluster's first detection; empty bins produce no sample. Output is
/// ordered by cluster id, then time.
pub fn sample_clusters(assignment: &ClusterAssignment, seq: &Sequence) -> Result<Vec<ClusterSample>> {
    if assignment.len() != seq.detections.len() {
        return Err(Error::InputMismatch(format!(
            "assignment covers {} detections, sequence has {}",
            assignment.len(),
            seq.detections.len()
        )));
    }
    let pts = seq.cartesian()?;
    let mut by_cluster: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &label) in assignment.labels.iter().enumerate() {
        if label > 0 {
            by_cluster.entry(label).or_default().push(i);
        }
    }
    let mut samples = Vec::new();
    for (cluster, members) in by_cluster {
        let first = pts[members[0]].t;
        let mut bins: BTreeMap<i64, Vec<CartesianDetection>> = BTreeMap::new();
        for &i in &members {
            let k = ((pts[i].t - first) / SAMPLE_LEN).floor() as i64;
            bins.entry(k).or_default().push(pts[i].clone());
        }
        for (k, detections) in bins {
            let t_start = first + k as f64 * SAMPLE_LEN;
            samples.push(ClusterSample {
                gt_class: majority_class(&detections),
                detections,
                t_start,
                t_end: t_start + SAMPLE_LEN,
                source_cluster: cluster,
            });
        }
    }
    Ok(samples)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn central_moment(xs: &[f64], mu: f64, k: i32) -> f64 {
    xs.iter().map(|x| (x - mu).powi(k)).sum::<f64>() / xs.len() as f64
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Linear-interpolation quantile on sorted data.
fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return xs[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

struct UnitStats {
    values: [f64; 8],
}

fn unit_stats(raw: &[f64]) -> UnitStats {
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let mu = mean(raw);
    let m2 = central_moment(raw, mu, 2);
    let m3 = central_moment(raw, mu, 3);
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let mad = raw.iter().map(|x| (x - mu).abs()).sum::<f64>() / raw.len() as f64;
    UnitStats {
        values: [min, max, max - min, m2.sqrt(), mu, median_sorted(&sorted), skew, mad],
    }
}

/// Convex hull via monotone chain; input not assumed deduplicated. Returns
/// hull vertices in counter-clockwise order, or fewer than 3 points when the
/// input is degenerate.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // lower then upper chain; the non-strict turn test drops collinear points
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

struct Geometry {
    values: [f64; 10],
}

fn geometry(xy: &[(f64, f64)]) -> Geometry {
    let n = xy.len();
    let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
    let fmin = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_spread = fmax(&xs) - fmin(&xs);
    let y_spread = fmax(&ys) - fmin(&ys);
    let box_length = x_spread.max(y_spread);
    let box_width = x_spread.min(y_spread);
    let box_aspect = if box_length > 0.0 { box_width / box_length } else { 1.0 };

    let mut pair_sum = 0.0;
    let mut max_pair = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (xy[i].0 - xy[j].0).hypot(xy[i].1 - xy[j].1);
            pair_sum += d;
            max_pair = max_pair.max(d);
        }
    }
    let mean_pairwise = if n > 1 { pair_sum / (n * (n - 1) / 2) as f64 } else { 0.0 };

    let hull = convex_hull(xy.to_vec());
    let distinct = {
        let mut v = xy.to_vec();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v.dedup();
        v.len()
    };
    let (area, perimeter, circularity) = if hull.len() >= 3 {
        let mut area2 = 0.0;
        let mut perim = 0.0;
        for i in 0..hull.len() {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            area2 += a.0 * b.1 - b.0 * a.1;
            perim += (a.0 - b.0).hypot(a.1 - b.1);
        }
        let area = area2.abs() / 2.0;
        (area, perim, 4.0 * std::f64::consts::PI * area / (perim * perim))
    } else {
        // degenerate: a point or a collinear set
        let perim = 2.0 * max_pair;
        let circ = if distinct <= 1 { 1.0 } else { 0.0 };
        (0.0, perim, circ)
    };

    Geometry {
        values: [
            n as f64,
            area,
            perimeter,
            circularity,
            box_length,
            box_width,
            box_aspect,
            mean_pairwise,
            x_spread,
            y_spread,
        ],
    }
}

struct MicroDoppler {
    values: [f64; 10],
}

fn micro_doppler(vr: &[f64]) -> MicroDoppler {
    let n = vr.len();
    let mut sorted = vr.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (vmin, vmax) = (sorted[0], sorted[n - 1]);
    let width = (vmax - vmin) / 8.0;
    let mut hist = [0.0f64; 8];
    for &v in vr {
        let idx = if width > 0.0 {
            (((v - vmin) / width).floor() as usize).min(7)
        } else {
            0
        };
        hist[idx] += 1.0;
    }
    for h in hist.iter_mut() {
        *h /= n as f64;
    }
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let mut abs_sorted: Vec<f64> = vr.iter().map(|v| v.abs()).collect();
    abs_sorted.sort_by(f64::total_cmp);
    let med_abs = median_sorted(&abs_sorted);
    let frac_above = vr.iter().filter(|v| v.abs() > med_abs).count() as f64 / n as f64;
    let mut values = [0.0; 10];
    values[..8].copy_from_slice(&hist);
    values[8] = iqr;
    values[9] = frac_above;
    MicroDoppler { values }
}

/// Extracts the catalog's features from one sample. Deterministic and
/// independent of detection order; every output entry is finite.
pub fn extract(sample: &ClusterSample, catalog: &FeatureCatalog) -> FeatureVector {
    assert!(!sample.detections.is_empty(), "sample must be non-empty");
    let unit_of = |f: fn(&CartesianDetection) -> f64| -> Vec<f64> {
        sample.detections.iter().map(f).collect()
    };
    let stats = [
        unit_stats(&unit_of(|d| d.r)),
        unit_stats(&unit_of(|d| d.phi)),
        unit_stats(&unit_of(|d| d.amp)),
        unit_stats(&unit_of(|d| d.vr)),
    ];
    let xy: Vec<(f64, f64)> = sample.detections.iter().map(|d| (d.x, d.y)).collect();
    let geo = geometry(&xy);
    let vr: Vec<f64> = unit_of(|d| d.vr);
    let mdop = micro_doppler(&vr);

    let stat_idx = |formula: &str| STAT_FORMULAS.iter().position(|f| *f == formula).unwrap();
    let geo_idx = |formula: &str| GEO_FORMULAS.iter().position(|f| *f == formula).unwrap();
    let mut values = Vec::with_capacity(catalog.len());
    for desc in catalog.descriptors() {
        let v = match desc.group {
            FeatureGroup::RangeStats => stats[0].values[stat_idx(desc.formula)],
            FeatureGroup::AngleStats => stats[1].values[stat_idx(desc.formula)],
            FeatureGroup::AmplitudeStats => stats[2].values[stat_idx(desc.formula)],
            FeatureGroup::DopplerStats => stats[3].values[stat_idx(desc.formula)],
            FeatureGroup::Geometric => geo.values[geo_idx(desc.formula)],
            FeatureGroup::MicroDoppler => match desc.formula {
                "vr_iqr" => mdop.values[8],
                "frac_above_median" => mdop.values[9],
                hist => {
                    let i: usize = hist.strip_prefix("hist_").unwrap().parse().unwrap();
                    mdop.values[i]
                }
            },
        };
        debug_assert!(v.is_finite(), "{} produced {v}", desc.name);
        values.push(v);
    }
    FeatureVector {
        values,
        catalog_version: catalog.version.clone(),
    }
}

/// Writes rows of `(sample_id, gt_class, features)` as CSV with the catalog
/// names as header.
pub fn save_feature_matrix(
    path: impl AsRef<std::path::Path>,
    catalog: &FeatureCatalog,
    rows: &[(String, Option<ClassLabel>, FeatureVector)],
) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = String::from("sample_id,gt_class");
    for name in catalog.names() {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for (id, class, fv) in rows {
        if fv.values.len() != catalog.len() {
            return Err(Error::InputMismatch(format!(
                "feature vector of {id} has {} entries, catalog expects {}",
                fv.values.len(),
                catalog.len()
            )));
        }
        let mut line = format!("{id},{}", class.map(|c| c.as_token()).unwrap_or(""));
        for v in &fv.values {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature matrix written by [`save_feature_matrix`], checking the
/// column names against `catalog`.
pub fn load_feature_matrix(
    path: impl AsRef<std::path::Path>,
    catalog: &FeatureCatalog,
) -> Result<Vec<(String, Option<ClassLabel>, FeatureVector)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = ["sample_id", "gt_class"]
        .into_iter()
        .chain(catalog.names())
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::CatalogMismatch(format!(
            "{} columns do not match catalog {}",
            path.display(),
            catalog.version
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |msg: String| Error::MalformedRow {
            path: path.display().to_string(),
            line: line as u64 + 2,
            msg,
        };
        let id = record.get(0).unwrap_or("").to_string();
        let class = match record.get(1).unwrap_or("") {
            "" => None,
            tok => Some(ClassLabel::from_token(tok).map_err(|_| bad(format!("bad class {tok}")))?),
        };
        let mut values = Vec::with_capacity(catalog.len());
        for (k, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("bad value in column {}", expected[k + 2])))?;
            values.push(v);
        }
        if values.len() != catalog.len() {
            return Err(bad(format!("expected {} feature columns", catalog.len())));
        }
        rows.push((
            id,
            class,
            FeatureVector {
                values,
                catalog_version: catalog.version.clone(),
            },
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::NOISE;
    use crate::data::Detection;
    use proptest::prelude::*;

    fn det(t: f64, r: f64, phi: f64, vr: f64, inst: Option<u32>, class: Option<ClassLabel>) -> Detection {
        Detection {
            t,
            r,
            phi,
            vr,
            amp: 10.0,
            sensor_id: 0,
            gt_instance: inst,
            gt_class: class,
        }
    }

    fn seq_of(detections: Vec<Detection>) -> Sequence {
        let duration = detections.last().map(|d| d.t).unwrap_or(0.0);
        Sequence {
            id: "s".into(),
            detections,
            duration,
            sensor_profile_id: "A".into(),
        }
    }

    fn sample_from(dets: Vec<CartesianDetection>) -> ClusterSample {
        ClusterSample {
            gt_class: majority_class(&dets),
            detections: dets,
            t_start: 0.0,
            t_end: SAMPLE_LEN,
            source_cluster: 1,
        }
    }

    fn cart(x: f64, y: f64, vr: f64, amp: f64) -> CartesianDetection {
        CartesianDetection {
            x,
            y,
            t: 0.0,
            r: (x * x + y * y).sqrt(),
            phi: y.atan2(x),
            vr,
            amp,
            sensor_id: 0,
            gt_instance: Some(1),
            gt_class: Some(ClassLabel::Pedestrian),
        }
    }

    #[test]
    fn catalog_is_52_features_with_six_nonempty_groups() {
        let cat = FeatureCatalog::standard();
        assert_eq!(cat.len(), 52);
        let names = cat.names();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        for group in [
            FeatureGroup::RangeStats,
            FeatureGroup::AngleStats,
            FeatureGroup::AmplitudeStats,
            FeatureGroup::DopplerStats,
            FeatureGroup::Geometric,
            FeatureGroup::MicroDoppler,
        ] {
            assert!(cat.descriptors().iter().any(|d| d.group == group));
        }
        assert_eq!(cat.version, CATALOG_VERSION);
    }

    #[test]
    fn sampling_bins_span_150ms_from_first_detection() {
        // one cluster spanning 0.31 s -> bins [0,0.15), [0.15,0.30), [0.30,0.45)
        let dets = vec![
            det(0.0, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.10, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.16, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.31, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
        ];
        let seq = seq_of(dets);
        let assignment = ClusterAssignment {
            labels: vec![1, 1, 1, 1],
            windows: vec![0; 4],
            n_clusters: 1,
        };
        let samples = sample_clusters(&assignment, &seq).unwrap();
        assert_eq!(samples.len(), 3);
        let starts: Vec<f64> = samples.iter().map(|s| s.t_start).collect();
        assert_eq!(starts, vec![0.0, 0.15, 0.30]);
        for s in &samples {
            assert!((s.t_end - s.t_start - SAMPLE_LEN).abs() < 1e-12);
            assert!(s.detections.iter().all(|d| d.t >= s.t_start && d.t < s.t_end));
        }
        assert_eq!(samples[0].detections.len(), 2);
        assert_eq!(samples[2].detections.len(), 1);
    }

    #[test]
    fn sampling_single_bin_and_empty_bin_dropping() {
        let dets = vec![
            det(0.0, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Bicycle)),
            det(0.05, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Bicycle)),
            // gap: nothing in [0.15, 0.30)
            det(0.32, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Bicycle)),
        ];
        let seq = seq_of(dets);
        let assignment = ClusterAssignment {
            labels: vec![1, 1, 1],
            windows: vec![0; 3],
            n_clusters: 1,
        };
        let samples = sample_clusters(&assignment, &seq).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[1].t_start, 0.30);
    }

    #[test]
    fn sampling_majority_vote_and_tie_break() {
        // 3 ped vs 2 background
        let dets = vec![
            det(0.00, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.01, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.02, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.03, 10.0, 0.0, 0.1, None, Some(ClassLabel::StaticGarbage)),
            det(0.04, 10.0, 0.0, 0.1, None, None),
        ];
        let seq = seq_of(dets);
        let assignment = ClusterAssignment {
            labels: vec![1; 5],
            windows: vec![0; 5],
            n_clusters: 1,
        };
        let samples = sample_clusters(&assignment, &seq).unwrap();
        assert_eq!(samples[0].gt_class, Some(ClassLabel::Pedestrian));

        // 2 ped vs 2 background: tie goes to background
        let dets = vec![
            det(0.00, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.01, 10.0, 0.0, 1.0, Some(1), Some(ClassLabel::Pedestrian)),
            det(0.02, 10.0, 0.0, 0.1, None, None),
            det(0.03, 10.0, 0.0, 0.1, None, None),
        ];
        let seq = seq_of(dets);
        let assignment = ClusterAssignment {
            labels: vec![1; 4],
            windows: vec![0; 4],
            n_clusters: 1,
        };
        let samples = sample_clusters(&assignment, &seq).unwrap();
        assert_eq!(samples[0].gt_class, Some(ClassLabel::StaticGarbage));
    }

    #[test]
    fn sampling_skips_noise_and_checks_length() {
        let dets = vec![det(0.0, 10.0, 0.0, 1.0, None, None)];
        let seq = seq_of(dets);
        let assignment = ClusterAssignment {
            labels: vec![NOISE],
            windows: vec![0],
            n_clusters: 0,
        };
        assert!(sample_clusters(&assignment, &seq).unwrap().is_empty());
        let wrong = ClusterAssignment {
            labels: vec![1, 1],
            windows: vec![0, 0],
            n_clusters: 1,
        };
        assert!(sample_clusters(&wrong, &seq).is_err());
    }

    #[test]
    fn extract_single_point_degenerates_cleanly() {
        let cat = FeatureCatalog::standard();
        let s = sample_from(vec![cart(3.0, 4.0, 1.5, 12.0)]);
        let fv = extract(&s, &cat);
        assert_eq!(fv.values.len(), 52);
        assert!(fv.values.iter().all(|v| v.is_finite()));
        let at = |name: &str| fv.values[cat.index_of(name).unwrap()];
        for unit in ["r", "phi", "amp", "vr"] {
            assert_eq!(at(&format!("{unit}_spread")), 0.0);
            assert_eq!(at(&format!("{unit}_std")), 0.0);
            assert_eq!(at(&format!("{unit}_skew")), 0.0);
        }
        assert_eq!(at("geo_count"), 1.0);
        assert_eq!(at("geo_hull_area"), 0.0);
        assert_eq!(at("geo_circularity"), 1.0);
        assert_eq!(at("geo_box_aspect"), 1.0);
        let hist: Vec<f64> = (0..8).map(|i| at(&format!("mdop_hist_{i}"))).collect();
        assert_eq!(hist.iter().filter(|&&h| h == 1.0).count(), 1);
        assert_eq!(hist.iter().sum::<f64>(), 1.0);
        assert_eq!(at("mdop_frac_above_median"), 0.0);
    }

    #[test]
    fn extract_unit_square_geometry() {
        let cat = FeatureCatalog::standard();
        let s = sample_from(vec![
            cart(0.0, 0.0, 1.0, 10.0),
            cart(1.0, 0.0, 1.0, 10.0),
            cart(1.0, 1.0, 1.0, 10.0),
            cart(0.0, 1.0, 1.0, 10.0),
        ]);
        let fv = extract(&s, &cat);
        let at = |name: &str| fv.values[cat.index_of(name).unwrap()];
        assert!((at("geo_hull_area") - 1.0).abs() < 1e-12);
        assert!((at("geo_hull_perimeter") - 4.0).abs() < 1e-12);
        assert!((at("geo_circularity") - std::f64::consts::PI / 4.0).abs() < 1e-12);
        assert!((at("geo_circularity") - 0.7854).abs() < 1e-4);
        assert_eq!(at("geo_box_length"), 1.0);
        assert_eq!(at("geo_box_width"), 1.0);
        assert_eq!(at("geo_box_aspect"), 1.0);
        // equal vr: histogram one-hot, iqr 0
        assert_eq!(at("mdop_vr_iqr"), 0.0);
    }

    #[test]
    fn extract_vr_stats_hand_values() {
        let cat = FeatureCatalog::standard();
        let s = sample_from(vec![
            cart(10.0, 0.0, 1.0, 10.0),
            cart(10.1, 0.0, 2.0, 10.0),
            cart(10.2, 0.0, 3.0, 10.0),
        ]);
        let fv = extract(&s, &cat);
        let at = |name: &str| fv.values[cat.index_of(name).unwrap()];
        assert!((at("vr_spread") - 2.0).abs() < 1e-12);
        assert!((at("vr_std") - 0.8165).abs() < 1e-4);
        assert!((at("vr_mean") - 2.0).abs() < 1e-12);
        assert!((at("vr_median") - 2.0).abs() < 1e-12);
        assert_eq!(at("vr_skew"), 0.0);
        // mad = (1 + 0 + 1)/3
        assert!((at("vr_mad") - 2.0 / 3.0).abs() < 1e-12);
        // median |vr| = 2, strictly above: only 3.0
        assert!((at("mdop_frac_above_median") - 1.0 / 3.0).abs() < 1e-12);
        // iqr via linear interpolation: q25 = 1.5, q75 = 2.5
        assert!((at("mdop_vr_iqr") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extract_skew_asymmetric() {
        let cat = FeatureCatalog::standard();
        let s = sample_from(vec![
            cart(10.0, 0.0, 1.0, 10.0),
            cart(10.1, 0.0, 1.0, 10.0),
            cart(10.2, 0.0, 4.0, 10.0),
        ]);
        let fv = extract(&s, &cat);
        // m2 = 2, m3 = 2: skew = 2 / 2^1.5
        let want = 2.0 / 2.0f64.powf(1.5);
        assert!((fv.values[cat.index_of("vr_skew").unwrap()] - want).abs() < 1e-12);
    }

    #[test]
    fn extract_collinear_degenerate_geometry() {
        let cat = FeatureCatalog::standard();
        let s = sample_from(vec![
            cart(0.0, 0.0, 1.0, 10.0),
            cart(1.0, 1.0, 1.0, 10.0),
            cart(2.0, 2.0, 1.0, 10.0),
        ]);
        let fv = extract(&s, &cat);
        let at = |name: &str| fv.values[cat.index_of(name).unwrap()];
        assert_eq!(at("geo_hull_area"), 0.0);
        assert_eq!(at("geo_circularity"), 0.0);
        // perimeter = 2 * max pairwise distance = 2 * sqrt(8)
        assert!((at("geo_hull_perimeter") - 2.0 * 8.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geometric_features_translate_invariant_polar_stats_not() {
        let cat = FeatureCatalog::standard();
        let base = vec![
            cart(5.0, 1.0, 1.0, 10.0),
            cart(5.5, 1.2, 1.5, 11.0),
            cart(6.0, 0.8, 2.0, 9.0),
            cart(5.2, 1.9, 1.2, 10.5),
        ];
        let shifted: Vec<CartesianDetection> = base
            .iter()
            .map(|d| {
                let x = d.x + 13.0;
                let y = d.y - 7.0;
                CartesianDetection {
                    x,
                    y,
                    r: x.hypot(y),
                    phi: y.atan2(x),
                    ..d.clone()
                }
            })
            .collect();
        let a = extract(&sample_from(base), &cat);
        let b = extract(&sample_from(shifted), &cat);
        let mut r_changed = false;
        let mut phi_changed = false;
        for (i, desc) in cat.descriptors().iter().enumerate() {
            match desc.group {
                FeatureGroup::Geometric | FeatureGroup::MicroDoppler | FeatureGroup::DopplerStats
                | FeatureGroup::AmplitudeStats => {
                    assert!(
                        (a.values[i] - b.values[i]).abs() < 1e-9,
                        "{} not translation invariant",
                        desc.name
                    );
                }
                FeatureGroup::RangeStats => r_changed |= (a.values[i] - b.values[i]).abs() > 1e-6,
                FeatureGroup::AngleStats => phi_changed |= (a.values[i] - b.values[i]).abs() > 1e-6,
            }
        }
        assert!(r_changed && phi_changed);
    }

    #[test]
    fn feature_matrix_round_trip() {
        let cat = FeatureCatalog::standard();
        let s1 = sample_from(vec![cart(3.0, 4.0, 1.5, 12.0)]);
        let s2 = sample_from(vec![cart(1.0, 2.0, -2.5, 8.0), cart(1.1, 2.1, -2.6, 8.5)]);
        let rows = vec![
            ("c1_0".to_string(), Some(ClassLabel::Pedestrian), extract(&s1, &cat)),
            ("c2_0".to_string(), None, extract(&s2, &cat)),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        save_feature_matrix(f.path(), &cat, &rows).unwrap();
        let loaded = load_feature_matrix(f.path(), &cat).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "c1_0");
        assert_eq!(loaded[0].1, Some(ClassLabel::Pedestrian));
        assert_eq!(loaded[1].1, None);
        for (got, want) in loaded.iter().zip(&rows) {
            for (a, b) in got.2.values.iter().zip(&want.2.values) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        // wrong catalog is refused
        let mut other = FeatureCatalog::standard();
        other.descriptors.truncate(51);
        assert!(load_feature_matrix(f.path(), &other).is_err());
    }

    proptest! {
        #[test]
        fn extract_is_order_independent_and_finite(
            seed in 0u64..200,
            n in 1usize..30,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dets: Vec<CartesianDetection> = (0..n)
                .map(|_| cart(
                    rng.gen::<f64>() * 40.0 + 1.0,
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * 10.0 - 5.0,
                    rng.gen::<f64>() * 30.0,
                ))
                .collect();
            let cat = FeatureCatalog::standard();
            let fv = extract(&sample_from(dets.clone()), &cat);
            prop_assert_eq!(fv.values.len(), cat.len());
            prop_assert!(fv.values.iter().all(|v| v.is_finite()));
            let mut rev = dets;
            rev.reverse();
            let fv2 = extract(&sample_from(rev), &cat);
            for (a, b) in fv.values.iter().zip(&fv2.values) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
