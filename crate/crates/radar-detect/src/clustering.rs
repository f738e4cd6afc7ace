//! Doppler-aware density clustering with a multi-stage moving-target prefilter.
//!
//! The pipeline stage works on short sliding windows. Inside a window, points
//! are clustered with a DBSCAN variant whose density requirement adapts to
//! range (distant targets return fewer detections) and whose distance fuses
//! xy position with radial velocity. A cheap cascade filter runs first and
//! discards slow, locally isolated points, which removes most clutter while
//! dense or moving structures survive.

use std::collections::HashMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{CartesianDetection, Sequence};
use crate::error::{Error, Result};

/// Cluster label for noise / filtered-out detections.
pub const NOISE: i64 = -1;

/// Moving-target prefilter: a detection is dropped iff for ANY stage `i`
/// `|vr| < eta_vr[i]` and it has fewer than `n_thresh[i]` other points within
/// xy distance `d_xy`. Stages are ordered: velocity bounds strictly decrease
/// while the required support strictly increases, so each stage trades speed
/// against local density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub eta_vr: [f64; 5],
    pub n_thresh: [u32; 5],
    pub d_xy: f64,
}

impl FilterConfig {
    pub fn new(eta_vr: [f64; 5], n_thresh: [u32; 5], d_xy: f64) -> Result<Self> {
        let cfg = FilterConfig {
            eta_vr,
            n_thresh,
            d_xy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_vr.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidConfig("eta_vr must be finite and > 0".into()));
        }
        if self.eta_vr.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(
                "eta_vr stages must be strictly decreasing".into(),
            ));
        }
        if self.n_thresh.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("n_thresh stages must be >= 1".into()));
        }
        if self.n_thresh.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "n_thresh stages must be strictly increasing".into(),
            ));
        }
        if !self.d_xy.is_finite() || self.d_xy <= 0.0 {
            return Err(Error::InvalidConfig("d_xy must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Clustering parameters. `eps_vr` scales the Doppler axis of the fused
/// distance and carries units of (m/s) per meter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Density requirement at the 50 m reference range.
    pub nmin_50m: f64,
    /// Strength of the range adaptation of the density requirement.
    pub alpha_r: f64,
    /// Fused neighborhood radius in meters.
    pub eps_xyvr: f64,
    /// Doppler scaling of the fused distance, (m/s)/m. `f64::INFINITY`
    /// disables the Doppler term.
    pub eps_vr: f64,
    /// Core points must move faster than this (m/s). `f64::NEG_INFINITY`
    /// disables the gate.
    pub vr_min: f64,
    /// Temporal gate of the neighborhood, seconds (strict).
    pub eps_t: f64,
    /// Sliding window length in seconds.
    pub window_len: f64,
    /// Sliding window step in seconds.
    pub window_step: f64,
}

impl ClusterConfig {
    /// Parameters tuned for a current-generation sensor (low angular and
    /// Doppler resolution).
    pub fn s1() -> Self {
        ClusterConfig {
            nmin_50m: 3.0,
            alpha_r: 0.91,
            eps_xyvr: 1.4,
            eps_vr: 8.2,
            vr_min: 0.11,
            eps_t: 0.25,
            window_len: 0.25,
            window_step: 0.05,
        }
    }

    /// Parameters tuned for a next-generation sensor (high resolution).
    pub fn s2() -> Self {
        ClusterConfig {
            nmin_50m: 3.0,
            alpha_r: 0.5,
            eps_xyvr: 0.4,
            eps_vr: 2.4,
            vr_min: 0.63,
            eps_t: 0.25,
            window_len: 0.25,
            window_step: 0.05,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "S1" => Some(Self::s1()),
            "S2" => Some(Self::s2()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fin_pos = |name: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0")));
            }
            Ok(())
        };
        fin_pos("eps_xyvr", self.eps_xyvr)?;
        if self.eps_vr.is_nan() || self.eps_vr <= 0.0 {
            return Err(Error::InvalidConfig("eps_vr must be > 0".into()));
        }
        if self.vr_min.is_nan() {
            return Err(Error::InvalidConfig("vr_min must not be NaN".into()));
        }
        fin_pos("nmin_50m", self.nmin_50m)?;
        if !self.alpha_r.is_finite() || self.alpha_r < 0.0 {
            return Err(Error::InvalidConfig("alpha_r must be finite and >= 0".into()));
        }
        if nmin_at_range(125.0, self) <= 0.0 {
            return Err(Error::InvalidConfig(
                "alpha_r too large: density requirement vanishes at far range".into(),
            ));
        }
        fin_pos("eps_t", self.eps_t)?;
        fin_pos("window_len", self.window_len)?;
        fin_pos("window_step", self.window_step)?;
        if self.window_step > self.window_len {
            return Err(Error::InvalidConfig("window_step must be <= window_len".into()));
        }
        if self.eps_t > self.window_len {
            return Err(Error::InvalidConfig("eps_t must be <= window_len".into()));
        }
        Ok(())
    }
}

/// Range-adaptive density requirement. The reference range is 50 m; ranges
/// are clipped to [25, 125] m so the requirement stays bounded at the sensor
/// extremes. Compared against neighbor counts via ceiling.
pub fn nmin_at_range(r: f64, cfg: &ClusterConfig) -> f64 {
    let clipped = r.clamp(25.0, 125.0);
    cfg.nmin_50m * (1.0 + cfg.alpha_r * (50.0 / clipped - 1.0))
}

/// Fused spatial/Doppler/temporal neighborhood predicate (strict in every
/// part, symmetric and reflexive).
pub fn neighborhood(a: &CartesianDetection, b: &CartesianDetection, cfg: &ClusterConfig) -> bool {
    if (a.t - b.t).abs() >= cfg.eps_t {
        return false;
    }
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dvr = (a.vr - b.vr) / cfg.eps_vr;
    let dvr = if dvr.is_nan() { 0.0 } else { dvr }; // inf eps_vr disables the term
    (dx * dx + dy * dy + dvr * dvr).sqrt() < cfg.eps_xyvr
}

/// Per-detection cluster labels. `labels[i]` is a positive cluster id or
/// [`NOISE`]; `windows[i]` records which sliding-window position decided the
/// label (-1 when the detection was never covered, i.e. empty input only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub windows: Vec<i64>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Builds the assignment that maps every ground-truth instance to its own
    /// cluster (background stays noise). Instance ids are renumbered densely
    /// in order of first appearance.
    pub fn from_ground_truth(seq: &Sequence) -> ClusterAssignment {
        let mut remap: HashMap<u32, i64> = HashMap::new();
        let mut labels = Vec::with_capacity(seq.detections.len());
        for d in &seq.detections {
            let label = match d.gt_instance {
                Some(inst) => {
                    let next = remap.len() as i64 + 1;
                    *remap.entry(inst).or_insert(next)
                }
                None => NOISE,
            };
            labels.push(label);
        }
        let n_clusters = remap.len();
        ClusterAssignment {
            windows: vec![0; labels.len()],
            labels,
            n_clusters,
        }
    }
}

/// Uniform grid over xy for radius queries; cell size equals the query
/// radius so a 3x3 block bounds all candidates.
struct XyGrid {
    cell: f64,
    map: HashMap<(i64, i64), Vec<u32>>,
}

impl XyGrid {
    fn build(pts: &[CartesianDetection], idx: &[u32], cell: f64) -> XyGrid {
        let mut map: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for &i in idx {
            let p = &pts[i as usize];
            map.entry(Self::key(p.x, p.y, cell)).or_default().push(i);
        }
        XyGrid { cell, map }
    }

    fn key(x: f64, y: f64, cell: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    fn candidates(&self, x: f64, y: f64, out: &mut Vec<u32>) {
        out.clear();
        let (cx, cy) = Self::key(x, y, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.map.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(v);
                }
            }
        }
    }
}

fn removal_mask(pts: &[CartesianDetection], idx: &[u32], cfg: &FilterConfig) -> Vec<bool> {
    let grid = XyGrid::build(pts, idx, cfg.d_xy);
    let d2 = cfg.d_xy * cfg.d_xy;
    let mut cand = Vec::new();
    let mut removed = vec![false; idx.len()];
    for (slot, &i) in idx.iter().enumerate() {
        let p = &pts[i as usize];
        let speed = p.vr.abs();
        if speed >= cfg.eta_vr[0] {
            continue; // faster than the loosest stage: kept unconditionally
        }
        grid.candidates(p.x, p.y, &mut cand);
        let neighbors = cand
            .iter()
            .filter(|&&j| {
                if j == i {
                    return false;
                }
                let q = &pts[j as usize];
                let dx = p.x - q.x;
                let dy = p.y - q.y;
                dx * dx + dy * dy <= d2
            })
            .count() as u32;
        removed[slot] = cfg
            .eta_vr
            .iter()
            .zip(&cfg.n_thresh)
            .any(|(&eta, &n)| speed < eta && neighbors < n);
    }
    removed
}

/// Removes slow, locally isolated detections. Neighbor counts are taken on
/// the full input set (not on the survivors), so the surviving set is a
/// fixpoint of the per-point rule. Survivors keep their input order.
pub fn prefilter(points: &[CartesianDetection], cfg: &FilterConfig) -> Vec<CartesianDetection> {
    let idx: Vec<u32> = (0..points.len() as u32).collect();
    let removed = removal_mask(points, &idx, cfg);
    points
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| p.clone())
        .collect()
}

fn sorted_order(pts: &[CartesianDetection], idx: &[u32]) -> Vec<u32> {
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| {
        let (p, q) = (&pts[a as usize], &pts[b as usize]);
        p.t.total_cmp(&q.t)
            .then(p.r.total_cmp(&q.r))
            .then(p.phi.total_cmp(&q.phi))
            .then(a.cmp(&b))
    });
    order
}

/// Density clustering over one window's points (local labels 1..=m in
/// first-seen order, aligned with `idx`).
fn cluster_set(pts: &[CartesianDetection], idx: &[u32], cfg: &ClusterConfig) -> (Vec<i64>, usize) {
    const UNVISITED: i64 = -2;
    let n = idx.len();
    let mut labels = vec![UNVISITED; n];
    if n == 0 {
        return (labels, 0);
    }
    // slot of each global index inside `idx`
    let mut slot_of: HashMap<u32, u32> = HashMap::with_capacity(n);
    for (slot, &i) in idx.iter().enumerate() {
        slot_of.insert(i, slot as u32);
    }
    let grid = XyGrid::build(pts, idx, cfg.eps_xyvr);
    let order = sorted_order(pts, idx);

    let mut cand = Vec::new();
    let neighbors_of = |i: u32, out: &mut Vec<u32>, cand: &mut Vec<u32>| {
        let p = &pts[i as usize];
        grid.candidates(p.x, p.y, cand);
        out.clear();
        out.extend(cand.iter().copied().filter(|&j| neighborhood(p, &pts[j as usize], cfg)));
    };
    let is_core = |i: u32, neighbor_count: usize| {
        let p = &pts[i as usize];
        let required = nmin_at_range(p.r, cfg).ceil().max(1.0) as usize;
        p.vr.abs() > cfg.vr_min && neighbor_count >= required
    };

    let mut next_id: i64 = 1;
    let mut nb = Vec::new();
    let mut queue: VecDeque<u32> = VecDeque::new();
    for &p in &order {
        let pslot = slot_of[&p] as usize;
        if labels[pslot] != UNVISITED {
            continue;
        }
        neighbors_of(p, &mut nb, &mut cand);
        if !is_core(p, nb.len()) {
            labels[pslot] = NOISE;
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[pslot] = id;
        queue.clear();
        queue.extend(nb.iter().copied());
        while let Some(q) = queue.pop_front() {
            let qslot = slot_of[&q] as usize;
            if labels[qslot] == NOISE {
                labels[qslot] = id; // border point adopted by the first cluster reaching it
                continue;
            }
            if labels[qslot] != UNVISITED {
                continue;
            }
            labels[qslot] = id;
            neighbors_of(q, &mut nb, &mut cand);
            if is_core(q, nb.len()) {
                queue.extend(nb.iter().copied());
            }
        }
    }
    (labels, (next_id - 1) as usize)
}

/// Clusters one window's worth of points. Precondition: the time span of
/// `points` should not exceed `cfg.window_len` (the temporal gate still
/// applies regardless).
pub fn cluster_window(points: &[CartesianDetection], cfg: &ClusterConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    let idx: Vec<u32> = (0..points.len() as u32).collect();
    let (labels, n_clusters) = cluster_set(points, &idx, cfg);
    Ok(ClusterAssignment {
        windows: vec![0; labels.len()],
        labels,
        n_clusters,
    })
}

/// Runs prefilter + window clustering over a sliding window and merges the
/// per-window results.
///
/// Each detection's final label comes from the latest window containing it.
/// Cluster identity is carried across overlapping windows: a window-local
/// cluster inherits the id of the existing cluster it shares the most
/// detections with (ties toward the older id); unclaimed clusters get fresh
/// ids from a global counter, which keeps ids unique across the stream.
pub fn cluster_stream(
    seq: &Sequence,
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
) -> Result<ClusterAssignment> {
    fcfg.validate()?;
    stream_impl(seq, Some(fcfg), ccfg)
}

/// [`cluster_stream`] without the prefilter stage. Used where raw density is
/// wanted, e.g. when clustering ground-truth-free residue into background
/// samples.
/// Per-detection filter outcome under the same sliding windows the stream
/// clusterer uses: true when the point survives the prefilter in at least
/// one window it falls into. Basis for filter diagnostics; the removal rule
/// itself is identical to the one applied inside [`cluster_stream`].
pub fn stream_survivors(
    seq: &Sequence,
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
) -> Result<Vec<bool>> {
    fcfg.validate()?;
    ccfg.validate()?;
    let pts = seq.cartesian()?;
    let n = pts.len();
    let mut kept = vec![false; n];
    if n == 0 {
        return Ok(kept);
    }
    seq.validate()?;

    let t0 = pts[0].t;
    let t_max = pts[n - 1].t;
    let (len, step) = (ccfg.window_len, ccfg.window_step);
    let k_last = if t_max - t0 < len {
        0
    } else {
        ((t_max - t0 - len) / step).floor() as usize + 1
    };

    let mut lo = 0usize;
    for k in 0..=k_last {
        let start = t0 + k as f64 * step;
        let end = start + len;
        while lo < n && pts[lo].t < start {
            lo += 1;
        }
        let mut hi = lo;
        while hi < n && pts[hi].t < end {
            hi += 1;
        }
        if lo == hi {
            continue;
        }
        let in_window: Vec<u32> = (lo as u32..hi as u32).collect();
        let removed = removal_mask(&pts, &in_window, fcfg);
        for (&i, &r) in in_window.iter().zip(&removed) {
            if !r {
                kept[i as usize] = true;
            }
        }
    }
    Ok(kept)
}

pub fn cluster_stream_unfiltered(seq: &Sequence, ccfg: &ClusterConfig) -> Result<ClusterAssignment> {
    stream_impl(seq, None, ccfg)
}

fn stream_impl(
    seq: &Sequence,
    fcfg: Option<&FilterConfig>,
    ccfg: &ClusterConfig,
) -> Result<ClusterAssignment> {
    ccfg.validate()?;
    let pts = seq.cartesian()?;
    let n = pts.len();
    let mut labels = vec![NOISE; n];
    let mut windows = vec![-1i64; n];
    if n == 0 {
        return Ok(ClusterAssignment {
            labels,
            windows,
            n_clusters: 0,
        });
    }
    seq.validate()?;

    let t0 = pts[0].t;
    let t_max = pts[n - 1].t;
    let (len, step) = (ccfg.window_len, ccfg.window_step);
    let k_last = if t_max - t0 < len {
        0
    } else {
        ((t_max - t0 - len) / step).floor() as usize + 1
    };

    let mut next_id: i64 = 1;
    let mut lo = 0usize; // first point with t >= window start
    for k in 0..=k_last {
        let start = t0 + k as f64 * step;
        let end = start + len;
        while lo < n && pts[lo].t < start {
            lo += 1;
        }
        let mut hi = lo;
        while hi < n && pts[hi].t < end {
            hi += 1;
        }
        if lo == hi {
            continue;
        }
        let in_window: Vec<u32> = (lo as u32..hi as u32).collect();
        let survivors: Vec<u32> = match fcfg {
            Some(f) => {
                let removed = removal_mask(&pts, &in_window, f);
                in_window
                    .iter()
                    .zip(&removed)
                    .filter(|(_, &r)| !r)
                    .map(|(&i, _)| i)
                    .collect()
            }
            None => in_window.clone(),
        };
        let (local, m) = cluster_set(&pts, &survivors, ccfg);

        // Overlap-based identity: count, per local cluster, how detections
        // are currently labeled, then let the largest overlaps inherit.
        let mut overlap: HashMap<(usize, i64), usize> = HashMap::new();
        for (slot, &i) in survivors.iter().enumerate() {
            if local[slot] > 0 && labels[i as usize] > 0 {
                *overlap.entry((local[slot] as usize - 1, labels[i as usize])).or_insert(0) += 1;
            }
        }
        let mut claims: Vec<(usize, i64, usize)> = overlap
            .into_iter()
            .map(|((l, g), count)| (count, g, l))
            .collect();
        claims.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut global_of = vec![0i64; m];
        let mut used: std::collections::HashSet<i64> = Default::default();
        for (_, g, l) in claims {
            if global_of[l] == 0 && !used.contains(&g) {
                global_of[l] = g;
                used.insert(g);
            }
        }
        for g in global_of.iter_mut() {
            if *g == 0 {
                *g = next_id;
                next_id += 1;
            }
        }

        // This window decides the label of every detection it covers.
        for &i in &in_window {
            labels[i as usize] = NOISE;
            windows[i as usize] = k as i64;
        }
        for (slot, &i) in survivors.iter().enumerate() {
            if local[slot] > 0 {
                labels[i as usize] = global_of[local[slot] as usize - 1];
            }
        }
    }

    Ok(ClusterAssignment {
        labels,
        windows,
        n_clusters: (next_id - 1) as usize,
    })
}

/// Writes an assignment as `seq_id,t_s,point_idx,cluster_id` (noise and
/// filtered detections get cluster_id -1).
pub fn save_assignments(
    path: impl AsRef<std::path::Path>,
    seq: &Sequence,
    assignment: &ClusterAssignment,
) -> Result<()> {
    use std::io::Write;
    if assignment.len() != seq.detections.len() {
        return Err(Error::InputMismatch(format!(
            "assignment covers {} detections, sequence has {}",
            assignment.len(),
            seq.detections.len()
        )));
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "seq_id,t_s,point_idx,cluster_id").map_err(|e| Error::io(path, e))?;
    for (i, (d, &label)) in seq.detections.iter().zip(&assignment.labels).enumerate() {
        writeln!(out, "{},{},{},{}", seq.id, d.t, i, label).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads an assignment written by [`save_assignments`]. Window indices are
/// not persisted and come back as 0; downstream consumers read labels only.
pub fn load_assignments(
    path: impl AsRef<std::path::Path>,
    seq: &Sequence,
) -> Result<ClusterAssignment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: u64, msg: String| Error::MalformedRow {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "seq_id,t_s,point_idx,cluster_id")) => {}
        other => {
            return Err(malformed(
                1,
                format!("bad header {:?}", other.map(|(_, l)| l)),
            ))
        }
    }
    let mut labels = vec![NOISE; seq.detections.len()];
    let mut seen = vec![false; seq.detections.len()];
    for (lineno, line) in lines {
        let lineno = lineno as u64 + 1;
        let mut cols = line.split(',');
        let id = cols.next().unwrap_or("");
        if id != seq.id {
            return Err(malformed(lineno, format!("sequence id {id:?} != {:?}", seq.id)));
        }
        let _t = cols.next();
        let idx: usize = cols
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(lineno, "bad point index".into()))?;
        let label: i64 = cols
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(lineno, "bad cluster id".into()))?;
        if idx >= labels.len() || seen[idx] {
            return Err(malformed(lineno, format!("point index {idx} out of place")));
        }
        labels[idx] = label;
        seen[idx] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::InputMismatch(format!(
            "assignment file covers {} of {} detections",
            seen.iter().filter(|&&s| s).count(),
            seen.len()
        )));
    }
    let n_clusters = labels
        .iter()
        .filter(|&&l| l > 0)
        .collect::<std::collections::HashSet<_>>()
        .len();
    Ok(ClusterAssignment {
        windows: vec![0; labels.len()],
        labels,
        n_clusters,
    })
}
