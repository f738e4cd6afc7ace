//! Core detection/sequence types and coordinate handling.
//!
//! Angles are radians and ranges meters everywhere inside the crate; the CSV
//! layer converts from degrees at the boundary. The sensor boresight is the
//! +x axis, so `x = r cos(phi)`, `y = r sin(phi)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Object classes. `StaticGarbage` doubles as the background class: background
/// detections carry `gt_class = Some(StaticGarbage)` and no `gt_instance`.
///
/// The declaration order is also the deterministic tie-break order used by the
/// ensemble decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Pedestrian,
    Bicycle,
    StaticGarbage,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::Pedestrian,
        ClassLabel::Bicycle,
        ClassLabel::StaticGarbage,
    ];

    /// Dense index, consistent with the declaration/tie-break order.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Pedestrian => 0,
            ClassLabel::Bicycle => 1,
            ClassLabel::StaticGarbage => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        ClassLabel::ALL.get(i).copied()
    }

    /// Token used in dataset files.
    pub fn as_token(self) -> &'static str {
        match self {
            ClassLabel::Pedestrian => "ped",
            ClassLabel::Bicycle => "bike",
            ClassLabel::StaticGarbage => "static",
        }
    }

    pub fn from_token(s: &str) -> Result<ClassLabel> {
        match s {
            "ped" => Ok(ClassLabel::Pedestrian),
            "bike" => Ok(ClassLabel::Bicycle),
            "static" => Ok(ClassLabel::StaticGarbage),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }

    pub fn is_vru(self) -> bool {
        matches!(self, ClassLabel::Pedestrian | ClassLabel::Bicycle)
    }
}

/// One radar detection in polar sensor coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Timestamp in seconds.
    pub t: f64,
    /// Range in meters.
    pub r: f64,
    /// Azimuth in radians, 0 = boresight.
    pub phi: f64,
    /// Radial (Doppler) velocity in m/s; negative = approaching.
    pub vr: f64,
    /// Amplitude in dB.
    pub amp: f64,
    pub sensor_id: u32,
    /// Ground-truth object id; `None` for background.
    pub gt_instance: Option<u32>,
    /// Ground-truth class; `None` when unlabeled.
    pub gt_class: Option<ClassLabel>,
}

/// A detection with its Cartesian projection attached. Range is retained
/// because the clustering density threshold adapts to it.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianDetection {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub vr: f64,
    pub amp: f64,
    pub sensor_id: u32,
    pub gt_instance: Option<u32>,
    pub gt_class: Option<ClassLabel>,
}

/// Projects a detection onto the xy plane. Rejects non-finite fields so NaNs
/// cannot leak into distance computations downstream.
pub fn to_cartesian(d: &Detection) -> Result<CartesianDetection> {
    for (field, v) in [
        ("t", d.t),
        ("r", d.r),
        ("phi", d.phi),
        ("vr", d.vr),
        ("amp", d.amp),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { field });
        }
    }
    Ok(CartesianDetection {
        x: d.r * d.phi.cos(),
        y: d.r * d.phi.sin(),
        t: d.t,
        r: d.r,
        phi: d.phi,
        vr: d.vr,
        amp: d.amp,
        sensor_id: d.sensor_id,
        gt_instance: d.gt_instance,
        gt_class: d.gt_class,
    })
}

/// A contiguous recording from one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: String,
    /// Detections sorted by timestamp (stable for equal timestamps).
    pub detections: Vec<Detection>,
    /// Seconds covered by the recording.
    pub duration: f64,
    pub sensor_profile_id: String,
}

impl Sequence {
    /// Checks the structural invariants: timestamps non-decreasing and every
    /// ground-truth instance mapping to exactly one class.
    pub fn validate(&self) -> Result<()> {
        for w in self.detections.windows(2) {
            if w[1].t < w[0].t {
                return Err(Error::InputMismatch(format!(
                    "sequence {}: detections not sorted by time",
                    self.id
                )));
            }
        }
        let mut seen: std::collections::HashMap<u32, ClassLabel> = Default::default();
        for d in &self.detections {
            if let (Some(inst), Some(class)) = (d.gt_instance, d.gt_class) {
                match seen.entry(inst) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        if *e.get() != class {
                            return Err(Error::InputMismatch(format!(
                                "sequence {}: instance {} maps to both {:?} and {:?}",
                                self.id,
                                inst,
                                e.get(),
                                class
                            )));
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(class);
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-class detection counts, indexed by `ClassLabel::index`. Unlabeled
    /// detections count as background.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for d in &self.detections {
            counts[d.gt_class.unwrap_or(ClassLabel::StaticGarbage).index()] += 1;
        }
        counts
    }

    pub fn cartesian(&self) -> Result<Vec<CartesianDetection>> {
        self.detections.iter().map(to_cartesian).collect()
    }
}
