//! Dataset CSV reading and writing.
//!
//! Schema: `seq_id,t_s,r_m,phi_deg,vr_mps,amp_db,sensor_id,gt_instance,gt_class`.
//! Angles are degrees in files and converted to radians on load. Background
//! rows carry an empty `gt_instance` and `gt_class=static`; a fully unlabeled
//! row may leave `gt_class` empty as well.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{ClassLabel, Detection, Sequence};
use crate::error::{Error, Result};

pub const HEADER: [&str; 9] = [
    "seq_id",
    "t_s",
    "r_m",
    "phi_deg",
    "vr_mps",
    "amp_db",
    "sensor_id",
    "gt_instance",
    "gt_class",
];

/// Loads a dataset grouped into sequences (file appearance order). Rows of a
/// sequence are re-sorted by timestamp if needed; that condition is logged as
/// a warning, not an error.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::MalformedRow {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header `{}`", HEADER.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<Detection>> = Default::default();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let row = parse_row(path, line, &record)?;
        if !groups.contains_key(&row.0) {
            order.push(row.0.clone());
        }
        groups.entry(row.0).or_default().push(row.1);
    }

    let mut sequences = Vec::with_capacity(order.len());
    for id in order {
        let mut detections = groups.remove(&id).unwrap();
        if detections.windows(2).any(|w| w[1].t < w[0].t) {
            log::warn!("dataset {}: sequence {id} has out-of-order timestamps, re-sorting", path.display());
            detections.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        let duration = match detections.as_slice() {
            [] => 0.0,
            [.., last] => last.t - detections[0].t,
        };
        let sensor_profile_id = detections
            .first()
            .map(|d| d.sensor_id.to_string())
            .unwrap_or_default();
        let seq = Sequence {
            id,
            detections,
            duration,
            sensor_profile_id,
        };
        seq.validate()?;
        sequences.push(seq);
    }
    Ok(sequences)
}

fn parse_row(path: &Path, line: u64, rec: &csv::StringRecord) -> Result<(String, Detection)> {
    let malformed = |msg: String| Error::MalformedRow {
        path: path.display().to_string(),
        line,
        msg,
    };
    if rec.len() != HEADER.len() {
        return Err(malformed(format!(
            "expected {} fields, got {}",
            HEADER.len(),
            rec.len()
        )));
    }
    let num = |idx: usize| -> Result<f64> {
        let s = &rec[idx];
        let v: f64 = s
            .parse()
            .map_err(|_| malformed(format!("field `{}`: not a number: `{s}`", HEADER[idx])))?;
        if !v.is_finite() {
            return Err(malformed(format!("field `{}`: non-finite value", HEADER[idx])));
        }
        Ok(v)
    };
    let sensor_id: u32 = rec[6]
        .parse()
        .map_err(|_| malformed(format!("field `sensor_id`: not an integer: `{}`", &rec[6])))?;
    let gt_instance = match rec[7].trim() {
        "" => None,
        s => Some(s.parse().map_err(|_| {
            malformed(format!("field `gt_instance`: not an integer: `{s}`"))
        })?),
    };
    let gt_class = match rec[8].trim() {
        "" => None,
        s => Some(ClassLabel::from_token(s).map_err(|_| malformed(format!("field `gt_class`: unknown class `{s}`")))?),
    };
    Ok((
        rec[0].to_string(),
        Detection {
            t: num(1)?,
            r: num(2)?,
            phi: num(3)?.to_radians(),
            vr: num(4)?,
            amp: num(5)?,
            sensor_id,
            gt_instance,
            gt_class,
        },
    ))
}

/// Writes sequences back out in schema order. Floats use the shortest exact
/// decimal representation, which round-trips well past 9 significant digits.
pub fn save_dataset(path: impl AsRef<Path>, sequences: &[Sequence]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", HEADER.join(",")).map_err(|e| Error::io(path, e))?;
    for seq in sequences {
        for d in &seq.detections {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                seq.id,
                d.t,
                d.r,
                d.phi.to_degrees(),
                d.vr,
                d.amp,
                d.sensor_id,
                d.gt_instance.map(|i| i.to_string()).unwrap_or_default(),
                d.gt_class.map(|c| c.as_token()).unwrap_or_default(),
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HDR: &str = "seq_id,t_s,r_m,phi_deg,vr_mps,amp_db,sensor_id,gt_instance,gt_class\n";

    #[test]
    fn loads_three_row_file() {
        let f = write_tmp(&format!(
            "{HDR}s1,0.0,10.0,0.0,1.5,12.0,0,1,ped\ns1,0.06,10.1,1.0,1.4,11.0,0,1,ped\ns1,0.12,55.0,-3.0,0.0,8.0,0,,static\n"
        ));
        let seqs = load_dataset(f.path()).unwrap();
        assert_eq!(seqs.len(), 1);
        let s = &seqs[0];
        assert_eq!(s.detections.len(), 3);
        assert_eq!(s.detections[0].gt_instance, Some(1));
        assert_eq!(s.detections[0].gt_class, Some(ClassLabel::Pedestrian));
        assert_eq!(s.detections[2].gt_instance, None);
        assert!((s.detections[1].phi - 1f64.to_radians()).abs() < 1e-15);
        assert!((s.duration - 0.12).abs() < 1e-12);
    }

    #[test]
    fn empty_file_with_header_is_empty_dataset() {
        let f = write_tmp(HDR);
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let f = write_tmp(&format!("{HDR}s1,0.0,10.0,0.0,1.5,12.0,0,1,ped\ns1,xx,10.0,0.0,1.5,12.0,0,,static\n"));
        let err = load_dataset(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "missing line number: {msg}");
        assert!(msg.contains("t_s"), "missing field name: {msg}");
    }

    #[test]
    fn unknown_class_is_rejected() {
        let f = write_tmp(&format!("{HDR}s1,0.0,10.0,0.0,1.5,12.0,0,1,car\n"));
        let msg = load_dataset(f.path()).unwrap_err().to_string();
        assert!(msg.contains("car"), "{msg}");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let f = write_tmp("a,b,c\n1,2,3\n");
        assert!(load_dataset(f.path()).is_err());
    }

    #[test]
    fn shuffled_rows_are_resorted_stably() {
        // 100 rows with distinct times written in reverse, plus two rows with
        // an equal timestamp whose file order must be preserved.
        let mut body = String::new();
        for i in (0..100).rev() {
            body.push_str(&format!(
                "s1,{},{},0.0,1.0,5.0,0,,static\n",
                i as f64 * 0.05,
                10.0 + i as f64 * 0.01
            ));
        }
        body.push_str("s1,0.025,77.0,0.0,1.0,5.0,0,,static\n");
        body.push_str("s1,0.025,88.0,0.0,1.0,5.0,0,,static\n");
        let f = write_tmp(&format!("{HDR}{body}"));
        let seqs = load_dataset(f.path()).unwrap();
        let dets = &seqs[0].detections;
        assert!(dets.windows(2).all(|w| w[0].t <= w[1].t));
        let equal: Vec<f64> = dets.iter().filter(|d| d.t == 0.025).map(|d| d.r).collect();
        assert_eq!(equal, vec![77.0, 88.0]);
    }

    #[test]
    fn save_load_round_trips_values() {
        let f = write_tmp(&format!(
            "{HDR}s1,0.0,10.123456789,12.3456789,1.5,12.25,0,1,ped\ns2,0.06,99.9,-59.94,-3.25,8.5,1,,static\n"
        ));
        let seqs = load_dataset(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_dataset(out.path(), &seqs).unwrap();
        let reloaded = load_dataset(out.path()).unwrap();
        assert_eq!(seqs.len(), reloaded.len());
        for (a, b) in seqs.iter().zip(&reloaded) {
            assert_eq!(a.id, b.id);
            for (da, db) in a.detections.iter().zip(&b.detections) {
                assert!((da.t - db.t).abs() <= 1e-9 * da.t.abs().max(1.0));
                assert!((da.r - db.r).abs() <= 1e-9 * da.r.abs().max(1.0));
                assert!((da.phi - db.phi).abs() <= 1e-9);
                assert_eq!(da.gt_instance, db.gt_instance);
                assert_eq!(da.gt_class, db.gt_class);
            }
        }
    }
}
