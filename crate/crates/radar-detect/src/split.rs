//! Train/test splitting over whole sequences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sequence;
use crate::error::{Error, Result};

/// Relative slack on the requested test fraction a candidate may use.
const SIZE_SLACK: f64 = 0.2;

/// Splits whole sequences into train/test so that the test side mirrors the
/// per-class detection proportions of the full set as closely as possible.
///
/// Candidates are prefixes of random sequence permutations, cut once the
/// accumulated detection count reaches `test_fraction` of the total. Among
/// `trials` candidates whose test size stays within ±20% (relative) of the
/// requested fraction, the one minimizing the L1 distance between test and
/// full per-class proportions wins; earlier trials win ties. Splitting whole
/// sequences guarantees that no two detections sharing a `(sequence id,
/// gt_instance)` pair end up on opposite sides.
pub fn split_sequences(
    sequences: &[Sequence],
    test_fraction: f64,
    trials: usize,
    rng_seed: u64,
) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    let (train_idx, test_idx) =
        split_indices(sequences, test_fraction, trials, rng_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| sequences[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Index-level variant of [`split_sequences`]; useful when the caller keeps
/// sequences paired with side data.
pub fn split_indices(
    sequences: &[Sequence],
    test_fraction: f64,
    trials: usize,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if sequences.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two sequences to split".into(),
        ));
    }
    let total: usize = sequences.iter().map(|s| s.detections.len()).sum();
    if total == 0 {
        return Err(Error::InvalidConfig("no detections to split".into()));
    }
    let full_counts = class_counts(sequences, None);
    let full_props = proportions(&full_counts);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut indices: Vec<usize> = (0..sequences.len()).collect();
    let lo = (1.0 - SIZE_SLACK) * test_fraction;
    let hi = (1.0 + SIZE_SLACK) * test_fraction;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..trials {
        indices.shuffle(&mut rng);
        let mut picked = Vec::new();
        let mut accum = 0usize;
        for &i in &indices {
            picked.push(i);
            accum += sequences[i].detections.len();
            if accum as f64 >= test_fraction * total as f64 {
                break;
            }
        }
        let frac = accum as f64 / total as f64;
        if frac < lo || frac > hi || picked.len() == sequences.len() {
            continue;
        }
        let counts = class_counts(sequences, Some(&picked));
        let props = proportions(&counts);
        let dist: f64 = props
            .iter()
            .zip(&full_props)
            .map(|(a, b)| (a - b).abs())
            .sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            let mut sorted = picked.clone();
            sorted.sort_unstable();
            best = Some((dist, sorted));
        }
    }

    let (_, test_idx) = best.ok_or(Error::NoViableSplit {
        trials,
        tolerance: SIZE_SLACK * 100.0,
    })?;
    let test_set: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..sequences.len())
        .filter(|i| !test_set.contains(i))
        .collect();
    Ok((train_idx, test_idx))
}

fn class_counts(sequences: &[Sequence], subset: Option<&[usize]>) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut add = |s: &Sequence| {
        let c = s.class_counts();
        for k in 0..3 {
            counts[k] += c[k];
        }
    };
    match subset {
        Some(idx) => idx.iter().for_each(|&i| add(&sequences[i])),
        None => sequences.iter().for_each(add),
    }
    counts
}

fn proportions(counts: &[usize; 3]) -> [f64; 3] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; 3];
    }
    [
        counts[0] as f64 / total as f64,
        counts[1] as f64 / total as f64,
        counts[2] as f64 / total as f64,
    ]
}
