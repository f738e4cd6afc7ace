//! Bayesian tuning of the prefilter and clustering parameters against a
//! clustering-quality objective: Gaussian-process surrogate with a Matern
//! 5/2 kernel, expected-improvement acquisition, Latin-hypercube start.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterConfig, FilterConfig};
use crate::error::{Error, Result};

/// One tunable scalar mapped from the unit interval.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    /// Geometric instead of linear interpolation across the range.
    pub log: bool,
    /// Round to the nearest integer after interpolation.
    pub integer: bool,
}

impl ParamSpec {
    fn value(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let raw = if self.log {
            (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        };
        if self.integer {
            raw.round().clamp(self.lo, self.hi)
        } else {
            raw.clamp(self.lo, self.hi)
        }
    }
}

/// Box bounds for the 16 tuned parameters: five clustering knobs, the five
/// speed stages and five support stages of the prefilter, and its search
/// radius. Stage orderings are restored after decoding, so every point in
/// the unit cube maps to a valid configuration pair.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    specs: Vec<ParamSpec>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::standard()
    }
}

impl SearchSpace {
    pub fn standard() -> Self {
        let mut specs = vec![
            ParamSpec { name: "nmin_50m", lo: 1.0, hi: 10.0, log: false, integer: false },
            ParamSpec { name: "alpha_r", lo: 0.0, hi: 1.5, log: false, integer: false },
            ParamSpec { name: "eps_xyvr", lo: 0.1, hi: 3.0, log: false, integer: false },
            ParamSpec { name: "eps_vr", lo: 0.5, hi: 16.0, log: true, integer: false },
            ParamSpec { name: "vr_min", lo: 0.01, hi: 1.5, log: true, integer: false },
        ];
        for name in ["eta_vr_0", "eta_vr_1", "eta_vr_2", "eta_vr_3", "eta_vr_4"] {
            specs.push(ParamSpec { name, lo: 0.05, hi: 2.0, log: false, integer: false });
        }
        for name in ["n_thresh_0", "n_thresh_1", "n_thresh_2", "n_thresh_3", "n_thresh_4"] {
            specs.push(ParamSpec { name, lo: 1.0, hi: 30.0, log: false, integer: true });
        }
        specs.push(ParamSpec { name: "d_xy", lo: 0.5, hi: 5.0, log: false, integer: false });
        Self { specs }
    }

    /// Replaces the bounds of one named parameter, keeping its scale and
    /// rounding flags. Lets callers fold domain knowledge into the search
    /// without touching the decoding contract.
    pub fn set_bounds(&mut self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let spec = self
            .specs
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter named {name:?}")))?;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "bad bounds for {name}: {lo}..{hi}"
            )));
        }
        if spec.log && lo <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{name} interpolates geometrically and needs positive bounds"
            )));
        }
        spec.lo = lo;
        spec.hi = hi;
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Maps a unit-cube point to a configuration pair. Speed stages are
    /// sorted into strictly falling order, support stages into strictly
    /// rising order, so the prefilter invariants hold by construction.
    pub fn decode(&self, u: &[f64]) -> Result<(FilterConfig, ClusterConfig)> {
        if u.len() != self.specs.len() {
            return Err(Error::InputMismatch(format!(
                "point has {} coordinates, space has {}",
                u.len(),
                self.specs.len()
            )));
        }
        let val = |k: usize| self.specs[k].value(u[k]);

        let mut eta: Vec<f64> = (5..10).map(val).collect();
        eta.sort_by(|a, b| b.total_cmp(a));
        for k in 1..5 {
            if eta[k] >= eta[k - 1] {
                eta[k] = eta[k - 1] * (1.0 - 1e-9);
            }
        }

        let mut nth: Vec<u32> = (10..15).map(|k| val(k) as u32).collect();
        nth.sort_unstable();
        for (k, n) in nth.iter_mut().enumerate() {
            *n = (*n).clamp(1 + k as u32, 26 + k as u32);
        }
        for k in 1..5 {
            if nth[k] <= nth[k - 1] {
                nth[k] = nth[k - 1] + 1;
            }
        }

        let filter = FilterConfig::new(
            [eta[0], eta[1], eta[2], eta[3], eta[4]],
            [nth[0], nth[1], nth[2], nth[3], nth[4]],
            val(15),
        )?;
        let cluster = ClusterConfig {
            nmin_50m: val(0),
            alpha_r: val(1),
            eps_xyvr: val(2),
            eps_vr: val(3),
            vr_min: val(4),
            ..ClusterConfig::s1()
        };
        cluster.validate()?;
        Ok((filter, cluster))
    }
}

/// One objective evaluation, as recorded in the history and the JSONL log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub filter: FilterConfig,
    pub cluster: ClusterConfig,
    pub v1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Evaluation,
    pub history: Vec<Evaluation>,
}

/// Tunes against `objective` (higher is better, expected in [0,1]).
/// Non-finite objective values are recorded as 0. With `history_path`
/// set, every evaluation is appended as one JSON line, and evaluations
/// already in the file count toward the budget on restart.
pub fn tune(
    space: &SearchSpace,
    mut objective: impl FnMut(&FilterConfig, &ClusterConfig) -> f64,
    budget: usize,
    seed: u64,
    history_path: Option<&Path>,
) -> Result<TuneResult> {
    if budget < 10 {
        return Err(Error::InvalidConfig(format!(
            "tuning budget must be at least 10, got {budget}"
        )));
    }
    let mut history: Vec<Evaluation> = Vec::new();
    if let Some(path) = history_path {
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                history.push(serde_json::from_str(line)?);
            }
        }
    }
    let mut log = match history_path {
        Some(path) => Some(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };

    let mut points: Vec<Vec<f64>> = history.iter().map(|e| e.point.clone()).collect();
    let mut values: Vec<f64> = history.iter().map(|e| e.v1).collect();
    optimize_box(
        space.dims(),
        |u| {
            let (filter, cluster) = space.decode(u).expect("decoded point is always valid");
            let raw = objective(&filter, &cluster);
            let v1 = if raw.is_finite() { raw } else { 0.0 };
            let eval = Evaluation {
                point: u.to_vec(),
                filter,
                cluster,
                v1,
            };
            if let Some(file) = log.as_mut() {
                let line = serde_json::to_string(&eval).expect("evaluation serializes");
                // history write failures abort via the outer Result below
                writeln!(file, "{line}").ok();
            }
            history.push(eval);
            v1
        },
        budget,
        seed,
        &mut points,
        &mut values,
    );
    let best_at = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("budget >= 10 evaluations");
    Ok(TuneResult {
        best: history[best_at].clone(),
        history,
    })
}

/// Maximizes `f` over the unit cube with `budget` total evaluations
/// (including any already present in `points`/`values`). The first
/// max(5, budget/10) evaluations come from a Latin hypercube; after that,
/// a Gaussian process picks the point of highest expected improvement.
pub fn optimize_box(
    dims: usize,
    mut f: impl FnMut(&[f64]) -> f64,
    budget: usize,
    seed: u64,
    points: &mut Vec<Vec<f64>>,
    values: &mut Vec<f64>,
) {
    assert!(dims > 0 && budget > 0);
    let init_n = (budget / 10).max(5).min(budget);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = latin_hypercube(&mut rng, init_n, dims);
    // resumed evaluations already covered the same seeded design prefix
    let mut design_used = points.len().min(design.len());
    let mut gp: Option<Gp> = None;
    while points.len() < budget {
        let next = if points.len() < init_n && design_used < design.len() {
            let p = design[design_used].clone();
            design_used += 1;
            p
        } else {
            // refit hyperparameters sparingly once the data set grows
            let refit = gp.is_none() || points.len() <= 40 || points.len() % 5 == 0;
            let model = if refit {
                Gp::fit(points, values)
            } else {
                gp.take()
                    .expect("previous surrogate exists")
                    .refresh(points, values)
            };
            let proposal = propose(&model, points, values, &mut rng, dims);
            gp = Some(model);
            proposal
        };
        let y = f(&next);
        points.push(next);
        values.push(y);
    }
}

/// Stratified uniform design: each dimension's coordinates occupy all n
/// strata in an independently shuffled order.
fn latin_hypercube(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        coords.push(
            strata
                .iter()
                .map(|&s| (s as f64 + rng.gen::<f64>()) / n as f64)
                .collect(),
        );
    }
    (0..n)
        .map(|k| coords.iter().map(|c| c[k]).collect())
        .collect()
}

fn propose(
    gp: &Gp,
    points: &[Vec<f64>],
    values: &[f64],
    rng: &mut ChaCha8Rng,
    dims: usize,
) -> Vec<f64> {
    let best_y = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let incumbent = &points[values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("nonempty history")];
    let mut best_point: Option<Vec<f64>> = None;
    let mut best_ei = f64::NEG_INFINITY;
    let consider = |candidate: Vec<f64>, gp: &Gp, best_ei: &mut f64, best_point: &mut Option<Vec<f64>>| {
        let (mu, sigma) = gp.predict(&candidate);
        let ei = expected_improvement(mu, sigma, best_y, 0.01);
        if ei > *best_ei {
            *best_ei = ei;
            *best_point = Some(candidate);
        }
    };
    for _ in 0..512 {
        let candidate: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
        consider(candidate, gp, &mut best_ei, &mut best_point);
    }
    for _ in 0..64 {
        let candidate: Vec<f64> = incumbent
            .iter()
            .map(|&v| (v + 0.05 * (rng.gen::<f64>() * 2.0 - 1.0)).clamp(0.0, 1.0))
            .collect();
        consider(candidate, gp, &mut best_ei, &mut best_point);
    }
    best_point.expect("at least one candidate considered")
}

/// EI for maximization with exploration margin `xi`.
fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    if sigma <= 1e-12 {
        return (mu - best - xi).max(0.0);
    }
    let z = (mu - best - xi) / sigma;
    (mu - best - xi) * norm_cdf(z) + sigma * norm_pdf(z)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Abramowitz-Stegun 7.1.26 polynomial; absolute error under 1e-7.
fn norm_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = sign * (1.0 - poly * (-x * x).exp());
    0.5 * (1.0 + erf)
}

/// Gaussian process with a Matern 5/2 kernel and per-dimension length
/// scales picked by marginal likelihood over a small deterministic grid.
struct Gp {
    x: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    chol: Vec<Vec<f64>>,
    lengths: Vec<f64>,
    noise: f64,
    y_mean: f64,
    y_std: f64,
}

fn matern52(a: &[f64], b: &[f64], lengths: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for k in 0..a.len() {
        let d = (a[k] - b[k]) / lengths[k];
        r2 += d * d;
    }
    let r = r2.sqrt() * 5.0f64.sqrt();
    (1.0 + r + r * r / 3.0) * (-r).exp()
}

fn cholesky(mut k: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = k.len();
    for i in 0..n {
        for j in 0..=i {
            let mut s = k[i][j];
            for m in 0..j {
                s -= k[i][m] * k[j][m];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                k[i][i] = s.sqrt();
            } else {
                k[i][j] = s / k[j][j];
            }
        }
        for j in (i + 1)..n {
            k[i][j] = 0.0;
        }
    }
    Some(k)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i][j] * x[j];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn solve_upper_t(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= l[j][i] * x[j];
        }
        x[i] = s / l[i][i];
    }
    x
}

impl Gp {
    fn fit(points: &[Vec<f64>], values: &[f64]) -> Gp {
        let dims = points[0].len();
        let (y_mean, y_std) = normal_moments(values);
        let y: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_std).collect();

        let shared_grid = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
        let noise_grid = [1e-6, 1e-4, 1e-2];
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (lml, lengths, noise)
        for &l in &shared_grid {
            for &noise in &noise_grid {
                let lengths = vec![l; dims];
                if let Some(lml) = log_marginal(points, &y, &lengths, noise) {
                    if best.as_ref().is_none_or(|b| lml > b.0) {
                        best = Some((lml, lengths, noise));
                    }
                }
            }
        }
        let (mut best_lml, mut lengths, noise) =
            best.expect("some kernel configuration factorizes");
        // one ARD pass: per-dimension refinement around the shared scale
        for d in 0..dims {
            let base = lengths[d];
            for factor in [0.25, 0.5, 2.0, 4.0] {
                let mut trial = lengths.clone();
                trial[d] = base * factor;
                if let Some(lml) = log_marginal(points, &y, &trial, noise) {
                    if lml > best_lml {
                        best_lml = lml;
                        lengths = trial;
                    }
                }
            }
        }
        Gp::assemble(points, values, lengths, noise)
    }

    /// Rebuilds the factorization for new data, keeping the hyperparameters.
    fn refresh(self, points: &[Vec<f64>], values: &[f64]) -> Gp {
        Gp::assemble(points, values, self.lengths, self.noise)
    }

    fn assemble(points: &[Vec<f64>], values: &[f64], lengths: Vec<f64>, noise: f64) -> Gp {
        let (y_mean, y_std) = normal_moments(values);
        let y: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_std).collect();
        let mut jitter = noise;
        loop {
            let k = kernel_matrix(points, &lengths, jitter);
            if let Some(chol) = cholesky(k) {
                let alpha = solve_upper_t(&chol, &solve_lower(&chol, &y));
                return Gp {
                    x: points.to_vec(),
                    alpha,
                    chol,
                    lengths,
                    noise: jitter,
                    y_mean,
                    y_std,
                };
            }
            jitter = (jitter * 10.0).max(1e-8);
        }
    }

    fn predict(&self, at: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self
            .x
            .iter()
            .map(|p| matern52(p, at, &self.lengths))
            .collect();
        let mu_n: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, &ks);
        let var = (1.0 + self.noise - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (
            mu_n * self.y_std + self.y_mean,
            var.sqrt() * self.y_std,
        )
    }
}

fn normal_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

fn kernel_matrix(points: &[Vec<f64>], lengths: &[f64], noise: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&points[i], &points[j], lengths);
            k[i][j] = v;
            k[j][i] = v;
        }
        k[i][i] += noise;
    }
    k
}

fn log_marginal(points: &[Vec<f64>], y: &[f64], lengths: &[f64], noise: f64) -> Option<f64> {
    let n = y.len();
    let k = kernel_matrix(points, lengths, noise);
    let chol = cholesky(k)?;
    let alpha = solve_upper_t(&chol, &solve_lower(&chol, y));
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| chol[i][i].ln()).sum::<f64>() * 2.0;
    Some(-0.5 * fit - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}
