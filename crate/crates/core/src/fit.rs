//! Least-squares calibration of fundamental diagrams.
//!
//! Every fit is a multi-start search: start points are drawn uniformly from
//! the parameter box, each is polished by a bounded local minimizer of the
//! sum of squared flow residuals, and the best converged start wins. The
//! local search runs in box-normalized coordinates (each parameter mapped
//! to `[0, 1]`), which keeps steps comparable across parameters measured in
//! veh/h, veh/km and dimensionless units.
//!
//! Start `i` draws from its own ChaCha8 stream keyed by `(seed, i)`, so the
//! first `n` starts are the same whatever `n_starts` is, and running starts
//! in parallel never changes the result.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::models::{default_bounds, flux_unchecked, flux_with_gradient, DataSummary, FdModelKind, FdModelParams, ModelError, ParamBounds};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{kind} needs at least {needed} points, got {got}")]
    TooFewPoints { kind: FdModelKind, needed: usize, got: usize },
    #[error("need at least 2 distinct densities")]
    DegenerateDensities,
    #[error("non-finite or negative observation at index {0}")]
    BadPoint(usize),
    #[error("goodness of fit needs at least 2 points")]
    TooFewForGoodness,
    #[error("no start converged for {kind} ({} starts)", starts.len())]
    NoConvergence { kind: FdModelKind, starts: Vec<StartOutcome> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMethod {
    /// Projected Levenberg–Marquardt with analytic Jacobians.
    LevenbergMarquardt,
    /// Derivative-free simplex search, clamped to the box.
    NelderMead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Relative objective decrease below which a start counts as converged.
    pub tolerance: f64,
    pub method: LocalMethod,
    /// Per-model boxes overriding [`default_bounds`].
    pub bounds: BTreeMap<FdModelKind, ParamBounds>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 100,
            seed: 0,
            max_iterations: 500,
            tolerance: 1e-10,
            method: LocalMethod::LevenbergMarquardt,
            bounds: BTreeMap::new(),
        }
    }
}

impl FitConfig {
    pub fn with_starts(mut self, n: usize) -> Self {
        self.n_starts = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<(), FitError> {
        if self.n_starts == 0 {
            return Err(FitError::Config("n_starts must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(FitError::Config("tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(FitError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// How one start ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goodness {
    pub sse: f64,
    pub rmse: f64,
    /// Absent when every observed flow is identical.
    pub r_squared: Option<f64>,
}

/// Sum of squared errors, root-mean-square error and coefficient of
/// determination of a parameter set on `[density, flow]` points.
pub fn goodness(params: &FdModelParams, points: &[[f64; 2]]) -> Result<Goodness, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewForGoodness);
    }
    let predictions: Vec<f64> = points
        .iter()
        .map(|&[d, _]| flux_unchecked(params.kind(), params.values(), d))
        .collect();
    Ok(goodness_from_predictions(points, &predictions))
}

fn goodness_from_predictions(points: &[[f64; 2]], predictions: &[f64]) -> Goodness {
    let n = points.len() as f64;
    let sse: f64 = points
        .iter()
        .zip(predictions)
        .map(|(&[_, f], p)| (f - p) * (f - p))
        .sum();
    let mean = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let sst: f64 = points.iter().map(|p| (p[1] - mean) * (p[1] - mean)).sum();
    Goodness {
        sse,
        rmse: (sse / n).sqrt(),
        r_squared: (sst > 0.0).then(|| 1.0 - sse / sst),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best_params: FdModelParams,
    pub sse: f64,
    pub rmse: f64,
    pub r_squared: Option<f64>,
    /// Final objective of every start, in start order.
    pub start_objectives: Vec<f64>,
    pub converged_starts: usize,
    pub n_points: usize,
}

impl FitResult {
    pub fn kind(&self) -> FdModelKind {
        self.best_params.kind()
    }

    pub fn n_starts(&self) -> usize {
        self.start_objectives.len()
    }
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let names = self.kind().param_names();
        let params: BTreeMap<&str, f64> = names.iter().copied().zip(self.best_params.values().iter().copied()).collect();
        let mut map = serializer.serialize_map(Some(7))?;
        map.serialize_entry("model", &self.kind())?;
        map.serialize_entry("params", &params)?;
        map.serialize_entry("sse", &self.sse)?;
        map.serialize_entry("rmse", &self.rmse)?;
        map.serialize_entry("r2", &self.r_squared)?;
        map.serialize_entry("n_starts", &self.n_starts())?;
        map.serialize_entry("converged", &self.converged_starts)?;
        map.end()
    }
}

fn check_points(kind: FdModelKind, points: &[[f64; 2]]) -> Result<(), FitError> {
    let needed = kind.n_params() + 1;
    if points.len() < needed {
        return Err(FitError::TooFewPoints {
            kind,
            needed,
            got: points.len(),
        });
    }
    if let Some(i) = points
        .iter()
        .position(|p| !(p[0].is_finite() && p[1].is_finite() && p[0] >= 0.0))
    {
        return Err(FitError::BadPoint(i));
    }
    let first = points[0][0];
    if points.iter().all(|p| p[0] == first) {
        return Err(FitError::DegenerateDensities);
    }
    Ok(())
}

/// The box a fit of `kind` on `points` searches.
pub fn bounds_for(kind: FdModelKind, points: &[[f64; 2]], config: &FitConfig) -> Result<ParamBounds, FitError> {
    match config.bounds.get(&kind) {
        Some(b) => Ok(b.clone()),
        None => Ok(default_bounds(kind, &DataSummary::from_points(points)?)?),
    }
}

/// Fits one model to `[density, flow]` points.
pub fn fit(kind: FdModelKind, points: &[[f64; 2]], config: &FitConfig) -> Result<FitResult, FitError> {
    config.check()?;
    check_points(kind, points)?;
    let bounds = bounds_for(kind, points, config)?;
    let problem = Problem {
        kind,
        points,
        lower: &bounds.lower,
        width: bounds.lower.iter().zip(&bounds.upper).map(|(l, h)| h - l).collect(),
    };
    let starts: Vec<(Vec<f64>, StartOutcome)> = (0..config.n_starts)
        .into_par_iter()
        .map(|i| {
            let u0 = start_point(config.seed, i as u64, kind.n_params());
            match config.method {
                LocalMethod::LevenbergMarquardt => problem.levenberg_marquardt(u0, config),
                LocalMethod::NelderMead => problem.nelder_mead(u0, config),
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (_, out)) in starts.iter().enumerate() {
        if out.converged && out.objective.is_finite() && best.is_none_or(|b| out.objective < starts[b].1.objective) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(FitError::NoConvergence {
            kind,
            starts: starts.into_iter().map(|s| s.1).collect(),
        });
    };
    let best_params = FdModelParams::new(kind, problem.to_params(&starts[best].0))?;
    let g = goodness(&best_params, points)?;
    Ok(FitResult {
        best_params,
        sse: g.sse,
        rmse: g.rmse,
        r_squared: g.r_squared,
        converged_starts: starts.iter().filter(|s| s.1.converged).count(),
        start_objectives: starts.into_iter().map(|s| s.1.objective).collect(),
        n_points: points.len(),
    })
}

fn start_point(seed: u64, index: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

struct Problem<'a> {
    kind: FdModelKind,
    points: &'a [[f64; 2]],
    lower: &'a [f64],
    width: Vec<f64>,
}

const MAX_DIM: usize = 4;

impl Problem<'_> {
    fn to_params(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.width))
            .map(|(u, (lo, w))| lo + u * w)
            .collect()
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let p = self.to_params(u);
        self.points
            .iter()
            .map(|&[d, f]| {
                let r = flux_unchecked(self.kind, &p, d) - f;
                r * r
            })
            .sum()
    }

    /// Normal equations `JᵀJ` and `Jᵀr` in normalized coordinates, plus SSE.
    fn normal_equations(&self, u: &[f64]) -> ([[f64; MAX_DIM]; MAX_DIM], [f64; MAX_DIM], f64) {
        let k = u.len();
        let p = self.to_params(u);
        let mut jtj = [[0.0; MAX_DIM]; MAX_DIM];
        let mut jtr = [0.0; MAX_DIM];
        let mut sse = 0.0;
        let mut grad = [0.0; MAX_DIM];
        for &[d, f] in self.points {
            let r = flux_with_gradient(self.kind, &p, d, &mut grad) - f;
            sse += r * r;
            for a in 0..k {
                grad[a] *= self.width[a];
            }
            for a in 0..k {
                jtr[a] += grad[a] * r;
                for b in 0..=a {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                jtj[b][a] = jtj[a][b];
            }
        }
        (jtj, jtr, sse)
    }

    fn levenberg_marquardt(&self, mut u: Vec<f64>, config: &FitConfig) -> (Vec<f64>, StartOutcome) {
        let k = u.len();
        let (mut jtj, mut jtr, mut sse) = self.normal_equations(&u);
        let mut damping = 1e-3;
        for iter in 0..config.max_iterations {
            if sse == 0.0 {
                return (u, outcome(sse, true, iter));
            }
            // parameters pinned at a bound by a gradient pointing outward stay put
            let free: Vec<usize> = (0..k)
                .filter(|&i| !((u[i] <= 0.0 && jtr[i] > 0.0) || (u[i] >= 1.0 && jtr[i] < 0.0)))
                .collect();
            if free.is_empty() {
                return (u, outcome(sse, true, iter));
            }
            let m = free.len();
            let mut accepted = None;
            while damping < 1e20 {
                let mut a = [[0.0; MAX_DIM]; MAX_DIM];
                let mut rhs = [0.0; MAX_DIM];
                for (r, &i) in free.iter().enumerate() {
                    for (c, &j) in free.iter().enumerate() {
                        a[r][c] = jtj[i][j];
                    }
                    a[r][r] += damping * jtj[i][i].max(1e-12);
                    rhs[r] = -jtr[i];
                }
                let Some(reduced) = solve(&mut a, &mut rhs, m) else {
                    damping *= 10.0;
                    continue;
                };
                let mut step = [0.0; MAX_DIM];
                for (r, &i) in free.iter().enumerate() {
                    step[i] = reduced[r];
                }
                let trial: Vec<f64> = (0..k).map(|i| (u[i] + step[i]).clamp(0.0, 1.0)).collect();
                let trial_sse = self.objective(&trial);
                if trial_sse < sse {
                    accepted = Some((trial, trial_sse));
                    damping = (damping * 0.3).max(1e-15);
                    break;
                }
                damping *= 10.0;
            }
            let Some((trial, trial_sse)) = accepted else {
                // no descent step left in the box
                return (u, outcome(sse, true, iter));
            };
            let decrease = (sse - trial_sse) / sse;
            u = trial;
            (jtj, jtr, sse) = self.normal_equations(&u);
            if decrease < config.tolerance {
                return (u, outcome(sse, true, iter + 1));
            }
        }
        (u, outcome(sse, false, config.max_iterations))
    }

    fn nelder_mead(&self, u0: Vec<f64>, config: &FitConfig) -> (Vec<f64>, StartOutcome) {
        let k = u0.len();
        let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
        simplex.push((u0.clone(), self.objective(&u0)));
        for i in 0..k {
            let mut v = u0.clone();
            v[i] += if v[i] < 0.9 { 0.1 } else { -0.1 };
            let f = self.objective(&v);
            simplex.push((v, f));
        }
        for iter in 0..config.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[k].1;
            if worst - best <= config.tolerance * best.abs() || worst == 0.0 {
                let (u, f) = simplex.swap_remove(0);
                return (u, outcome(f, true, iter));
            }
            let centroid: Vec<f64> = (0..k)
                .map(|j| simplex[..k].iter().map(|v| v.0[j]).sum::<f64>() / k as f64)
                .collect();
            let toward = |t: f64| -> Vec<f64> {
                clamp((0..k).map(|j| centroid[j] + t * (simplex[k].0[j] - centroid[j])).collect())
            };
            let reflected = toward(-1.0);
            let fr = self.objective(&reflected);
            if fr < simplex[0].1 {
                let expanded = toward(-2.0);
                let fe = self.objective(&expanded);
                simplex[k] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[k - 1].1 {
                simplex[k] = (reflected, fr);
            } else {
                let contracted = if fr < worst { toward(-0.5) } else { toward(0.5) };
                let fc = self.objective(&contracted);
                if fc < worst.min(fr) {
                    simplex[k] = (contracted, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        let shrunk: Vec<f64> = (0..k).map(|j| anchor[j] + 0.5 * (v.0[j] - anchor[j])).collect();
                        v.1 = self.objective(&shrunk);
                        v.0 = shrunk;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (u, f) = simplex.swap_remove(0);
        (u, outcome(f, false, config.max_iterations))
    }
}

fn outcome(objective: f64, converged: bool, iterations: usize) -> StartOutcome {
    StartOutcome {
        objective,
        converged,
        iterations,
    }
}

/// Gaussian elimination with partial pivoting on the leading `n×n` block.
fn solve(a: &mut [[f64; MAX_DIM]; MAX_DIM], b: &mut [f64; MAX_DIM], n: usize) -> Option<[f64; MAX_DIM]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 0.0) || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; MAX_DIM];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Ranked fits of several models on the same data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    /// Ascending RMSE; equal RMSE puts the model with fewer parameters first.
    pub ranked: Vec<FitResult>,
    pub failures: Vec<(FdModelKind, FitError)>,
}

impl Comparison {
    pub fn best(&self) -> Option<&FitResult> {
        self.ranked.first()
    }
}

pub fn compare_models(points: &[[f64; 2]], kinds: &[FdModelKind], config: &FitConfig) -> Comparison {
    let mut out = Comparison::default();
    for &kind in kinds {
        match fit(kind, points, config) {
            Ok(r) => out.ranked.push(r),
            Err(e) => out.failures.push((kind, e)),
        }
    }
    out.ranked
        .sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.kind().n_params().cmp(&b.kind().n_params())));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedComparison<K: Ord> {
    pub segments: BTreeMap<K, Comparison>,
    /// Segments too small or degenerate to fit, with the reason.
    pub skipped: Vec<(K, String)>,
}

/// Runs [`compare_models`] on every segment large enough for the requested
/// models.
pub fn fit_segmented<K: Ord + Clone>(
    segments: &BTreeMap<K, Vec<[f64; 2]>>,
    kinds: &[FdModelKind],
    config: &FitConfig,
) -> SegmentedComparison<K> {
    let mut out = SegmentedComparison {
        segments: BTreeMap::new(),
        skipped: Vec::new(),
    };
    let largest = kinds.iter().copied().max_by_key(|k| k.n_params());
    for (key, points) in segments {
        let precheck = match largest {
            Some(kind) => check_points(kind, points),
            None => Ok(()),
        };
        match precheck {
            Ok(()) => {
                out.segments.insert(key.clone(), compare_models(points, kinds, config));
            }
            Err(e) => out.skipped.push((key.clone(), e.to_string())),
        }
    }
    out
}
