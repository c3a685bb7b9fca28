//! Locating the low- and high-density traffic modes with k-medoids.
//!
//! Clustering runs on dimensionless (density, flow) coordinates produced by
//! [`ScaleFactors`]; distances are Euclidean. Medoids are always input points,
//! so a mode can be reported back in veh/km and veh/h without approximation.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FlowDensityPoint, ScaleFactors};
use crate::stats::quantile_sorted;

/// Largest input accepted by [`exact_kmedoids`].
pub const EXACT_MAX_POINTS: usize = 60;
const EXACT_MAX_SUBSETS: u128 = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("k must be between 1 and the number of points ({n}), got {k}")]
    BadK { k: usize, n: usize },
    #[error("exhaustive k-medoids is limited to {EXACT_MAX_POINTS} points and {EXACT_MAX_SUBSETS} subsets (got {n} points); use clara")]
    TooLarge { n: usize },
    #[error("fewer than {k} distinct points")]
    TooFewDistinct { k: usize },
    #[error("sample size {sample_size} is smaller than k = {k}")]
    SampleTooSmall { sample_size: usize, k: usize },
    #[error("cluster {0} does not exist or is empty")]
    EmptyCluster(usize),
    #[error("both medoids share density {0}")]
    Unordered(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidResult {
    /// Indices of the medoid points, ascending.
    pub medoids: Vec<usize>,
    /// For each point, the position in `medoids` of its nearest medoid.
    pub assignments: Vec<usize>,
    /// Sum of point-to-medoid distances.
    pub total_cost: f64,
}

impl MedoidResult {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

#[inline]
fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Nearest-medoid assignment; ties go to the earlier medoid.
pub fn assign(points: &[[f64; 2]], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (m, &idx) in medoids.iter().enumerate() {
                let d = dist(p, &points[idx]);
                if d < best.1 {
                    best = (m, d);
                }
            }
            cost += best.1;
            best.0
        })
        .collect();
    (assignments, cost)
}

fn finish(points: &[[f64; 2]], mut medoids: Vec<usize>) -> MedoidResult {
    medoids.sort_unstable();
    let (assignments, total_cost) = assign(points, &medoids);
    MedoidResult {
        medoids,
        assignments,
        total_cost,
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Globally optimal k-medoids by trying every subset of size `k`.
///
/// Subsets are visited in lexicographic order and only a strictly lower cost
/// replaces the incumbent, so ties resolve to the lexicographically first
/// medoid set.
pub fn exact_kmedoids(points: &[[f64; 2]], k: usize) -> Result<MedoidResult, ModeError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(ModeError::BadK { k, n });
    }
    if n > EXACT_MAX_POINTS || binomial(n, k) > EXACT_MAX_SUBSETS {
        return Err(ModeError::TooLarge { n });
    }
    let d: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| dist(a, b)).collect()).collect();
    let cost_of = |set: &[usize]| -> f64 {
        (0..n)
            .map(|i| set.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min))
            .sum()
    };
    let mut set: Vec<usize> = (0..k).collect();
    let mut best = (set.clone(), cost_of(&set));
    loop {
        // advance to the next combination
        let mut i = k;
        while i > 0 && set[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        set[i - 1] += 1;
        for j in i..k {
            set[j] = set[j - 1] + 1;
        }
        let c = cost_of(&set);
        if c < best.1 {
            best = (set.clone(), c);
        }
    }
    Ok(finish(points, best.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaraConfig {
    pub k: usize,
    pub sample_size: usize,
    pub n_restarts: usize,
    pub seed: u64,
}

impl ClaraConfig {
    /// `k` clusters with a sample of `200 + 2k` points and 50 restarts.
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            sample_size: 200 + 2 * k,
            n_restarts: 50,
            seed,
        }
    }
}

fn distinct_at_least(points: &[[f64; 2]], k: usize) -> bool {
    let mut seen: Vec<[f64; 2]> = Vec::with_capacity(k);
    for p in points {
        if !seen.contains(p) {
            seen.push(*p);
            if seen.len() >= k {
                return true;
            }
        }
    }
    false
}

/// CLARA: k-medoids on random subsamples, scored on the full data.
///
/// Each restart draws `min(sample_size, N)` points, picks `k` random sample
/// members as initial medoids, improves them by best-improvement swaps until
/// no swap lowers the sample cost, then assigns every point to the nearest
/// of those medoids. The cheapest restart wins, ties to the earliest.
pub fn clara(points: &[[f64; 2]], config: &ClaraConfig) -> Result<MedoidResult, ModeError> {
    let n = points.len();
    let k = config.k;
    if k == 0 || k > n {
        return Err(ModeError::BadK { k, n });
    }
    if config.sample_size < k {
        return Err(ModeError::SampleTooSmall {
            sample_size: config.sample_size,
            k,
        });
    }
    if !distinct_at_least(points, k) {
        return Err(ModeError::TooFewDistinct { k });
    }
    let restarts: Vec<MedoidResult> = (0..config.n_restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let sample: Vec<usize> = if config.sample_size >= n {
                (0..n).collect()
            } else {
                let mut s = index::sample(&mut rng, n, config.sample_size).into_vec();
                s.sort_unstable();
                s
            };
            let init: Vec<usize> = index::sample(&mut rng, sample.len(), k).into_vec();
            let local = pam_swap(points, &sample, init);
            finish(points, local.into_iter().map(|i| sample[i]).collect())
        })
        .collect();
    let mut best = 0;
    for (i, r) in restarts.iter().enumerate() {
        if r.total_cost < restarts[best].total_cost {
            best = i;
        }
    }
    Ok(restarts.into_iter().nth(best).expect("at least one restart"))
}

/// Swap-based local search over positions in `sample`.
fn pam_swap(points: &[[f64; 2]], sample: &[usize], mut medoids: Vec<usize>) -> Vec<usize> {
    let s = sample.len();
    let d: Vec<f64> = sample
        .iter()
        .flat_map(|&a| sample.iter().map(move |&b| dist(&points[a], &points[b])))
        .collect();
    let cost = |meds: &[usize]| -> f64 {
        (0..s)
            .map(|i| meds.iter().map(|&m| d[i * s + m]).fold(f64::INFINITY, f64::min))
            .sum()
    };
    let mut current = cost(&medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut trial = medoids.clone();
        for slot in 0..medoids.len() {
            for cand in 0..s {
                if medoids.contains(&cand) {
                    continue;
                }
                trial[slot] = cand;
                let c = cost(&trial);
                if c < best.map_or(current, |b| b.2) {
                    best = Some((slot, cand, c));
                }
            }
            trial[slot] = medoids[slot];
        }
        match best {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                current = c;
            }
            None => return medoids,
        }
    }
}

/// Sorted member-to-medoid distances of one cluster with summary quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub distances: Vec<f64>,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
}

impl DistanceDistribution {
    fn from_distances(mut distances: Vec<f64>) -> Self {
        distances.sort_by(f64::total_cmp);
        Self {
            q50: quantile_sorted(&distances, 0.5),
            q90: quantile_sorted(&distances, 0.9),
            q99: quantile_sorted(&distances, 0.99),
            distances,
        }
    }

    /// Root-mean-square distance to the medoid.
    pub fn rms(&self) -> f64 {
        (self.distances.iter().map(|d| d * d).sum::<f64>() / self.distances.len() as f64).sqrt()
    }
}

pub fn distance_distribution(
    points: &[[f64; 2]],
    result: &MedoidResult,
    cluster: usize,
) -> Result<DistanceDistribution, ModeError> {
    let medoid = *result.medoids.get(cluster).ok_or(ModeError::EmptyCluster(cluster))?;
    let distances: Vec<f64> = result.members(cluster).map(|i| dist(&points[i], &points[medoid])).collect();
    if distances.is_empty() {
        return Err(ModeError::EmptyCluster(cluster));
    }
    Ok(DistanceDistribution::from_distances(distances))
}

/// One mode: the medoid in raw units and the spread of its cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePoint {
    /// veh/km
    pub density: f64,
    /// veh/h
    pub flow: f64,
    /// RMS member-to-medoid distance on scaled coordinates.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub low: ModePoint,
    pub high: ModePoint,
    #[serde(skip)]
    pub low_distances: Option<DistanceDistribution>,
    #[serde(skip)]
    pub high_distances: Option<DistanceDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory<K: Ord> {
    pub entries: BTreeMap<K, ModeEntry>,
    pub skipped: Vec<(K, String)>,
}

/// Two-mode decomposition of a single point cloud.
pub fn two_modes(points: &[FlowDensityPoint], scale: &ScaleFactors, config: &ClaraConfig) -> Result<ModeEntry, ModeError> {
    let scaled: Vec<[f64; 2]> = points.iter().map(|p| scale.scale(p).xy()).collect();
    let result = clara(&scaled, &ClaraConfig { k: 2, ..*config })?;
    let (a, b) = (result.medoids[0], result.medoids[1]);
    let (low, high) = match scaled[a][0].total_cmp(&scaled[b][0]) {
        std::cmp::Ordering::Less => (0, 1),
        std::cmp::Ordering::Greater => (1, 0),
        std::cmp::Ordering::Equal => return Err(ModeError::Unordered(points[a].density)),
    };
    let summarize = |cluster: usize| -> Result<(ModePoint, DistanceDistribution), ModeError> {
        let dd = distance_distribution(&scaled, &result, cluster)?;
        let m = &points[result.medoids[cluster]];
        Ok((
            ModePoint {
                density: m.density,
                flow: m.flow,
                std: dd.rms(),
            },
            dd,
        ))
    };
    let (low, low_dd) = summarize(low)?;
    let (high, high_dd) = summarize(high)?;
    Ok(ModeEntry {
        low,
        high,
        low_distances: Some(low_dd),
        high_distances: Some(high_dd),
    })
}

/// Runs [`two_modes`] on every segment. All segments share one set of scale
/// factors so their modes are comparable.
pub fn mode_trajectory<K: Ord + Clone + Send + Sync>(
    segments: &BTreeMap<K, Vec<FlowDensityPoint>>,
    scale: &ScaleFactors,
    config: &ClaraConfig,
) -> ModeTrajectory<K> {
    let mut out = ModeTrajectory {
        entries: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for (key, points) in segments {
        match two_modes(points, scale, config) {
            Ok(entry) => {
                out.entries.insert(key.clone(), entry);
            }
            Err(e) => out.skipped.push((key.clone(), e.to_string())),
        }
    }
    out
}

/// Fractional decrease from `from` to `to`, e.g. 90 → 45 gives 0.5.
pub fn relative_change(from: f64, to: f64) -> f64 {
    (from - to) / from
}
