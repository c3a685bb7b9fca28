//! Grouping links by their fitted diagram parameters.
//!
//! Parameter vectors are rescaled per feature, merged bottom-up with Ward's
//! minimum-variance criterion, and the resulting dendrogram is cut into a
//! chosen number of groups for summary.
//!
//! Cluster labels follow the usual agglomerative convention: leaves are
//! `0..n`, and the cluster created by merge `s` is labelled `n + s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EventCounts, LinkSeries};
use crate::stats::FiveNumber;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkClusterError {
    #[error("need at least 2 vectors, got {0}")]
    TooFew(usize),
    #[error("vector for `{link}` has {got} features, expected {expected}")]
    DimensionMismatch { link: String, expected: usize, got: usize },
    #[error("vector for `{0}` has a non-finite feature")]
    NonFinite(String),
    #[error("feature {0} has no positive value to scale by")]
    ZeroFeature(usize),
    #[error("cannot cut {n} leaves into {k} clusters")]
    BadK { k: usize, n: usize },
    #[error("{0} assignments for {1} parameter vectors")]
    AssignmentLength(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub link_id: String,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(link_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            link_id: link_id.into(),
            values,
        }
    }
}

fn check_vectors(vectors: &[ParameterVector]) -> Result<usize, LinkClusterError> {
    let dim = vectors.first().map_or(0, |v| v.values.len());
    for v in vectors {
        if v.values.len() != dim {
            return Err(LinkClusterError::DimensionMismatch {
                link: v.link_id.clone(),
                expected: dim,
                got: v.values.len(),
            });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(LinkClusterError::NonFinite(v.link_id.clone()));
        }
    }
    Ok(dim)
}

/// Divides each feature by its maximum over all links.
pub fn rescale_by_max(vectors: &[ParameterVector]) -> Result<Vec<ParameterVector>, LinkClusterError> {
    let dim = check_vectors(vectors)?;
    let maxima: Vec<f64> = (0..dim)
        .map(|f| vectors.iter().map(|v| v.values[f]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    if let Some(f) = maxima.iter().position(|m| !(*m > 0.0)) {
        return Err(LinkClusterError::ZeroFeature(f));
    }
    Ok(vectors
        .iter()
        .map(|v| ParameterVector {
            link_id: v.link_id.clone(),
            values: v.values.iter().zip(&maxima).map(|(x, m)| x / m).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Ward's cost of merging two clusters: the increase in within-cluster sum
/// of squares, `|A||B| / (|A| + |B|) · ‖c_A − c_B‖²`.
pub fn ward_cost(size_a: usize, centroid_a: &[f64], size_b: usize, centroid_b: &[f64]) -> f64 {
    let (na, nb) = (size_a as f64, size_b as f64);
    let sq: f64 = centroid_a.iter().zip(centroid_b).map(|(x, y)| (x - y) * (x - y)).sum();
    na * nb / (na + nb) * sq
}

/// Agglomerative clustering with Ward linkage and Euclidean distance.
///
/// Costs are updated with the Lance–Williams recurrence. Each step merges the
/// cheapest pair of live clusters; ties go to the lexicographically smallest
/// `(a, b)` label pair, with `a < b`.
pub fn hac_ward(vectors: &[ParameterVector]) -> Result<Dendrogram, LinkClusterError> {
    let n = vectors.len();
    if n < 2 {
        return Err(LinkClusterError::TooFew(n));
    }
    check_vectors(vectors)?;
    let total = 2 * n - 1;
    let mut cost = vec![vec![f64::NAN; total]; total];
    for i in 0..n {
        for j in i + 1..n {
            let c = ward_cost(1, &vectors[i].values, 1, &vectors[j].values);
            cost[i][j] = c;
            cost[j][i] = c;
        }
    }
    let mut size = vec![0usize; total];
    size[..n].fill(1);
    let mut live: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (0, 0, f64::INFINITY);
        for (x, &a) in live.iter().enumerate() {
            for &b in &live[x + 1..] {
                if cost[a][b] < best.2 {
                    best = (a, b, cost[a][b]);
                }
            }
        }
        let (a, b, height) = best;
        let new = n + step;
        size[new] = size[a] + size[b];
        live.retain(|&c| c != a && c != b);
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &c in &live {
            let nc = size[c] as f64;
            let updated = ((na + nc) * cost[c][a] + (nb + nc) * cost[c][b] - nc * height) / (na + nb + nc);
            cost[c][new] = updated;
            cost[new][c] = updated;
        }
        live.push(new);
        merges.push(Merge {
            a,
            b,
            height,
            size: size[new],
        });
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Cluster index per leaf after undoing the last `k - 1` merges.
///
/// Clusters are numbered `0..k` in order of their lowest leaf.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>, LinkClusterError> {
    let n = dendrogram.n_leaves;
    if k == 0 || k > n {
        return Err(LinkClusterError::BadK { k, n });
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        parent[m.a] = n + step;
        parent[m.b] = n + step;
    }
    let mut labels: Vec<Option<usize>> = vec![None; 2 * n - 1];
    let mut next = 0;
    Ok((0..n)
        .map(|leaf| {
            let r = root(&mut parent, leaf);
            *labels[r].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEvents {
    pub link_id: String,
    #[serde(flatten)]
    pub counts: EventCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    #[serde(flatten)]
    pub summary: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub members: Vec<String>,
    /// Five-number summary per feature, in feature order.
    pub params: Vec<ParamSummary>,
    pub events: Vec<LinkEvents>,
    pub accidents_obstructions: FiveNumber,
    pub abnormal_traffic: FiveNumber,
}

/// Box-plot summaries of each cluster's parameters and per-link event counts.
///
/// `params` are summarized exactly as given, so pass unscaled values for
/// interpretable units. Links missing from `series` count zero events.
pub fn summarize(
    assignments: &[usize],
    params: &[ParameterVector],
    feature_names: &[&str],
    series: &[LinkSeries],
) -> Result<Vec<ClusterSummary>, LinkClusterError> {
    if assignments.len() != params.len() {
        return Err(LinkClusterError::AssignmentLength(assignments.len(), params.len()));
    }
    let dim = check_vectors(params)?;
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let counts_for = |id: &str| {
        series
            .iter()
            .find(|s| s.link().id == id)
            .map(EventCounts::of)
            .unwrap_or(EventCounts {
                accidents_obstructions: 0,
                abnormal_traffic: 0,
            })
    };
    let mut out = Vec::new();
    for cluster in 0..k {
        let members: Vec<&ParameterVector> = params
            .iter()
            .zip(assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let summaries = (0..dim)
            .map(|f| {
                let parameter = feature_names.get(f).map_or_else(|| format!("feature_{f}"), |s| s.to_string());
                let column: Vec<f64> = members.iter().map(|m| m.values[f]).collect();
                ParamSummary {
                    parameter,
                    summary: FiveNumber::of(&column).expect("non-empty cluster"),
                }
            })
            .collect();
        let events: Vec<LinkEvents> = members
            .iter()
            .map(|m| LinkEvents {
                link_id: m.link_id.clone(),
                counts: counts_for(&m.link_id),
            })
            .collect();
        let column = |f: fn(&EventCounts) -> usize| -> FiveNumber {
            let v: Vec<f64> = events.iter().map(|e| f(&e.counts) as f64).collect();
            FiveNumber::of(&v).expect("non-empty cluster")
        };
        out.push(ClusterSummary {
            cluster,
            members: members.iter().map(|m| m.link_id.clone()).collect(),
            params: summaries,
            accidents_obstructions: column(|c| c.accidents_obstructions),
            abnormal_traffic: column(|c| c.abnormal_traffic),
            events,
        });
    }
    Ok(out)
}
