//! Bivariate Gaussian kernel density estimation.
//!
//! The estimate at `x` is the average of Gaussian kernels centred on each
//! sample, all sharing one bandwidth (covariance) matrix `Σ`:
//!
//! ```text
//! p(x) = 1 / (N · 2π · |Σ|^½) · Σᵢ exp(-½ (x - Xᵢ)ᵀ Σ⁻¹ (x - Xᵢ))
//! ```
//!
//! Grids are stored row-major with the x axis outermost: the value for node
//! `(i, j)` lives at `values[i * n_y + j]`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::sample_std;

#[derive(Debug, Error, PartialEq)]
pub enum KdeError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("axis {0} has zero variance")]
    DegenerateAxis(usize),
    #[error("invalid bandwidth matrix: {0}")]
    InvalidBandwidth(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids are not aligned")]
    Misaligned,
}

/// Symmetric positive-definite 2×2 kernel covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix([[f64; 2]; 2]);

impl BandwidthMatrix {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self, KdeError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KdeError::InvalidBandwidth("non-finite entry".into()));
        }
        let off = m[0][1].abs().max(m[1][0].abs());
        if (m[0][1] - m[1][0]).abs() > 1e-12 * off.max(f64::MIN_POSITIVE) {
            return Err(KdeError::InvalidBandwidth("not symmetric".into()));
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(m[0][0] > 0.0 && det > 0.0) {
            return Err(KdeError::InvalidBandwidth("not positive definite".into()));
        }
        Ok(Self(m))
    }

    /// `diag(h1², h2²)` from per-axis standard deviations.
    pub fn diagonal(h1: f64, h2: f64) -> Result<Self, KdeError> {
        Self::new([[h1 * h1, 0.0], [0.0, h2 * h2]])
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let d = self.determinant();
        [[self.0[1][1] / d, -self.0[0][1] / d], [-self.0[1][0] / d, self.0[0][0] / d]]
    }

    /// Kernel standard deviation along each axis, `sqrt(Σᵢᵢ)`.
    pub fn axis_scales(&self) -> [f64; 2] {
        [self.0[0][0].sqrt(), self.0[1][1].sqrt()]
    }

    /// Kernel standard deviation along its widest direction, the square root
    /// of the largest eigenvalue. This is the scalar "bandwidth" used when a
    /// single length is needed.
    pub fn width(&self) -> f64 {
        self.eigenvalues()[1].sqrt()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.0;
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mid - rad, mid + rad]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMethod {
    /// Normal-reference rule for two dimensions: `Σᵢᵢ = (σᵢ · N^(-1/6))²`.
    RuleOfThumb,
    /// Per-axis kernel standard deviations, giving `diag(h1², h2²)`.
    FixedDiagonal(f64, f64),
}

pub fn select_bandwidth(points: &[[f64; 2]], method: BandwidthMethod) -> Result<BandwidthMatrix, KdeError> {
    match method {
        BandwidthMethod::FixedDiagonal(h1, h2) => BandwidthMatrix::diagonal(h1, h2),
        BandwidthMethod::RuleOfThumb => {
            if points.len() < 2 {
                return Err(KdeError::TooFewPoints {
                    needed: 2,
                    got: points.len(),
                });
            }
            let factor = (points.len() as f64).powf(-1.0 / 6.0);
            let mut h = [0.0; 2];
            for (axis, h) in h.iter_mut().enumerate() {
                let column: Vec<f64> = points.iter().map(|p| p[axis]).collect();
                let sd = sample_std(&column);
                if !(sd > 0.0) {
                    return Err(KdeError::DegenerateAxis(axis));
                }
                *h = sd * factor;
            }
            BandwidthMatrix::diagonal(h[0], h[1])
        }
    }
}

#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Vec<[f64; 2]>,
    bandwidth: BandwidthMatrix,
    inv: [[f64; 2]; 2],
    norm: f64,
}

impl KdeModel {
    pub fn new(points: Vec<[f64; 2]>, bandwidth: BandwidthMatrix) -> Result<Self, KdeError> {
        if points.is_empty() {
            return Err(KdeError::TooFewPoints { needed: 1, got: 0 });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KdeError::InvalidGrid("non-finite sample".into()));
        }
        let norm = 1.0 / (points.len() as f64 * 2.0 * PI * bandwidth.determinant().sqrt());
        Ok(Self {
            inv: bandwidth.inverse(),
            points,
            bandwidth,
            norm,
        })
    }

    /// Builds a model with a bandwidth chosen from the points themselves.
    pub fn fit(points: Vec<[f64; 2]>, method: BandwidthMethod) -> Result<Self, KdeError> {
        let bw = select_bandwidth(&points, method)?;
        Self::new(points, bw)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    /// `1 / (N (2π)^(d/2) |Σ|^½)` with `d = 2`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn evaluate(&self, x: [f64; 2]) -> f64 {
        let [[a, b], [c, d]] = self.inv;
        let sum: f64 = self
            .points
            .iter()
            .map(|p| {
                let dx = x[0] - p[0];
                let dy = x[1] - p[1];
                let q = dx * (a * dx + b * dy) + dy * (c * dx + d * dy);
                (-0.5 * q).exp()
            })
            .sum();
        self.norm * sum
    }

    /// Axis ranges covering every sample padded by `pad` kernel standard
    /// deviations on each side.
    pub fn padded_ranges(&self, pad: f64) -> [(f64, f64); 2] {
        let h = self.bandwidth.axis_scales();
        let mut out = [(f64::INFINITY, f64::NEG_INFINITY); 2];
        for p in &self.points {
            for axis in 0..2 {
                out[axis].0 = out[axis].0.min(p[axis]);
                out[axis].1 = out[axis].1.max(p[axis]);
            }
        }
        for axis in 0..2 {
            out[axis].0 -= pad * h[axis];
            out[axis].1 += pad * h[axis];
        }
        out
    }

    /// [`padded_ranges`](Self::padded_ranges) with the shorter range widened
    /// about its centre to match the longer one, so an `n × n` grid has
    /// square cells.
    pub fn square_ranges(&self, pad: f64) -> [(f64, f64); 2] {
        let mut r = self.padded_ranges(pad);
        let side = (r[0].1 - r[0].0).max(r[1].1 - r[1].0);
        for axis in &mut r {
            let mid = 0.5 * (axis.0 + axis.1);
            *axis = (mid - 0.5 * side, mid + 0.5 * side);
        }
        r
    }
}

/// Evenly spaced nodes from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self, KdeError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(KdeError::InvalidGrid(format!("degenerate range [{min}, {max}]")));
        }
        if n < 2 {
            return Err(KdeError::InvalidGrid(format!("need at least 2 nodes per axis, got {n}")));
        }
        Ok(Self { min, max, n })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub x: Axis,
    pub y: Axis,
    /// Row-major, x outermost.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_fn(x: Axis, y: Axis, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = (0..x.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = x.node(i);
                (0..y.n).map(move |j| (xi, y.node(j)))
            })
            .map(|(xi, yj)| f(xi, yj))
            .collect();
        Self { x, y, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y.n + j]
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x.node(i), self.y.node(j)]
    }

    pub fn cell_area(&self) -> f64 {
        self.x.step() * self.y.step()
    }

    /// Two-dimensional trapezoid rule over the grid rectangle.
    pub fn integral(&self) -> f64 {
        trapezoid(self.x, self.y, |i, j| self.get(i, j))
    }

    /// Writes `x,y,density` rows in storage order.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["x", "y", "density"])?;
        for i in 0..self.x.n {
            for j in 0..self.y.n {
                let [x, y] = self.node(i, j);
                wtr.write_record([x.to_string(), y.to_string(), self.get(i, j).to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn trapezoid(x: Axis, y: Axis, f: impl Fn(usize, usize) -> f64) -> f64 {
    let weight = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for i in 0..x.n {
        let wi = weight(i, x.n);
        for j in 0..y.n {
            total += wi * weight(j, y.n) * f(i, j);
        }
    }
    total * x.step() * y.step()
}

pub fn evaluate_grid(
    model: &KdeModel,
    x_range: (f64, f64),
    y_range: (f64, f64),
    n_x: usize,
    n_y: usize,
) -> Result<DensityGrid, KdeError> {
    let x = Axis::new(x_range.0, x_range.1, n_x)?;
    let y = Axis::new(y_range.0, y_range.1, n_y)?;
    Ok(DensityGrid::from_fn(x, y, |a, b| model.evaluate([a, b])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub x: f64,
    pub y: f64,
    pub density: f64,
    pub i: usize,
    pub j: usize,
}

/// Default floor for [`find_modes`]: maxima weaker than 5% of the strongest
/// are treated as sampling noise.
pub const DEFAULT_MIN_RELATIVE_DENSITY: f64 = 0.05;

/// Local maxima of a grid, strongest first.
///
/// A node qualifies when it is positive, no 8-neighbour exceeds it, and every
/// neighbour that precedes it in storage order is strictly lower. On a flat
/// plateau this keeps the first node met in row-major order. Candidates
/// within `min_separation` cells (Chebyshev distance) of a stronger accepted
/// mode are suppressed; equal densities keep storage order. Candidates below
/// `min_relative` times the strongest maximum are dropped; pass `0.0` to keep
/// every maximum.
pub fn find_modes(grid: &DensityGrid, min_separation: usize, min_relative: f64) -> Vec<Mode> {
    let (nx, ny) = (grid.x.n, grid.y.n);
    let mut candidates = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let v = grid.get(i, j);
            if !(v > 0.0) {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                        continue;
                    }
                    let w = grid.get(ni as usize, nj as usize);
                    let earlier = (ni, nj) < (i as i64, j as i64);
                    if w > v || (earlier && w == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                let [x, y] = grid.node(i, j);
                candidates.push(Mode { x, y, density: v, i, j });
            }
        }
    }
    candidates.sort_by(|a, b| b.density.total_cmp(&a.density));
    let floor = candidates.first().map_or(0.0, |m| m.density * min_relative);
    let mut accepted: Vec<Mode> = Vec::new();
    for c in candidates.into_iter().filter(|c| c.density >= floor) {
        let close = accepted
            .iter()
            .any(|m| m.i.abs_diff(c.i).max(m.j.abs_diff(c.j)) <= min_separation);
        if !close {
            accepted.push(c);
        }
    }
    accepted
}

/// Grid cells covering `widths` kernel widths along the finer axis, for use
/// as a [`find_modes`] separation.
pub fn separation_cells(grid: &DensityGrid, bandwidth: &BandwidthMatrix, widths: f64) -> usize {
    let step = grid.x.step().min(grid.y.step());
    (widths * bandwidth.width() / step).ceil() as usize
}

/// Trapezoid-rule integral of the squared difference between two grids
/// sampled on the same nodes.
pub fn integrated_squared_error(estimate: &DensityGrid, reference: &DensityGrid) -> Result<f64, KdeError> {
    if estimate.x != reference.x || estimate.y != reference.y || estimate.values.len() != reference.values.len() {
        return Err(KdeError::Misaligned);
    }
    Ok(trapezoid(estimate.x, estimate.y, |i, j| {
        let d = estimate.get(i, j) - reference.get(i, j);
        d * d
    }))
}
