//! The seven flow–density fundamental diagrams.
//!
//! Each model maps density (veh/km) to flow (veh/h). Parameters are kept as a
//! flat vector in the canonical order returned by [`FdModelKind::param_names`],
//! which is also the order the fitter optimizes in.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{kind} takes {expected} parameters, got {got}")]
    Arity {
        kind: FdModelKind,
        expected: usize,
        got: usize,
    },
    #[error("density must be non-negative, got {0}")]
    NegativeDensity(f64),
    #[error("data summary must be positive and finite: {0}")]
    BadSummary(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdModelKind {
    Greenshields,
    Greenberg,
    Northwestern,
    Newell,
    Logistic,
    DaganzoNewell,
    ContinuousTriangle,
}

impl FdModelKind {
    pub const ALL: [FdModelKind; 7] = [
        FdModelKind::Greenshields,
        FdModelKind::Greenberg,
        FdModelKind::Northwestern,
        FdModelKind::Newell,
        FdModelKind::Logistic,
        FdModelKind::DaganzoNewell,
        FdModelKind::ContinuousTriangle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FdModelKind::Greenshields => "greenshields",
            FdModelKind::Greenberg => "greenberg",
            FdModelKind::Northwestern => "northwestern",
            FdModelKind::Newell => "newell",
            FdModelKind::Logistic => "logistic",
            FdModelKind::DaganzoNewell => "daganzo_newell",
            FdModelKind::ContinuousTriangle => "continuous_triangle",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FdModelKind::Greenshields => &["v_free", "rho_max"],
            FdModelKind::Greenberg => &["v_capacity", "rho_max"],
            FdModelKind::Northwestern => &["v_free", "rho_crit"],
            FdModelKind::Newell => &["v_free", "rho_max", "c1"],
            FdModelKind::Logistic => &["v_free", "rho_crit", "c2"],
            FdModelKind::DaganzoNewell => &["MaxFlow", "rho_crit", "rho_max"],
            FdModelKind::ContinuousTriangle => &["alpha", "lambda", "p", "rho_max"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    /// Triangular shapes, the sharp and the smoothed one.
    pub fn is_triangular(self) -> bool {
        matches!(self, FdModelKind::DaganzoNewell | FdModelKind::ContinuousTriangle)
    }
}

impl fmt::Display for FdModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FdModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FdModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

/// A model kind together with its parameter values.
///
/// Serializes as `{"model": "<kind>", "params": {"<name>": value, ...}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdModelParams {
    kind: FdModelKind,
    values: Vec<f64>,
}

impl FdModelParams {
    pub fn new(kind: FdModelKind, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != kind.n_params() {
            return Err(ModelError::Arity {
                kind,
                expected: kind.n_params(),
                got: values.len(),
            });
        }
        Ok(Self { kind, values })
    }

    pub fn greenshields(v_free: f64, rho_max: f64) -> Self {
        Self::raw(FdModelKind::Greenshields, &[v_free, rho_max])
    }

    pub fn greenberg(v_capacity: f64, rho_max: f64) -> Self {
        Self::raw(FdModelKind::Greenberg, &[v_capacity, rho_max])
    }

    pub fn northwestern(v_free: f64, rho_crit: f64) -> Self {
        Self::raw(FdModelKind::Northwestern, &[v_free, rho_crit])
    }

    pub fn newell(v_free: f64, rho_max: f64, c1: f64) -> Self {
        Self::raw(FdModelKind::Newell, &[v_free, rho_max, c1])
    }

    pub fn logistic(v_free: f64, rho_crit: f64, c2: f64) -> Self {
        Self::raw(FdModelKind::Logistic, &[v_free, rho_crit, c2])
    }

    pub fn daganzo_newell(max_flow: f64, rho_crit: f64, rho_max: f64) -> Self {
        Self::raw(FdModelKind::DaganzoNewell, &[max_flow, rho_crit, rho_max])
    }

    pub fn continuous_triangle(alpha: f64, lambda: f64, p: f64, rho_max: f64) -> Self {
        Self::raw(FdModelKind::ContinuousTriangle, &[alpha, lambda, p, rho_max])
    }

    fn raw(kind: FdModelKind, values: &[f64]) -> Self {
        Self {
            kind,
            values: values.to_vec(),
        }
    }

    pub fn kind(&self) -> FdModelKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.kind
            .param_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    /// Flow at density `rho`.
    pub fn flux(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity(rho));
        }
        Ok(flux_unchecked(self.kind, &self.values, rho))
    }

    /// Jam density, for the models that have one.
    pub fn rho_max(&self) -> Option<f64> {
        self.get("rho_max")
    }

    /// Largest flow on `[0, rho_upper]`, located on a 10⁴-interval grid.
    pub fn peak_flow(&self, rho_upper: f64) -> (f64, f64) {
        let n = 10_000;
        (0..=n)
            .map(|i| {
                let rho = rho_upper * i as f64 / n as f64;
                (rho, flux_unchecked(self.kind, &self.values, rho))
            })
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Every violated parameter constraint, by name. Empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let names = self.kind.param_names();
        for (name, v) in names.iter().zip(&self.values) {
            if !v.is_finite() {
                out.push(format!("{name} is finite"));
            } else if *name == "p" {
                if !(*v > 0.0 && *v < 1.0) {
                    out.push("0 < p < 1".to_string());
                }
            } else if *v <= 0.0 {
                out.push(format!("{name} > 0"));
            }
        }
        if let (Some(c), Some(m)) = (self.get("rho_crit"), self.rho_max()) {
            if !(c < m) {
                out.push("rho_crit < rho_max".to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

impl Serialize for FdModelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Params<'a>(&'a FdModelParams);
        impl Serialize for Params<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let names = self.0.kind.param_names();
                let mut map = serializer.serialize_map(Some(names.len()))?;
                for (n, v) in names.iter().zip(&self.0.values) {
                    map.serialize_entry(n, v)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("model", &self.kind)?;
        map.serialize_entry("params", &Params(self))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for FdModelParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            model: FdModelKind,
            params: HashMap<String, f64>,
        }
        let mut r = Repr::deserialize(deserializer)?;
        let mut values = Vec::new();
        for name in r.model.param_names() {
            let v = r
                .params
                .remove(*name)
                .ok_or_else(|| D::Error::custom(format!("{} needs parameter `{name}`", r.model)))?;
            values.push(v);
        }
        if let Some(extra) = r.params.keys().next() {
            return Err(D::Error::custom(ModelError::UnknownParam(extra.clone())));
        }
        Ok(Self { kind: r.model, values })
    }
}

/// Logistic sigmoid `1 / (1 + e^z)`, stable for large |z|.
fn decreasing_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Evaluates a model without checking arity or the sign of `rho`.
///
/// Greenberg and Newell take their continuous limit (zero) at `rho = 0`.
/// Greenshields, Newell and Daganzo–Newell are clamped to zero beyond their
/// jam density.
pub fn flux_unchecked(kind: FdModelKind, p: &[f64], rho: f64) -> f64 {
    match kind {
        FdModelKind::Greenshields => {
            let (v, m) = (p[0], p[1]);
            if rho >= m {
                0.0
            } else {
                rho * v * (1.0 - rho / m)
            }
        }
        FdModelKind::Greenberg => {
            let (v, m) = (p[0], p[1]);
            if rho == 0.0 {
                0.0
            } else {
                rho * v * (m / rho).ln()
            }
        }
        FdModelKind::Northwestern => {
            let (v, c) = (p[0], p[1]);
            let r = rho / c;
            rho * v * (-0.5 * r * r).exp()
        }
        FdModelKind::Newell => {
            let (v, m, c1) = (p[0], p[1], p[2]);
            if rho == 0.0 || rho >= m {
                0.0
            } else {
                let g = -(c1 / v) * (1.0 / rho - 1.0 / m);
                -rho * v * g.exp_m1()
            }
        }
        FdModelKind::Logistic => {
            let (v, c, s) = (p[0], p[1], p[2]);
            rho * v * decreasing_sigmoid((rho - c) / s)
        }
        FdModelKind::DaganzoNewell => {
            let (q, c, m) = (p[0], p[1], p[2]);
            if rho <= c {
                q * (rho / c)
            } else if rho <= m {
                q * (m - rho) / (m - c)
            } else {
                0.0
            }
        }
        FdModelKind::ContinuousTriangle => {
            let (alpha, lambda, pp, m) = (p[0], p[1], p[2], p[3]);
            let x = rho / m;
            let a = (1.0 + (lambda * pp).powi(2)).sqrt();
            let b = (1.0 + (lambda * (1.0 - pp)).powi(2)).sqrt();
            let y = lambda * (x - pp);
            alpha * (a + (b - a) * x - (1.0 + y * y).sqrt())
        }
    }
}

/// Flow and its partial derivatives with respect to each parameter, in
/// canonical order. `grad` must hold at least `kind.n_params()` entries.
pub fn flux_with_gradient(kind: FdModelKind, p: &[f64], rho: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    match kind {
        FdModelKind::Greenshields => {
            let (v, m) = (p[0], p[1]);
            if rho >= m {
                return 0.0;
            }
            grad[0] = rho * (1.0 - rho / m);
            grad[1] = v * rho * rho / (m * m);
            rho * v * (1.0 - rho / m)
        }
        FdModelKind::Greenberg => {
            let (v, m) = (p[0], p[1]);
            if rho == 0.0 {
                return 0.0;
            }
            let l = (m / rho).ln();
            grad[0] = rho * l;
            grad[1] = rho * v / m;
            rho * v * l
        }
        FdModelKind::Northwestern => {
            let (v, c) = (p[0], p[1]);
            let r = rho / c;
            let e = (-0.5 * r * r).exp();
            grad[0] = rho * e;
            grad[1] = rho * v * e * r * r / c;
            rho * v * e
        }
        FdModelKind::Newell => {
            let (v, m, c1) = (p[0], p[1], p[2]);
            if rho == 0.0 || rho >= m {
                return 0.0;
            }
            let inv = 1.0 / rho - 1.0 / m;
            let g = -(c1 / v) * inv;
            let eg = g.exp();
            grad[0] = rho * (-g.exp_m1() + g * eg);
            grad[1] = rho * c1 * eg / (m * m);
            grad[2] = eg * (1.0 - rho / m);
            -rho * v * g.exp_m1()
        }
        FdModelKind::Logistic => {
            let (v, c, s) = (p[0], p[1], p[2]);
            let z = (rho - c) / s;
            let sig = decreasing_sigmoid(z);
            let slope = sig * (1.0 - sig);
            grad[0] = rho * sig;
            grad[1] = rho * v * slope / s;
            grad[2] = rho * v * slope * z / s;
            rho * v * sig
        }
        FdModelKind::DaganzoNewell => {
            let (q, c, m) = (p[0], p[1], p[2]);
            if rho <= c {
                grad[0] = rho / c;
                grad[1] = -q * rho / (c * c);
                q * (rho / c)
            } else if rho <= m {
                let w = m - c;
                grad[0] = (m - rho) / w;
                grad[1] = q * (m - rho) / (w * w);
                grad[2] = q * (rho - c) / (w * w);
                q * (m - rho) / w
            } else {
                0.0
            }
        }
        FdModelKind::ContinuousTriangle => {
            let (alpha, lambda, pp, m) = (p[0], p[1], p[2], p[3]);
            let x = rho / m;
            let a = (1.0 + (lambda * pp).powi(2)).sqrt();
            let b = (1.0 + (lambda * (1.0 - pp)).powi(2)).sqrt();
            let y = lambda * (x - pp);
            let s = (1.0 + y * y).sqrt();
            let shape = a + (b - a) * x - s;
            let da_dl = lambda * pp * pp / a;
            let db_dl = lambda * (1.0 - pp).powi(2) / b;
            let ds_dl = y * (x - pp) / s;
            let da_dp = lambda * lambda * pp / a;
            let db_dp = -lambda * lambda * (1.0 - pp) / b;
            grad[0] = shape;
            grad[1] = alpha * (da_dl * (1.0 - x) + db_dl * x - ds_dl);
            grad[2] = alpha * (da_dp * (1.0 - x) + db_dp * x + lambda * y / s);
            grad[3] = alpha * ((b - a) - lambda * y / s) * (-x / m);
            alpha * shape
        }
    }
}

/// Observed maxima used to build parameter boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub max_flow: f64,
    pub max_density: f64,
    pub max_speed: f64,
}

impl DataSummary {
    pub fn new(max_flow: f64, max_density: f64, max_speed: f64) -> Result<Self, ModelError> {
        for (n, v) in [("max_flow", max_flow), ("max_density", max_density), ("max_speed", max_speed)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::BadSummary(format!("{n} = {v}")));
            }
        }
        Ok(Self {
            max_flow,
            max_density,
            max_speed,
        })
    }

    /// Maxima over `[density, flow]` pairs; speed is taken as the largest
    /// flow/density ratio.
    pub fn from_points(points: &[[f64; 2]]) -> Result<Self, ModelError> {
        let mut s = (0.0f64, 0.0f64, 0.0f64);
        for &[d, f] in points {
            s.0 = s.0.max(f);
            s.1 = s.1.max(d);
            if d > 0.0 {
                s.2 = s.2.max(f / d);
            }
        }
        Self::new(s.0, s.1, s.2)
    }
}

/// Closed box `[lower, upper]` per parameter, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub kind: FdModelKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(kind: FdModelKind, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        for got in [lower.len(), upper.len()] {
            if got != kind.n_params() {
                return Err(ModelError::Arity {
                    kind,
                    expected: kind.n_params(),
                    got,
                });
            }
        }
        Ok(Self { kind, lower, upper })
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// Same box with flow-valued parameters multiplied by `s`.
    pub fn scale_flow(&self, s: f64) -> Self {
        let mut out = self.clone();
        for (i, name) in self.kind.param_names().iter().enumerate() {
            if matches!(*name, "MaxFlow" | "alpha" | "c1") {
                out.lower[i] *= s;
                out.upper[i] *= s;
            }
        }
        out
    }
}

const LOW: f64 = 1e-3;

/// Search box for a model given the data it will be fitted to.
///
/// Jam densities lie in `[max_density, 5·max_density]`, velocities in
/// `[0.001·max_speed, 1.5·max_speed]` and capacities in
/// `[0.001·max_flow, 1.5·max_flow]`. Critical densities of the triangular
/// diagram stay at or below the largest observed density, so they never
/// exceed the jam density box.
pub fn default_bounds(kind: FdModelKind, s: &DataSummary) -> Result<ParamBounds, ModelError> {
    let s = DataSummary::new(s.max_flow, s.max_density, s.max_speed)?;
    let (f, d, v) = (s.max_flow, s.max_density, s.max_speed);
    let vel = (LOW * v, 1.5 * v);
    let jam = (d, 5.0 * d);
    let (lower, upper): (Vec<f64>, Vec<f64>) = match kind {
        FdModelKind::Greenshields | FdModelKind::Greenberg => [vel, jam].into_iter().unzip(),
        FdModelKind::Northwestern => [vel, (LOW * d, 2.0 * d)].into_iter().unzip(),
        FdModelKind::Newell => [vel, jam, (LOW * f, 10.0 * f)].into_iter().unzip(),
        FdModelKind::Logistic => [vel, (LOW * d, 2.0 * d), (LOW * d, 2.0 * d)].into_iter().unzip(),
        FdModelKind::DaganzoNewell => [(LOW * f, 1.5 * f), (LOW * d, d), jam].into_iter().unzip(),
        FdModelKind::ContinuousTriangle => [(LOW * f, 20.0 * f), (0.1, 200.0), (0.001, 0.999), jam]
            .into_iter()
            .unzip(),
    };
    ParamBounds::new(kind, lower, upper)
}
