//! Seeded synthetic links with known generating parameters.
//!
//! Every random draw comes from [`ChaCha8Rng`] seeded through
//! `seed_from_u64`, so a spec and seed pin the output on every platform.
//! Per point the generator draws, in order: the mixture component, the
//! density jitter, and the flow noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    write_dataset, DataError, EventCategory, EventRecord, FlowDensityPoint, Link, LinkSeries, Observation,
    SignReading, SpeedLimit,
};
use crate::models::{FdModelParams, ModelError};

/// Sign heads emitted per limit change.
pub const SIGNS_PER_BATCH: usize = 2;
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("writing {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// First timestamp of every generated series.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    /// veh/km
    pub density: f64,
    pub weight: f64,
    /// Standard deviation of the Gaussian jitter around `density`, veh/km.
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum DensityLaw {
    Uniform { min: f64, max: f64 },
    Bimodal { low: MixtureComponent, high: MixtureComponent },
}

/// Mode densities to use while a given limit is displayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitModes {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub model: FdModelParams,
    pub density: DensityLaw,
    /// Flow noise standard deviation as a fraction of the curve's peak flow.
    pub noise_fraction: f64,
    pub n_points: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-limit mode densities; requires a bimodal law. Empty means the
    /// whole cloud is recorded under the national limit.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub limit_modes: BTreeMap<SpeedLimit, LimitModes>,
}

impl SynthSpec {
    pub fn new(model: FdModelParams, density: DensityLaw, noise_fraction: f64, n_points: usize, seed: u64) -> Self {
        Self {
            model,
            density,
            noise_fraction,
            n_points,
            seed,
            limit_modes: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if let Err(v) = self.model.validate() {
            return bad(format!("model parameters: {}", v.join(", ")));
        }
        if !(self.noise_fraction.is_finite() && self.noise_fraction >= 0.0) {
            return bad("noise_fraction must be >= 0".into());
        }
        if self.n_points == 0 {
            return bad("n_points must be >= 1".into());
        }
        let upper = self.model.rho_max().unwrap_or(f64::INFINITY);
        let in_range = |d: f64| d.is_finite() && (0.0..=upper).contains(&d);
        match self.density {
            DensityLaw::Uniform { min, max } => {
                if !(in_range(min) && in_range(max) && min < max) {
                    return bad(format!("uniform range must satisfy 0 <= min < max <= {upper}"));
                }
            }
            DensityLaw::Bimodal { low, high } => {
                for c in [low, high] {
                    if !in_range(c.density) {
                        return bad(format!("mode density {} outside [0, {upper}]", c.density));
                    }
                    if !(c.jitter.is_finite() && c.jitter >= 0.0) {
                        return bad("jitter must be >= 0".into());
                    }
                    if !(c.weight.is_finite() && c.weight >= 0.0) {
                        return bad("weights must be >= 0".into());
                    }
                }
                if (low.weight + high.weight - 1.0).abs() > 1e-9 {
                    return bad("mixture weights must sum to 1".into());
                }
            }
        }
        if !self.limit_modes.is_empty() {
            if !matches!(self.density, DensityLaw::Bimodal { .. }) {
                return bad("limit_modes requires a bimodal density law".into());
            }
            if self.limit_modes.contains_key(&SpeedLimit::National) {
                return bad("limit_modes keys must be displayed limits".into());
            }
            for m in self.limit_modes.values() {
                if !(in_range(m.low) && in_range(m.high)) {
                    return bad(format!("limit mode densities must lie in [0, {upper}]"));
                }
            }
        }
        Ok(())
    }

    /// Flow noise standard deviation in veh/h.
    pub fn noise_std(&self) -> f64 {
        let upper = match (self.model.rho_max(), self.density) {
            (Some(r), _) => r,
            (None, DensityLaw::Uniform { max, .. }) => max,
            (None, DensityLaw::Bimodal { low, high }) => {
                (low.density + 4.0 * low.jitter).max(high.density + 4.0 * high.jitter)
            }
        };
        self.noise_fraction * self.model.peak_flow(upper).1
    }

    fn with_modes(&self, modes: LimitModes) -> DensityLaw {
        match self.density {
            DensityLaw::Bimodal { low, high } => DensityLaw::Bimodal {
                low: MixtureComponent {
                    density: modes.low,
                    ..low
                },
                high: MixtureComponent {
                    density: modes.high,
                    ..high
                },
            },
            law => law,
        }
    }
}

fn sample(spec: &SynthSpec, law: DensityLaw, start: DateTime<Utc>) -> Result<Vec<FlowDensityPoint>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let upper = spec.model.rho_max().unwrap_or(f64::INFINITY);
    let noise_std = spec.noise_std();
    let noise = Normal::new(0.0, noise_std).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.n_points);
    for i in 0..spec.n_points {
        let density = match law {
            DensityLaw::Uniform { min, max } => rng.random_range(min..=max),
            DensityLaw::Bimodal { low, high } => {
                let c = if rng.random::<f64>() < low.weight { low } else { high };
                let jitter = Normal::new(c.density, c.jitter).map_err(|e| SynthError::Invalid(e.to_string()))?;
                jitter.sample(&mut rng).clamp(0.0, upper)
            }
        };
        let clean = spec.model.flux(density)?;
        let flow = if noise_std > 0.0 {
            (clean + noise.sample(&mut rng)).max(0.0)
        } else {
            clean
        };
        let speed = if density > 0.0 { flow / density } else { 0.0 };
        out.push(FlowDensityPoint {
            timestamp: start + Duration::minutes(i as i64),
            density,
            flow,
            speed,
        });
    }
    Ok(out)
}

/// One minute-resolution cloud of `n_points` under the spec's density law.
///
/// Flow is the model curve plus Gaussian noise, clamped at zero; speed is
/// flow over density, or zero where density is zero.
///
/// ```
/// use smartfd::models::FdModelParams;
/// use smartfd::synth::{generate, DensityLaw, SynthSpec};
/// let spec = SynthSpec::new(
///     FdModelParams::greenshields(100.0, 120.0),
///     DensityLaw::Uniform { min: 0.0, max: 120.0 },
///     0.0,
///     50,
///     7,
/// );
/// let points = generate(&spec).unwrap();
/// assert_eq!(points.len(), 50);
/// assert!(points.iter().all(|p| p.flow == spec.model.flux(p.density).unwrap()));
/// ```
pub fn generate(spec: &SynthSpec) -> Result<Vec<FlowDensityPoint>, SynthError> {
    spec.validate()?;
    sample(spec, spec.density, epoch())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSynth {
    pub segments: BTreeMap<SpeedLimit, Vec<FlowDensityPoint>>,
    /// One batch per limit, timestamped at the first minute of its block.
    pub signs: Vec<SignReading>,
}

/// One block of `n_points` per entry of the limit table, in limit order.
///
/// Every block reuses the spec's seed, so only the mode densities differ
/// between blocks. An empty table gives a single national block and no
/// sign readings.
pub fn generate_segmented(spec: &SynthSpec, link_id: &str) -> Result<SegmentedSynth, SynthError> {
    spec.validate()?;
    let mut segments = BTreeMap::new();
    let mut signs = Vec::new();
    if spec.limit_modes.is_empty() {
        segments.insert(SpeedLimit::National, sample(spec, spec.density, epoch())?);
        return Ok(SegmentedSynth { segments, signs });
    }
    for (block, (&limit, &modes)) in spec.limit_modes.iter().enumerate() {
        let start = epoch() + Duration::minutes((block * spec.n_points) as i64);
        segments.insert(limit, sample(spec, spec.with_modes(modes), start)?);
        let mph = limit.mph().expect("validated as displayed limit");
        for s in 0..SIGNS_PER_BATCH {
            signs.push(SignReading {
                link_id: link_id.to_string(),
                timestamp: start,
                sign_id: format!("{link_id}-S{}", s + 1),
                limit_mph: mph,
            });
        }
    }
    Ok(SegmentedSynth { segments, signs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    #[serde(default = "default_length")]
    pub length_m: f64,
    #[serde(default = "default_lanes")]
    pub lanes: u32,
    pub synth: SynthSpec,
    /// Number of events to place on the link, per category.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub events: BTreeMap<EventCategory, usize>,
}

fn default_length() -> f64 {
    1000.0
}

fn default_lanes() -> u32 {
    3
}

/// A multi-link dataset description, readable from JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// When set, link `i` is generated with seed `seed + i`, overriding the
    /// per-link seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub links: Vec<Link>,
    pub series: Vec<LinkSeries>,
    /// The spec with every link's effective seed filled in.
    pub truth: DatasetSpec,
}

impl DatasetSpec {
    /// Copy of the spec with per-link seeds derived from the dataset seed.
    pub fn resolved(&self) -> DatasetSpec {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            for (i, link) in out.links.iter_mut().enumerate() {
                link.synth.seed = seed.wrapping_add(i as u64);
            }
        }
        out
    }

    pub fn build(&self) -> Result<Dataset, SynthError> {
        if self.links.is_empty() {
            return Err(SynthError::Invalid("no links".into()));
        }
        let truth = self.resolved();
        let mut ids: Vec<&str> = truth.links.iter().map(|l| l.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SynthError::Invalid(format!("duplicate link id `{}`", w[0])));
        }
        let mut links = Vec::new();
        let mut series = Vec::new();
        for spec in &truth.links {
            let link = Link::new(spec.id.clone(), spec.length_m, spec.lanes)?;
            let generated = generate_segmented(&spec.synth, &spec.id)
                .map_err(|e| SynthError::Invalid(format!("link `{}`: {e}", spec.id)))?;
            let observations: Vec<Observation> = generated
                .segments
                .values()
                .flatten()
                .map(|p| Observation {
                    timestamp: p.timestamp,
                    speed_kmh: p.speed,
                    flow_vph: p.flow,
                })
                .collect();
            let events = place_events(&spec.id, &spec.events);
            series.push(LinkSeries::new(link.clone(), observations, events, generated.signs)?);
            links.push(link);
        }
        links.sort_by(|a, b| a.id.cmp(&b.id));
        series.sort_by(|a, b| a.link().id.cmp(&b.link().id));
        Ok(Dataset { links, series, truth })
    }

    /// Generates the dataset into `dir` as CSV files plus a truth sidecar.
    pub fn write(&self, dir: &Path) -> Result<Dataset, SynthError> {
        let dataset = self.build()?;
        fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_dataset(dir, &dataset.links, &dataset.series)?;
        let path = dir.join(TRUTH_FILE);
        let mut json = serde_json::to_string_pretty(&dataset.truth).expect("spec serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(dataset)
    }
}

/// Ten-minute events, one every half hour, categories in declaration order.
fn place_events(link_id: &str, counts: &BTreeMap<EventCategory, usize>) -> Vec<EventRecord> {
    let mut out = Vec::new();
    for (&category, &n) in counts {
        for _ in 0..n {
            let start = epoch() + Duration::minutes(30 * out.len() as i64);
            out.push(EventRecord {
                link_id: link_id.to_string(),
                category,
                start,
                end: start + Duration::minutes(10),
            });
        }
    }
    out
}
