//! Road links, minute-level observations, incident records and overhead sign
//! readings.
//!
//! This module owns the CSV schemas of a dataset directory, derives density
//! from flow and speed, resolves which variable speed limit is active on a
//! link at each minute, and splits a link's flow–density diagram by that
//! limit.
//!
//! All values keep their raw units: speed in km/h, flow in veh/h, density in
//! veh/km. Scaling to dimensionless coordinates happens downstream via
//! [`ScaleFactors`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Observations slower than this are dropped before dividing flow by speed.
pub const DEFAULT_MIN_SPEED_KMH: f64 = 1.0;

pub const LINKS_FILE: &str = "links.csv";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SIGNS_FILE: &str = "signs.csv";

const LINKS_HEADER: [&str; 3] = ["link_id", "length_m", "lanes"];
const TIMESERIES_HEADER: [&str; 4] = ["timestamp", "link_id", "speed_kmh", "flow_vph"];
const EVENTS_HEADER: [&str; 4] = ["link_id", "category", "start", "end"];
const SIGNS_HEADER: [&str; 4] = ["link_id", "timestamp", "sign_id", "limit_mph"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: field `{field}`: {message}")]
    Row {
        file: String,
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("{file}:{line}: duplicate observation for link `{link}` at {timestamp}")]
    Duplicate {
        file: String,
        line: u64,
        link: String,
        timestamp: String,
    },
    #[error("{file}:{line}: link `{link}` is not declared in {LINKS_FILE}")]
    UnknownLink { file: String, line: u64, link: String },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("speed limit {0} mph is not one of 40, 50, 60, 70")]
    InfeasibleLimit(u32),
    #[error("sign readings for one instant must share link and timestamp")]
    MixedReadings,
    #[error("scale `{name}` must be positive and finite, got {value}")]
    NonPositiveScale { name: &'static str, value: f64 },
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("invalid series for link `{link}`: {message}")]
    InvalidSeries { link: String, message: String },
    #[error("reading {file}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("accessing {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A motorway section between two junctions with a constant lane count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub length_m: f64,
    pub lanes: u32,
}

impl Link {
    pub fn new(id: impl Into<String>, length_m: f64, lanes: u32) -> Result<Self, DataError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DataError::InvalidLink("empty link id".into()));
        }
        if !(length_m.is_finite() && length_m > 0.0) {
            return Err(DataError::InvalidLink(format!("`{id}`: length must be > 0")));
        }
        if lanes == 0 {
            return Err(DataError::InvalidLink(format!("`{id}`: lanes must be >= 1")));
        }
        Ok(Self { id, length_m, lanes })
    }
}

/// One minute of loop-detector output for a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub timestamp: DateTime<Utc>,
    pub speed_kmh: f64,
    pub flow_vph: f64,
}

/// An observation with its derived density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDensityPoint {
    pub timestamp: DateTime<Utc>,
    /// veh/km
    pub density: f64,
    /// veh/h
    pub flow: f64,
    /// km/h
    pub speed: f64,
}

/// Derives density as flow divided by speed, dropping minutes slower than
/// `min_speed`.
///
/// ```
/// # use chrono::{TimeZone, Utc};
/// use smartfd::data::{compute_density, Observation};
/// let obs = Observation {
///     timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
///     speed_kmh: 90.0,
///     flow_vph: 3600.0,
/// };
/// assert_eq!(compute_density(&obs, 1.0).unwrap().density, 40.0);
/// ```
pub fn compute_density(obs: &Observation, min_speed: f64) -> Option<FlowDensityPoint> {
    assert!(min_speed > 0.0, "min_speed must be positive");
    if obs.speed_kmh < min_speed {
        return None;
    }
    Some(FlowDensityPoint {
        timestamp: obs.timestamp,
        density: obs.flow_vph / obs.speed_kmh,
        flow: obs.flow_vph,
        speed: obs.speed_kmh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Accident,
    VehicleObstruction,
    GeneralObstruction,
    AbnormalTraffic,
    Other,
}

/// Accidents and obstructions, counted together in cluster summaries.
pub const INCIDENT_CATEGORIES: [EventCategory; 3] = [
    EventCategory::Accident,
    EventCategory::VehicleObstruction,
    EventCategory::GeneralObstruction,
];

impl EventCategory {
    pub const ALL: [EventCategory; 5] = [
        EventCategory::Accident,
        EventCategory::VehicleObstruction,
        EventCategory::GeneralObstruction,
        EventCategory::AbnormalTraffic,
        EventCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventCategory::Accident => "accident",
            EventCategory::VehicleObstruction => "vehicle_obstruction",
            EventCategory::GeneralObstruction => "general_obstruction",
            EventCategory::AbnormalTraffic => "abnormal_traffic",
            EventCategory::Other => "other",
        }
    }
}

impl fmt::Display for EventCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown event category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub link_id: String,
    pub category: EventCategory,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

/// What one overhead sign displayed at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReading {
    pub link_id: String,
    pub timestamp: DateTime<Utc>,
    pub sign_id: String,
    pub limit_mph: u32,
}

/// The feasible variable speed limits, plus the unrestricted national limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeedLimit {
    #[serde(rename = "40mph")]
    L40,
    #[serde(rename = "50mph")]
    L50,
    #[serde(rename = "60mph")]
    L60,
    #[serde(rename = "70mph")]
    L70,
    #[serde(rename = "national")]
    National,
}

impl SpeedLimit {
    pub const FEASIBLE: [SpeedLimit; 4] = [SpeedLimit::L40, SpeedLimit::L50, SpeedLimit::L60, SpeedLimit::L70];

    pub fn from_mph(mph: u32) -> Option<Self> {
        match mph {
            40 => Some(SpeedLimit::L40),
            50 => Some(SpeedLimit::L50),
            60 => Some(SpeedLimit::L60),
            70 => Some(SpeedLimit::L70),
            _ => None,
        }
    }

    pub fn mph(self) -> Option<u32> {
        match self {
            SpeedLimit::L40 => Some(40),
            SpeedLimit::L50 => Some(50),
            SpeedLimit::L60 => Some(60),
            SpeedLimit::L70 => Some(70),
            SpeedLimit::National => None,
        }
    }

    /// Posted value in km/h, rounded to one decimal as signposted in
    /// conversion tables. `None` for the unrestricted state.
    pub fn value_kmh(self) -> Option<f64> {
        match self {
            SpeedLimit::L40 => Some(64.4),
            SpeedLimit::L50 => Some(80.5),
            SpeedLimit::L60 => Some(96.6),
            SpeedLimit::L70 => Some(112.7),
            SpeedLimit::National => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeedLimit::L40 => "40mph",
            SpeedLimit::L50 => "50mph",
            SpeedLimit::L60 => "60mph",
            SpeedLimit::L70 => "70mph",
            SpeedLimit::National => "national",
        }
    }
}

impl fmt::Display for SpeedLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpeedLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SpeedLimit::L40, SpeedLimit::L50, SpeedLimit::L60, SpeedLimit::L70, SpeedLimit::National]
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown speed limit `{s}`"))
    }
}

/// Snaps the mean of the displayed limits to the nearest feasible limit.
///
/// The comparison is done in exact integer arithmetic, so a mean that lies
/// exactly between two limits is detected and resolved to the lower one.
/// An empty slice means no sign is active.
pub fn snap_mean_limit(limits_mph: &[u32]) -> Result<SpeedLimit, DataError> {
    if limits_mph.is_empty() {
        return Ok(SpeedLimit::National);
    }
    if let Some(&bad) = limits_mph.iter().find(|&&l| SpeedLimit::from_mph(l).is_none()) {
        return Err(DataError::InfeasibleLimit(bad));
    }
    let n = limits_mph.len() as i64;
    let sum: i64 = limits_mph.iter().map(|&l| l as i64).sum();
    let mut best = SpeedLimit::L40;
    let mut best_gap = i64::MAX;
    for limit in SpeedLimit::FEASIBLE {
        // |mean - L| * n, compared without division
        let gap = (sum - limit.mph().unwrap() as i64 * n).abs();
        if gap < best_gap {
            best_gap = gap;
            best = limit;
        }
    }
    Ok(best)
}

/// Resolves the limit in force from one batch of sign readings taken at the
/// same instant on the same link.
pub fn resolve_speed_limit(readings: &[SignReading]) -> Result<SpeedLimit, DataError> {
    if let Some(first) = readings.first() {
        if readings
            .iter()
            .any(|r| r.link_id != first.link_id || r.timestamp != first.timestamp)
        {
            return Err(DataError::MixedReadings);
        }
    }
    let limits: Vec<u32> = readings.iter().map(|r| r.limit_mph).collect();
    snap_mean_limit(&limits)
}

/// A link together with everything recorded on it, ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSeries {
    link: Link,
    observations: Vec<Observation>,
    events: Vec<EventRecord>,
    signs: Vec<SignReading>,
}

impl LinkSeries {
    /// Sorts the records and checks the series invariants: strictly increasing
    /// observation timestamps, non-negative finite measurements, feasible sign
    /// values, ordered event intervals and matching link ids.
    pub fn new(
        link: Link,
        mut observations: Vec<Observation>,
        mut events: Vec<EventRecord>,
        mut signs: Vec<SignReading>,
    ) -> Result<Self, DataError> {
        let invalid = |message: String| DataError::InvalidSeries {
            link: link.id.clone(),
            message,
        };
        observations.sort_by_key(|o| o.timestamp);
        for w in observations.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(invalid(format!("duplicate timestamp {}", fmt_time(&w[0].timestamp))));
            }
        }
        for o in &observations {
            if !(o.speed_kmh.is_finite() && o.speed_kmh >= 0.0 && o.flow_vph.is_finite() && o.flow_vph >= 0.0) {
                return Err(invalid(format!("bad observation at {}", fmt_time(&o.timestamp))));
            }
        }
        for e in &events {
            if e.link_id != link.id {
                return Err(invalid(format!("event for link `{}`", e.link_id)));
            }
            if e.start > e.end {
                return Err(invalid("event ends before it starts".into()));
            }
        }
        for s in &signs {
            if s.link_id != link.id {
                return Err(invalid(format!("sign reading for link `{}`", s.link_id)));
            }
            if SpeedLimit::from_mph(s.limit_mph).is_none() {
                return Err(DataError::InfeasibleLimit(s.limit_mph));
            }
        }
        events.sort_by(|a, b| (a.start, a.end, a.category).cmp(&(b.start, b.end, b.category)));
        signs.sort_by(|a, b| (a.timestamp, &a.sign_id).cmp(&(b.timestamp, &b.sign_id)));
        Ok(Self {
            link,
            observations,
            events,
            signs,
        })
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn signs(&self) -> &[SignReading] {
        &self.signs
    }

    /// Every observation at or above `min_speed`, converted to flow–density.
    pub fn points(&self, min_speed: f64) -> Vec<FlowDensityPoint> {
        self.observations
            .iter()
            .filter_map(|o| compute_density(o, min_speed))
            .collect()
    }

    /// Limit changes in time order: each sign batch (readings sharing a
    /// timestamp) resolved to a single limit.
    pub fn limit_timeline(&self) -> Vec<(DateTime<Utc>, SpeedLimit)> {
        self.signs
            .chunk_by(|a, b| a.timestamp == b.timestamp)
            .map(|batch| {
                let limit = resolve_speed_limit(batch).expect("sign readings validated on construction");
                (batch[0].timestamp, limit)
            })
            .collect()
    }
}

/// Splits a link's retained points by the speed limit active at each minute.
///
/// A sign batch takes effect at its own timestamp and holds until the next
/// batch; minutes before the first batch are unrestricted. Only non-empty
/// segments appear in the map.
pub fn segment_by_limit(series: &LinkSeries, min_speed: f64) -> BTreeMap<SpeedLimit, Vec<FlowDensityPoint>> {
    let timeline = series.limit_timeline();
    let mut out: BTreeMap<SpeedLimit, Vec<FlowDensityPoint>> = BTreeMap::new();
    let mut next = 0;
    let mut current = SpeedLimit::National;
    for obs in series.observations() {
        while next < timeline.len() && timeline[next].0 <= obs.timestamp {
            current = timeline[next].1;
            next += 1;
        }
        if let Some(p) = compute_density(obs, min_speed) {
            out.entry(current).or_default().push(p);
        }
    }
    out
}

/// Characteristic values used to make flow–density diagrams dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub max_speed: f64,
    pub max_flow: f64,
    /// Density of the observation carrying the maximum flow.
    pub rho_crit: f64,
}

impl ScaleFactors {
    pub fn new(max_speed: f64, max_flow: f64, rho_crit: f64) -> Result<Self, DataError> {
        for (name, value) in [("max_speed", max_speed), ("max_flow", max_flow), ("rho_crit", rho_crit)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(DataError::NonPositiveScale { name, value });
            }
        }
        Ok(Self {
            max_speed,
            max_flow,
            rho_crit,
        })
    }

    /// Scales observed on a set of points. The first point with the maximal
    /// flow supplies the critical density.
    pub fn from_points(points: &[FlowDensityPoint]) -> Result<Self, DataError> {
        let max_speed = points.iter().map(|p| p.speed).fold(0.0, f64::max);
        let mut max_flow = 0.0;
        let mut rho_crit = 0.0;
        for p in points {
            if p.flow > max_flow {
                max_flow = p.flow;
                rho_crit = p.density;
            }
        }
        Self::new(max_speed, max_flow, rho_crit)
    }

    pub fn scale(&self, p: &FlowDensityPoint) -> ScaledPoint {
        ScaledPoint {
            density: p.density / self.rho_crit,
            flow: p.flow / self.max_flow,
            speed: p.speed / self.max_speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoint {
    pub density: f64,
    pub flow: f64,
    pub speed: f64,
}

impl ScaledPoint {
    /// The (density, flow) coordinates used for clustering and KDE.
    pub fn xy(&self) -> [f64; 2] {
        [self.density, self.flow]
    }
}

pub fn scale_points(points: &[FlowDensityPoint], scale: &ScaleFactors) -> Vec<ScaledPoint> {
    points.iter().map(|p| scale.scale(p)).collect()
}

/// Number of events on the link whose category is in `categories`.
pub fn count_events(series: &LinkSeries, categories: &[EventCategory]) -> usize {
    series
        .events()
        .iter()
        .filter(|e| categories.contains(&e.category))
        .count()
}

/// The two event groupings reported per link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub accidents_obstructions: usize,
    pub abnormal_traffic: usize,
}

impl EventCounts {
    pub fn of(series: &LinkSeries) -> Self {
        Self {
            accidents_obstructions: count_events(series, &INCIDENT_CATEGORIES),
            abnormal_traffic: count_events(series, &[EventCategory::AbnormalTraffic]),
        }
    }
}

/// Result of reading a dataset directory.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    /// Every declared link, sorted by id.
    pub links: Vec<Link>,
    /// One series per link with at least one observation, sorted by link id.
    pub series: Vec<LinkSeries>,
    /// Declared links without any observation.
    pub unusable: Vec<String>,
    pub warnings: Vec<String>,
}

impl Ingested {
    pub fn usable_summary(&self) -> String {
        format!("{} of {} links usable", self.series.len(), self.links.len())
    }

    pub fn get(&self, link_id: &str) -> Option<&LinkSeries> {
        self.series.iter().find(|s| s.link().id == link_id)
    }
}

pub fn fmt_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("`{s}` is not an ISO-8601 timestamp: {e}"))
}

struct Table {
    file: String,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table<R: Read>(file: &str, reader: R, header: &[&str], warnings: &mut Vec<String>) -> Result<Table, DataError> {
    let csv_err = |source| DataError::Csv {
        file: file.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let found = rdr.headers().map_err(csv_err)?.clone();
    let mut table = Table {
        file: file.to_string(),
        rows: Vec::new(),
    };
    if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
        warnings.push(format!("{file}: empty file"));
        return Ok(table);
    }
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(DataError::Header {
            file: file.to_string(),
            expected: header.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        table.rows.push((line, rec));
    }
    if table.rows.is_empty() {
        warnings.push(format!("{file}: no records"));
    }
    Ok(table)
}

impl Table {
    fn field<'a>(&self, line: u64, rec: &'a csv::StringRecord, idx: usize, name: &'static str) -> Result<&'a str, DataError> {
        rec.get(idx).map(str::trim).ok_or_else(|| self.row_err(line, name, "missing".into()))
    }

    fn row_err(&self, line: u64, field: &'static str, message: String) -> DataError {
        DataError::Row {
            file: self.file.clone(),
            line,
            field,
            message,
        }
    }

    fn non_negative(&self, line: u64, rec: &csv::StringRecord, idx: usize, name: &'static str) -> Result<f64, DataError> {
        let raw = self.field(line, rec, idx, name)?;
        let v: f64 = raw
            .parse()
            .map_err(|_| self.row_err(line, name, format!("`{raw}` is not a number")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.row_err(line, name, format!("{raw} must be finite and non-negative")));
        }
        Ok(v)
    }

    fn time(&self, line: u64, rec: &csv::StringRecord, idx: usize, name: &'static str) -> Result<DateTime<Utc>, DataError> {
        let raw = self.field(line, rec, idx, name)?;
        parse_time(raw).map_err(|m| self.row_err(line, name, m))
    }

    fn link_id(&self, line: u64, rec: &csv::StringRecord, idx: usize, known: &HashSet<String>) -> Result<String, DataError> {
        let id = self.field(line, rec, idx, "link_id")?;
        if !known.contains(id) {
            return Err(DataError::UnknownLink {
                file: self.file.clone(),
                line,
                link: id.to_string(),
            });
        }
        Ok(id.to_string())
    }
}

/// Parses the four dataset tables and assembles validated per-link series.
///
/// `events` and `signs` may be `None` when a dataset has no incident or sign
/// data. Any malformed row aborts ingestion with its line number.
pub fn ingest<L: Read, T: Read, E: Read, S: Read>(
    links: L,
    timeseries: T,
    events: Option<E>,
    signs: Option<S>,
) -> Result<Ingested, DataError> {
    let mut warnings = Vec::new();

    let table = read_table(LINKS_FILE, links, &LINKS_HEADER, &mut warnings)?;
    let mut declared: BTreeMap<String, Link> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let id = table.field(line, rec, 0, "link_id")?.to_string();
        let length = table.non_negative(line, rec, 1, "length_m")?;
        let raw_lanes = table.field(line, rec, 2, "lanes")?;
        let lanes: u32 = raw_lanes
            .parse()
            .map_err(|_| table.row_err(line, "lanes", format!("`{raw_lanes}` is not a positive integer")))?;
        let link = Link::new(id.clone(), length, lanes).map_err(|e| table.row_err(line, "link", e.to_string()))?;
        if declared.insert(id.clone(), link).is_some() {
            return Err(table.row_err(line, "link_id", format!("link `{id}` declared twice")));
        }
    }
    let known: HashSet<String> = declared.keys().cloned().collect();

    let table = read_table(TIMESERIES_FILE, timeseries, &TIMESERIES_HEADER, &mut warnings)?;
    let mut observations: HashMap<String, Vec<Observation>> = HashMap::new();
    let mut seen: HashSet<(String, DateTime<Utc>)> = HashSet::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let timestamp = table.time(line, rec, 0, "timestamp")?;
        let link = table.link_id(line, rec, 1, &known)?;
        let speed_kmh = table.non_negative(line, rec, 2, "speed_kmh")?;
        let flow_vph = table.non_negative(line, rec, 3, "flow_vph")?;
        if !seen.insert((link.clone(), timestamp)) {
            return Err(DataError::Duplicate {
                file: table.file.clone(),
                line,
                link,
                timestamp: fmt_time(&timestamp),
            });
        }
        observations.entry(link).or_default().push(Observation {
            timestamp,
            speed_kmh,
            flow_vph,
        });
    }

    let mut events_by_link: HashMap<String, Vec<EventRecord>> = HashMap::new();
    match events {
        Some(reader) => {
            let table = read_table(EVENTS_FILE, reader, &EVENTS_HEADER, &mut warnings)?;
            for (line, rec) in &table.rows {
                let line = *line;
                let link_id = table.link_id(line, rec, 0, &known)?;
                let raw = table.field(line, rec, 1, "category")?;
                let category: EventCategory = raw.parse().map_err(|m| table.row_err(line, "category", m))?;
                let start = table.time(line, rec, 2, "start")?;
                let end = table.time(line, rec, 3, "end")?;
                if start > end {
                    return Err(table.row_err(line, "end", "event ends before it starts".into()));
                }
                events_by_link.entry(link_id.clone()).or_default().push(EventRecord {
                    link_id,
                    category,
                    start,
                    end,
                });
            }
        }
        None => warnings.push(format!("{EVENTS_FILE}: not provided")),
    }

    let mut signs_by_link: HashMap<String, Vec<SignReading>> = HashMap::new();
    match signs {
        Some(reader) => {
            let table = read_table(SIGNS_FILE, reader, &SIGNS_HEADER, &mut warnings)?;
            for (line, rec) in &table.rows {
                let line = *line;
                let link_id = table.link_id(line, rec, 0, &known)?;
                let timestamp = table.time(line, rec, 1, "timestamp")?;
                let sign_id = table.field(line, rec, 2, "sign_id")?.to_string();
                let raw = table.field(line, rec, 3, "limit_mph")?;
                let limit_mph: u32 = raw
                    .parse()
                    .ok()
                    .filter(|&l| SpeedLimit::from_mph(l).is_some())
                    .ok_or_else(|| table.row_err(line, "limit_mph", format!("`{raw}` is not one of 40, 50, 60, 70")))?;
                signs_by_link.entry(link_id.clone()).or_default().push(SignReading {
                    link_id,
                    timestamp,
                    sign_id,
                    limit_mph,
                });
            }
        }
        None => warnings.push(format!("{SIGNS_FILE}: not provided")),
    }

    let mut out = Ingested {
        warnings,
        ..Default::default()
    };
    for (id, link) in declared {
        out.links.push(link.clone());
        match observations.remove(&id) {
            Some(obs) => {
                let ev = events_by_link.remove(&id).unwrap_or_default();
                let sg = signs_by_link.remove(&id).unwrap_or_default();
                out.series.push(LinkSeries::new(link, obs, ev, sg)?);
            }
            None => out.unusable.push(id),
        }
    }
    if out.links.is_empty() {
        out.warnings.push("dataset declares no links".into());
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open_optional(path: &Path) -> Result<Option<File>, DataError> {
    if path.exists() {
        open(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Ingests `links.csv`, `timeseries.csv` and, when present, `events.csv` and
/// `signs.csv` from a dataset directory.
pub fn ingest_dir(dir: &Path) -> Result<Ingested, DataError> {
    ingest(
        open(&dir.join(LINKS_FILE))?,
        open(&dir.join(TIMESERIES_FILE))?,
        open_optional(&dir.join(EVENTS_FILE))?,
        open_optional(&dir.join(SIGNS_FILE))?,
    )
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn write_err(file: &str) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        file: file.to_string(),
        source,
    }
}

pub fn write_links<W: Write>(w: W, links: &[Link]) -> Result<(), DataError> {
    let err = write_err(LINKS_FILE);
    let mut wtr = csv_writer(w);
    wtr.write_record(LINKS_HEADER).map_err(&err)?;
    for l in links {
        wtr.write_record([l.id.clone(), l.length_m.to_string(), l.lanes.to_string()])
            .map_err(&err)?;
    }
    wtr.flush().map_err(|e| err(e.into()))
}

pub fn write_timeseries<W: Write>(w: W, series: &[LinkSeries]) -> Result<(), DataError> {
    let err = write_err(TIMESERIES_FILE);
    let mut wtr = csv_writer(w);
    wtr.write_record(TIMESERIES_HEADER).map_err(&err)?;
    for s in series {
        for o in s.observations() {
            wtr.write_record([
                fmt_time(&o.timestamp),
                s.link().id.clone(),
                o.speed_kmh.to_string(),
                o.flow_vph.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    wtr.flush().map_err(|e| err(e.into()))
}

pub fn write_events<W: Write>(w: W, series: &[LinkSeries]) -> Result<(), DataError> {
    let err = write_err(EVENTS_FILE);
    let mut wtr = csv_writer(w);
    wtr.write_record(EVENTS_HEADER).map_err(&err)?;
    for e in series.iter().flat_map(|s| s.events()) {
        wtr.write_record([
            e.link_id.clone(),
            e.category.to_string(),
            fmt_time(&e.start),
            fmt_time(&e.end),
        ])
        .map_err(&err)?;
    }
    wtr.flush().map_err(|e| err(e.into()))
}

pub fn write_signs<W: Write>(w: W, series: &[LinkSeries]) -> Result<(), DataError> {
    let err = write_err(SIGNS_FILE);
    let mut wtr = csv_writer(w);
    wtr.write_record(SIGNS_HEADER).map_err(&err)?;
    for r in series.iter().flat_map(|s| s.signs()) {
        wtr.write_record([
            r.link_id.clone(),
            fmt_time(&r.timestamp),
            r.sign_id.clone(),
            r.limit_mph.to_string(),
        ])
        .map_err(&err)?;
    }
    wtr.flush().map_err(|e| err(e.into()))
}

/// Writes the canonical form of a dataset: rows ordered by link id, then by
/// time.
pub fn write_dataset(dir: &Path, links: &[Link], series: &[LinkSeries]) -> Result<(), DataError> {
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path).map_err(|source| DataError::Io { path, source })
    };
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_links(create(LINKS_FILE)?, links)?;
    write_timeseries(create(TIMESERIES_FILE)?, series)?;
    write_events(create(EVENTS_FILE)?, series)?;
    write_signs(create(SIGNS_FILE)?, series)
}
