use std::collections::BTreeMap;
use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;
use smartfd::data::{segment_by_limit, FlowDensityPoint, LinkSeries, ScaleFactors};
use smartfd::modes::{mode_trajectory, relative_change, ModeEntry, ModeTrajectory};

use crate::output::{file_stem, num, Output};
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::{Failure, Outcome};

/// Segment key used when a link is not split by limit.
pub const WHOLE_LINK: &str = "all";

/// Fractional decrease of each mode's density from the lowest to the highest
/// displayed limit.
#[derive(Debug, Clone, Serialize)]
pub struct RelativeChange {
    pub from: String,
    pub to: String,
    pub low: f64,
    pub high: f64,
}

pub struct LinkModes {
    pub link_id: String,
    pub scale: ScaleFactors,
    pub trajectory: ModeTrajectory<String>,
    pub relative_change: Option<RelativeChange>,
}

#[derive(Serialize)]
struct Skipped<'a> {
    segment: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct LinkModesJson<'a> {
    link_id: &'a str,
    config_hash: &'a str,
    scale: &'a ScaleFactors,
    modes: &'a BTreeMap<String, ModeEntry>,
    skipped: Vec<Skipped<'a>>,
    relative_change: &'a Option<RelativeChange>,
}

pub fn modes_of_link(series: &LinkSeries, settings: &Settings) -> anyhow::Result<LinkModes> {
    let id = &series.link().id;
    let points = series.points(settings.min_speed);
    let scale = ScaleFactors::from_points(&points).map_err(|e| anyhow!("link `{id}`: {e}"))?;
    let segments: BTreeMap<String, Vec<FlowDensityPoint>> = if settings.by_limit {
        segment_by_limit(series, settings.min_speed)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    } else {
        BTreeMap::from([(WHOLE_LINK.to_string(), points)])
    };
    let trajectory = mode_trajectory(&segments, &scale, &settings.clara_config());
    for (segment, reason) in &trajectory.skipped {
        log::warn!("{id}: segment {segment} skipped: {reason}");
    }
    // Limit keys sort 40mph < 50mph < 60mph < 70mph < national.
    let displayed: Vec<(&String, &ModeEntry)> =
        trajectory.entries.iter().filter(|(k, _)| k.ends_with("mph")).collect();
    let relative_change = match (displayed.first(), displayed.last()) {
        (Some((from, a)), Some((to, b))) if displayed.len() >= 2 => Some(RelativeChange {
            from: (*from).clone(),
            to: (*to).clone(),
            low: relative_change(a.low.density, b.low.density),
            high: relative_change(a.high.density, b.high.density),
        }),
        _ => None,
    };
    Ok(LinkModes {
        link_id: id.clone(),
        scale,
        trajectory,
        relative_change,
    })
}

pub fn modes_all(series: &[LinkSeries], settings: &Settings) -> Outcome<Vec<LinkModes>> {
    let results: Vec<anyhow::Result<LinkModes>> = series.par_iter().map(|s| modes_of_link(s, settings)).collect();
    let modes = results.into_iter().collect::<anyhow::Result<Vec<_>>>().map_err(Failure::Input)?;
    if modes.iter().all(|m| m.trajectory.entries.is_empty()) {
        let reason = modes
            .iter()
            .flat_map(|m| m.trajectory.skipped.iter().map(move |(k, r)| format!("{} {k}: {r}", m.link_id)))
            .next()
            .unwrap_or_default();
        return Err(Failure::Input(anyhow!("no segment had enough points for two modes ({reason})")));
    }
    Ok(modes)
}

pub fn write(out: &mut Output, modes: &[LinkModes]) -> anyhow::Result<()> {
    let hash = out.config_hash().to_string();
    for m in modes {
        let stem = file_stem(&m.link_id);
        let json = LinkModesJson {
            link_id: &m.link_id,
            config_hash: &hash,
            scale: &m.scale,
            modes: &m.trajectory.entries,
            skipped: m
                .trajectory
                .skipped
                .iter()
                .map(|(segment, reason)| Skipped { segment, reason })
                .collect(),
            relative_change: &m.relative_change,
        };
        out.json(&format!("modes/{stem}.json"), &json)?;
        let rows = m.trajectory.entries.iter().flat_map(|(segment, entry)| {
            [("low", &entry.low_distances), ("high", &entry.high_distances)]
                .into_iter()
                .flat_map(move |(mode, dd)| {
                    dd.iter()
                        .flat_map(|d| d.distances.iter())
                        .map(move |&d| vec![segment.clone(), mode.to_string(), num(d)])
                })
        });
        out.csv(&format!("modes/{stem}.distances.csv"), &["segment", "mode", "distance"], rows)?;
    }
    Ok(())
}

pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (_, series) = load(data, settings)?;
    let modes = modes_all(&series, settings)?;
    let mut out = Output::create(out_dir, "modes", settings)?;
    write(&mut out, &modes)?;
    out.finish(vec![display(data)], settings)?;
    for m in &modes {
        for (segment, e) in &m.trajectory.entries {
            println!(
                "{} {segment}: low {:.2} veh/km, high {:.2} veh/km",
                m.link_id, e.low.density, e.high.density
            );
        }
    }
    Ok(())
}
