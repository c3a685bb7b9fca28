use std::path::Path;

use serde::Serialize;
use smartfd::data::{write_links, write_timeseries, write_events, write_signs, EVENTS_FILE, LINKS_FILE, SIGNS_FILE, TIMESERIES_FILE};

use crate::output::Output;
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::Outcome;

#[derive(Serialize)]
struct IngestSummary<'a> {
    config_hash: &'a str,
    summary: String,
    links: Vec<&'a str>,
    usable: Vec<&'a str>,
    unusable: &'a [String],
    observations: usize,
    retained_points: usize,
    warnings: &'a [String],
}

/// Validates a dataset and writes its canonical CSVs under `dataset/`.
pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (ingested, series) = load(data, settings)?;
    let links: Vec<_> = ingested
        .links
        .iter()
        .filter(|l| series.iter().any(|s| s.link().id == l.id))
        .cloned()
        .collect();
    let mut out = Output::create(out_dir, "ingest", settings)?;
    let mut buf = Vec::new();
    write_links(&mut buf, &links)?;
    out.bytes(&format!("dataset/{LINKS_FILE}"), &buf)?;
    buf.clear();
    write_timeseries(&mut buf, &series)?;
    out.bytes(&format!("dataset/{TIMESERIES_FILE}"), &buf)?;
    buf.clear();
    write_events(&mut buf, &series)?;
    out.bytes(&format!("dataset/{EVENTS_FILE}"), &buf)?;
    buf.clear();
    write_signs(&mut buf, &series)?;
    out.bytes(&format!("dataset/{SIGNS_FILE}"), &buf)?;

    let summary = ingested.usable_summary();
    let hash = out.config_hash().to_string();
    let report = IngestSummary {
        config_hash: &hash,
        summary: summary.clone(),
        links: ingested.links.iter().map(|l| l.id.as_str()).collect(),
        usable: series.iter().map(|s| s.link().id.as_str()).collect(),
        unusable: &ingested.unusable,
        observations: series.iter().map(|s| s.observations().len()).sum(),
        retained_points: series.iter().map(|s| s.points(settings.min_speed).len()).sum(),
        warnings: &ingested.warnings,
    };
    out.json("ingest.json", &report)?;
    out.finish(vec![display(data)], settings)?;
    println!("{summary}");
    Ok(())
}
