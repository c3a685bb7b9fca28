use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;
use smartfd::data::{EventCounts, LinkSeries};
use smartfd::fit::{fit, FitError};
use smartfd::links::{cut, hac_ward, rescale_by_max, summarize, ClusterSummary, Dendrogram, ParameterVector};
use smartfd::models::FdModelKind;

use crate::output::{num, Output};
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::{Failure, Outcome};

pub struct Clustering {
    pub model: FdModelKind,
    pub k: usize,
    pub raw: Vec<ParameterVector>,
    pub scaled: Vec<ParameterVector>,
    pub dendrogram: Dendrogram,
    pub assignments: Vec<usize>,
    pub summaries: Vec<ClusterSummary>,
    pub events: Vec<EventCounts>,
    /// Links left out because their fit failed, with the reason.
    pub excluded: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Excluded<'a> {
    link_id: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct SummariesJson<'a> {
    config_hash: &'a str,
    model: FdModelKind,
    k: usize,
    parameters: &'a [&'static str],
    scaled: bool,
    clusters: &'a [ClusterSummary],
    excluded: Vec<Excluded<'a>>,
}

pub fn cluster_links(series: &[LinkSeries], settings: &Settings) -> Outcome<Clustering> {
    let model = settings.cluster_model;
    let config = settings.fit_config();
    let fits: Vec<(String, Result<Vec<f64>, FitError>)> = series
        .par_iter()
        .map(|s| {
            let points: Vec<[f64; 2]> = s.points(settings.min_speed).iter().map(|p| [p.density, p.flow]).collect();
            let r = fit(model, &points, &config).map(|r| r.best_params.values().to_vec());
            (s.link().id.clone(), r)
        })
        .collect();
    let mut raw = Vec::new();
    let mut excluded = Vec::new();
    let mut numerical = false;
    for (id, r) in fits {
        match r {
            Ok(values) => raw.push(ParameterVector::new(id, values)),
            Err(e) => {
                numerical |= matches!(e, FitError::NoConvergence { .. });
                log::warn!("{id}: excluded from clustering: {e}");
                excluded.push((id, e.to_string()));
            }
        }
    }
    if raw.len() < 2 {
        let err = anyhow!("clustering needs at least 2 fitted links, got {}", raw.len());
        return Err(if numerical { Failure::Numerical(err) } else { Failure::Input(err) });
    }
    if settings.k == 0 || settings.k > raw.len() {
        return Err(Failure::Input(anyhow!("--k must be between 1 and {} (fitted links), got {}", raw.len(), settings.k)));
    }
    let scaled = rescale_by_max(&raw).map_err(|e| Failure::Input(e.into()))?;
    let dendrogram = hac_ward(&scaled).map_err(|e| Failure::Input(e.into()))?;
    let assignments = cut(&dendrogram, settings.k).map_err(|e| Failure::Input(e.into()))?;
    let by_id = |id: &str| series.iter().find(|s| s.link().id == id).expect("vector from a loaded series");
    let events: Vec<EventCounts> = raw.iter().map(|p| EventCounts::of(by_id(&p.link_id))).collect();
    let summarized = if settings.scaled_summaries { &scaled } else { &raw };
    let summaries = summarize(&assignments, summarized, model.param_names(), series).map_err(|e| Failure::Input(e.into()))?;
    Ok(Clustering {
        model,
        k: settings.k,
        raw,
        scaled,
        dendrogram,
        assignments,
        summaries,
        events,
        excluded,
    })
}

pub fn write(out: &mut Output, c: &Clustering, settings: &Settings) -> anyhow::Result<()> {
    out.json("clusters/dendrogram.json", &c.dendrogram.merges)?;
    let rows = c
        .raw
        .iter()
        .zip(&c.assignments)
        .map(|(p, a)| vec![p.link_id.clone(), a.to_string()]);
    out.csv("clusters/assignments.csv", &["link_id", "cluster"], rows)?;

    let names = c.model.param_names();
    let mut header = vec!["link_id".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.extend(names.iter().map(|n| format!("{n}_scaled")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = c.raw.iter().zip(&c.scaled).map(|(r, s)| {
        let mut row = vec![r.link_id.clone()];
        row.extend(r.values.iter().map(|&v| num(v)));
        row.extend(s.values.iter().map(|&v| num(v)));
        row
    });
    out.csv("clusters/parameters.csv", &header_refs, rows)?;

    let hash = out.config_hash().to_string();
    let json = SummariesJson {
        config_hash: &hash,
        model: c.model,
        k: c.k,
        parameters: names,
        scaled: settings.scaled_summaries,
        clusters: &c.summaries,
        excluded: c
            .excluded
            .iter()
            .map(|(link_id, reason)| Excluded { link_id, reason })
            .collect(),
    };
    out.json("clusters/summaries.json", &json)
}

pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (_, series) = load(data, settings)?;
    let clustering = cluster_links(&series, settings)?;
    let mut out = Output::create(out_dir, "cluster-links", settings)?;
    write(&mut out, &clustering, settings)?;
    out.finish(vec![display(data)], settings)?;
    for s in &clustering.summaries {
        println!("cluster {}: {}", s.cluster, s.members.join(", "));
    }
    Ok(())
}
