use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use smartfd::models::FdModelKind;

use crate::cluster::{self, Clustering};
use crate::fit::{self, LinkFit};
use crate::modes::{self, LinkModes, RelativeChange};
use crate::output::{num, Output};
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::Outcome;

#[derive(Serialize)]
struct LinkFitSummary {
    best: Option<FdModelKind>,
    rmse: BTreeMap<FdModelKind, f64>,
}

#[derive(Serialize)]
struct ClusterOverview {
    model: FdModelKind,
    k: usize,
    sizes: Vec<usize>,
    assignments: BTreeMap<String, usize>,
    excluded: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    config_hash: &'a str,
    links: Vec<&'a str>,
    /// Every file this run wrote besides the report and manifest.
    artifacts: Vec<String>,
    fit: BTreeMap<&'a str, LinkFitSummary>,
    /// Share of links whose best model is triangular.
    triangular_best_share: f64,
    modes: BTreeMap<&'a str, &'a Option<RelativeChange>>,
    clusters: ClusterOverview,
}

fn plot_tables(out: &mut Output, fits: &[LinkFit], modes: &[LinkModes], clusters: &Clustering) -> anyhow::Result<()> {
    let rows = fits.iter().flat_map(|f| {
        f.comparison
            .ranked
            .iter()
            .map(move |r| vec![f.link_id.clone(), r.kind().to_string(), num(r.rmse)])
    });
    out.csv("report/rmse_by_link.csv", &["link_id", "model", "rmse"], rows)?;

    let rows = modes.iter().flat_map(|m| {
        m.trajectory.entries.iter().flat_map(move |(segment, e)| {
            [("low", e.low), ("high", e.high)].into_iter().map(move |(name, p)| {
                vec![
                    m.link_id.clone(),
                    segment.clone(),
                    name.to_string(),
                    num(p.density),
                    num(p.flow),
                    num(p.std),
                ]
            })
        })
    });
    out.csv(
        "report/mode_trajectories.csv",
        &["link_id", "segment", "mode", "density", "flow", "std"],
        rows,
    )?;

    let rows = clusters.summaries.iter().flat_map(|s| {
        let params = s.params.iter().map(|p| (p.parameter.clone(), p.summary));
        let events = [
            ("accidents_obstructions".to_string(), s.accidents_obstructions),
            ("abnormal_traffic".to_string(), s.abnormal_traffic),
        ];
        params.chain(events).map(move |(name, f)| {
            vec![
                s.cluster.to_string(),
                name,
                num(f.min),
                num(f.q1),
                num(f.median),
                num(f.q3),
                num(f.max),
            ]
        })
    });
    out.csv(
        "report/cluster_boxes.csv",
        &["cluster", "quantity", "min", "q1", "median", "q3", "max"],
        rows,
    )?;

    let rows = clusters
        .raw
        .iter()
        .zip(&clusters.assignments)
        .zip(&clusters.events)
        .map(|((p, a), e)| {
            vec![
                p.link_id.clone(),
                a.to_string(),
                e.accidents_obstructions.to_string(),
                e.abnormal_traffic.to_string(),
            ]
        });
    out.csv(
        "report/event_counts.csv",
        &["link_id", "cluster", "accidents_obstructions", "abnormal_traffic"],
        rows,
    )
}

/// Whole-link fits, per-limit modes and link clusters, plus plot-ready
/// tables and a consolidated `report.json`.
pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (_, series) = load(data, settings)?;
    let mut mode_settings = settings.clone();
    mode_settings.by_limit = true;
    let fits = fit::fit_all(&series, settings)?;
    let modes = modes::modes_all(&series, &mode_settings)?;
    let clusters = cluster::cluster_links(&series, settings)?;

    let mut out = Output::create(out_dir, "report", settings)?;
    fit::write(&mut out, &fits)?;
    modes::write(&mut out, &modes)?;
    cluster::write(&mut out, &clusters, settings)?;
    plot_tables(&mut out, &fits, &modes, &clusters)?;

    let best: Vec<Option<FdModelKind>> = fits.iter().map(|f| f.comparison.best().map(|r| r.kind())).collect();
    let triangular = best.iter().filter(|b| b.is_some_and(FdModelKind::is_triangular)).count();
    let mut sizes = vec![0; clusters.k];
    for &a in &clusters.assignments {
        sizes[a] += 1;
    }
    let hash = out.config_hash().to_string();
    let report = Report {
        config_hash: &hash,
        links: series.iter().map(|s| s.link().id.as_str()).collect(),
        artifacts: out.paths(),
        fit: fits
            .iter()
            .zip(&best)
            .map(|(f, b)| {
                let rmse = f.comparison.ranked.iter().map(|r| (r.kind(), r.rmse)).collect();
                (f.link_id.as_str(), LinkFitSummary { best: *b, rmse })
            })
            .collect(),
        triangular_best_share: triangular as f64 / fits.len() as f64,
        modes: modes.iter().map(|m| (m.link_id.as_str(), &m.relative_change)).collect(),
        clusters: ClusterOverview {
            model: clusters.model,
            k: clusters.k,
            sizes,
            assignments: clusters
                .raw
                .iter()
                .zip(&clusters.assignments)
                .map(|(p, &a)| (p.link_id.clone(), a))
                .collect(),
            excluded: clusters.excluded.iter().map(|(id, _)| id.clone()).collect(),
        },
    };
    out.json("report.json", &report)?;
    out.finish(vec![display(data)], settings)?;
    println!("report written to {}", out_dir.join("report.json").display());
    Ok(())
}
