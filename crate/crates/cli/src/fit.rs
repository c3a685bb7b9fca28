use std::collections::BTreeMap;
use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;
use smartfd::data::{segment_by_limit, LinkSeries, SpeedLimit};
use smartfd::fit::{compare_models, fit_segmented, Comparison, FitError, FitResult, SegmentedComparison};
use smartfd::models::FdModelKind;

use crate::output::{file_stem, num, opt_num, Output};
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::{Failure, Outcome};

pub const RANKING_HEADER: [&str; 5] = ["link_id", "model", "rmse", "r2", "sse"];

pub struct LinkFit {
    pub link_id: String,
    pub n_points: usize,
    pub comparison: Comparison,
    pub segments: Option<SegmentedComparison<SpeedLimit>>,
}

#[derive(Serialize)]
struct FailureRecord {
    model: FdModelKind,
    error: String,
}

#[derive(Serialize)]
struct ComparisonJson<'a> {
    ranked: &'a [FitResult],
    failures: Vec<FailureRecord>,
}

impl<'a> From<&'a Comparison> for ComparisonJson<'a> {
    fn from(c: &'a Comparison) -> Self {
        Self {
            ranked: &c.ranked,
            failures: c
                .failures
                .iter()
                .map(|(model, e)| FailureRecord {
                    model: *model,
                    error: e.to_string(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct SkippedSegment<'a> {
    limit: SpeedLimit,
    reason: &'a str,
}

#[derive(Serialize)]
struct LinkFitJson<'a> {
    link_id: &'a str,
    config_hash: &'a str,
    n_points: usize,
    #[serde(flatten)]
    whole: ComparisonJson<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segments: Option<BTreeMap<SpeedLimit, ComparisonJson<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped_segments: Option<Vec<SkippedSegment<'a>>>,
}

pub fn fit_link(series: &LinkSeries, kinds: &[FdModelKind], settings: &Settings) -> LinkFit {
    let config = settings.fit_config();
    let points: Vec<[f64; 2]> = series
        .points(settings.min_speed)
        .iter()
        .map(|p| [p.density, p.flow])
        .collect();
    let comparison = compare_models(&points, kinds, &config);
    let segments = settings.by_limit.then(|| {
        let split: BTreeMap<SpeedLimit, Vec<[f64; 2]>> = segment_by_limit(series, settings.min_speed)
            .into_iter()
            .map(|(k, v)| (k, v.iter().map(|p| [p.density, p.flow]).collect()))
            .collect();
        fit_segmented(&split, kinds, &config)
    });
    LinkFit {
        link_id: series.link().id.clone(),
        n_points: points.len(),
        comparison,
        segments,
    }
}

pub fn fit_all(series: &[LinkSeries], settings: &Settings) -> Outcome<Vec<LinkFit>> {
    let kinds = settings.models()?;
    let fits: Vec<LinkFit> = series.par_iter().map(|s| fit_link(s, &kinds, settings)).collect();
    if fits.iter().all(|f| f.comparison.ranked.is_empty()) {
        let numerical = fits
            .iter()
            .flat_map(|f| &f.comparison.failures)
            .any(|(_, e)| matches!(e, FitError::NoConvergence { .. }));
        let first = fits
            .iter()
            .flat_map(|f| f.comparison.failures.iter().map(move |(k, e)| format!("{}: {k}: {e}", f.link_id)))
            .next()
            .unwrap_or_default();
        let err = anyhow!("no model could be fitted to any link ({first})");
        return Err(if numerical { Failure::Numerical(err) } else { Failure::Input(err) });
    }
    for f in &fits {
        for (kind, e) in &f.comparison.failures {
            log::warn!("{}: {kind} not fitted: {e}", f.link_id);
        }
    }
    Ok(fits)
}

pub fn write(out: &mut Output, fits: &[LinkFit]) -> anyhow::Result<()> {
    let rows = fits.iter().flat_map(|f| {
        f.comparison.ranked.iter().map(move |r| {
            vec![
                f.link_id.clone(),
                r.kind().to_string(),
                num(r.rmse),
                opt_num(r.r_squared),
                num(r.sse),
            ]
        })
    });
    out.csv("fit/ranking.csv", &RANKING_HEADER, rows)?;
    if fits.iter().any(|f| f.segments.is_some()) {
        let rows = fits.iter().flat_map(|f| {
            f.segments.iter().flat_map(move |seg| {
                seg.segments.iter().flat_map(move |(limit, c)| {
                    c.ranked.iter().map(move |r| {
                        vec![
                            f.link_id.clone(),
                            limit.to_string(),
                            r.kind().to_string(),
                            num(r.rmse),
                            opt_num(r.r_squared),
                            num(r.sse),
                        ]
                    })
                })
            })
        });
        out.csv(
            "fit/ranking_by_limit.csv",
            &["link_id", "limit", "model", "rmse", "r2", "sse"],
            rows,
        )?;
    }
    let hash = out.config_hash().to_string();
    for f in fits {
        let json = LinkFitJson {
            link_id: &f.link_id,
            config_hash: &hash,
            n_points: f.n_points,
            whole: (&f.comparison).into(),
            segments: f
                .segments
                .as_ref()
                .map(|s| s.segments.iter().map(|(k, c)| (*k, c.into())).collect()),
            skipped_segments: f.segments.as_ref().map(|s| {
                s.skipped
                    .iter()
                    .map(|(limit, reason)| SkippedSegment { limit: *limit, reason })
                    .collect()
            }),
        };
        out.json(&format!("fit/{}.json", file_stem(&f.link_id)), &json)?;
    }
    Ok(())
}

pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (_, series) = load(data, settings)?;
    let fits = fit_all(&series, settings)?;
    let mut out = Output::create(out_dir, "fit", settings)?;
    write(&mut out, &fits)?;
    out.finish(vec![display(data)], settings)?;
    for f in &fits {
        if let Some(best) = f.comparison.best() {
            println!("{}: {} (rmse {})", f.link_id, best.kind(), best.rmse);
        }
    }
    Ok(())
}
