use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;
use smartfd::data::{scale_points, LinkSeries, ScaleFactors};
use smartfd::kde::{
    evaluate_grid, find_modes, separation_cells, Axis, BandwidthMethod, DensityGrid, KdeModel, Mode,
};

use crate::output::{file_stem, num, Output};
use crate::settings::Settings;
use crate::workspace::{display, load};
use crate::{Failure, Outcome};

pub struct LinkKde {
    pub link_id: String,
    pub scale: ScaleFactors,
    pub model: KdeModel,
    pub grid: DensityGrid,
    pub modes: Vec<Mode>,
}

#[derive(Serialize)]
struct GridEnvelope<'a> {
    link_id: &'a str,
    config_hash: &'a str,
    /// Coordinates are density / rho_crit and flow / max_flow.
    scale: &'a ScaleFactors,
    bandwidth: [[f64; 2]; 2],
    x: &'a Axis,
    y: &'a Axis,
    /// Row-major, x outer: `values[i * y.n + j]`.
    values: &'a [f64],
}

/// KDE of the link's scaled cloud on a square-celled grid.
pub fn analyse(series: &LinkSeries, settings: &Settings) -> anyhow::Result<LinkKde> {
    let id = &series.link().id;
    let points = series.points(settings.min_speed);
    let scale = ScaleFactors::from_points(&points).map_err(|e| anyhow!("link `{id}`: {e}"))?;
    let xy: Vec<[f64; 2]> = scale_points(&points, &scale).iter().map(|p| p.xy()).collect();
    let model = KdeModel::fit(xy, BandwidthMethod::RuleOfThumb).map_err(|e| anyhow!("link `{id}`: {e}"))?;
    let (nx, ny) = settings.grid_size()?;
    let [xr, yr] = model.square_ranges(settings.pad);
    let grid = evaluate_grid(&model, xr, yr, nx, ny)?;
    let sep = separation_cells(&grid, model.bandwidth(), settings.mode_separation);
    let modes = find_modes(&grid, sep, settings.min_relative_density);
    Ok(LinkKde {
        link_id: id.clone(),
        scale,
        model,
        grid,
        modes,
    })
}

pub fn run(data: &Path, out_dir: &Path, settings: &Settings) -> Outcome {
    let (_, series) = load(data, settings)?;
    let results: Vec<anyhow::Result<LinkKde>> = series.par_iter().map(|s| analyse(s, settings)).collect();
    let mut out = Output::create(out_dir, "kde", settings)?;
    for r in results {
        let k = r.map_err(Failure::Input)?;
        let stem = file_stem(&k.link_id);
        let mut buf = Vec::new();
        k.grid.write_csv(&mut buf)?;
        out.bytes(&format!("kde/{stem}.csv"), &buf)?;
        let hash = out.config_hash().to_string();
        let envelope = GridEnvelope {
            link_id: &k.link_id,
            config_hash: &hash,
            scale: &k.scale,
            bandwidth: k.model.bandwidth().matrix(),
            x: &k.grid.x,
            y: &k.grid.y,
            values: &k.grid.values,
        };
        out.json(&format!("kde/{stem}.json"), &envelope)?;
        let rows = k.modes.iter().map(|m| {
            vec![
                num(m.x),
                num(m.y),
                num(m.density),
                num(m.x * k.scale.rho_crit),
                num(m.y * k.scale.max_flow),
            ]
        });
        out.csv(&format!("kde/{stem}.modes.csv"), &["x", "y", "kde", "density", "flow"], rows)?;
        log::info!("{}: {} modes", k.link_id, k.modes.len());
    }
    out.finish(vec![display(data)], settings)?;
    Ok(())
}
