use std::path::Path;

use anyhow::{anyhow, Context};
use smartfd::data::{EVENTS_FILE, LINKS_FILE, SIGNS_FILE, TIMESERIES_FILE};
use smartfd::synth::{DatasetSpec, TRUTH_FILE};

use crate::output::Output;
use crate::settings::Settings;
use crate::workspace::display;
use crate::{Failure, Outcome};

pub fn read_spec(path: &Path) -> anyhow::Result<DatasetSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Generates the dataset described by `spec` into `out_dir`. A `--seed`
/// flag replaces the spec's dataset seed.
pub fn run(spec: &Path, out_dir: &Path, seed: Option<u64>, settings: &Settings) -> Outcome {
    let mut dataset = read_spec(spec)?;
    if seed.is_some() {
        dataset.seed = seed;
    }
    let mut out = Output::create(out_dir, "synth", settings)?;
    let built = dataset
        .write(out.root())
        .map_err(|e| Failure::Input(anyhow!(e).context(format!("generating from {}", spec.display()))))?;
    for name in [LINKS_FILE, TIMESERIES_FILE, EVENTS_FILE, SIGNS_FILE, TRUTH_FILE] {
        out.adopt(name)?;
    }
    out.finish(vec![display(spec)], settings)?;
    println!("{} links written to {}", built.links.len(), out_dir.display());
    Ok(())
}
