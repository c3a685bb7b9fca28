//! Loading the dataset a command works on.

use std::path::Path;

use anyhow::{anyhow, Context};
use log::warn;
use smartfd::data::{ingest_dir, Ingested, LinkSeries};

use crate::settings::Settings;
use crate::{Failure, Outcome};

/// Ingests `dir` and keeps the series selected by `--links`, in link-id
/// order. An unknown requested link or an empty selection is an input error.
pub fn load(dir: &Path, settings: &Settings) -> Outcome<(Ingested, Vec<LinkSeries>)> {
    let ingested = ingest_dir(dir).with_context(|| format!("ingesting {}", dir.display()))?;
    for w in &ingested.warnings {
        warn!("{w}");
    }
    let selected: Vec<LinkSeries> = match &settings.links {
        None => ingested.series.clone(),
        Some(ids) => {
            let mut out = Vec::new();
            for id in ids {
                match ingested.get(id) {
                    Some(s) => out.push(s.clone()),
                    None if ingested.links.iter().any(|l| &l.id == id) => {
                        return Err(Failure::Input(anyhow!("link `{id}` has no observations")))
                    }
                    None => return Err(Failure::Input(anyhow!("unknown link `{id}`"))),
                }
            }
            out.sort_by(|a, b| a.link().id.cmp(&b.link().id));
            out.dedup_by(|a, b| a.link().id == b.link().id);
            out
        }
    };
    if selected.is_empty() {
        return Err(Failure::Input(anyhow!("no usable links in {}", dir.display())));
    }
    Ok((ingested, selected))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
