//! Effective run settings: defaults, then an optional TOML file, then flags.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smartfd::data::DEFAULT_MIN_SPEED_KMH;
use smartfd::fit::{FitConfig, LocalMethod};
use smartfd::kde::DEFAULT_MIN_RELATIVE_DENSITY;
use smartfd::models::FdModelKind;
use smartfd::modes::ClaraConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub min_speed: f64,
    /// Restrict processing to these link ids.
    pub links: Option<Vec<String>>,
    /// `all` or one model name.
    pub model: String,
    pub starts: usize,
    pub method: LocalMethod,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// `NXxNY`.
    pub grid: String,
    /// Grid padding around the data, in kernel widths.
    pub pad: f64,
    /// Minimum distance between reported KDE modes, in kernel widths.
    pub mode_separation: f64,
    pub min_relative_density: f64,
    pub by_limit: bool,
    pub sample_size: Option<usize>,
    pub restarts: usize,
    pub k: usize,
    pub cluster_model: FdModelKind,
    pub scaled_summaries: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            min_speed: DEFAULT_MIN_SPEED_KMH,
            links: None,
            model: "all".into(),
            starts: 100,
            method: LocalMethod::LevenbergMarquardt,
            max_iterations: 500,
            tolerance: 1e-10,
            grid: "256x256".into(),
            pad: 3.0,
            mode_separation: 2.0,
            min_relative_density: DEFAULT_MIN_RELATIVE_DENSITY,
            by_limit: false,
            sample_size: None,
            restarts: 50,
            k: 3,
            cluster_model: FdModelKind::DaganzoNewell,
            scaled_summaries: false,
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.min_speed > 0.0) {
            bail!("min_speed must be > 0");
        }
        self.models()?;
        self.grid_size()?;
        if self.starts == 0 || self.restarts == 0 {
            bail!("starts and restarts must be >= 1");
        }
        if !(self.pad >= 0.0 && self.mode_separation >= 0.0 && (0.0..1.0).contains(&self.min_relative_density)) {
            bail!("pad and mode_separation must be >= 0, min_relative_density in [0, 1)");
        }
        Ok(())
    }

    pub fn models(&self) -> anyhow::Result<Vec<FdModelKind>> {
        if self.model == "all" {
            return Ok(FdModelKind::ALL.to_vec());
        }
        match self.model.parse::<FdModelKind>() {
            Ok(kind) => Ok(vec![kind]),
            Err(e) => bail!("--model: {e}"),
        }
    }

    pub fn grid_size(&self) -> anyhow::Result<(usize, usize)> {
        let parsed = self
            .grid
            .split_once(['x', 'X'])
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some((nx, ny)) if nx >= 2 && ny >= 2 => Ok((nx, ny)),
            _ => bail!("--grid must look like 256x256 with both sizes >= 2, got `{}`", self.grid),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            n_starts: self.starts,
            seed: self.seed,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            method: self.method,
            ..FitConfig::default()
        }
    }

    pub fn clara_config(&self) -> ClaraConfig {
        let mut c = ClaraConfig::new(2, self.seed);
        c.n_restarts = self.restarts;
        if let Some(s) = self.sample_size {
            c.sample_size = s;
        }
        c
    }

    /// SHA-256 over the command name and the canonical JSON of the settings.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("settings serialize"));
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
