//! Settings file merged under explicit flags.

use std::fs;
use std::path::Path;

use gist_core::pipeline::OfflineOptions;
use gist_core::properties::Property;
use gist_core::similarity::{Metric, SimilarityConfig};
use gist_core::synth::SynthConfig;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub property: Option<Property>,
    pub metrics: Option<Vec<Metric>>,
    pub metric: Option<Metric>,
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    pub exclude_same_type: Option<bool>,
    pub offline: Option<OfflineOptions>,
    pub similarity: Option<SimilarityConfig>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    /// TOML when the extension says so, JSON otherwise.
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|reason| Failure::format(format!("{}: {reason}", path.display())))
    }

    /// Offline options with `k`, `alpha` and `exclude_same_type` folded in,
    /// flags taking precedence over file values.
    pub fn offline_options(&self, k: Option<usize>, alpha: Option<f64>, include_same_type: bool) -> OfflineOptions {
        let mut options = self.offline.clone().unwrap_or_default();
        if let Some(k) = k.or(self.k) {
            options.property_config.k = k;
        }
        if let Some(a) = alpha.or(self.alpha) {
            options.thresholds.alpha = a;
            if !options.alpha_levels.contains(&a) {
                options.alpha_levels.push(a);
                options.alpha_levels.sort_by(f64::total_cmp);
            }
        }
        if include_same_type {
            options.exclude_same_type = false;
        } else if let Some(e) = self.exclude_same_type {
            options.exclude_same_type = e;
        }
        options
    }
}
