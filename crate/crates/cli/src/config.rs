//! `train` configuration file: TOML, every key optional.
//!
//! ```toml
//! seed = 42                 # omit to have one chosen and printed
//! tokenizer = "event"       # event | grammar | grammar_strip_numbers
//!
//! [paths]                   # relative to the config file's directory
//! input = "events.log"
//! filter = "filter.txt"
//! out = "model.bundle"
//!
//! [time_range]              # inclusive; either end may be omitted
//! start = "2025-06-23 00:00:00"
//! end = "2025-06-24 23:59:59.999"
//!
//! [embedding]
//! dim = 32
//! window = 8
//! negatives = 5
//! epochs = 5
//! learning_rate = 0.025
//! min_count = 1
//!
//! [detector]
//! hidden = 64
//! latent = 16
//! segment_len = 64
//! epochs = 30
//! learning_rate = 0.001
//! weight_decay = 0.0
//! center_floor = 0.01
//! ```
//!
//! Command-line flags override file values.

use std::path::{Path, PathBuf};

use epics_anomaly::event_log::TimeRange;
use epics_anomaly::pipeline::{PipelineConfig, TokenizerMode};
use epics_anomaly::sequence_detector::DetectorConfig;
use epics_anomaly::token_embeddings::SkipGramConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tokenizer: TokenizerMode,
    pub paths: Paths,
    pub time_range: TimeRange,
    pub embedding: SkipGramConfig,
    pub detector: DetectorConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.paths.input, &mut config.paths.filter, &mut config.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() && p.as_os_str() != "-" {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// The pipeline configuration once a seed is fixed.
    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            tokenizer: self.tokenizer,
            time_range: self.time_range,
            embedding: self.embedding,
            detector: self.detector,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
