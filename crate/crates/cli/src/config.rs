//! The single TOML run configuration.
//!
//! ```toml
//! [slice]
//! seconds = 30
//! # trace_start_us = 1516000000000000   # default: earliest flow
//!
//! [detector]
//! threshold = 100
//! thresholds = [50, 100, 200]
//!
//! [rules]
//! netscan_min_flows = 20
//! portscan_min_ports = 10
//! combined_min_flows_per_slice = 20
//! subnet_prefix = 24
//! known_ports = ["0-1023"]
//!
//! [engine]
//! workers = 4
//! partitioning = "by_slice_index"   # or "by_ip_hash"
//! mode = "batch"                    # or "streaming"
//! watermark_lag_seconds = 5
//!
//! [eval]
//! matching = "undirected"
//! truth_sets = ["total"]
//! scan_prefixes = ["ntsc", "ptsc", "netscan", "portscan", "scan"]
//! exclude_substrings = ["icmp", "ping"]
//!
//! [ingest]
//! strict = false
//! max_error_ratio = 1.0
//! ```

use std::path::Path;
use std::time::Duration;

use scanflow_core::engine::DEFAULT_WATERMARK_LAG;
use scanflow_core::report::TruthSet;
use scanflow_core::{
    DetectorConfig, EngineConfig, FlowFileOptions, Matching, Mode, Partitioning, RuleConfig, ScanLabelFilter,
    SliceConfig, Timestamp,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_ENV: &str = "SCANFLOW_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub slice: SliceSection,
    pub detector: DetectorSection,
    pub rules: RuleConfig,
    pub engine: EngineSection,
    pub eval: EvalSection,
    pub ingest: IngestSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceSection {
    pub seconds: f64,
    pub trace_start_us: Option<u64>,
}

impl Default for SliceSection {
    fn default() -> Self {
        SliceSection {
            seconds: 30.0,
            trace_start_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub threshold: f64,
    pub thresholds: Vec<f64>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            threshold: 100.0,
            thresholds: vec![50.0, 100.0, 200.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub workers: usize,
    pub partitioning: Partitioning,
    pub mode: Mode,
    pub watermark_lag_seconds: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            partitioning: Partitioning::default(),
            mode: Mode::default(),
            watermark_lag_seconds: DEFAULT_WATERMARK_LAG.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub matching: Matching,
    pub truth_sets: Vec<TruthSet>,
    pub scan_prefixes: Vec<String>,
    pub exclude_substrings: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            matching: Matching::default(),
            truth_sets: vec![TruthSet::Total],
            scan_prefixes: ScanLabelFilter::default().scan_prefixes,
            exclude_substrings: ScanLabelFilter::default().exclude_substrings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub strict: bool,
    pub max_error_ratio: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            strict: false,
            max_error_ratio: 1.0,
        }
    }
}

fn config_err(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{field}: {reason}"))
}

fn seconds(field: &str, v: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v).map_err(|_| config_err(field, format!("invalid duration {v}")))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {}", path.display(), e.message())))
    }

    /// Checks every section; the error names the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.slice;
        if !(s.seconds.is_finite() && s.seconds * 1e6 >= 1.0) {
            return Err(config_err("slice.seconds", "must be > 0"));
        }
        let check_threshold = |field: &str, t: f64| {
            if t.is_finite() && t > 0.0 {
                Ok(())
            } else {
                Err(config_err(field, format!("must be > 0, got {t}")))
            }
        };
        check_threshold("detector.threshold", self.detector.threshold)?;
        for t in &self.detector.thresholds {
            check_threshold("detector.thresholds", *t)?;
        }
        self.rules.validate().map_err(|e| config_err(&format!("rules.{}", e.field), e.reason))?;
        if self.engine.workers == 0 {
            return Err(config_err("engine.workers", "must be >= 1"));
        }
        seconds("engine.watermark_lag_seconds", self.engine.watermark_lag_seconds)?;
        if self.eval.truth_sets.is_empty() {
            return Err(config_err("eval.truth_sets", "must not be empty"));
        }
        if !(self.ingest.max_error_ratio >= 0.0) {
            return Err(config_err("ingest.max_error_ratio", "must be >= 0"));
        }
        Ok(())
    }

    pub fn slice_config(&self, trace_start: Timestamp) -> Result<SliceConfig, CliError> {
        let start = self.slice.trace_start_us.map_or(trace_start, Timestamp);
        SliceConfig::new(start, seconds("slice.seconds", self.slice.seconds)?)
            .map_err(|e| config_err("slice.seconds", e))
    }

    pub fn detector_config(&self, threshold: f64, trace_start: Timestamp) -> Result<DetectorConfig, CliError> {
        DetectorConfig::new(threshold, self.slice_config(trace_start)?)
            .map_err(|e| config_err("detector.threshold", e))
    }

    pub fn engine_config(&self) -> Result<EngineConfig, CliError> {
        Ok(EngineConfig {
            workers: self.engine.workers,
            partitioning: self.engine.partitioning,
            mode: self.engine.mode,
            watermark_lag: seconds("engine.watermark_lag_seconds", self.engine.watermark_lag_seconds)?,
        })
    }

    pub fn flow_file_options(&self) -> FlowFileOptions {
        FlowFileOptions {
            strict: self.ingest.strict,
            max_error_ratio: self.ingest.max_error_ratio,
        }
    }

    pub fn label_filter(&self) -> ScanLabelFilter {
        ScanLabelFilter {
            scan_prefixes: self.eval.scan_prefixes.clone(),
            exclude_substrings: self.eval.exclude_substrings.clone(),
        }
    }
}
