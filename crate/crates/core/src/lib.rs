//! Flow-level port and net scan detection.
//!
//! Traces are cut into fixed slices; for every `(ip, slice)` couple the
//! detector compares generated and received flow counts and flags addresses
//! whose signed ratio exceeds a threshold. Flagged addresses can be labelled
//! with scan heuristics and scored against MAWILab-style ground truth.
//!
//! ```
//! use std::time::Duration;
//! use scanflow_core::{detect, DetectorConfig, FlowRecord, Protocol, SliceConfig, Timestamp};
//!
//! let scanner = "10.0.0.1".parse().unwrap();
//! let flows: Vec<FlowRecord> = (0..120u8)
//!     .map(|i| FlowRecord {
//!         src: scanner,
//!         dst: std::net::IpAddr::from([172, 16, 0, i]),
//!         src_port: 40000,
//!         dst_port: 22,
//!         protocol: Protocol::Tcp,
//!         first_seen: Timestamp::from_secs(i as u64 / 10),
//!         last_seen: Timestamp::from_secs(i as u64 / 10),
//!         packet_count: 1,
//!         byte_count: 60,
//!     })
//!     .collect();
//! let slices = SliceConfig::new(Timestamp(0), Duration::from_secs(30)).unwrap();
//! let verdicts = detect(&flows, &DetectorConfig::new(100.0, slices).unwrap()).unwrap();
//! assert_eq!(verdicts.len(), 1);
//! assert_eq!(verdicts[0].ratio.value(), 120.0);
//! ```

pub mod classifier;
pub mod detector;
pub mod engine;
pub mod eval;
pub mod flow;
pub mod ingest;
pub mod report;
pub mod synth;

pub use classifier::{classify, reintegrate, Classifier, PortSet, RuleConfig, ScanEvidence, ScanKind, ScanLabel};
pub use detector::{
    anomalous_ips, count_by_destination, count_by_source, detect, flagged_ips, full_outer_join, merge_counts,
    ratio_of, CountMap, DetectorConfig, Direction, RatioVerdict, SignedRatio, SliceCounts,
};
pub use engine::{run_batch, run_streaming, EngineConfig, EngineError, Mode, Partitioning, RunStats, SliceEmission};
pub use eval::{
    aggregate, confusion, evaluate_case, filter_scan_labels, precision_recall, AggregateScore, CaseOutcome,
    ConfusionMatrix, EvalCase, Matching, PrScore, ScanLabelFilter, TraceEvaluator,
};
pub use flow::{slice_of, FlowRecord, Protocol, SliceConfig, SliceError, SliceKey, Timestamp};
pub use ingest::{FlowFileOptions, GroundTruthSet, PacketSummary};
