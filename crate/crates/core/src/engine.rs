//! Batch and streaming execution of the detector.
//!
//! Batch runs are a two-stage map/reduce. The input is cut into one
//! contiguous chunk per worker; each chunk produces partial source and
//! destination counts already split by partition. Partitions are a function
//! of the `(ip, slice)` key, so each one is merged, joined and thresholded
//! independently before the results are concatenated and sorted.
//!
//! Streaming runs keep open slices in memory and close a slice once the
//! watermark (newest `first_seen` minus the allowed lag) passes its end.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::detector::{full_outer_join, judge, merge_counts, verdict_order, CountMap, DetectorConfig, RatioVerdict};
use crate::flow::{slice_of, trace_bounds, FlowRecord, SliceError, SliceKey, Timestamp};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partitioning {
    #[default]
    BySliceIndex,
    ByIpHash,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Batch,
    Streaming,
}

pub const DEFAULT_WATERMARK_LAG: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub workers: usize,
    pub partitioning: Partitioning,
    pub mode: Mode,
    pub watermark_lag: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 1,
            partitioning: Partitioning::default(),
            mode: Mode::default(),
            watermark_lag: DEFAULT_WATERMARK_LAG,
        }
    }
}

impl EngineConfig {
    pub fn batch(workers: usize) -> Self {
        EngineConfig {
            workers,
            ..Default::default()
        }
    }

    pub fn streaming(watermark_lag: Duration) -> Self {
        EngineConfig {
            mode: Mode::Streaming,
            watermark_lag,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_time: Duration,
    pub trace_duration: Duration,
    /// `wall_time / trace_duration`; absent when the trace has zero length.
    pub time_ratio: Option<f64>,
    pub records_in: u64,
    pub verdicts_out: u64,
    /// Streaming only: flows that arrived after their slice closed.
    pub late_dropped: u64,
    /// Streaming only.
    pub slices_emitted: u64,
}

impl RunStats {
    fn finish(&mut self, started: Instant, bounds: Option<(Timestamp, Timestamp)>) {
        self.wall_time = started.elapsed();
        self.trace_duration = bounds.map_or(Duration::ZERO, |(lo, hi)| hi.since(lo));
        self.time_ratio = (!self.trace_duration.is_zero())
            .then(|| self.wall_time.as_secs_f64() / self.trace_duration.as_secs_f64());
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("engine configured for {configured:?} mode, called as {called:?}")]
    ModeMismatch { configured: Mode, called: Mode },
    #[error("workers must be >= 1")]
    NoWorkers,
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("worker {worker} failed after {processed} of {assigned} records: {source}")]
    Worker {
        worker: usize,
        processed: usize,
        assigned: usize,
        source: SliceError,
    },
    #[error("emit callback failed at slice {slice_index}: {message}")]
    Callback { slice_index: u64, message: String },
}

fn partition_of(key: &SliceKey, strategy: Partitioning, partitions: usize) -> usize {
    if partitions == 1 {
        return 0;
    }
    let h = match strategy {
        Partitioning::BySliceIndex => key.slice_index,
        Partitioning::ByIpHash => {
            let mut hasher = FxHasher::default();
            key.ip.hash(&mut hasher);
            hasher.finish()
        }
    };
    (h % partitions as u64) as usize
}

type Partials = Vec<(CountMap, CountMap)>;

fn map_chunk(
    worker: usize,
    chunk: &[FlowRecord],
    det: &DetectorConfig,
    strategy: Partitioning,
    partitions: usize,
) -> Result<Partials, EngineError> {
    let mut parts: Partials = (0..partitions).map(|_| Default::default()).collect();
    for (i, f) in chunk.iter().enumerate() {
        let slice = slice_of(f, &det.slice).map_err(|source| EngineError::Worker {
            worker,
            processed: i,
            assigned: chunk.len(),
            source,
        })?;
        let src = SliceKey::new(f.src, slice);
        let dst = SliceKey::new(f.dst, slice);
        *parts[partition_of(&src, strategy, partitions)].0.entry(src).or_insert(0) += 1;
        *parts[partition_of(&dst, strategy, partitions)].1.entry(dst).or_insert(0) += 1;
    }
    Ok(parts)
}

fn reduce_partition(pieces: Vec<(CountMap, CountMap)>, threshold: f64) -> Vec<RatioVerdict> {
    let (src, dst) = pieces.into_iter().fold(
        (CountMap::default(), CountMap::default()),
        |(s, d), (ps, pd)| (merge_counts(s, ps), merge_counts(d, pd)),
    );
    full_outer_join(&src, &dst)
        .iter()
        .filter_map(|c| judge(c, threshold))
        .collect()
}

/// Runs the detector data-parallel over an in-memory trace.
///
/// The verdicts equal [`crate::detector::detect`] on the same input for
/// every worker count and partitioning.
pub fn run_batch(
    flows: &[FlowRecord],
    det: &DetectorConfig,
    eng: &EngineConfig,
) -> Result<(Vec<RatioVerdict>, RunStats), EngineError> {
    if eng.mode != Mode::Batch {
        return Err(EngineError::ModeMismatch {
            configured: eng.mode,
            called: Mode::Batch,
        });
    }
    if eng.workers == 0 {
        return Err(EngineError::NoWorkers);
    }
    let started = Instant::now();
    let workers = eng.workers;
    let partitions = workers;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let threshold = det.threshold();

    let mut verdicts = pool.install(|| -> Result<Vec<RatioVerdict>, EngineError> {
        let chunk_len = flows.len().div_ceil(workers).max(1);
        let mapped: Vec<Partials> = flows
            .par_chunks(chunk_len)
            .enumerate()
            .map(|(w, chunk)| map_chunk(w, chunk, det, eng.partitioning, partitions))
            .collect::<Result<_, _>>()?;

        let mut by_partition: Vec<Vec<(CountMap, CountMap)>> = (0..partitions).map(|_| Vec::new()).collect();
        for parts in mapped {
            for (p, piece) in parts.into_iter().enumerate() {
                by_partition[p].push(piece);
            }
        }
        Ok(by_partition
            .into_par_iter()
            .map(|pieces| reduce_partition(pieces, threshold))
            .flatten()
            .collect())
    })?;
    verdicts.sort_unstable_by_key(|v| verdict_order(&v.key));

    let mut stats = RunStats {
        records_in: flows.len() as u64,
        verdicts_out: verdicts.len() as u64,
        ..Default::default()
    };
    stats.finish(started, trace_bounds(flows));
    Ok((verdicts, stats))
}

/// Verdicts of one closed slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceEmission {
    pub slice_index: u64,
    pub verdicts: Vec<RatioVerdict>,
}

#[derive(Default)]
struct OpenSlice {
    src: CountMap,
    dst: CountMap,
}

/// Runs the detector incrementally over a flow stream.
///
/// `emit` is called once per slice that received at least one flow, in
/// slice order, as soon as the watermark passes the slice end (and for the
/// remaining slices when the stream ends). Flows whose slice has already
/// closed, or that precede the trace start, are dropped and counted.
pub fn run_streaming<I, F, E>(
    flows: I,
    det: &DetectorConfig,
    eng: &EngineConfig,
    mut emit: F,
) -> Result<RunStats, EngineError>
where
    I: IntoIterator<Item = FlowRecord>,
    F: FnMut(SliceEmission) -> Result<(), E>,
    E: fmt::Display,
{
    if eng.mode != Mode::Streaming {
        return Err(EngineError::ModeMismatch {
            configured: eng.mode,
            called: Mode::Streaming,
        });
    }
    let started = Instant::now();
    let slices = det.slice;
    let threshold = det.threshold();
    let mut open: BTreeMap<u64, OpenSlice> = BTreeMap::new();
    // every slice index below this has been closed
    let mut closed_below: u64 = 0;
    let mut newest: Option<Timestamp> = None;
    let mut bounds: Option<(Timestamp, Timestamp)> = None;
    let mut stats = RunStats::default();

    let mut close = |slice_index: u64, s: OpenSlice, stats: &mut RunStats| -> Result<(), EngineError> {
        let verdicts: Vec<RatioVerdict> = full_outer_join(&s.src, &s.dst)
            .iter()
            .filter_map(|c| judge(c, threshold))
            .collect();
        stats.verdicts_out += verdicts.len() as u64;
        stats.slices_emitted += 1;
        emit(SliceEmission { slice_index, verdicts }).map_err(|e| EngineError::Callback {
            slice_index,
            message: e.to_string(),
        })
    };

    for f in flows {
        stats.records_in += 1;
        bounds = Some(match bounds {
            None => (f.first_seen, f.last_seen),
            Some((lo, hi)) => (lo.min(f.first_seen), hi.max(f.last_seen)),
        });
        match slice_of(&f, &slices) {
            Ok(k) if k >= closed_below => {
                let s = open.entry(k).or_default();
                *s.src.entry(SliceKey::new(f.src, k)).or_insert(0) += 1;
                *s.dst.entry(SliceKey::new(f.dst, k)).or_insert(0) += 1;
            }
            _ => stats.late_dropped += 1,
        }

        let n = newest.map_or(f.first_seen, |n| n.max(f.first_seen));
        newest = Some(n);
        let watermark = n.saturating_sub(eng.watermark_lag);
        // slice k is closed once its end, start + (k+1)*d, is <= watermark
        if let Ok(idx) = slices.index_of(watermark) {
            if idx > closed_below {
                closed_below = idx;
                while let Some(entry) = open.first_entry() {
                    if *entry.key() >= closed_below {
                        break;
                    }
                    let (k, s) = entry.remove_entry();
                    close(k, s, &mut stats)?;
                }
            }
        }
    }
    while let Some((k, s)) = open.pop_first() {
        close(k, s, &mut stats)?;
    }
    stats.finish(started, bounds);
    Ok(stats)
}
