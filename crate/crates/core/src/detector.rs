//! Per-slice generated/received flow counting and the signed-ratio test.
//!
//! For every `(ip, slice)` couple the detector counts the flows the address
//! generated (as source) and received (as destination), merges both tables
//! with a full outer join, and flags the couple when the signed ratio lies
//! strictly above `threshold` (dominant sender) or strictly below
//! `-threshold` (dominant receiver).

use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::flow::{slice_of, FlowRecord, SliceConfig, SliceError, SliceKey};

pub type CountMap = FxHashMap<SliceKey, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceCounts {
    pub key: SliceKey,
    pub generated: u64,
    pub received: u64,
}

/// Generated-over-received ratio with the sign carrying the direction.
///
/// When generation dominates the value is `generated / max(received, 1)`,
/// otherwise `-(received / max(generated, 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedRatio {
    pub numerator: u64,
    pub denominator: u64,
    pub negative: bool,
}

impl SignedRatio {
    pub fn value(&self) -> f64 {
        let v = self.numerator as f64 / self.denominator as f64;
        if self.negative {
            -v
        } else {
            v
        }
    }
}

impl fmt::Display for SignedRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

pub fn ratio_of(counts: &SliceCounts) -> SignedRatio {
    let (g, r) = (counts.generated, counts.received);
    if g >= r {
        SignedRatio {
            numerator: g,
            denominator: r.max(1),
            negative: false,
        }
    } else {
        SignedRatio {
            numerator: r,
            denominator: g.max(1),
            negative: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    ScanSender,
    ScanReceiver,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ScanSender => "sender",
            Direction::ScanReceiver => "receiver",
        }
    }

    pub fn flipped(self) -> Direction {
        match self {
            Direction::ScanSender => Direction::ScanReceiver,
            Direction::ScanReceiver => Direction::ScanSender,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatioVerdict {
    pub key: SliceKey,
    pub generated: u64,
    pub received: u64,
    pub ratio: SignedRatio,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("threshold must be a finite number > 0, got {0}")]
pub struct InvalidThreshold(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    threshold: f64,
    pub slice: SliceConfig,
}

impl DetectorConfig {
    pub fn new(threshold: f64, slice: SliceConfig) -> Result<Self, InvalidThreshold> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(InvalidThreshold(threshold));
        }
        Ok(DetectorConfig { threshold, slice })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, InvalidThreshold> {
        DetectorConfig::new(threshold, self.slice)
    }
}

fn count_by<'a, I, F>(flows: I, cfg: &SliceConfig, pick: F) -> Result<CountMap, SliceError>
where
    I: IntoIterator<Item = &'a FlowRecord>,
    F: Fn(&FlowRecord) -> IpAddr,
{
    let mut counts = CountMap::default();
    for f in flows {
        let key = SliceKey::new(pick(f), slice_of(f, cfg)?);
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Flows generated per `(source ip, slice)`.
pub fn count_by_source<'a, I>(flows: I, cfg: &SliceConfig) -> Result<CountMap, SliceError>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    count_by(flows, cfg, |f| f.src)
}

/// Flows received per `(destination ip, slice)`.
pub fn count_by_destination<'a, I>(flows: I, cfg: &SliceConfig) -> Result<CountMap, SliceError>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    count_by(flows, cfg, |f| f.dst)
}

/// Per-key addition of `other` into `into`.
pub fn merge_counts(mut into: CountMap, other: CountMap) -> CountMap {
    if into.len() < other.len() {
        return merge_counts(other, into);
    }
    for (k, v) in other {
        *into.entry(k).or_insert(0) += v;
    }
    into
}

/// One row per key present in either table, absent sides filled with zero.
/// Rows come back in `(slice_index, ip)` order.
pub fn full_outer_join(src_counts: &CountMap, dst_counts: &CountMap) -> Vec<SliceCounts> {
    let mut rows: Vec<SliceCounts> = src_counts
        .iter()
        .map(|(k, &g)| SliceCounts {
            key: *k,
            generated: g,
            received: dst_counts.get(k).copied().unwrap_or(0),
        })
        .collect();
    rows.extend(
        dst_counts
            .iter()
            .filter(|(k, _)| !src_counts.contains_key(k))
            .map(|(k, &r)| SliceCounts {
                key: *k,
                generated: 0,
                received: r,
            }),
    );
    rows.sort_unstable_by_key(|c| verdict_order(&c.key));
    rows
}

pub(crate) fn verdict_order(k: &SliceKey) -> (u64, IpAddr) {
    (k.slice_index, k.ip)
}

/// Applies the dual threshold test to one joined row.
pub fn judge(counts: &SliceCounts, threshold: f64) -> Option<RatioVerdict> {
    let ratio = ratio_of(counts);
    let v = ratio.value();
    let direction = if v > threshold {
        Direction::ScanSender
    } else if v < -threshold {
        Direction::ScanReceiver
    } else {
        return None;
    };
    Some(RatioVerdict {
        key: counts.key,
        generated: counts.generated,
        received: counts.received,
        ratio,
        direction,
    })
}

/// Runs the full pipeline sequentially. Output is sorted by `(slice_index, ip)`.
pub fn detect(flows: &[FlowRecord], cfg: &DetectorConfig) -> Result<Vec<RatioVerdict>, SliceError> {
    let src = count_by_source(flows, &cfg.slice)?;
    let dst = count_by_destination(flows, &cfg.slice)?;
    Ok(full_outer_join(&src, &dst)
        .iter()
        .filter_map(|c| judge(c, cfg.threshold))
        .collect())
}

/// Addresses flagged in at least one slice, once per direction.
pub fn anomalous_ips<'a, I>(verdicts: I) -> BTreeSet<(IpAddr, Direction)>
where
    I: IntoIterator<Item = &'a RatioVerdict>,
{
    verdicts.into_iter().map(|v| (v.key.ip, v.direction)).collect()
}

/// Flagged addresses regardless of direction.
pub fn flagged_ips<'a, I>(verdicts: I) -> BTreeSet<IpAddr>
where
    I: IntoIterator<Item = &'a RatioVerdict>,
{
    verdicts.into_iter().map(|v| v.key.ip).collect()
}
