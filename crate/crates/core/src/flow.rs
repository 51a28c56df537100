//! Flow records, timestamps and time slicing.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub const fn from_secs(s: u64) -> Self {
        Timestamp(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn saturating_add(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_add(duration_micros(d)))
    }

    pub fn saturating_sub(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_sub(duration_micros(d)))
    }

    /// Elapsed time since `earlier`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub(crate) fn duration_micros(d: Duration) -> u64 {
    u64::try_from(d.as_micros()).unwrap_or(u64::MAX)
}

/// Transport protocol of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
    Other(u8),
}

impl Protocol {
    pub const fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Other(n) => n,
        }
    }

    pub const fn from_number(n: u8) -> Self {
        match n {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            n => Protocol::Other(n),
        }
    }

    /// Whether the protocol carries port numbers.
    pub const fn has_ports(self) -> bool {
        matches!(self, Protocol::Tcp | Protocol::Udp | Protocol::Other(132))
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => f.write_str("TCP"),
            Protocol::Udp => f.write_str("UDP"),
            Protocol::Other(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid protocol {0:?}: expected TCP, UDP or a protocol number 0-255")]
pub struct ParseProtocolError(String);

impl FromStr for Protocol {
    type Err = ParseProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("tcp") {
            Ok(Protocol::Tcp)
        } else if s.eq_ignore_ascii_case("udp") {
            Ok(Protocol::Udp)
        } else {
            s.parse::<u8>()
                .map(Protocol::from_number)
                .map_err(|_| ParseProtocolError(s.to_owned()))
        }
    }
}

/// One unidirectional flow summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src: IpAddr,
    pub dst: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
    pub packet_count: u64,
    pub byte_count: u64,
}

impl FlowRecord {
    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.first_seen > self.last_seen {
            return Err(FlowError::TimeOrder {
                first_seen: self.first_seen,
                last_seen: self.last_seen,
            });
        }
        if self.packet_count == 0 {
            return Err(FlowError::NoPackets);
        }
        Ok(())
    }

    /// The same flow seen in the opposite direction.
    pub fn reversed(&self) -> FlowRecord {
        FlowRecord {
            src: self.dst,
            dst: self.src,
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("first_seen {first_seen} is after last_seen {last_seen}")]
    TimeOrder { first_seen: Timestamp, last_seen: Timestamp },
    #[error("flow has zero packets")]
    NoPackets,
}

/// Identifies the couple (IP address, slice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub ip: IpAddr,
    pub slice_index: u64,
}

impl SliceKey {
    pub const fn new(ip: IpAddr, slice_index: u64) -> Self {
        SliceKey { ip, slice_index }
    }
}

pub const DEFAULT_SLICE_SECONDS: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SliceError {
    #[error("slice duration must be positive")]
    ZeroDuration,
    #[error("flow starts at {first_seen}, before trace start {trace_start}")]
    BeforeTraceStart {
        first_seen: Timestamp,
        trace_start: Timestamp,
    },
}

/// Partitions a trace into half-open slices `[start + k*d, start + (k+1)*d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceConfig {
    trace_start: Timestamp,
    slice_duration_us: u64,
}

impl SliceConfig {
    pub fn new(trace_start: Timestamp, slice_duration: Duration) -> Result<Self, SliceError> {
        let slice_duration_us = duration_micros(slice_duration);
        if slice_duration_us == 0 {
            return Err(SliceError::ZeroDuration);
        }
        Ok(SliceConfig {
            trace_start,
            slice_duration_us,
        })
    }

    /// Slices of the default 30 s duration, aligned to `trace_start`.
    pub fn with_default_duration(trace_start: Timestamp) -> Self {
        SliceConfig {
            trace_start,
            slice_duration_us: DEFAULT_SLICE_SECONDS * 1_000_000,
        }
    }

    pub fn trace_start(&self) -> Timestamp {
        self.trace_start
    }

    pub fn slice_duration(&self) -> Duration {
        Duration::from_micros(self.slice_duration_us)
    }

    pub fn index_of(&self, ts: Timestamp) -> Result<u64, SliceError> {
        if ts < self.trace_start {
            return Err(SliceError::BeforeTraceStart {
                first_seen: ts,
                trace_start: self.trace_start,
            });
        }
        Ok((ts.0 - self.trace_start.0) / self.slice_duration_us)
    }

    /// Exclusive end of slice `index`.
    pub fn slice_end(&self, index: u64) -> Timestamp {
        Timestamp(
            self.trace_start
                .0
                .saturating_add(index.saturating_add(1).saturating_mul(self.slice_duration_us)),
        )
    }
}

/// The slice a flow belongs to, decided by its first packet.
pub fn slice_of(flow: &FlowRecord, cfg: &SliceConfig) -> Result<u64, SliceError> {
    cfg.index_of(flow.first_seen)
}

/// Earliest `first_seen` and latest `last_seen` over `flows`.
pub fn trace_bounds<'a, I>(flows: I) -> Option<(Timestamp, Timestamp)>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    flows.into_iter().fold(None, |acc, f| match acc {
        None => Some((f.first_seen, f.last_seen)),
        Some((lo, hi)) => Some((lo.min(f.first_seen), hi.max(f.last_seen))),
    })
}
