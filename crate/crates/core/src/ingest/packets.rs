//! Packet-to-flow aggregation over the unidirectional 5-tuple.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::net::IpAddr;
use std::time::Duration;

use rustc_hash::FxHashMap;

use crate::flow::{duration_micros, FlowRecord, Protocol, Timestamp};

/// Header summary of one captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketSummary {
    pub timestamp: Timestamp,
    pub src: IpAddr,
    pub dst: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub length: u64,
}

impl PacketSummary {
    /// Zeroes the ports of protocols that do not carry them.
    pub fn normalized(mut self) -> Self {
        if !self.protocol.has_ports() {
            self.src_port = 0;
            self.dst_port = 0;
        }
        self
    }

    fn key(&self) -> FiveTuple {
        FiveTuple {
            src: self.src,
            dst: self.dst,
            src_port: self.src_port,
            dst_port: self.dst_port,
            protocol: self.protocol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct FiveTuple {
    src: IpAddr,
    dst: IpAddr,
    src_port: u16,
    dst_port: u16,
    protocol: Protocol,
}

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateOptions {
    pub idle_timeout: Duration,
    /// How far a packet may lag the newest timestamp seen so far.
    pub reorder_tolerance: Duration,
    pub strict: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            reorder_tolerance: Duration::ZERO,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("packet at {timestamp} is {lag_us} us older than newest seen {newest}")]
pub struct OutOfOrder {
    pub timestamp: Timestamp,
    pub newest: Timestamp,
    pub lag_us: u64,
}

struct Active {
    flow: FlowRecord,
    // bumped on every packet so stale heap entries can be recognized
    generation: u64,
}

/// Groups packets into flows; see [`aggregate_packets`].
pub struct FlowAggregator<I> {
    packets: I,
    idle_us: u64,
    tolerance_us: u64,
    strict: bool,
    active: FxHashMap<FiveTuple, Active>,
    expiry: BinaryHeap<Reverse<(Timestamp, u64, FiveTuple)>>,
    ready: VecDeque<FlowRecord>,
    newest: Option<Timestamp>,
    generation: u64,
    reordered: u64,
    finished: bool,
}

/// Aggregates a time-ordered packet stream into unidirectional flows.
///
/// Packets sharing a 5-tuple whose inter-arrival gap stays below the idle
/// timeout form one flow. A gap of at least the timeout closes the flow.
/// Flows are yielded when they close, or at end of input ordered by
/// `(first_seen, 5-tuple)`.
pub fn aggregate_packets<I>(packets: I, opts: AggregateOptions) -> FlowAggregator<I::IntoIter>
where
    I: IntoIterator<Item = PacketSummary>,
{
    FlowAggregator {
        packets: packets.into_iter(),
        idle_us: duration_micros(opts.idle_timeout),
        tolerance_us: duration_micros(opts.reorder_tolerance),
        strict: opts.strict,
        active: FxHashMap::default(),
        expiry: BinaryHeap::new(),
        ready: VecDeque::new(),
        newest: None,
        generation: 0,
        reordered: 0,
        finished: false,
    }
}

impl<I> FlowAggregator<I> {
    /// Packets that arrived behind the newest timestamp beyond the tolerance.
    pub fn reordered(&self) -> u64 {
        self.reordered
    }

    fn expire_before(&mut self, now: Timestamp) {
        while let Some(Reverse((last_seen, gen, key))) = self.expiry.peek().copied() {
            if last_seen.0.saturating_add(self.idle_us) > now.0 {
                break;
            }
            self.expiry.pop();
            if self.active.get(&key).is_some_and(|a| a.generation == gen) {
                let closed = self.active.remove(&key).expect("checked above");
                self.ready.push_back(closed.flow);
            }
        }
    }

    fn absorb(&mut self, pkt: PacketSummary) {
        let pkt = pkt.normalized();
        let key = pkt.key();
        self.generation += 1;
        let generation = self.generation;
        let idle_us = self.idle_us;
        let mut closed = None;
        match self.active.get_mut(&key) {
            Some(a) if pkt.timestamp.0.saturating_sub(a.flow.last_seen.0) < idle_us => {
                a.flow.last_seen = a.flow.last_seen.max(pkt.timestamp);
                a.flow.first_seen = a.flow.first_seen.min(pkt.timestamp);
                a.flow.packet_count += 1;
                a.flow.byte_count += pkt.length;
                a.generation = generation;
            }
            Some(a) => {
                closed = Some(std::mem::replace(
                    a,
                    Active {
                        flow: new_flow(&pkt),
                        generation,
                    },
                ));
            }
            None => {
                self.active.insert(
                    key,
                    Active {
                        flow: new_flow(&pkt),
                        generation,
                    },
                );
            }
        }
        if let Some(c) = closed {
            self.ready.push_back(c.flow);
        }
        let last_seen = self.active[&key].flow.last_seen;
        self.expiry.push(Reverse((last_seen, generation, key)));
    }

    fn drain_remaining(&mut self) {
        let mut rest: Vec<_> = self.active.drain().map(|(k, a)| (a.flow.first_seen, k, a.flow)).collect();
        rest.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        self.ready.extend(rest.into_iter().map(|(_, _, f)| f));
        self.expiry.clear();
    }
}

fn new_flow(p: &PacketSummary) -> FlowRecord {
    FlowRecord {
        src: p.src,
        dst: p.dst,
        src_port: p.src_port,
        dst_port: p.dst_port,
        protocol: p.protocol,
        first_seen: p.timestamp,
        last_seen: p.timestamp,
        packet_count: 1,
        byte_count: p.length,
    }
}

impl<I> Iterator for FlowAggregator<I>
where
    I: Iterator<Item = PacketSummary>,
{
    type Item = Result<FlowRecord, OutOfOrder>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(f) = self.ready.pop_front() {
                return Some(Ok(f));
            }
            if self.finished {
                return None;
            }
            match self.packets.next() {
                None => {
                    self.finished = true;
                    self.drain_remaining();
                }
                Some(pkt) => {
                    let newest = self.newest.map_or(pkt.timestamp, |n| n.max(pkt.timestamp));
                    let lag = newest.0 - pkt.timestamp.0;
                    if lag > self.tolerance_us {
                        self.reordered += 1;
                        if self.strict {
                            self.finished = true;
                            self.active.clear();
                            self.ready.clear();
                            return Some(Err(OutOfOrder {
                                timestamp: pkt.timestamp,
                                newest,
                                lag_us: lag,
                            }));
                        }
                    }
                    self.newest = Some(newest);
                    self.expire_before(pkt.timestamp);
                    self.absorb(pkt);
                }
            }
        }
    }
}
