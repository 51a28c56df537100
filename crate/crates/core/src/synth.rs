//! Seeded synthetic traces with planted scanners and matching ground truth.
//!
//! Background hosts hold request/response conversations with each other, so
//! every background address generates exactly as many flows as it receives
//! in each slice (unless `unanswered_ratio` is raised). Planted scanners
//! only send.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowRecord, Protocol, SliceConfig, Timestamp};
use crate::ingest::{Category, GroundTruthEntry, SourceFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_start")]
    pub trace_start_us: u64,
    #[serde(default = "default_duration")]
    pub duration_seconds: u64,
    #[serde(default = "default_slice")]
    pub slice_seconds: u64,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub scanners: Vec<Scanner>,
    /// Extra ground-truth entries with no planted traffic, e.g. DoS labels.
    #[serde(default)]
    pub decoys: Vec<Decoy>,
}

fn default_start() -> u64 {
    1_516_000_000_000_000
}
fn default_duration() -> u64 {
    300
}
fn default_slice() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Background {
    pub hosts: u32,
    /// Hosts are numbered upward from this address, skipping it.
    pub base: Ipv4Addr,
    pub conversations_per_host_per_slice: u32,
    pub dst_ports: Vec<u16>,
    /// Fraction of conversations that get no reply flow.
    pub unanswered_ratio: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            hosts: 50,
            base: Ipv4Addr::new(192, 168, 0, 0),
            conversations_per_host_per_slice: 3,
            dst_ports: vec![80, 443, 53, 25],
            unanswered_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKindSpec {
    /// Many hosts of one /24, one port.
    NetScan,
    /// One victim, many ports.
    PortScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthFile {
    Anomalous,
    Notice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scanner {
    pub kind: ScanKindSpec,
    /// Defaults to `10.66.0.N` for the N-th scanner.
    #[serde(default)]
    pub source: Option<IpAddr>,
    /// Net scan: any address of the target /24. Port scan: the victim.
    /// Defaults to `172.16.N.0` / `172.16.N.1`.
    #[serde(default)]
    pub target: Option<Ipv4Addr>,
    #[serde(default = "default_scan_rate")]
    pub flows_per_slice: u32,
    /// Slice indices to scan in; empty means every slice.
    #[serde(default)]
    pub slices: Vec<u64>,
    /// Net scan destination port, or first port of a port scan.
    #[serde(default = "default_scan_port")]
    pub port: u16,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_category")]
    pub category: Category,
    #[serde(default = "default_true")]
    pub in_ground_truth: bool,
    #[serde(default = "default_gt_file")]
    pub ground_truth_file: GroundTruthFile,
}

fn default_scan_rate() -> u32 {
    120
}
fn default_scan_port() -> u16 {
    22
}
fn default_category() -> Category {
    Category::Anomalous
}
fn default_true() -> bool {
    true
}
fn default_gt_file() -> GroundTruthFile {
    GroundTruthFile::Anomalous
}

impl Scanner {
    pub fn net_scan(flows_per_slice: u32) -> Self {
        Scanner {
            kind: ScanKindSpec::NetScan,
            source: None,
            target: None,
            flows_per_slice,
            slices: Vec::new(),
            port: default_scan_port(),
            label: None,
            category: Category::Anomalous,
            in_ground_truth: true,
            ground_truth_file: GroundTruthFile::Anomalous,
        }
    }

    pub fn port_scan(flows_per_slice: u32) -> Self {
        Scanner {
            kind: ScanKindSpec::PortScan,
            port: 1,
            ..Scanner::net_scan(flows_per_slice)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decoy {
    pub label: String,
    #[serde(default = "default_category")]
    pub category: Category,
    #[serde(default)]
    pub src_ips: Vec<IpAddr>,
    #[serde(default)]
    pub dst_ips: Vec<IpAddr>,
    #[serde(default = "default_gt_file")]
    pub ground_truth_file: GroundTruthFile,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            trace_start_us: default_start(),
            duration_seconds: default_duration(),
            slice_seconds: default_slice(),
            background: Background::default(),
            scanners: Vec::new(),
            decoys: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("synth spec: {field}: {reason}")]
pub struct InvalidSpec {
    pub field: String,
    pub reason: String,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> InvalidSpec {
    InvalidSpec {
        field: field.into(),
        reason: reason.into(),
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, InvalidSpec> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| invalid("toml", e.message().to_owned()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn slice_count(&self) -> u64 {
        self.duration_seconds.div_ceil(self.slice_seconds.max(1))
    }

    pub fn slice_config(&self) -> SliceConfig {
        SliceConfig::new(
            Timestamp(self.trace_start_us),
            Duration::from_secs(self.slice_seconds.max(1)),
        )
        .expect("validated slice length")
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.slice_seconds < 2 {
            return Err(invalid("slice_seconds", "must be >= 2"));
        }
        if self.duration_seconds == 0 {
            return Err(invalid("duration_seconds", "must be > 0"));
        }
        let bg = &self.background;
        if bg.hosts == 1 {
            return Err(invalid("background.hosts", "need 0 or at least 2 hosts"));
        }
        if bg.hosts > 0 && bg.dst_ports.is_empty() {
            return Err(invalid("background.dst_ports", "must not be empty"));
        }
        if !(0.0..=1.0).contains(&bg.unanswered_ratio) {
            return Err(invalid("background.unanswered_ratio", "must be within [0, 1]"));
        }
        if u32::from(bg.base).checked_add(bg.hosts).is_none() {
            return Err(invalid("background.base", "host range overflows the address space"));
        }
        for (i, s) in self.scanners.iter().enumerate() {
            if s.flows_per_slice == 0 {
                return Err(invalid(format!("scanners[{i}].flows_per_slice"), "must be > 0"));
            }
            if s.kind == ScanKindSpec::NetScan && s.flows_per_slice > 254 {
                return Err(invalid(
                    format!("scanners[{i}].flows_per_slice"),
                    "a net scan of one /24 reaches at most 254 hosts per slice",
                ));
            }
            if s.kind == ScanKindSpec::PortScan && u32::from(s.port) + s.flows_per_slice > 65536 {
                return Err(invalid(format!("scanners[{i}].port"), "port range exceeds 65535"));
            }
            if let Some(bad) = s.slices.iter().find(|k| **k >= self.slice_count()) {
                return Err(invalid(format!("scanners[{i}].slices"), format!("slice {bad} is past the trace end")));
            }
        }
        for (i, d) in self.decoys.iter().enumerate() {
            if d.src_ips.is_empty() && d.dst_ips.is_empty() {
                return Err(invalid(format!("decoys[{i}]"), "needs at least one address"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    /// Sorted by `first_seen`, then by the remaining fields.
    pub flows: Vec<FlowRecord>,
    pub anomalous: Vec<GroundTruthEntry>,
    pub notice: Vec<GroundTruthEntry>,
    pub scanners: Vec<IpAddr>,
    pub background_hosts: Vec<IpAddr>,
    pub slice_config: SliceConfig,
}

impl SynthTrace {
    /// Scanner sources listed in the ground truth.
    pub fn ground_truth_scanners(&self) -> BTreeSet<IpAddr> {
        self.anomalous
            .iter()
            .chain(&self.notice)
            .filter(|e| e.taxonomy_label.starts_with("ntsc") || e.taxonomy_label.starts_with("ptsc"))
            .flat_map(|e| e.src_ips.iter().copied())
            .collect()
    }
}

fn bg_host(base: Ipv4Addr, i: u32) -> IpAddr {
    IpAddr::V4(Ipv4Addr::from(u32::from(base) + 1 + i))
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthTrace, InvalidSpec> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slice_us = spec.slice_seconds * 1_000_000;
    let start = spec.trace_start_us;
    let end = start + spec.duration_seconds * 1_000_000;
    let n_slices = spec.slice_count();
    let mut flows = Vec::new();

    let bg = &spec.background;
    let hosts: Vec<IpAddr> = (0..bg.hosts).map(|i| bg_host(bg.base, i)).collect();
    for k in 0..n_slices {
        let s0 = start + k * slice_us;
        // leave 1 s of headroom so replies stay within the slice
        let s1 = (s0 + slice_us).min(end).saturating_sub(1_000_000).max(s0 + 1);
        for (h, &client) in hosts.iter().enumerate() {
            for _ in 0..bg.conversations_per_host_per_slice {
                let mut p = rng.random_range(0..hosts.len() - 1);
                if p >= h {
                    p += 1;
                }
                let server = hosts[p];
                let t = rng.random_range(s0..s1);
                let sport = rng.random_range(1024..=u16::MAX);
                let dport = bg.dst_ports[rng.random_range(0..bg.dst_ports.len())];
                let proto = if dport == 53 { Protocol::Udp } else { Protocol::Tcp };
                let dur = rng.random_range(0..200_000u64);
                let pkts = rng.random_range(1..20u64);
                flows.push(FlowRecord {
                    src: client,
                    dst: server,
                    src_port: sport,
                    dst_port: dport,
                    protocol: proto,
                    first_seen: Timestamp(t),
                    last_seen: Timestamp(t + dur),
                    packet_count: pkts,
                    byte_count: pkts * rng.random_range(60..1500u64),
                });
                if bg.unanswered_ratio > 0.0 && rng.random_bool(bg.unanswered_ratio) {
                    continue;
                }
                let rtt = rng.random_range(100..50_000u64);
                let rpkts = rng.random_range(1..20u64);
                flows.push(FlowRecord {
                    src: server,
                    dst: client,
                    src_port: dport,
                    dst_port: sport,
                    protocol: proto,
                    first_seen: Timestamp(t + rtt),
                    last_seen: Timestamp(t + rtt + dur),
                    packet_count: rpkts,
                    byte_count: rpkts * rng.random_range(60..1500u64),
                });
            }
        }
    }

    let mut anomalous = Vec::new();
    let mut notice = Vec::new();
    let mut scanners = Vec::new();
    for (i, sc) in spec.scanners.iter().enumerate() {
        let n = i as u32;
        let src = sc
            .source
            .unwrap_or_else(|| IpAddr::V4(Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 66, 0, 1)) + n)));
        let target = sc.target.unwrap_or_else(|| {
            let net = u32::from(Ipv4Addr::new(172, 16, 0, 0)) + (n << 8);
            Ipv4Addr::from(if sc.kind == ScanKindSpec::PortScan { net + 1 } else { net })
        });
        scanners.push(src);
        let active: Vec<u64> = if sc.slices.is_empty() {
            (0..n_slices).collect()
        } else {
            sc.slices.clone()
        };
        let sport = rng.random_range(1024..=u16::MAX);
        for &k in &active {
            let s0 = start + k * slice_us;
            let s1 = (s0 + slice_us).min(end).max(s0 + 1);
            let mut times: Vec<u64> = (0..sc.flows_per_slice).map(|_| rng.random_range(s0..s1)).collect();
            times.sort_unstable();
            for (j, t) in times.into_iter().enumerate() {
                let j = j as u32;
                let (dst, dport) = match sc.kind {
                    ScanKindSpec::NetScan => {
                        let net = u32::from(target) & 0xFFFF_FF00;
                        (IpAddr::V4(Ipv4Addr::from(net + 1 + j)), sc.port)
                    }
                    ScanKindSpec::PortScan => (IpAddr::V4(target), sc.port + j as u16),
                };
                flows.push(FlowRecord {
                    src,
                    dst,
                    src_port: sport,
                    dst_port: dport,
                    protocol: Protocol::Tcp,
                    first_seen: Timestamp(t),
                    last_seen: Timestamp(t),
                    packet_count: 1,
                    byte_count: 60,
                });
            }
        }
        if sc.in_ground_truth {
            let label = sc.label.clone().unwrap_or_else(|| match sc.kind {
                ScanKindSpec::NetScan => "ntscSYN".into(),
                ScanKindSpec::PortScan => "ptscSYN".into(),
            });
            let mut dst_ips = BTreeSet::new();
            if sc.kind == ScanKindSpec::PortScan {
                dst_ips.insert(IpAddr::V4(target));
            }
            let (list, file) = match sc.ground_truth_file {
                GroundTruthFile::Anomalous => (&mut anomalous, SourceFile::AnomalousFile),
                GroundTruthFile::Notice => (&mut notice, SourceFile::NoticeFile),
            };
            list.push(GroundTruthEntry {
                category: sc.category,
                taxonomy_label: label,
                src_ips: BTreeSet::from([src]),
                dst_ips,
                src_ports: BTreeSet::new(),
                dst_ports: BTreeSet::new(),
                source_file: file,
            });
        }
    }
    for d in &spec.decoys {
        let (list, file) = match d.ground_truth_file {
            GroundTruthFile::Anomalous => (&mut anomalous, SourceFile::AnomalousFile),
            GroundTruthFile::Notice => (&mut notice, SourceFile::NoticeFile),
        };
        list.push(GroundTruthEntry {
            category: d.category,
            taxonomy_label: d.label.clone(),
            src_ips: d.src_ips.iter().copied().collect(),
            dst_ips: d.dst_ips.iter().copied().collect(),
            src_ports: BTreeSet::new(),
            dst_ports: BTreeSet::new(),
            source_file: file,
        });
    }

    // Pin the earliest slice-0 flow to the trace start, so that slicing
    // from the first flow reproduces the generator's slice grid.
    if let Some(first) = flows
        .iter_mut()
        .filter(|f| f.first_seen.0 < start + slice_us)
        .min_by_key(|f| f.first_seen)
    {
        let shift = first.first_seen.0 - start;
        first.first_seen = Timestamp(start);
        first.last_seen = Timestamp(first.last_seen.0 - shift);
    }

    flows.sort_unstable_by(|a, b| {
        (a.first_seen, a.src, a.dst, a.src_port, a.dst_port, a.last_seen)
            .cmp(&(b.first_seen, b.src, b.dst, b.src_port, b.dst_port, b.last_seen))
    });
    Ok(SynthTrace {
        flows,
        anomalous,
        notice,
        scanners,
        background_hosts: hosts,
        slice_config: spec.slice_config(),
    })
}
