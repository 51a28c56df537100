//! Post-processing rules that label an address as a net scanner, a port
//! scanner, or both, from its outbound flows.

use std::collections::BTreeSet;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::flow::{slice_of, FlowRecord, SliceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScanKind {
    NetScan,
    PortScan,
    NetScanAndPortScan,
}

impl ScanKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanKind::NetScan => "NetScan",
            ScanKind::PortScan => "PortScan",
            ScanKind::NetScanAndPortScan => "NetScanAndPortScan",
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The strongest witness found for a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScanEvidence {
    /// Distinct destinations inside one subnet.
    NetScan { subnet: IpAddr, prefix: u8, distinct_hosts: u64 },
    /// Distinct destination ports toward one peer.
    PortScan { peer: IpAddr, distinct_ports: u64 },
    /// Distinct destinations reached on known ports within one slice.
    NetScanAndPortScan { slice_index: u64, distinct_hosts: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScanLabel {
    pub kind: ScanKind,
    pub evidence: ScanEvidence,
}

/// Set of ports stored as a 65536-bit map.
///
/// Serialized as a list of `"N"` or `"LO-HI"` strings.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PortSet(Box<[u64; 1024]>);

impl PortSet {
    pub fn empty() -> Self {
        PortSet(Box::new([0; 1024]))
    }

    pub fn range(lo: u16, hi: u16) -> Self {
        let mut s = PortSet::empty();
        s.insert_range(lo, hi);
        s
    }

    /// Ports 0-1023.
    pub fn well_known() -> Self {
        PortSet::range(0, 1023)
    }

    pub fn insert(&mut self, port: u16) {
        self.0[(port / 64) as usize] |= 1 << (port % 64);
    }

    pub fn insert_range(&mut self, lo: u16, hi: u16) {
        for p in lo..=hi {
            self.insert(p);
        }
    }

    pub fn contains(&self, port: u16) -> bool {
        self.0[(port / 64) as usize] & (1 << (port % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    fn runs(&self) -> Vec<(u16, u16)> {
        let mut runs = Vec::new();
        let mut start: Option<u16> = None;
        for p in 0..=u16::MAX {
            match (self.contains(p), start) {
                (true, None) => start = Some(p),
                (false, Some(s)) => {
                    runs.push((s, p - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, u16::MAX));
        }
        runs
    }
}

impl FromIterator<u16> for PortSet {
    fn from_iter<T: IntoIterator<Item = u16>>(iter: T) -> Self {
        let mut s = PortSet::empty();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(Vec::<String>::from(self.clone())).finish()
    }
}

impl TryFrom<Vec<String>> for PortSet {
    type Error = String;

    fn try_from(specs: Vec<String>) -> Result<Self, Self::Error> {
        let mut s = PortSet::empty();
        for spec in &specs {
            let parse = |t: &str| t.trim().parse::<u16>().map_err(|_| format!("invalid port {spec:?}"));
            match spec.split_once('-') {
                Some((lo, hi)) => {
                    let (lo, hi) = (parse(lo)?, parse(hi)?);
                    if lo > hi {
                        return Err(format!("empty port range {spec:?}"));
                    }
                    s.insert_range(lo, hi);
                }
                None => s.insert(parse(spec)?),
            }
        }
        Ok(s)
    }
}

impl From<PortSet> for Vec<String> {
    fn from(s: PortSet) -> Self {
        s.runs()
            .into_iter()
            .map(|(lo, hi)| if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Distinct destinations in one subnet needed for NetScan (inclusive).
    pub netscan_min_flows: u64,
    /// PortScan needs strictly more distinct ports than this toward one peer.
    pub portscan_min_ports: u64,
    /// Distinct known-port destinations per slice for the combined label (inclusive).
    pub combined_min_flows_per_slice: u64,
    pub subnet_prefix: u8,
    pub subnet_prefix_v6: u8,
    pub known_ports: PortSet,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            netscan_min_flows: 20,
            portscan_min_ports: 10,
            combined_min_flows_per_slice: 20,
            subnet_prefix: 24,
            subnet_prefix_v6: 64,
            known_ports: PortSet::well_known(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rules.{field}: {reason}")]
pub struct InvalidRuleConfig {
    pub field: &'static str,
    pub reason: String,
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), InvalidRuleConfig> {
        let min = |field: &'static str, v: u64| {
            if v == 0 {
                Err(InvalidRuleConfig {
                    field,
                    reason: "must be >= 1".into(),
                })
            } else {
                Ok(())
            }
        };
        min("netscan_min_flows", self.netscan_min_flows)?;
        min("portscan_min_ports", self.portscan_min_ports)?;
        min("combined_min_flows_per_slice", self.combined_min_flows_per_slice)?;
        if self.subnet_prefix > 32 {
            return Err(InvalidRuleConfig {
                field: "subnet_prefix",
                reason: format!("{} exceeds 32 bits", self.subnet_prefix),
            });
        }
        if self.subnet_prefix_v6 > 128 {
            return Err(InvalidRuleConfig {
                field: "subnet_prefix_v6",
                reason: format!("{} exceeds 128 bits", self.subnet_prefix_v6),
            });
        }
        Ok(())
    }

    /// Network address of `ip` under the configured prefix for its family.
    pub fn subnet_of(&self, ip: IpAddr) -> (IpAddr, u8) {
        match ip {
            IpAddr::V4(a) => {
                let p = self.subnet_prefix.min(32);
                let mask = if p == 0 { 0 } else { u32::MAX << (32 - p) };
                (IpAddr::from(Ipv4Addr::from(u32::from(a) & mask)), p)
            }
            IpAddr::V6(a) => {
                let p = self.subnet_prefix_v6.min(128);
                let mask = if p == 0 { 0 } else { u128::MAX << (128 - p) };
                (IpAddr::from(Ipv6Addr::from(u128::from(a) & mask)), p)
            }
        }
    }
}

fn best<K: Ord + Copy>(groups: FxHashMap<K, FxHashSet<impl Sized>>) -> Option<(K, u64)> {
    groups
        .into_iter()
        .map(|(k, s)| (k, s.len() as u64))
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
}

/// Evaluates all three rules over one address's outbound flows.
fn classify_outbound<'a, I>(flows: I, cfg: &RuleConfig, slice_cfg: &SliceConfig) -> Vec<ScanLabel>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    let mut by_subnet: FxHashMap<(IpAddr, u8), FxHashSet<IpAddr>> = FxHashMap::default();
    let mut ports_by_peer: FxHashMap<IpAddr, FxHashSet<u16>> = FxHashMap::default();
    let mut known_by_slice: FxHashMap<u64, FxHashSet<IpAddr>> = FxHashMap::default();
    for f in flows {
        by_subnet.entry(cfg.subnet_of(f.dst)).or_default().insert(f.dst);
        ports_by_peer.entry(f.dst).or_default().insert(f.dst_port);
        if cfg.known_ports.contains(f.dst_port) {
            // flows before the trace start have no slice and cannot satisfy the per-slice rule
            if let Ok(s) = slice_of(f, slice_cfg) {
                known_by_slice.entry(s).or_default().insert(f.dst);
            }
        }
    }

    let mut labels = Vec::new();
    if let Some(((subnet, prefix), n)) = best(by_subnet) {
        if n >= cfg.netscan_min_flows {
            labels.push(ScanLabel {
                kind: ScanKind::NetScan,
                evidence: ScanEvidence::NetScan {
                    subnet,
                    prefix,
                    distinct_hosts: n,
                },
            });
        }
    }
    if let Some((peer, n)) = best(ports_by_peer) {
        if n > cfg.portscan_min_ports {
            labels.push(ScanLabel {
                kind: ScanKind::PortScan,
                evidence: ScanEvidence::PortScan {
                    peer,
                    distinct_ports: n,
                },
            });
        }
    }
    if let Some((slice_index, n)) = best(known_by_slice) {
        if n >= cfg.combined_min_flows_per_slice {
            labels.push(ScanLabel {
                kind: ScanKind::NetScanAndPortScan,
                evidence: ScanEvidence::NetScanAndPortScan {
                    slice_index,
                    distinct_hosts: n,
                },
            });
        }
    }
    labels
}

/// Scan labels earned by `ip` over the whole trace, sorted by kind.
pub fn classify(ip: IpAddr, flows: &[FlowRecord], cfg: &RuleConfig, slice_cfg: &SliceConfig) -> Vec<ScanLabel> {
    classify_outbound(flows.iter().filter(|f| f.src == ip), cfg, slice_cfg)
}

/// Outbound flows grouped by source, for classifying many addresses.
pub struct Classifier<'a> {
    outbound: FxHashMap<IpAddr, Vec<&'a FlowRecord>>,
    cfg: &'a RuleConfig,
    slice_cfg: &'a SliceConfig,
}

impl<'a> Classifier<'a> {
    /// Indexes the outbound flows of `candidates` only.
    pub fn for_candidates(
        candidates: &BTreeSet<IpAddr>,
        flows: &'a [FlowRecord],
        cfg: &'a RuleConfig,
        slice_cfg: &'a SliceConfig,
    ) -> Self {
        let mut outbound: FxHashMap<IpAddr, Vec<&'a FlowRecord>> = FxHashMap::default();
        for f in flows.iter().filter(|f| candidates.contains(&f.src)) {
            outbound.entry(f.src).or_default().push(f);
        }
        Classifier {
            outbound,
            cfg,
            slice_cfg,
        }
    }

    pub fn classify(&self, ip: IpAddr) -> Vec<ScanLabel> {
        match self.outbound.get(&ip) {
            Some(fs) => classify_outbound(fs.iter().copied(), self.cfg, self.slice_cfg),
            None => Vec::new(),
        }
    }
}

/// False positives that earn at least one scan label.
pub fn reintegrate(
    false_positives: &BTreeSet<IpAddr>,
    flows: &[FlowRecord],
    cfg: &RuleConfig,
    slice_cfg: &SliceConfig,
) -> BTreeSet<IpAddr> {
    if false_positives.is_empty() {
        return BTreeSet::new();
    }
    let classifier = Classifier::for_candidates(false_positives, flows, cfg, slice_cfg);
    false_positives
        .par_iter()
        .filter(|ip| !classifier.classify(**ip).is_empty())
        .copied()
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::*;
    use crate::flow::Timestamp;
    use proptest::prelude::*;
    use std::time::Duration;

    fn slices() -> SliceConfig {
        SliceConfig::new(Timestamp(0), Duration::from_secs(30)).unwrap()
    }

    fn kinds(labels: &[ScanLabel]) -> Vec<ScanKind> {
        labels.iter().map(|l| l.kind).collect()
    }

    fn run(ip: IpAddr, flows: &[FlowRecord]) -> Vec<ScanKind> {
        kinds(&classify(ip, flows, &RuleConfig::default(), &slices()))
    }

    #[test]
    fn netscan_twenty_hosts_one_subnet() {
        let a = v4(192, 0, 2, 1);
        // high ports, spread over slices so only the subnet rule applies
        let flows: Vec<_> = (0..20u8).map(|i| flow(a, v4(10, 0, 5, i), 8080, i as u64 * 30)).collect();
        assert_eq!(run(a, &flows), vec![ScanKind::NetScan]);
        assert_eq!(run(a, &flows[..19]), vec![]);
    }

    #[test]
    fn twenty_flows_one_host_is_not_netscan() {
        let a = v4(192, 0, 2, 1);
        let flows: Vec<_> = (0..20).map(|i| flow(a, v4(10, 0, 5, 1), 8080, i)).collect();
        assert_eq!(run(a, &flows), vec![]);
    }

    #[test]
    fn portscan_boundary_is_exclusive() {
        let a = v4(192, 0, 2, 1);
        let victim = v4(10, 0, 0, 1);
        let ten: Vec<_> = (0..10).map(|p| flow(a, victim, 5000 + p, 0)).collect();
        assert_eq!(run(a, &ten), vec![]);
        let eleven: Vec<_> = (0..11).map(|p| flow(a, victim, 5000 + p, 0)).collect();
        assert_eq!(run(a, &eleven), vec![ScanKind::PortScan]);
    }

    #[test]
    fn combined_rule_in_one_slice() {
        let a = v4(192, 0, 2, 1);
        let flows: Vec<_> = (0..25u8).map(|i| flow(a, v4(10, 0, 5, i), 22, 3)).collect();
        assert_eq!(run(a, &flows), vec![ScanKind::NetScan, ScanKind::NetScanAndPortScan]);
        let labels = classify(a, &flows, &RuleConfig::default(), &slices());
        assert_eq!(
            labels[1].evidence,
            ScanEvidence::NetScanAndPortScan {
                slice_index: 0,
                distinct_hosts: 25
            }
        );
    }

    #[test]
    fn combined_rule_spread_across_subnets() {
        let a = v4(192, 0, 2, 1);
        let flows: Vec<_> = (0..20u8).map(|i| flow(a, v4(10, i, 0, 1), 443, 1)).collect();
        assert_eq!(run(a, &flows), vec![ScanKind::NetScanAndPortScan]);
    }

    #[test]
    fn no_outbound_flows() {
        let a = v4(192, 0, 2, 1);
        let flows: Vec<_> = (0..30u8).map(|i| flow(v4(10, 0, 5, i), a, 22, 1)).collect();
        assert!(run(a, &flows).is_empty());
    }

    #[test]
    fn ipv6_subnets() {
        let a: IpAddr = "2001:db8::1".parse().unwrap();
        let flows: Vec<_> = (0..20u16)
            .map(|i| flow(a, format!("2001:db8:0:7::{:x}", i + 1).parse().unwrap(), 8080, i as u64 * 40))
            .collect();
        assert_eq!(run(a, &flows), vec![ScanKind::NetScan]);
    }

    #[test]
    fn reintegration() {
        let (a, b) = (v4(192, 0, 2, 1), v4(192, 0, 2, 2));
        let mut flows: Vec<_> = (0..20u8).map(|i| flow(a, v4(10, 0, 5, i), 8080, 0)).collect();
        // b: 5 flows to 5 different subnets
        flows.extend((0..5u8).map(|i| flow(b, v4(10, i, 9, 9), 8080, 0)));
        let cfg = RuleConfig::default();
        assert!(reintegrate(&BTreeSet::new(), &flows, &cfg, &slices()).is_empty());
        assert_eq!(reintegrate(&BTreeSet::from([a, b]), &flows, &cfg, &slices()), BTreeSet::from([a]));
        assert!(reintegrate(&BTreeSet::from([b]), &flows, &cfg, &slices()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(RuleConfig::default().validate().is_ok());
        let bad = RuleConfig {
            netscan_min_flows: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "netscan_min_flows");
        let bad = RuleConfig {
            subnet_prefix: 33,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "subnet_prefix");
    }

    #[test]
    fn port_set_text() {
        let s = PortSet::try_from(vec!["0-1023".to_string(), "8080".to_string()]).unwrap();
        assert_eq!(s.len(), 1025);
        assert!(s.contains(1023) && s.contains(8080) && !s.contains(1024));
        assert_eq!(Vec::<String>::from(s), vec!["0-1023", "8080"]);
        assert!(PortSet::try_from(vec!["9-3".to_string()]).is_err());
        assert!(PortSet::try_from(vec!["70000".to_string()]).is_err());
    }

    /// Brute-force predicate evaluation by enumeration over the observed
    /// (subnet, peer, port, slice) combinations.
    fn oracle(ip: IpAddr, flows: &[FlowRecord], cfg: &RuleConfig, sc: &SliceConfig) -> Vec<ScanKind> {
        let out: Vec<&FlowRecord> = flows.iter().filter(|f| f.src == ip).collect();
        let mut kinds = Vec::new();
        let net = out.iter().any(|f| {
            let subnet = cfg.subnet_of(f.dst);
            let mut hosts: Vec<IpAddr> =
                out.iter().filter(|g| cfg.subnet_of(g.dst) == subnet).map(|g| g.dst).collect();
            hosts.sort();
            hosts.dedup();
            hosts.len() as u64 >= cfg.netscan_min_flows
        });
        if net {
            kinds.push(ScanKind::NetScan);
        }
        let port = out.iter().any(|f| {
            let mut ports: Vec<u16> = out.iter().filter(|g| g.dst == f.dst).map(|g| g.dst_port).collect();
            ports.sort();
            ports.dedup();
            ports.len() as u64 > cfg.portscan_min_ports
        });
        if port {
            kinds.push(ScanKind::PortScan);
        }
        let combined = out.iter().any(|f| {
            let s = f.first_seen.0 / sc.slice_duration().as_micros() as u64;
            let mut hosts: Vec<IpAddr> = out
                .iter()
                .filter(|g| g.first_seen.0 / sc.slice_duration().as_micros() as u64 == s)
                .filter(|g| cfg.known_ports.contains(g.dst_port))
                .map(|g| g.dst)
                .collect();
            hosts.sort();
            hosts.dedup();
            hosts.len() as u64 >= cfg.combined_min_flows_per_slice
        });
        if combined {
            kinds.push(ScanKind::NetScanAndPortScan);
        }
        kinds
    }

    fn small_cfg() -> RuleConfig {
        RuleConfig {
            netscan_min_flows: 4,
            portscan_min_ports: 3,
            combined_min_flows_per_slice: 4,
            ..Default::default()
        }
    }

    fn arb_flows() -> impl Strategy<Value = Vec<FlowRecord>> {
        proptest::collection::vec((0u8..3, 0u8..3, 0u8..6, prop_oneof![20u16..24, 1020u16..1028], 0u64..100), 0..300)
            .prop_map(|v| {
                v.into_iter()
                    .map(|(s, net, host, port, t)| flow(v4(192, 0, 2, s), v4(10, net, 0, host), port, t))
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force(flows in arb_flows()) {
            let cfg = small_cfg();
            for s in 0..3 {
                let ip = v4(192, 0, 2, s);
                prop_assert_eq!(kinds(&classify(ip, &flows, &cfg, &slices())), oracle(ip, &flows, &cfg, &slices()));
            }
        }

        #[test]
        fn more_flows_never_remove_labels(flows in arb_flows(), extra in arb_flows()) {
            let cfg = small_cfg();
            let ip = v4(192, 0, 2, 0);
            let before = kinds(&classify(ip, &flows, &cfg, &slices()));
            let mut all = flows.clone();
            all.extend(extra);
            let after = kinds(&classify(ip, &all, &cfg, &slices()));
            prop_assert!(before.iter().all(|k| after.contains(k)));
        }

        #[test]
        fn disabling_one_rule_leaves_others(flows in arb_flows(), which in 0usize..3) {
            let cfg = small_cfg();
            let mut off = cfg.clone();
            let disabled = match which {
                0 => { off.netscan_min_flows = u64::MAX; ScanKind::NetScan }
                1 => { off.portscan_min_ports = u64::MAX; ScanKind::PortScan }
                _ => { off.combined_min_flows_per_slice = u64::MAX; ScanKind::NetScanAndPortScan }
            };
            let ip = v4(192, 0, 2, 1);
            let mut full = kinds(&classify(ip, &flows, &cfg, &slices()));
            full.retain(|k| *k != disabled);
            prop_assert_eq!(kinds(&classify(ip, &flows, &off, &slices())), full);
        }
    }
}
