//! Parser for MAWILab-style anomaly XML (`Anomalous.xml` / `Notice.xml`).
//!
//! Each `anomaly` element carries a `type` attribute (the category), a
//! taxonomy label attribute and any number of nested `filter` elements with
//! `src_ip` / `dst_ip` (and optionally port) attributes:
//!
//! ```xml
//! <admd:dataset xmlns:admd="http://www.fukuda-lab.org/mawilab/admd">
//!   <anomaly type="anomalous" value="ntscACK">
//!     <slice>
//!       <filter src_ip="203.0.113.5" dst_port="80"/>
//!     </slice>
//!   </anomaly>
//! </admd:dataset>
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Attributes tried, in order, for the taxonomy label.
const LABEL_ATTRS: &[&str] = &["value", "label", "taxonomy", "heuristic"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Anomalous,
    Suspicious,
    Notice,
    Benign,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Anomalous => "anomalous",
            Category::Suspicious => "suspicious",
            Category::Notice => "notice",
            Category::Benign => "benign",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "anomalous" => Ok(Category::Anomalous),
            "suspicious" => Ok(Category::Suspicious),
            "notice" => Ok(Category::Notice),
            "benign" => Ok(Category::Benign),
            other => Err(format!("unknown anomaly category {other:?}")),
        }
    }
}

/// Which ground-truth file an entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceFile {
    AnomalousFile,
    NoticeFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub category: Category,
    pub taxonomy_label: String,
    pub src_ips: BTreeSet<IpAddr>,
    pub dst_ips: BTreeSet<IpAddr>,
    /// Parsed but not used for matching, which is done per IP.
    pub src_ports: BTreeSet<u16>,
    pub dst_ports: BTreeSet<u16>,
    pub source_file: SourceFile,
}

impl GroundTruthEntry {
    pub fn ips(&self) -> impl Iterator<Item = IpAddr> + '_ {
        self.src_ips.iter().chain(self.dst_ips.iter()).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub entries: Vec<GroundTruthEntry>,
    /// Entries skipped in lenient mode.
    pub rejected: usize,
}

impl GroundTruthSet {
    pub fn new(entries: Vec<GroundTruthEntry>) -> Self {
        GroundTruthSet { entries, rejected: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every address named by any entry, as source or destination.
    pub fn ip_set(&self) -> BTreeSet<IpAddr> {
        self.entries.iter().flat_map(|e| e.ips()).collect()
    }

    pub fn src_ips(&self) -> BTreeSet<IpAddr> {
        self.entries.iter().flat_map(|e| e.src_ips.iter().copied()).collect()
    }

    pub fn dst_ips(&self) -> BTreeSet<IpAddr> {
        self.entries.iter().flat_map(|e| e.dst_ips.iter().copied()).collect()
    }

    /// Entries from one file only.
    pub fn from_file(&self, source: SourceFile) -> GroundTruthSet {
        self.retain(|e| e.source_file == source)
    }

    pub fn retain(&self, mut keep: impl FnMut(&GroundTruthEntry) -> bool) -> GroundTruthSet {
        GroundTruthSet {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
            rejected: self.rejected,
        }
    }

    pub fn extend(&mut self, other: GroundTruthSet) {
        self.entries.extend(other.entries);
        self.rejected += other.rejected;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GroundTruthError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("anomaly element at byte {offset}: {reason}")]
    Entry { offset: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroundTruthOptions {
    /// Abort on the first invalid anomaly element instead of skipping it.
    pub strict: bool,
}

pub fn parse_ground_truth(
    xml: &str,
    source_file: SourceFile,
    opts: GroundTruthOptions,
) -> Result<GroundTruthSet, GroundTruthError> {
    let doc = roxmltree::Document::parse(xml)?;
    let mut set = GroundTruthSet::default();
    for node in doc
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "anomaly")
    {
        match parse_entry(node, source_file) {
            Ok(entry) => set.entries.push(entry),
            Err(reason) => {
                let offset = node.range().start;
                if opts.strict {
                    return Err(GroundTruthError::Entry { offset, reason });
                }
                tracing::warn!(offset, %reason, "skipping ground-truth entry");
                set.rejected += 1;
            }
        }
    }
    Ok(set)
}

fn parse_entry(node: roxmltree::Node<'_, '_>, source_file: SourceFile) -> Result<GroundTruthEntry, String> {
    let category: Category = node
        .attribute("type")
        .ok_or_else(|| "missing type attribute".to_owned())?
        .parse()?;
    let taxonomy_label = LABEL_ATTRS
        .iter()
        .find_map(|a| node.attribute(*a))
        .unwrap_or_default()
        .to_owned();
    let mut entry = GroundTruthEntry {
        category,
        taxonomy_label,
        src_ips: BTreeSet::new(),
        dst_ips: BTreeSet::new(),
        src_ports: BTreeSet::new(),
        dst_ports: BTreeSet::new(),
        source_file,
    };
    for filter in node
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "filter")
    {
        if let Some(v) = filter.attribute("src_ip") {
            entry.src_ips.insert(parse_ip(v)?);
        }
        if let Some(v) = filter.attribute("dst_ip") {
            entry.dst_ips.insert(parse_ip(v)?);
        }
        if let Some(v) = filter.attribute("src_port") {
            entry.src_ports.insert(parse_port(v)?);
        }
        if let Some(v) = filter.attribute("dst_port") {
            entry.dst_ports.insert(parse_port(v)?);
        }
    }
    if entry.src_ips.is_empty() && entry.dst_ips.is_empty() {
        return Err("no src_ip or dst_ip in any filter".to_owned());
    }
    Ok(entry)
}

fn parse_ip(v: &str) -> Result<IpAddr, String> {
    v.trim().parse().map_err(|_| format!("invalid address {v:?}"))
}

fn parse_port(v: &str) -> Result<u16, String> {
    v.trim().parse().map_err(|_| format!("invalid port {v:?}"))
}

pub fn read_ground_truth_file(
    path: impl AsRef<Path>,
    source_file: SourceFile,
    opts: GroundTruthOptions,
) -> Result<GroundTruthSet, GroundTruthError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GroundTruthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ground_truth(&text, source_file, opts)
}

/// Reads both MAWILab files into one set, tagging each entry with its origin.
pub fn read_ground_truth(
    anomalous_path: impl AsRef<Path>,
    notice_path: impl AsRef<Path>,
    opts: GroundTruthOptions,
) -> Result<GroundTruthSet, GroundTruthError> {
    let mut set = read_ground_truth_file(anomalous_path, SourceFile::AnomalousFile, opts)?;
    set.extend(read_ground_truth_file(notice_path, SourceFile::NoticeFile, opts)?);
    Ok(set)
}

/// Serializes entries in the same schema the parser reads.
pub fn write_ground_truth_xml(entries: &[GroundTruthEntry]) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<admd:dataset xmlns:admd=\"http://www.fukuda-lab.org/mawilab/admd\">\n",
    );
    for e in entries {
        out.push_str(&format!(
            "  <anomaly type=\"{}\" value=\"{}\">\n    <slice>\n",
            e.category,
            xml_escape(&e.taxonomy_label)
        ));
        for ip in &e.src_ips {
            out.push_str(&format!("      <filter src_ip=\"{ip}\"/>\n"));
        }
        for ip in &e.dst_ips {
            out.push_str(&format!("      <filter dst_ip=\"{ip}\"/>\n"));
        }
        out.push_str("    </slice>\n  </anomaly>\n");
    }
    out.push_str("</admd:dataset>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
