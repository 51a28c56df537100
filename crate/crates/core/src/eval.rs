//! Scoring detections against ground truth.
//!
//! The evaluation universe is every distinct address seen in the trace, as
//! source or destination. Detections and ground truth are compared as IP
//! sets (or `(ip, direction)` sets in directional mode).

use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{reintegrate, RuleConfig};
use crate::detector::{Direction, RatioVerdict};
use crate::flow::{FlowRecord, SliceConfig};
use crate::ingest::{Category, GroundTruthSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation universe is empty")]
    EmptyUniverse,
    #[error("{0} detected element(s) fall outside the evaluation universe")]
    DetectedOutsideUniverse(usize),
    #[error("every score is undefined; nothing to aggregate")]
    AllUndefined,
}

/// Keeps ground-truth entries whose taxonomy label names a scan.
///
/// A label is kept when it starts with one of `scan_prefixes` and contains
/// none of `exclude_substrings` (both compared case-insensitively). Benign
/// entries are always dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanLabelFilter {
    pub scan_prefixes: Vec<String>,
    pub exclude_substrings: Vec<String>,
}

impl Default for ScanLabelFilter {
    fn default() -> Self {
        ScanLabelFilter {
            scan_prefixes: ["ntsc", "ptsc", "netscan", "portscan", "scan"].map(String::from).to_vec(),
            exclude_substrings: ["icmp", "ping"].map(String::from).to_vec(),
        }
    }
}

impl ScanLabelFilter {
    pub fn keeps(&self, category: Category, label: &str) -> bool {
        if category == Category::Benign {
            return false;
        }
        let label = label.to_ascii_lowercase();
        self.scan_prefixes
            .iter()
            .any(|p| label.starts_with(&p.to_ascii_lowercase()))
            && !self
                .exclude_substrings
                .iter()
                .any(|s| label.contains(&s.to_ascii_lowercase()))
    }
}

pub fn filter_scan_labels(gt: &GroundTruthSet, filter: &ScanLabelFilter) -> GroundTruthSet {
    gt.retain(|e| filter.keeps(e.category, &e.taxonomy_label))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn scaled(&self, k: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            true_pos: self.true_pos * k,
            false_pos: self.false_pos * k,
            false_neg: self.false_neg * k,
            true_neg: self.true_neg * k,
        }
    }
}

/// Compares `detected` with `truth` over `universe`.
///
/// Ground-truth elements outside the universe are ignored.
pub fn confusion<T: Ord>(
    detected: &BTreeSet<T>,
    truth: &BTreeSet<T>,
    universe: &BTreeSet<T>,
) -> Result<ConfusionMatrix, EvalError> {
    if universe.is_empty() {
        return Err(EvalError::EmptyUniverse);
    }
    let outside = detected.iter().filter(|d| !universe.contains(d)).count();
    if outside > 0 {
        return Err(EvalError::DetectedOutsideUniverse(outside));
    }
    let truth_in = truth.iter().filter(|t| universe.contains(t)).count() as u64;
    let tp = detected.iter().filter(|d| truth.contains(d)).count() as u64;
    let fp = detected.len() as u64 - tp;
    let fneg = truth_in - tp;
    Ok(ConfusionMatrix {
        true_pos: tp,
        false_pos: fp,
        false_neg: fneg,
        true_neg: universe.len() as u64 - tp - fp - fneg,
    })
}

/// Recall and precision; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrScore {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

fn frac(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn precision_recall(m: &ConfusionMatrix) -> PrScore {
    PrScore {
        recall: frac(m.true_pos, m.true_pos + m.false_neg),
        precision: frac(m.true_pos, m.true_pos + m.false_pos),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub n_traces: usize,
    /// Undefined scores left out of the mean.
    pub excluded: usize,
}

pub fn aggregate_metric<I>(values: I) -> Result<AggregateScore, EvalError>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut defined = Vec::new();
    let mut excluded = 0;
    for v in values {
        match v {
            Some(x) => defined.push(x),
            None => excluded += 1,
        }
    }
    if defined.is_empty() {
        return Err(EvalError::AllUndefined);
    }
    let n = defined.len() as f64;
    let pivot = defined[0];
    let mean = pivot + defined.iter().map(|x| x - pivot).sum::<f64>() / n;
    let variance = defined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(AggregateScore {
        mean,
        variance,
        n_traces: defined.len(),
        excluded,
    })
}

/// Mean and variance of recall and of precision across traces.
pub fn aggregate(scores: &[PrScore]) -> Result<(AggregateScore, AggregateScore), EvalError> {
    Ok((
        aggregate_metric(scores.iter().map(|s| s.recall))?,
        aggregate_metric(scores.iter().map(|s| s.precision))?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalCase {
    /// Against the unfiltered ground truth.
    RawMawilab,
    /// Against ground truth reduced to scan labels.
    FilteredMawilab,
    /// As `FilteredMawilab`, with rule-confirmed false positives counted as hits.
    FilteredPlusRules,
}

impl EvalCase {
    pub const ALL: [EvalCase; 3] = [EvalCase::RawMawilab, EvalCase::FilteredMawilab, EvalCase::FilteredPlusRules];

    pub fn number(self) -> u8 {
        match self {
            EvalCase::RawMawilab => 1,
            EvalCase::FilteredMawilab => 2,
            EvalCase::FilteredPlusRules => 3,
        }
    }
}

impl fmt::Display for EvalCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for EvalCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1" | "raw" => Ok(EvalCase::RawMawilab),
            "2" | "filtered" => Ok(EvalCase::FilteredMawilab),
            "3" | "rules" => Ok(EvalCase::FilteredPlusRules),
            other => Err(format!("unknown evaluation case {other:?}, expected 1, 2 or 3")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Compare plain address sets.
    #[default]
    Undirected,
    /// Senders must appear as ground-truth sources, receivers as destinations.
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOutcome {
    pub matrix: ConfusionMatrix,
    pub score: PrScore,
    /// False positives moved to true positives by the scan rules.
    pub reintegrated: u64,
}

/// Every distinct address in the trace.
pub fn trace_universe(flows: &[FlowRecord]) -> BTreeSet<IpAddr> {
    let mut ips: Vec<IpAddr> = flows.iter().flat_map(|f| [f.src, f.dst]).collect();
    ips.sort_unstable();
    ips.dedup();
    ips.into_iter().collect()
}

/// Per-trace evaluation state shared across cases and thresholds.
pub struct TraceEvaluator<'a> {
    flows: &'a [FlowRecord],
    universe: BTreeSet<IpAddr>,
    directed_universe: Option<BTreeSet<(IpAddr, Direction)>>,
    pub rule_cfg: RuleConfig,
    pub slice_cfg: SliceConfig,
    pub filter: ScanLabelFilter,
    pub matching: Matching,
}

impl<'a> TraceEvaluator<'a> {
    pub fn new(
        flows: &'a [FlowRecord],
        rule_cfg: RuleConfig,
        slice_cfg: SliceConfig,
        filter: ScanLabelFilter,
        matching: Matching,
    ) -> Self {
        let directed_universe = (matching == Matching::Directional).then(|| {
            flows
                .iter()
                .flat_map(|f| [(f.src, Direction::ScanSender), (f.dst, Direction::ScanReceiver)])
                .collect()
        });
        TraceEvaluator {
            flows,
            universe: trace_universe(flows),
            directed_universe,
            rule_cfg,
            slice_cfg,
            filter,
            matching,
        }
    }

    pub fn universe(&self) -> &BTreeSet<IpAddr> {
        &self.universe
    }

    pub fn evaluate(
        &self,
        case: EvalCase,
        verdicts: &[RatioVerdict],
        gt: &GroundTruthSet,
    ) -> Result<CaseOutcome, EvalError> {
        let filtered;
        let truth_gt = match case {
            EvalCase::RawMawilab => gt,
            EvalCase::FilteredMawilab | EvalCase::FilteredPlusRules => {
                filtered = filter_scan_labels(gt, &self.filter);
                &filtered
            }
        };
        let with_rules = case == EvalCase::FilteredPlusRules;
        match self.matching {
            Matching::Undirected => {
                let detected: BTreeSet<IpAddr> = verdicts.iter().map(|v| v.key.ip).collect();
                self.score(&detected, &truth_gt.ip_set(), &self.universe, with_rules, |ip| *ip)
            }
            Matching::Directional => {
                let detected: BTreeSet<(IpAddr, Direction)> =
                    verdicts.iter().map(|v| (v.key.ip, v.direction)).collect();
                let truth: BTreeSet<(IpAddr, Direction)> = truth_gt
                    .src_ips()
                    .into_iter()
                    .map(|ip| (ip, Direction::ScanSender))
                    .chain(truth_gt.dst_ips().into_iter().map(|ip| (ip, Direction::ScanReceiver)))
                    .collect();
                let universe = self.directed_universe.as_ref().expect("built for directional matching");
                self.score(&detected, &truth, universe, with_rules, |(ip, _)| *ip)
            }
        }
    }

    fn score<T: Ord + Copy>(
        &self,
        detected: &BTreeSet<T>,
        truth: &BTreeSet<T>,
        universe: &BTreeSet<T>,
        with_rules: bool,
        ip_of: impl Fn(&T) -> IpAddr,
    ) -> Result<CaseOutcome, EvalError> {
        let mut matrix = confusion(detected, truth, universe)?;
        let mut reintegrated = 0;
        if with_rules && matrix.false_pos > 0 {
            let fps: Vec<T> = detected.iter().filter(|d| !truth.contains(d)).copied().collect();
            let fp_ips: BTreeSet<IpAddr> = fps.iter().map(&ip_of).collect();
            let confirmed = reintegrate(&fp_ips, self.flows, &self.rule_cfg, &self.slice_cfg);
            reintegrated = fps.iter().filter(|t| confirmed.contains(&ip_of(t))).count() as u64;
            matrix.false_pos -= reintegrated;
            matrix.true_pos += reintegrated;
        }
        Ok(CaseOutcome {
            matrix,
            score: precision_recall(&matrix),
            reintegrated,
        })
    }
}

/// One-shot form of [`TraceEvaluator::evaluate`] with undirected matching.
pub fn evaluate_case(
    case: EvalCase,
    verdicts: &[RatioVerdict],
    gt: &GroundTruthSet,
    flows: &[FlowRecord],
    rule_cfg: &RuleConfig,
    slice_cfg: &SliceConfig,
    filter: &ScanLabelFilter,
) -> Result<CaseOutcome, EvalError> {
    TraceEvaluator::new(flows, rule_cfg.clone(), *slice_cfg, filter.clone(), Matching::Undirected)
        .evaluate(case, verdicts, gt)
}
