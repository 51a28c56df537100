//! Delimited-text output: verdict files and evaluation reports.

use std::fmt;
use std::io::{self, Write};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::classifier::ScanLabel;
use crate::detector::RatioVerdict;
use crate::eval::{AggregateScore, CaseOutcome, EvalCase, EvalError};
use crate::ingest::{GroundTruthSet, SourceFile};

pub const VERDICT_HEADER: &str = "slice_index,ip,direction,generated,received,ratio,labels";

pub const EVAL_HEADER: &str = "trace_id,case,threshold,tp,fp,fn,tn,recall,precision,truth_set,reintegrated";

pub const AGGREGATE_HEADER: &str = "metric,case,threshold,truth_set,mean,variance,n_traces,excluded";

/// One verdict line. `labels` are joined with `;`.
pub fn format_verdict_line(v: &RatioVerdict, labels: &[ScanLabel]) -> String {
    let labels: Vec<&str> = labels.iter().map(|l| l.kind.as_str()).collect();
    format!(
        "{},{},{},{},{},{},{}",
        v.key.slice_index,
        v.key.ip,
        v.direction,
        v.generated,
        v.received,
        v.ratio,
        labels.join(";")
    )
}

pub fn write_verdicts<W, F>(mut out: W, verdicts: &[RatioVerdict], mut labels_of: F) -> io::Result<()>
where
    W: Write,
    F: FnMut(IpAddr) -> Vec<ScanLabel>,
{
    writeln!(out, "{VERDICT_HEADER}")?;
    for v in verdicts {
        writeln!(out, "{}", format_verdict_line(v, &labels_of(v.key.ip)))?;
    }
    out.flush()
}

/// Which ground-truth entries an evaluation row was scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSet {
    Anomalous,
    Notice,
    /// Union of both files.
    Total,
}

impl TruthSet {
    pub const ALL: [TruthSet; 3] = [TruthSet::Anomalous, TruthSet::Notice, TruthSet::Total];

    pub fn as_str(self) -> &'static str {
        match self {
            TruthSet::Anomalous => "anomalous",
            TruthSet::Notice => "notice",
            TruthSet::Total => "total",
        }
    }

    pub fn select(self, gt: &GroundTruthSet) -> GroundTruthSet {
        match self {
            TruthSet::Anomalous => gt.from_file(SourceFile::AnomalousFile),
            TruthSet::Notice => gt.from_file(SourceFile::NoticeFile),
            TruthSet::Total => gt.clone(),
        }
    }
}

impl fmt::Display for TruthSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TruthSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "anomalous" => Ok(TruthSet::Anomalous),
            "notice" => Ok(TruthSet::Notice),
            "total" => Ok(TruthSet::Total),
            other => Err(format!("unknown truth set {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub trace_id: String,
    pub case: EvalCase,
    pub threshold: f64,
    pub truth_set: TruthSet,
    pub outcome: CaseOutcome,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| x.to_string())
}

pub fn format_eval_row(r: &EvalRow) -> String {
    let m = &r.outcome.matrix;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.trace_id,
        r.case,
        r.threshold,
        m.true_pos,
        m.false_pos,
        m.false_neg,
        m.true_neg,
        opt(r.outcome.score.recall),
        opt(r.outcome.score.precision),
        r.truth_set,
        r.outcome.reintegrated
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub metric: &'static str,
    pub case: EvalCase,
    pub threshold: f64,
    pub truth_set: TruthSet,
    pub score: Result<AggregateScore, EvalError>,
}

pub fn format_aggregate_row(r: &AggregateRow) -> String {
    match &r.score {
        Ok(s) => format!(
            "{},{},{},{},{},{},{},{}",
            r.metric, r.case, r.threshold, r.truth_set, s.mean, s.variance, s.n_traces, s.excluded
        ),
        Err(_) => format!(
            "{},{},{},{},undefined,undefined,0,all",
            r.metric, r.case, r.threshold, r.truth_set
        ),
    }
}

/// Groups rows by (case, threshold, truth set) and aggregates recall and
/// precision across traces, in first-appearance order.
pub fn aggregate_rows(rows: &[EvalRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((EvalCase, u64, TruthSet), f64, Vec<&EvalRow>)> = Vec::new();
    for r in rows {
        let key = (r.case, r.threshold.to_bits(), r.truth_set);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.2.push(r),
            None => groups.push((key, r.threshold, vec![r])),
        }
    }
    let mut out = Vec::new();
    for ((case, _, truth_set), threshold, members) in groups {
        for metric in ["recall", "precision"] {
            let values = members.iter().map(|r| match metric {
                "recall" => r.outcome.score.recall,
                _ => r.outcome.score.precision,
            });
            out.push(AggregateRow {
                metric,
                case,
                threshold,
                truth_set,
                score: crate::eval::aggregate_metric(values),
            });
        }
    }
    out
}

/// Writes per-trace rows, a blank line, then the aggregate block.
pub fn write_eval_report<W: Write>(mut out: W, rows: &[EvalRow]) -> io::Result<()> {
    writeln!(out, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", format_eval_row(r))?;
    }
    writeln!(out)?;
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for a in aggregate_rows(rows) {
        writeln!(out, "{}", format_aggregate_row(&a))?;
    }
    out.flush()
}

/// Human-readable `mean±variance` table, thresholds by truth sets.
pub fn render_table(rows: &[AggregateRow], metric: &str, case: EvalCase) -> String {
    let mut thresholds: Vec<f64> = Vec::new();
    let mut sets: Vec<TruthSet> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric && r.case == case) {
        if !thresholds.contains(&r.threshold) {
            thresholds.push(r.threshold);
        }
        if !sets.contains(&r.truth_set) {
            sets.push(r.truth_set);
        }
    }
    sets.sort();
    let mut s = format!("{metric} (case {case})\nthreshold");
    for t in &sets {
        s.push_str(&format!("\t{t}"));
    }
    s.push('\n');
    for th in thresholds {
        s.push_str(&th.to_string());
        for set in &sets {
            let cell = rows
                .iter()
                .find(|r| r.metric == metric && r.case == case && r.threshold == th && r.truth_set == *set)
                .map(|r| match &r.score {
                    Ok(a) => format!("{:.3}±{:.3}", a.mean, a.variance),
                    Err(_) => "undefined".to_owned(),
                })
                .unwrap_or_default();
            s.push_str(&format!("\t{cell}"));
        }
        s.push('\n');
    }
    s
}
