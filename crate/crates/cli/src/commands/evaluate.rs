use std::path::{Path, PathBuf};

use scanflow_core::eval::EvalError;
use scanflow_core::ingest::{read_ground_truth, GroundTruthOptions};
use scanflow_core::report::{aggregate_rows, render_table, write_eval_report, EvalRow};
use scanflow_core::{run_batch, EvalCase, Mode, TraceEvaluator};

use super::{read_flows, trace_start, write_err, write_with};
use crate::args::{CaseArg, EvaluateArgs};
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceInput {
    pub trace_id: String,
    pub flow_file: PathBuf,
    pub anomalous: PathBuf,
    pub notice: PathBuf,
}

impl CaseArg {
    pub fn cases(self) -> Vec<EvalCase> {
        match self {
            CaseArg::Raw => vec![EvalCase::RawMawilab],
            CaseArg::Filtered => vec![EvalCase::FilteredMawilab],
            CaseArg::Rules => vec![EvalCase::FilteredPlusRules],
            CaseArg::All => EvalCase::ALL.to_vec(),
        }
    }
}

/// Reads a `trace_id,flow_file,anomalous_xml,notice_xml` list. Relative
/// paths are taken from the list's own directory.
pub fn read_batch_list(path: &Path) -> Result<Vec<TraceInput>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        if i == 0 && rec.get(0) == Some("trace_id") {
            continue;
        }
        if rec.len() != 4 {
            return Err(CliError::parse(format!(
                "{} record {}: expected 4 fields, found {}",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        out.push(TraceInput {
            trace_id: rec[0].to_owned(),
            flow_file: base.join(&rec[1]),
            anomalous: base.join(&rec[2]),
            notice: base.join(&rec[3]),
        });
    }
    Ok(out)
}

fn single_trace(args: &EvaluateArgs) -> Result<TraceInput, CliError> {
    let flow_file = args.flow_file.clone().expect("clap requires flow_file without --batch");
    let missing = |flag: &str| CliError::config(format!("--{flag}: required with a single flow file"));
    Ok(TraceInput {
        trace_id: flow_file
            .file_stem()
            .map_or_else(|| "trace".to_owned(), |s| s.to_string_lossy().into_owned()),
        anomalous: args.anomalous.clone().ok_or_else(|| missing("anomalous"))?,
        notice: args.notice.clone().ok_or_else(|| missing("notice"))?,
        flow_file,
    })
}

fn eval_err(trace: &str, e: EvalError) -> CliError {
    CliError::parse(format!("trace {trace}: {e}"))
}

/// Rows for one trace: thresholds, then cases, then truth sets.
pub fn evaluate_trace(config: &Config, input: &TraceInput, cases: &[EvalCase]) -> Result<Vec<EvalRow>, CliError> {
    let flows = read_flows(&input.flow_file, config)?;
    let gt = read_ground_truth(
        &input.anomalous,
        &input.notice,
        GroundTruthOptions {
            strict: config.ingest.strict,
        },
    )?;
    let start = trace_start(&flows);
    let mut eng = config.engine_config()?;
    eng.mode = Mode::Batch;
    let evaluator = TraceEvaluator::new(
        &flows,
        config.rules.clone(),
        config.slice_config(start)?,
        config.label_filter(),
        config.eval.matching,
    );
    let truth: Vec<_> = config.eval.truth_sets.iter().map(|t| (*t, t.select(&gt))).collect();

    let mut rows = Vec::new();
    for &threshold in &config.detector.thresholds {
        let det = config.detector_config(threshold, start)?;
        let (verdicts, _) = run_batch(&flows, &det, &eng)?;
        for &case in cases {
            for (truth_set, gt) in &truth {
                let outcome = evaluator
                    .evaluate(case, &verdicts, gt)
                    .map_err(|e| eval_err(&input.trace_id, e))?;
                rows.push(EvalRow {
                    trace_id: input.trace_id.clone(),
                    case,
                    threshold,
                    truth_set: *truth_set,
                    outcome,
                });
            }
        }
    }
    Ok(rows)
}

pub fn run(mut config: Config, args: &EvaluateArgs) -> Result<(), CliError> {
    if let Some(t) = &args.thresholds {
        config.detector.thresholds = t.clone();
    }
    if let Some(s) = args.slice_seconds {
        config.slice.seconds = s;
    }
    if let Some(w) = args.workers {
        config.engine.workers = w;
    }
    config.validate()?;
    if config.detector.thresholds.is_empty() {
        return Err(CliError::config("detector.thresholds: must not be empty"));
    }
    let mut manifest = ManifestBuilder::start("evaluate", &config);

    let inputs = match &args.batch {
        Some(list) => {
            manifest.input(list)?;
            read_batch_list(list)?
        }
        None => vec![single_trace(args)?],
    };
    let cases = args.case.cases();
    let mut rows = Vec::new();
    for input in &inputs {
        tracing::info!(trace = %input.trace_id, "evaluating");
        rows.extend(evaluate_trace(&config, input, &cases)?);
        manifest.input(&input.flow_file)?;
        manifest.input(&input.anomalous)?;
        manifest.input(&input.notice)?;
    }

    write_with(&args.out, |out| write_eval_report(out, &rows).map_err(write_err(&args.out)))?;

    let agg = aggregate_rows(&rows);
    for case in &cases {
        for metric in ["recall", "precision"] {
            println!("{}", render_table(&agg, metric, *case));
        }
    }

    manifest.output(&args.out)?;
    manifest.finish(&args.out)?;
    Ok(())
}
