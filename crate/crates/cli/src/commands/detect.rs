use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use scanflow_core::ingest::FlowReader;
use scanflow_core::report::{format_verdict_line, write_verdicts};
use scanflow_core::{run_batch, run_streaming, Classifier, Mode, RunStats};

use super::{read_flows, trace_start, write_err, write_with};
use crate::args::{DetectArgs, DetectorOverrides, ModeArg};
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

pub(crate) fn apply_overrides(config: &mut Config, o: &DetectorOverrides) {
    if let Some(t) = o.threshold {
        config.detector.threshold = t;
    }
    if let Some(s) = o.slice_seconds {
        config.slice.seconds = s;
    }
    if let Some(w) = o.workers {
        config.engine.workers = w;
    }
}

pub fn run(mut config: Config, args: &DetectArgs) -> Result<(), CliError> {
    apply_overrides(&mut config, &args.overrides);
    match args.mode {
        Some(ModeArg::Batch) => config.engine.mode = Mode::Batch,
        Some(ModeArg::Stream) => config.engine.mode = Mode::Streaming,
        None => {}
    }
    config.validate()?;
    let mut manifest = ManifestBuilder::start("detect", &config);

    let stats = match config.engine.mode {
        Mode::Batch => detect_batch(&config, args)?,
        Mode::Streaming => detect_streaming(&config, args)?,
    };
    tracing::info!(
        records = stats.records_in,
        verdicts = stats.verdicts_out,
        late_dropped = stats.late_dropped,
        wall_s = stats.wall_time.as_secs_f64(),
        "detection finished"
    );

    manifest.input(&args.flow_file)?;
    manifest.output(&args.out)?;
    manifest.finish(&args.out)?;
    Ok(())
}

fn detect_batch(config: &Config, args: &DetectArgs) -> Result<RunStats, CliError> {
    let flows = read_flows(&args.flow_file, config)?;
    let det = config.detector_config(config.detector.threshold, trace_start(&flows))?;
    let eng = config.engine_config()?;
    let (verdicts, stats) = run_batch(&flows, &det, &eng)?;

    let flagged: BTreeSet<IpAddr> = verdicts.iter().map(|v| v.key.ip).collect();
    let classifier = Classifier::for_candidates(&flagged, &flows, &config.rules, &det.slice);
    let labels: BTreeMap<IpAddr, _> = flagged.iter().map(|ip| (*ip, classifier.classify(*ip))).collect();

    write_with(&args.out, |out| {
        write_verdicts(out, &verdicts, |ip| labels[&ip].clone()).map_err(write_err(&args.out))
    })?;
    Ok(stats)
}

fn detect_streaming(config: &Config, args: &DetectArgs) -> Result<RunStats, CliError> {
    let reader = FlowReader::open(&args.flow_file, config.flow_file_options())?;
    let read_error = RefCell::new(None);
    let mut flows = reader
        .map_while(|r| r.map_err(|e| *read_error.borrow_mut() = Some(e)).ok())
        .peekable();
    let start = flows.peek().map_or(scanflow_core::Timestamp(0), |f| f.first_seen);
    let det = config.detector_config(config.detector.threshold, start)?;
    let eng = config.engine_config()?;

    let mut stats = None;
    write_with(&args.out, |out| {
        writeln!(out, "{}", scanflow_core::report::VERDICT_HEADER).map_err(write_err(&args.out))?;
        let s = run_streaming(flows, &det, &eng, |emission| {
            for v in &emission.verdicts {
                writeln!(out, "{}", format_verdict_line(v, &[]))?;
            }
            Ok::<_, std::io::Error>(())
        })?;
        if let Some(e) = read_error.take() {
            return Err(e.into());
        }
        stats = Some(s);
        Ok(())
    })?;
    Ok(stats.unwrap_or_default())
}
