use scanflow_core::{run_batch, EngineConfig, Mode, RunStats};

use super::{read_flows, trace_start, write_err, write_with};
use crate::args::BenchArgs;
use crate::commands::detect::apply_overrides;
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

pub const RUN_HEADER: &str = "workers,repetition,wall_seconds,trace_seconds,time_ratio,records_in,verdicts_out";
pub const SUMMARY_HEADER: &str = "workers,min,q1,median,q3,max";

/// Min, lower quartile, median, upper quartile and max, interpolating
/// linearly between order statistics.
pub fn five_number_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| x.to_string())
}

pub fn run(mut config: Config, args: &BenchArgs) -> Result<(), CliError> {
    apply_overrides(&mut config, &args.overrides);
    config.validate()?;
    let sweep = args.workers_sweep.clone().unwrap_or_else(|| vec![config.engine.workers]);
    if sweep.iter().any(|w| *w == 0) {
        return Err(CliError::config("--workers-sweep: worker counts must be >= 1"));
    }
    let mut manifest = ManifestBuilder::start("bench", &config);

    let flows = read_flows(&args.flow_file, &config)?;
    let det = config.detector_config(config.detector.threshold, trace_start(&flows))?;
    let base = config.engine_config()?;

    let mut runs: Vec<(usize, u32, RunStats)> = Vec::new();
    for &workers in &sweep {
        let eng = EngineConfig {
            workers,
            mode: Mode::Batch,
            ..base
        };
        for rep in 1..=args.repetitions {
            let (_, stats) = run_batch(&flows, &det, &eng)?;
            tracing::info!(workers, rep, wall_s = stats.wall_time.as_secs_f64(), "bench run");
            runs.push((workers, rep, stats));
        }
    }

    write_with(&args.out, |out| {
        let e = write_err(&args.out);
        writeln!(out, "{RUN_HEADER}").map_err(&e)?;
        for (workers, rep, s) in &runs {
            writeln!(
                out,
                "{workers},{rep},{},{},{},{},{}",
                s.wall_time.as_secs_f64(),
                s.trace_duration.as_secs_f64(),
                opt(s.time_ratio),
                s.records_in,
                s.verdicts_out
            )
            .map_err(&e)?;
        }
        writeln!(out).map_err(&e)?;
        writeln!(out, "{SUMMARY_HEADER}").map_err(&e)?;
        for &workers in &sweep {
            let ratios: Vec<f64> = runs
                .iter()
                .filter(|(w, _, _)| *w == workers)
                .filter_map(|(_, _, s)| s.time_ratio)
                .collect();
            let cells = match five_number_summary(&ratios) {
                Some(q) => q.map(|x| x.to_string()).join(","),
                None => ["undefined"; 5].join(","),
            };
            writeln!(out, "{workers},{cells}").map_err(&e)?;
        }
        Ok(())
    })?;

    manifest.input(&args.flow_file)?;
    manifest.output(&args.out)?;
    manifest.finish(&args.out)?;
    Ok(())
}
