use std::path::{Path, PathBuf};

use scanflow_core::ingest::{write_flows, write_ground_truth_xml};
use scanflow_core::synth::{generate, SynthSpec};

use super::{write_atomic, write_err, write_with};
use crate::args::SynthArgs;
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

/// `<dir>/<stem>.anomalous.xml` and `<dir>/<stem>.notice.xml` beside `out`.
pub fn ground_truth_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out
        .file_stem()
        .map_or_else(|| "trace".to_owned(), |s| s.to_string_lossy().into_owned());
    let dir = out.parent().unwrap_or(Path::new(""));
    (
        dir.join(format!("{stem}.anomalous.xml")),
        dir.join(format!("{stem}.notice.xml")),
    )
}

pub fn run(config: Config, args: &SynthArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("synth", &config);
    manifest.seed(args.seed);

    let text = std::fs::read_to_string(&args.spec_file)
        .map_err(|e| CliError::io(format!("{}: {e}", args.spec_file.display())))?;
    let spec = SynthSpec::from_toml(&text)?;
    let trace = generate(&spec, args.seed)?;
    tracing::info!(
        flows = trace.flows.len(),
        scanners = trace.scanners.len(),
        hosts = trace.background_hosts.len(),
        "generated trace"
    );

    let (anomalous, notice) = ground_truth_paths(&args.out);
    write_with(&args.out, |out| write_flows(out, &trace.flows).map_err(write_err(&args.out)))?;
    write_atomic(&anomalous, write_ground_truth_xml(&trace.anomalous).as_bytes())?;
    write_atomic(&notice, write_ground_truth_xml(&trace.notice).as_bytes())?;

    manifest.input(&args.spec_file)?;
    for p in [&args.out, &anomalous, &notice] {
        manifest.output(p)?;
    }
    manifest.finish(&args.out)?;
    Ok(())
}
