pub mod aggregate;
pub mod bench;
pub mod detect;
pub mod evaluate;
pub mod synth;

use std::io::{BufWriter, Write};
use std::path::Path;

use scanflow_core::flow::trace_bounds;
use scanflow_core::ingest::read_flow_file;
use scanflow_core::{FlowRecord, Timestamp};
use tempfile::NamedTempFile;

use crate::config::Config;
use crate::error::CliError;

pub fn read_flows(path: &Path, config: &Config) -> Result<Vec<FlowRecord>, CliError> {
    let reader = read_flow_file(path, config.flow_file_options())?;
    let flows = reader.read_all()?;
    tracing::info!(path = %path.display(), flows = flows.len(), "read flow file");
    Ok(flows)
}

/// Earliest `first_seen`, or the epoch for an empty trace.
pub fn trace_start(flows: &[FlowRecord]) -> Timestamp {
    trace_bounds(flows).map_or(Timestamp(0), |(lo, _)| lo)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, so a failed
/// command never leaves a partial output behind.
pub fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    {
        let mut out = BufWriter::with_capacity(1 << 16, tmp.as_file());
        body(&mut out)?;
        out.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_with(path, |out| out.write_all(bytes).map_err(|e| io_err(path, e)))
}

pub(crate) fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| io_err(path, e)
}
