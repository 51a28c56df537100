use std::cell::RefCell;
use std::time::Duration;

use scanflow_core::ingest::{aggregate_packets, write_flows, AggregateOptions, PacketReader};
use scanflow_core::FlowRecord;

use super::{write_err, write_with};
use crate::args::AggregateArgs;
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

pub fn run(config: Config, args: &AggregateArgs) -> Result<(), CliError> {
    config.validate()?;
    let idle_timeout = Duration::try_from_secs_f64(args.idle_timeout)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::config(format!("--idle-timeout: must be > 0, got {}", args.idle_timeout)))?;
    let mut manifest = ManifestBuilder::start("aggregate-packets", &config);

    let reader = PacketReader::open(&args.packet_file, config.flow_file_options())?;
    let read_error = RefCell::new(None);
    let packets = reader.map_while(|r| r.map_err(|e| *read_error.borrow_mut() = Some(e)).ok());
    let opts = AggregateOptions {
        idle_timeout,
        strict: config.ingest.strict,
        ..Default::default()
    };
    let mut flows: Vec<FlowRecord> = aggregate_packets(packets, opts)
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::parse(format!("{}: {e}", args.packet_file.display())))?;
    if let Some(e) = read_error.take() {
        return Err(e.into());
    }
    flows.sort_by_key(|f| (f.first_seen, f.src, f.dst, f.src_port, f.dst_port, f.protocol.number()));
    tracing::info!(flows = flows.len(), "aggregated packets");

    write_with(&args.out, |out| write_flows(out, &flows).map_err(write_err(&args.out)))?;
    manifest.input(&args.packet_file)?;
    manifest.output(&args.out)?;
    manifest.finish(&args.out)?;
    Ok(())
}
