//! Headered packet-summary files, one captured packet per line.
//!
//! ```text
//! ts_us,src_ip,dst_ip,src_port,dst_port,proto,length
//! 1516000000000000,10.0.0.1,10.0.0.2,51234,80,TCP,60
//! ```

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use super::flow_file::{csv_to_io, FlowFileError, FlowFileOptions};
use super::packets::PacketSummary;
use crate::flow::{Protocol, Timestamp};

pub const PACKET_FILE_HEADER: &str = "ts_us,src_ip,dst_ip,src_port,dst_port,proto,length";

/// Streams packet summaries; malformed lines follow the same lenient/strict
/// rules as [`super::FlowReader`].
pub struct PacketReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    opts: FlowFileOptions,
    line: u64,
    malformed: u64,
    total: u64,
    done: bool,
}

impl PacketReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, opts: FlowFileOptions) -> Result<Self, FlowFileError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| FlowFileError::Open {
            path: path.display().to_string(),
            source,
        })?;
        PacketReader::new(BufReader::with_capacity(1 << 16, file), opts)
    }
}

impl<R: Read> PacketReader<R> {
    pub fn new(input: R, opts: FlowFileOptions) -> Result<Self, FlowFileError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let found = rdr.headers().map_err(csv_to_io)?.iter().collect::<Vec<_>>().join(",");
        if found != PACKET_FILE_HEADER {
            return Err(FlowFileError::Header {
                expected: PACKET_FILE_HEADER,
                found,
            });
        }
        Ok(PacketReader {
            records: rdr.into_records(),
            opts,
            line: 1,
            malformed: 0,
            total: 0,
            done: false,
        })
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }
}

impl<R: Read> Iterator for PacketReader<R> {
    type Item = Result<PacketSummary, FlowFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let rec = match self.records.next() {
                None => {
                    self.done = true;
                    let ratio = self.malformed as f64 / self.total.max(1) as f64;
                    if ratio > self.opts.max_error_ratio {
                        return Some(Err(FlowFileError::TooManyErrors {
                            malformed: self.malformed,
                            total: self.total,
                            ratio,
                            max: self.opts.max_error_ratio,
                        }));
                    }
                    return None;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(csv_to_io(e).into()));
                }
                Some(Ok(rec)) => rec,
            };
            self.line += 1;
            self.total += 1;
            match parse_packet(&rec) {
                Ok(p) => return Some(Ok(p)),
                Err(reason) => {
                    self.malformed += 1;
                    if self.opts.strict {
                        self.done = true;
                        return Some(Err(FlowFileError::Malformed {
                            line: self.line,
                            reason,
                        }));
                    }
                    tracing::debug!(line = self.line, %reason, "skipping malformed packet line");
                }
            }
        }
    }
}

fn parse_packet(rec: &csv::StringRecord) -> Result<PacketSummary, String> {
    if rec.len() != 7 {
        return Err(format!("expected 7 fields, found {}", rec.len()));
    }
    let int = |i: usize, name: &str| -> Result<u64, String> {
        rec[i].parse::<u64>().map_err(|_| format!("{name}: invalid integer {:?}", &rec[i]))
    };
    let port = |i: usize, name: &str| -> Result<u16, String> {
        let v = int(i, name)?;
        u16::try_from(v).map_err(|_| format!("{name}: {v} out of range 0-65535"))
    };
    let addr = |i: usize, name: &str| -> Result<IpAddr, String> {
        rec[i].parse::<IpAddr>().map_err(|_| format!("{name}: invalid address {:?}", &rec[i]))
    };
    Ok(PacketSummary {
        timestamp: Timestamp(int(0, "ts_us")?),
        src: addr(1, "src_ip")?,
        dst: addr(2, "dst_ip")?,
        src_port: port(3, "src_port")?,
        dst_port: port(4, "dst_port")?,
        protocol: rec[5].parse::<Protocol>().map_err(|e| e.to_string())?,
        length: int(6, "length")?,
    })
}

pub fn write_packets<'a, W, I>(mut out: W, packets: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PacketSummary>,
{
    writeln!(out, "{PACKET_FILE_HEADER}")?;
    for p in packets {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.timestamp, p.src, p.dst, p.src_port, p.dst_port, p.protocol, p.length
        )?;
    }
    out.flush()
}
