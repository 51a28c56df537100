//! The headered, comma-delimited flow-record file format.
//!
//! ```text
//! first_seen_us,last_seen_us,src_ip,dst_ip,src_port,dst_port,proto,packets,bytes
//! 1516000000000000,1516000000250000,10.0.0.1,10.0.0.2,51234,80,TCP,4,320
//! ```

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use crate::flow::{FlowRecord, Protocol, Timestamp};

pub const FLOW_FILE_HEADER: &str =
    "first_seen_us,last_seen_us,src_ip,dst_ip,src_port,dst_port,proto,packets,bytes";

const FIELD_COUNT: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum FlowFileError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("read error: {0}")]
    Io(#[from] io::Error),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header { expected: &'static str, found: String },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("{malformed} of {total} data lines malformed (ratio {ratio:.4} > {max:.4})")]
    TooManyErrors {
        malformed: u64,
        total: u64,
        ratio: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowFileOptions {
    /// Abort on the first malformed line instead of skipping it.
    pub strict: bool,
    /// Fraction of malformed lines tolerated before the read fails.
    pub max_error_ratio: f64,
}

impl Default for FlowFileOptions {
    fn default() -> Self {
        FlowFileOptions {
            strict: false,
            max_error_ratio: 1.0,
        }
    }
}

/// Streams flow records out of a flow file.
///
/// In lenient mode malformed lines are skipped and counted. Once the input is
/// exhausted, a malformed fraction above `max_error_ratio` is reported as a
/// final error item.
pub struct FlowReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    opts: FlowFileOptions,
    line: u64,
    malformed: u64,
    total: u64,
    done: bool,
}

impl FlowReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, opts: FlowFileOptions) -> Result<Self, FlowFileError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| FlowFileError::Open {
            path: path.display().to_string(),
            source,
        })?;
        FlowReader::new(BufReader::with_capacity(1 << 16, file), opts)
    }
}

impl<R: Read> FlowReader<R> {
    pub fn new(input: R, opts: FlowFileOptions) -> Result<Self, FlowFileError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header = rdr.headers().map_err(csv_to_io)?;
        let found = header.iter().collect::<Vec<_>>().join(",");
        if found != FLOW_FILE_HEADER {
            return Err(FlowFileError::Header {
                expected: FLOW_FILE_HEADER,
                found,
            });
        }
        Ok(FlowReader {
            records: rdr.into_records(),
            opts,
            line: 1,
            malformed: 0,
            total: 0,
            done: false,
        })
    }

    /// Number of malformed lines skipped so far.
    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// Number of data lines seen so far, valid or not.
    pub fn lines_read(&self) -> u64 {
        self.total
    }

    /// Drains the reader into a vector, failing on the first error item.
    pub fn read_all(self) -> Result<Vec<FlowRecord>, FlowFileError> {
        self.collect()
    }
}

impl<R: Read> Iterator for FlowReader<R> {
    type Item = Result<FlowRecord, FlowFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.records.next() {
                None => {
                    self.done = true;
                    if self.total > 0 {
                        let ratio = self.malformed as f64 / self.total as f64;
                        if ratio > self.opts.max_error_ratio {
                            return Some(Err(FlowFileError::TooManyErrors {
                                malformed: self.malformed,
                                total: self.total,
                                ratio,
                                max: self.opts.max_error_ratio,
                            }));
                        }
                    }
                    return None;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(csv_to_io(e).into()));
                }
                Some(Ok(rec)) => {
                    self.line += 1;
                    self.total += 1;
                    match parse_fields(&rec) {
                        Ok(flow) => return Some(Ok(flow)),
                        Err(reason) => {
                            self.malformed += 1;
                            if self.opts.strict {
                                self.done = true;
                                return Some(Err(FlowFileError::Malformed {
                                    line: self.line,
                                    reason,
                                }));
                            }
                            tracing::debug!(line = self.line, %reason, "skipping malformed flow line");
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn csv_to_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
    }
}

fn parse_fields(rec: &csv::StringRecord) -> Result<FlowRecord, String> {
    if rec.len() != FIELD_COUNT {
        return Err(format!("expected {FIELD_COUNT} fields, found {}", rec.len()));
    }
    let field = |i: usize| &rec[i];
    let int = |i: usize, name: &str| -> Result<u64, String> {
        field(i)
            .parse::<u64>()
            .map_err(|_| format!("{name}: invalid integer {:?}", field(i)))
    };
    let port = |i: usize, name: &str| -> Result<u16, String> {
        let v = int(i, name)?;
        u16::try_from(v).map_err(|_| format!("{name}: {v} out of range 0-65535"))
    };
    let addr = |i: usize, name: &str| -> Result<IpAddr, String> {
        field(i)
            .parse::<IpAddr>()
            .map_err(|_| format!("{name}: invalid address {:?}", field(i)))
    };
    let flow = FlowRecord {
        first_seen: Timestamp(int(0, "first_seen_us")?),
        last_seen: Timestamp(int(1, "last_seen_us")?),
        src: addr(2, "src_ip")?,
        dst: addr(3, "dst_ip")?,
        src_port: port(4, "src_port")?,
        dst_port: port(5, "dst_port")?,
        protocol: field(6).parse::<Protocol>().map_err(|e| e.to_string())?,
        packet_count: int(7, "packets")?,
        byte_count: int(8, "bytes")?,
    };
    flow.validate().map_err(|e| e.to_string())?;
    Ok(flow)
}

/// Formats one record as a data line, without the trailing newline.
pub fn format_flow_line(f: &FlowRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        f.first_seen, f.last_seen, f.src, f.dst, f.src_port, f.dst_port, f.protocol, f.packet_count, f.byte_count
    )
}

pub fn write_flows<'a, W, I>(mut out: W, flows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a FlowRecord>,
{
    writeln!(out, "{FLOW_FILE_HEADER}")?;
    for f in flows {
        writeln!(out, "{}", format_flow_line(f))?;
    }
    out.flush()
}

pub fn write_flow_file<'a, I>(path: impl AsRef<Path>, flows: I) -> io::Result<()>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    let file = File::create(path)?;
    write_flows(io::BufWriter::with_capacity(1 << 16, file), flows)
}

pub fn read_flow_file(
    path: impl AsRef<Path>,
    opts: FlowFileOptions,
) -> Result<FlowReader<BufReader<File>>, FlowFileError> {
    FlowReader::open(path, opts)
}
