//! Reading flows, packets and ground truth.

mod flow_file;
mod ground_truth;
mod packet_file;
mod packets;

pub use flow_file::{
    format_flow_line, read_flow_file, write_flow_file, write_flows, FlowFileError, FlowFileOptions, FlowReader,
    FLOW_FILE_HEADER,
};
pub use ground_truth::{
    parse_ground_truth, read_ground_truth, read_ground_truth_file, write_ground_truth_xml, Category,
    GroundTruthEntry, GroundTruthError, GroundTruthOptions, GroundTruthSet, SourceFile,
};
pub use packet_file::{write_packets, PacketReader, PACKET_FILE_HEADER};
pub use packets::{
    aggregate_packets, AggregateOptions, FlowAggregator, OutOfOrder, PacketSummary, DEFAULT_IDLE_TIMEOUT,
};
