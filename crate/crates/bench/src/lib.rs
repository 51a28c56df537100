//! Shared inputs for the scanflow benchmarks.

use scanflow_core::synth::{generate, Background, Scanner, SynthSpec, SynthTrace};

/// A ten-slice synthetic trace with `hosts` background hosts and three
/// scanners. Background traffic yields `hosts * 20` flows per slice.
pub fn trace(hosts: u32, seed: u64) -> SynthTrace {
    let spec = SynthSpec {
        background: Background {
            hosts,
            conversations_per_host_per_slice: 10,
            ..Background::default()
        },
        scanners: vec![Scanner::net_scan(200), Scanner::port_scan(300), Scanner::net_scan(120)],
        ..SynthSpec::default()
    };
    generate(&spec, seed).expect("valid bench spec")
}
