//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Run alone with `cargo test -p scanflow-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanflow_core::eval::filter_scan_labels;
use scanflow_core::ingest::{read_flow_file, read_ground_truth, Category, GroundTruthOptions, SourceFile};
use scanflow_core::report::{format_verdict_line, write_verdicts};
use scanflow_core::synth::{generate, Background, Decoy, GroundTruthFile, Scanner, SynthSpec};
use scanflow_core::{
    detect, precision_recall, run_batch, run_streaming, ConfusionMatrix, DetectorConfig, EngineConfig,
    EvalCase, FlowFileOptions, FlowRecord, Matching, Protocol, RatioVerdict, RuleConfig, ScanLabelFilter,
    SliceConfig, Timestamp, TraceEvaluator,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scanflow"));
    c.env_remove("SCANFLOW_CONFIG").env_remove("RUST_LOG");
    c
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "scanflow {} exited {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

fn verdict_text(verdicts: &[RatioVerdict]) -> String {
    let mut out = String::new();
    for v in verdicts {
        out.push_str(&format_verdict_line(v, &[]));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// randomized traces

struct RandomTrace {
    flows: Vec<FlowRecord>,
    start: Timestamp,
    slice: Duration,
    threshold: f64,
}

fn random_trace(rng: &mut ChaCha8Rng, max_flows: usize) -> RandomTrace {
    let start = Timestamp(1_500_000_000_000_000 + rng.random_range(0..1_000_000_000u64));
    let slice = Duration::from_micros(rng.random_range(1_000_000..60_000_000u64));
    let span = rng.random_range(1..20u64) * slice.as_micros() as u64;
    let pool_size = rng.random_range(2..300usize);
    let pool: Vec<IpAddr> = (0..pool_size)
        .map(|i| {
            if rng.random_bool(0.2) {
                IpAddr::V6(Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, 0, i as u16))
            } else {
                IpAddr::V4(Ipv4Addr::new(10, rng.random_range(0..4), rng.random_range(0..4), i as u8))
            }
        })
        .collect();
    // a few hot senders and receivers make large ratios likely
    let hot_src: Vec<IpAddr> = (0..rng.random_range(0..4)).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let hot_dst: Vec<IpAddr> = (0..rng.random_range(0..4)).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let n = rng.random_range(0..=max_flows);
    let flows = (0..n)
        .map(|_| {
            let src = if !hot_src.is_empty() && rng.random_bool(0.4) {
                hot_src[rng.random_range(0..hot_src.len())]
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            let dst = if !hot_dst.is_empty() && rng.random_bool(0.3) {
                hot_dst[rng.random_range(0..hot_dst.len())]
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            let first = start.0 + rng.random_range(0..span);
            FlowRecord {
                src,
                dst,
                src_port: rng.random(),
                dst_port: rng.random_range(0..2048),
                protocol: [Protocol::Tcp, Protocol::Udp, Protocol::Other(1)][rng.random_range(0..3)],
                first_seen: Timestamp(first),
                last_seen: Timestamp(first + rng.random_range(0..5_000_000u64)),
                packet_count: rng.random_range(1..100),
                byte_count: rng.random_range(40..100_000),
            }
        })
        .collect();
    let threshold = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 25.0][rng.random_range(0..8)];
    RandomTrace {
        flows,
        start,
        slice,
        threshold,
    }
}

/// Sequential reference: materialize every (ip, slice, role) occurrence,
/// tally, and threshold the signed ratio.
fn reference_verdicts(t: &RandomTrace) -> String {
    let width = t.slice.as_micros() as u64;
    let mut tally: BTreeMap<(u64, IpAddr), (u64, u64)> = BTreeMap::new();
    for f in &t.flows {
        let slice = (f.first_seen.0 - t.start.0) / width;
        tally.entry((slice, f.src)).or_default().0 += 1;
        tally.entry((slice, f.dst)).or_default().1 += 1;
    }
    let mut out = String::new();
    for ((slice, ip), (g, r)) in tally {
        let ratio = if g >= r {
            g as f64 / r.max(1) as f64
        } else {
            -(r as f64 / g.max(1) as f64)
        };
        let direction = if ratio > t.threshold {
            "sender"
        } else if ratio < -t.threshold {
            "receiver"
        } else {
            continue;
        };
        writeln!(out, "{slice},{ip},{direction},{g},{r},{ratio},").unwrap();
    }
    out
}

fn criterion_1() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca9_f10e);
    let (mut flows, mut verdicts) = (0usize, 0usize);
    for i in 0..100 {
        let t = random_trace(&mut rng, 10_000);
        let cfg = DetectorConfig::new(t.threshold, SliceConfig::new(t.start, t.slice).unwrap()).unwrap();
        let got = verdict_text(&detect(&t.flows, &cfg).map_err(|e| e.to_string())?);
        let want = reference_verdicts(&t);
        ensure!(got == want, "trace {i}: detector output differs from reference");
        flows += t.flows.len();
        verdicts += want.lines().count();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}, limit 60 s");
    Ok(format!("100 traces, {flows} flows, {verdicts} verdicts, byte-identical, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// planted scans

const PLANTED_SPEC: &str = r#"
duration_seconds = 300
slice_seconds = 30

[background]
hosts = 200

[[scanners]]
kind = "net_scan"
flows_per_slice = 120

[[scanners]]
kind = "net_scan"
flows_per_slice = 120
port = 23

[[scanners]]
kind = "net_scan"
flows_per_slice = 120
port = 445
"#;

fn criterion_2() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = dir.path().join("planted.toml");
    std::fs::write(&spec, PLANTED_SPEC).map_err(|e| e.to_string())?;
    let trace = dir.path().join("planted.csv");
    run_cli(&["synth", p(&spec), "-o", p(&trace), "--seed", "2024"])?;

    let scanners: BTreeSet<IpAddr> = ["10.66.0.1", "10.66.0.2", "10.66.0.3"].map(ip).into();
    for threshold in ["50", "100"] {
        let out = dir.path().join(format!("v{threshold}.csv"));
        run_cli(&["detect", p(&trace), "-o", p(&out), "--threshold", threshold])?;
        let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
        let flagged: BTreeSet<IpAddr> = text.lines().skip(1).map(|l| ip(l.split(',').nth(1).unwrap())).collect();
        ensure!(flagged == scanners, "threshold {threshold}: flagged {flagged:?}");
    }

    let report = dir.path().join("report.csv");
    run_cli(&[
        "evaluate",
        p(&trace),
        "--anomalous",
        p(&dir.path().join("planted.anomalous.xml")),
        "--notice",
        p(&dir.path().join("planted.notice.xml")),
        "--case",
        "1",
        "--thresholds",
        "50,100",
        "-o",
        p(&report),
    ])?;
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = text.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    ensure!(rows.len() == 2, "expected 2 report rows, got {}", rows.len());
    for row in rows {
        let c: Vec<&str> = row.split(',').collect();
        ensure!(
            c[3] == "3" && c[4] == "0" && c[5] == "0" && c[7] == "1" && c[8] == "1",
            "threshold {}: row {row}",
            c[2]
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, limit 10 s");
    Ok(format!("3 scanners flagged exactly at 50 and 100, recall=precision=1, {elapsed:.2?}"))
}

fn synthetic_fixtures() -> Vec<(String, SynthSpec, u64)> {
    let mut out = Vec::new();
    let rates = [30, 60, 110, 120, 180, 250, 400];
    for (i, &rate) in rates.iter().enumerate() {
        for unanswered in [0.0, 0.25] {
            let mut spec = SynthSpec {
                background: Background {
                    hosts: 80,
                    unanswered_ratio: unanswered,
                    ..Background::default()
                },
                ..SynthSpec::default()
            };
            spec.scanners.push(Scanner::net_scan(rate.min(254)));
            spec.scanners.push(Scanner::port_scan(rate / 2 + 5));
            spec.scanners.push(Scanner {
                slices: vec![1, 4, 7],
                ..Scanner::port_scan(rate * 2)
            });
            out.push((format!("rate{rate}/unanswered{unanswered}"), spec, 100 + i as u64));
        }
    }
    out
}

fn criterion_3() -> Check {
    let started = Instant::now();
    let mut fixtures = synthetic_fixtures();
    fixtures.push((
        "planted".into(),
        SynthSpec::from_toml(PLANTED_SPEC).map_err(|e| e.to_string())?,
        2024,
    ));
    let mut strict_steps = 0;
    for (name, spec, seed) in &fixtures {
        let trace = generate(spec, *seed).map_err(|e| e.to_string())?;
        let flagged = |t: f64| -> Result<BTreeSet<(u64, IpAddr)>, String> {
            let cfg = DetectorConfig::new(t, trace.slice_config).unwrap();
            Ok(detect(&trace.flows, &cfg)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|v| (v.key.slice_index, v.key.ip))
                .collect())
        };
        let (s50, s100, s200) = (flagged(50.0)?, flagged(100.0)?, flagged(200.0)?);
        ensure!(s200.is_subset(&s100), "{name}: flagged(200) not within flagged(100)");
        ensure!(s100.is_subset(&s50), "{name}: flagged(100) not within flagged(50)");
        let ips = |s: &BTreeSet<(u64, IpAddr)>| s.iter().map(|k| k.1).collect::<BTreeSet<_>>();
        ensure!(ips(&s200).is_subset(&ips(&s100)) && ips(&s100).is_subset(&ips(&s50)), "{name}: address sets");
        strict_steps += usize::from(s200.len() < s100.len()) + usize::from(s100.len() < s50.len());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, limit 10 s");
    Ok(format!(
        "{} fixtures, 200 ⊆ 100 ⊆ 50 everywhere ({strict_steps} strict steps), {elapsed:.2?}",
        fixtures.len()
    ))
}

fn criterion_4() -> Check {
    let started = Instant::now();
    let mut improved = 0;
    let mut compared = 0;
    for (i, kinds) in [
        vec![Scanner::net_scan(120)],
        vec![Scanner::port_scan(150)],
        vec![Scanner::net_scan(120), Scanner::port_scan(130)],
        vec![Scanner::net_scan(250), Scanner::net_scan(140), Scanner::port_scan(400)],
    ]
    .into_iter()
    .enumerate()
    {
        for seed in 0..3u64 {
            let scanners = kinds
                .iter()
                .cloned()
                .map(|s| Scanner {
                    in_ground_truth: false,
                    ..s
                })
                .collect();
            let spec = SynthSpec {
                scanners,
                decoys: vec![
                    Decoy {
                        label: "ptscSYN".into(),
                        category: Category::Anomalous,
                        src_ips: vec![ip("192.168.0.5")],
                        dst_ips: vec![],
                        ground_truth_file: GroundTruthFile::Anomalous,
                    },
                    Decoy {
                        label: "ntscACK".into(),
                        category: Category::Notice,
                        src_ips: vec![ip("192.168.0.9")],
                        dst_ips: vec![],
                        ground_truth_file: GroundTruthFile::Notice,
                    },
                    Decoy {
                        label: "DoS".into(),
                        category: Category::Anomalous,
                        src_ips: vec![ip("192.168.0.7")],
                        dst_ips: vec![ip("192.168.0.8")],
                        ground_truth_file: GroundTruthFile::Anomalous,
                    },
                ],
                ..SynthSpec::default()
            };
            let trace = generate(&spec, 10 * i as u64 + seed).map_err(|e| e.to_string())?;
            let mut gt = scanflow_core::GroundTruthSet::new(trace.anomalous.clone());
            gt.extend(scanflow_core::GroundTruthSet::new(trace.notice.clone()));
            let filtered = filter_scan_labels(&gt, &ScanLabelFilter::default()).ip_set();
            ensure!(
                trace.scanners.iter().all(|s| !filtered.contains(s)),
                "fixture {i}/{seed}: a scanner is in the filtered ground truth"
            );

            let ev = TraceEvaluator::new(
                &trace.flows,
                RuleConfig::default(),
                trace.slice_config,
                ScanLabelFilter::default(),
                Matching::Undirected,
            );
            for t in [50.0, 100.0, 200.0] {
                let verdicts = detect(&trace.flows, &DetectorConfig::new(t, trace.slice_config).unwrap())
                    .map_err(|e| e.to_string())?;
                let c2 = ev.evaluate(EvalCase::FilteredMawilab, &verdicts, &gt).map_err(|e| e.to_string())?;
                let c3 = ev.evaluate(EvalCase::FilteredPlusRules, &verdicts, &gt).map_err(|e| e.to_string())?;
                let at_least = |a: Option<f64>, b: Option<f64>| match (a, b) {
                    (Some(x), Some(y)) => y >= x,
                    (None, _) => true,
                    (Some(_), None) => false,
                };
                ensure!(
                    at_least(c2.score.precision, c3.score.precision) && at_least(c2.score.recall, c3.score.recall),
                    "fixture {i}/{seed} threshold {t}: case 2 {:?} vs case 3 {:?}",
                    c2.score,
                    c3.score
                );
                compared += 1;
                if c3.score != c2.score {
                    improved += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, limit 10 s");
    Ok(format!(
        "{compared} comparisons, case 3 >= case 2 throughout ({improved} strictly better), {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------
// scoring arithmetic

fn criterion_5() -> Check {
    let m = |tp, fp, fneg, tn| ConfusionMatrix {
        true_pos: tp,
        false_pos: fp,
        false_neg: fneg,
        true_neg: tn,
    };
    // (matrix, recall, precision) worked out by hand
    let table: [(ConfusionMatrix, Option<f64>, Option<f64>); 10] = [
        (m(3, 0, 1, 0), Some(0.75), Some(1.0)),
        (m(0, 0, 0, 10), None, None),
        (m(0, 5, 0, 0), None, Some(0.0)),
        (m(0, 0, 7, 3), Some(0.0), None),
        (m(293, 0, 707, 0), Some(0.293), Some(1.0)),
        (m(1, 1, 1, 1), Some(0.5), Some(0.5)),
        (m(2, 3, 1, 29), Some(2.0 / 3.0), Some(0.4)),
        (m(1, 4, 4, 26), Some(0.2), Some(0.2)),
        (m(10, 0, 0, 0), Some(1.0), Some(1.0)),
        (m(7, 13, 21, 1000), Some(0.25), Some(0.35)),
    ];
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    for (i, (matrix, recall, precision)) in table.iter().enumerate() {
        let s = precision_recall(matrix);
        ensure!(close(s.recall, *recall), "matrix {i}: recall {:?}, expected {recall:?}", s.recall);
        ensure!(
            close(s.precision, *precision),
            "matrix {i}: precision {:?}, expected {precision:?}",
            s.precision
        );
    }
    Ok("10 matrices incl. 4 with a zero denominator, within 1e-12".into())
}

// ---------------------------------------------------------------------------
// engine

fn million_flow_spec() -> SynthSpec {
    // 5000 hosts x 10 conversations x 2 flows x 10 slices = 1,000,000
    SynthSpec {
        background: Background {
            hosts: 5000,
            base: Ipv4Addr::new(100, 64, 0, 0),
            conversations_per_host_per_slice: 10,
            ..Background::default()
        },
        scanners: vec![Scanner::net_scan(120), Scanner::port_scan(200), Scanner::port_scan(500)],
        ..SynthSpec::default()
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn criterion_6() -> Check {
    let started = Instant::now();
    let trace = generate(&million_flow_spec(), 6).map_err(|e| e.to_string())?;
    ensure!(trace.flows.len() >= 1_000_000, "only {} flows", trace.flows.len());
    let det = DetectorConfig::new(100.0, trace.slice_config).unwrap();

    let mut files: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    let mut walls: BTreeMap<usize, Vec<Duration>> = BTreeMap::new();
    const REPS: usize = 7;
    for rep in 0..REPS {
        for workers in [1usize, 2, 8] {
            let (verdicts, stats) = run_batch(&trace.flows, &det, &EngineConfig::batch(workers))
                .map_err(|e| e.to_string())?;
            walls.entry(workers).or_default().push(stats.wall_time);
            if rep == 0 {
                let mut buf = Vec::new();
                write_verdicts(&mut buf, &verdicts, |_| Vec::new()).map_err(|e| e.to_string())?;
                files.insert(workers, buf);
            }
        }
    }
    ensure!(
        files[&1] == files[&2] && files[&1] == files[&8],
        "verdict files differ between worker counts"
    );
    let m1 = median(walls[&1].clone());
    let m2 = median(walls[&2].clone());
    let m8 = median(walls[&8].clone());
    let ratio = m2.as_secs_f64() / m1.as_secs_f64();
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let elapsed = started.elapsed();
    let detail = format!(
        "{} flows, identical verdicts for workers 1/2/8; median wall {m1:.2?} / {m2:.2?} / {m8:.2?}, \
         workers=2 ratio {ratio:.3} (limit 0.9), {cpus} CPU(s) available, {elapsed:.1?}",
        trace.flows.len()
    );
    ensure!(elapsed < Duration::from_secs(300), "{detail}; over the 5 min budget");
    ensure!(ratio <= 0.9, "{detail}");
    Ok(detail)
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57_4ea3);
    let mut total = 0;
    for i in 0..50 {
        let mut t = random_trace(&mut rng, 5_000);
        t.flows.sort_by_key(|f| f.first_seen);
        let det = DetectorConfig::new(t.threshold, SliceConfig::new(t.start, t.slice).unwrap()).unwrap();
        let workers = rng.random_range(1..5);
        let (batch, _) = run_batch(&t.flows, &det, &EngineConfig::batch(workers)).map_err(|e| e.to_string())?;
        let lag = Duration::from_micros(rng.random_range(0..10_000_000));
        let mut streamed = Vec::new();
        let mut last_slice = None;
        let stats = run_streaming(t.flows.clone(), &det, &EngineConfig::streaming(lag), |e| {
            if last_slice.is_some_and(|s| s >= e.slice_index) {
                return Err(format!("slice {} emitted out of order", e.slice_index));
            }
            last_slice = Some(e.slice_index);
            streamed.extend(e.verdicts);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        ensure!(stats.late_dropped == 0, "fixture {i}: {} in-order flows dropped", stats.late_dropped);
        ensure!(streamed == batch, "fixture {i}: streaming emissions differ from batch verdicts");
        total += batch.len();
    }
    Ok(format!("50 in-order fixtures, {total} verdicts, emissions equal batch"))
}

// ---------------------------------------------------------------------------
// ground truth

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn criterion_8() -> Check {
    let gt = read_ground_truth(
        core_fixture("anomalous.xml"),
        core_fixture("notice.xml"),
        GroundTruthOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let summary: Vec<(SourceFile, Category, &str, usize, usize)> = gt
        .entries
        .iter()
        .map(|e| {
            (
                e.source_file,
                e.category,
                e.taxonomy_label.as_str(),
                e.src_ips.len(),
                e.dst_ips.len(),
            )
        })
        .collect();
    use Category::*;
    use SourceFile::*;
    let expected = vec![
        (AnomalousFile, Anomalous, "ntscSYN", 1, 0),
        (AnomalousFile, Anomalous, "ptscACK", 1, 1),
        (AnomalousFile, Anomalous, "DoS", 3, 1),
        (AnomalousFile, Anomalous, "DDoS", 1, 1),
        (AnomalousFile, Anomalous, "ntscICMP", 1, 0),
        (AnomalousFile, Suspicious, "netscan_udp", 1, 0),
        (NoticeFile, Notice, "ntscUDP", 1, 0),
        (NoticeFile, Notice, "ptscSYN", 1, 2),
        (NoticeFile, Notice, "pingFlood", 1, 0),
        (NoticeFile, Benign, "ntscSYN", 1, 0),
    ];
    ensure!(summary == expected, "parsed {summary:?}");
    ensure!(gt.rejected == 1, "rejected {} entries, expected 1", gt.rejected);
    let dos = &gt.entries[2];
    ensure!(
        dos.src_ips == ["198.51.100.20", "198.51.100.21", "198.51.100.22"].map(ip).into(),
        "multi-address filter parsed as {:?}",
        dos.src_ips
    );

    let kept = filter_scan_labels(&gt, &ScanLabelFilter::default());
    let removed: Vec<(&str, Category)> = gt
        .entries
        .iter()
        .filter(|e| !kept.entries.contains(e))
        .map(|e| (e.taxonomy_label.as_str(), e.category))
        .collect();
    let expected_removed = vec![
        ("DoS", Anomalous),
        ("DDoS", Anomalous),
        ("ntscICMP", Anomalous),
        ("pingFlood", Notice),
        ("ntscSYN", Benign),
    ];
    ensure!(removed == expected_removed, "filter removed {removed:?}");
    Ok(format!(
        "{} entries parsed as expected, filter removed exactly DoS, DDoS, ICMP and benign",
        gt.len()
    ))
}

// ---------------------------------------------------------------------------
// optional real-trace run

const MAWI_VARS: [&str; 3] = ["SCANFLOW_MAWI_FLOWS", "SCANFLOW_MAWI_ANOMALOUS", "SCANFLOW_MAWI_NOTICE"];

fn criterion_9() -> Result<Verdict, String> {
    let vars: Vec<Option<String>> = MAWI_VARS.iter().map(|v| std::env::var(v).ok()).collect();
    let [Some(flows), Some(anomalous), Some(notice)] = &vars[..] else {
        return Ok(Verdict::Skip(format!("set {} to run", MAWI_VARS.join(", "))));
    };
    let reader = read_flow_file(flows, FlowFileOptions::default()).map_err(|e| e.to_string())?;
    let (mut lo, mut hi) = (u64::MAX, 0);
    for f in reader {
        let f = f.map_err(|e| e.to_string())?;
        lo = lo.min(f.first_seen.0);
        hi = hi.max(f.last_seen.0);
    }
    let trace_duration = Duration::from_micros(hi.saturating_sub(lo));

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("mawi.csv");
    let started = Instant::now();
    let out = bin()
        .args([
            "evaluate",
            flows,
            "--anomalous",
            anomalous,
            "--notice",
            notice,
            "--thresholds",
            "50,100,200",
            "-o",
            p(&report),
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let wall = started.elapsed();
    ensure!(
        out.status.success(),
        "evaluate exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let rows = text.lines().skip(1).take_while(|l| !l.is_empty()).count();
    ensure!(rows == 9, "expected 9 report rows (3 thresholds x 3 cases), got {rows}");
    ensure!(
        text.contains("\nmetric,case,threshold,truth_set,mean,variance,n_traces,excluded\n"),
        "aggregate block missing"
    );
    print!("{}", String::from_utf8_lossy(&out.stdout));
    ensure!(
        wall < trace_duration,
        "wall {wall:.1?} is not below trace duration {trace_duration:.1?}"
    );
    Ok(Verdict::Pass(format!(
        "report with {rows} rows in {wall:.1?} for a {trace_duration:.0?} trace"
    )))
}

// ---------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Result<Verdict, String>) -> Verdict {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(msg)) => Verdict::Fail(msg),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Verdict::Fail(format!("panic: {msg}"))
        }
    }
}

fn pass(f: fn() -> Check) -> impl FnOnce() -> Result<Verdict, String> {
    move || f().map(Verdict::Pass)
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("SCANFLOW_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, Box<dyn FnOnce() -> Result<Verdict, String>>)> = vec![
        (1, "oracle equivalence", Box::new(pass(criterion_1))),
        (2, "planted-scan recovery", Box::new(pass(criterion_2))),
        (3, "threshold monotonicity", Box::new(pass(criterion_3))),
        (4, "case-3 improvement", Box::new(pass(criterion_4))),
        (5, "confusion/PR correctness", Box::new(pass(criterion_5))),
        (6, "parallel determinism and scaling", Box::new(pass(criterion_6))),
        (7, "streaming-batch equivalence", Box::new(pass(criterion_7))),
        (8, "ground-truth parser golden tests", Box::new(pass(criterion_8))),
        (9, "real MAWI trace end-to-end", Box::new(criterion_9)),
    ];
    // keep panic messages out of the report lines
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let line = match guarded(f) {
            Verdict::Pass(d) => format!("PASS criterion {n} ({name}): {d}"),
            Verdict::Skip(d) => format!("SKIP criterion {n} ({name}): {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                format!("FAIL criterion {n} ({name}): {d}")
            }
        };
        println!("{line}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criterion/criteria failed");
        ExitCode::FAILURE
    }
}
