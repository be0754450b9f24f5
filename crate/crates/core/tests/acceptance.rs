//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hr_wifi::dedup::{DedupState, Verdict};
use hr_wifi::engine::SimTime;
use hr_wifi::frames::{decode_ytag, encode_with_tag, Frame, MacAddress, ReliabilityCategory, YTag};
use hr_wifi::metrics::{percentile, Report};
use hr_wifi::sim::RunOutput;
use hr_wifi::topology::{self, BuildOptions, NodeSpec, ScenarioSpec};
use hr_wifi::trace::{compare_bytes, Comparison, TraceRecord};

const FRAMES: u64 = 100_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn run(spec: &ScenarioSpec, trace: bool, copies: bool) -> RunOutput {
    topology::build(spec, BuildOptions { trace, record_copies: copies })
        .expect("valid scenario")
        .run()
        .expect("run completes")
}

/// Scenario 1 with a single uplink flow.
fn uplink(p: f64, r: u32, rc: ReliabilityCategory, primary: &str, count: u64) -> ScenarioSpec {
    let mut s = topology::scenario1();
    s.defaults.wireless.per_attempt_loss = p;
    s.defaults.wireless.retry_limit = r;
    s.flows.retain(|f| f.name == "up");
    s.flows[0].rc = rc;
    s.flows[0].count = count;
    for n in &mut s.nodes {
        if let NodeSpec::HrSta { primary: pr, .. } = n {
            *pr = primary.to_string();
        }
    }
    s
}

/// |observed - q| within 3 binomial standard errors.
fn within_3_sigma(lost: u64, n: u64, q: f64) -> (bool, f64, f64) {
    let obs = lost as f64 / n as f64;
    let sigma = (q * (1.0 - q) / n as f64).sqrt();
    ((obs - q).abs() <= 3.0 * sigma, obs, sigma)
}

fn redundancy_gain() -> Outcome {
    let mut msgs = vec![];
    let mut ok = true;
    for (label, rc, q) in [
        ("single", ReliabilityCategory::BestEffort, 0.15),
        ("dual", ReliabilityCategory::Reliable(2), 0.15 * 0.15),
    ] {
        let r = run(&uplink(0.15, 0, rc, "3A", FRAMES), false, false).report;
        let f = &r.flows[0];
        let (pass, obs, sigma) = within_3_sigma(f.lost, f.offered, q);
        ok &= pass && f.offered == FRAMES && f.in_flight == 0;
        msgs.push(format!("{label} loss {obs:.5} vs {q:.5} (3σ={:.5})", 3.0 * sigma));
    }
    let m = msgs.join("; ");
    if ok {
        Ok(m)
    } else {
        Err(m)
    }
}

fn arq_oracle() -> Outcome {
    let mut msgs = vec![];
    let mut ok = true;
    for p in [0.1, 0.2] {
        for r in [1u32, 3, 7] {
            let rep = run(&uplink(p, r, ReliabilityCategory::BestEffort, "3A", FRAMES), false, false).report;
            let link = rep.links.iter().find(|l| l.link == "3A" && l.direction == "up").expect("3A up");
            let q = p.powi(r as i32 + 1);
            let (pass, obs, _) = within_3_sigma(link.stats.mac_drops, link.stats.frames, q);
            ok &= pass && link.stats.frames == FRAMES && rep.flows[0].lost == link.stats.mac_drops;
            msgs.push(format!("p={p} R={r}: {obs:.2e}/{q:.2e}"));
        }
    }
    let m = msgs.join(", ");
    if ok {
        Ok(m)
    } else {
        Err(m)
    }
}

fn latencies(out: &RunOutput) -> Vec<Option<u64>> {
    out.metrics
        .frame_records()
        .map(|r| r.delivered_ns.map(|d| d - r.created_ns))
        .collect()
}

fn min_opt(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn latency_dominance() -> Outcome {
    let mut msgs = vec![];
    let mut ok = true;
    for (p, r) in [(0.15, 0u32), (0.3, 3)] {
        let dual = run(&uplink(p, r, ReliabilityCategory::Reliable(2), "3A", FRAMES), false, true);
        let a = run(&uplink(p, r, ReliabilityCategory::BestEffort, "3A", FRAMES), false, false);
        let b = run(&uplink(p, r, ReliabilityCategory::BestEffort, "3B", FRAMES), false, false);
        let (ld, la, lb) = (latencies(&dual), latencies(&a), latencies(&b));
        let mismatches = (0..ld.len()).filter(|&i| ld[i] != min_opt(la[i], lb[i])).count();

        // the copy that passed elimination is the first one to arrive
        let mut first: HashMap<u64, (u64, bool)> = HashMap::new();
        for c in dual.metrics.copies() {
            let e = first.entry(c.frame).or_insert((c.time_ns, c.passed));
            if c.time_ns < e.0 {
                *e = (c.time_ns, c.passed);
            }
        }
        let late_pass = first.values().filter(|(_, passed)| !passed).count();

        let sorted = |v: &[Option<u64>]| {
            let mut s: Vec<u64> = v.iter().flatten().copied().collect();
            s.sort_unstable();
            s
        };
        let p95d = percentile(&sorted(&ld), 95.0).unwrap_or(0);
        let p95s = percentile(&sorted(&la), 95.0).unwrap_or(0);
        ok &= mismatches == 0 && late_pass == 0 && p95d <= p95s && ld.len() as u64 == FRAMES;
        msgs.push(format!(
            "p={p} R={r}: {mismatches} min-of-copies mismatches, {late_pass} late passes, p95 dual {p95d} <= single {p95s}"
        ));
    }
    let m = msgs.join("; ");
    if ok {
        Ok(m)
    } else {
        Err(m)
    }
}

fn golden_trace() -> Outcome {
    let out = run(&topology::relay_demo(), true, false);
    let text = out.trace.render();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/relay_demo.trace");
    let golden = std::fs::read(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    let recs = out.trace.records();
    let pos = |pred: &dyn Fn(&TraceRecord) -> bool| recs.iter().position(pred);
    let node4 = "02:00:00:00:00:04";
    let primary = "02:00:00:00:03:0b";
    let tx_a = pos(&|r| r.kind == "air_tx" && r.place == "3A" && r.verdict == "sent");
    let tx_b = pos(&|r| r.kind == "air_tx" && r.place == "3B" && r.verdict == "sent");
    let relay = pos(&|r| {
        r.node == "2" && r.kind == "ytag" && r.verdict == "relayed" && r.place == "2A"
            && r.detail_value("to") == Some("1") && r.detail_value("na") == Some(node4)
    });
    let pass = pos(&|r| r.node == "1" && r.kind == "elim" && r.verdict == "pass");
    let discard = pos(&|r| r.node == "1" && r.kind == "elim" && r.verdict == "discard");
    let delivers: Vec<&TraceRecord> = recs.iter().filter(|r| r.kind == "deliver").collect();
    let order_ok = matches!(
        (tx_a, tx_b, relay, pass, discard),
        (Some(a), Some(b), Some(y), Some(p), Some(d)) if a.max(b) < y && y < d && p < d
    );
    let deliver_ok = delivers.len() == 1 && delivers[0].node == "4" && delivers[0].detail_value("sa") == Some(primary);
    let same = compare_bytes(text.as_bytes(), &golden);
    match (order_ok, deliver_ok, same) {
        (true, true, Comparison::Identical) => Ok(format!("{} records, order and delivery as expected, byte-identical", recs.len())),
        (o, d, c) => Err(format!("order ok={o}, single delivery ok={d}, golden comparison {c:?}")),
    }
}

fn dedup_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0u64;
    let mut arrivals = 0u64;
    let mut wrapped = 0u64;
    for _ in 0..10_000 {
        let start: u16 = if rng.gen_bool(0.3) { 65535 - rng.gen_range(0..200) } else { rng.gen() };
        let n = rng.gen_range(1..400u32);
        let depth = rng.gen_range(1..=63u32);
        let mut events: Vec<(u32, u32, u32)> = vec![];
        for i in 0..n {
            for c in 0..rng.gen_range(1..=3u32) {
                events.push((i + rng.gen_range(0..depth), i, c));
            }
        }
        events.sort_unstable();
        if u32::from(start) + n > 65536 {
            wrapped += 1;
        }
        let mut st = DedupState::new(64);
        let mut delivered: HashSet<u32> = HashSet::new();
        for (k, (_, i, _)) in events.iter().enumerate() {
            let seq = start.wrapping_add(*i as u16);
            let got = st.accept(seq, SimTime(k as u64));
            let want = if delivered.insert(*i) { Verdict::Pass } else { Verdict::Discard };
            arrivals += 1;
            if got != want {
                mismatches += 1;
            }
        }
    }
    let m = format!("{mismatches} mismatches over {arrivals} arrivals ({wrapped} sequences wrap)");
    if mismatches == 0 && wrapped > 0 {
        Ok(m)
    } else {
        Err(m)
    }
}

fn random_mac(rng: &mut ChaCha8Rng) -> MacAddress {
    MacAddress(rng.gen())
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0u64;
    for _ in 0..FRAMES {
        let len = rng.gen_range(0..200);
        let mut f = Frame::new(random_mac(&mut rng), random_mac(&mut rng), (0..len).map(|_| rng.gen()).collect());
        f.ether_type = loop {
            let et: u16 = rng.gen();
            if et != YTag::ETHER_TYPE {
                break et;
            }
        };
        let mut tag = YTag::new(random_mac(&mut rng), rng.gen());
        if rng.gen_bool(0.5) {
            tag = tag.downlink();
        }
        let bytes = match encode_with_tag(&f, &tag) {
            Ok(b) => b,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let tag_ok = bytes.len() == f.wire_len() + YTag::LEN && bytes[12..24] == tag.to_bytes() && tag.to_bytes().len() == 12;
        let back = decode_ytag(&bytes);
        let round = matches!(&back, Ok((g, t)) if t == &tag && g.da == tag.na && g.sa == f.sa
            && g.ether_type == f.ether_type && g.payload == f.payload && g.y_tag.is_none());
        // every strict prefix that cuts into the header or tag is rejected
        let cut = rng.gen_range(0..26usize.min(bytes.len()));
        let truncated = decode_ytag(&bytes[..cut]).is_err();
        let mut bad_version = bytes.clone();
        bad_version[22] = bad_version[22].wrapping_add(rng.gen_range(1..=255));
        let mut nested = bytes.clone();
        nested[24..26].copy_from_slice(&YTag::ETHER_TYPE.to_be_bytes());
        let junk: Vec<u8> = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect();
        let junk_ok = match decode_ytag(&junk) {
            Ok(_) => junk.len() >= 26 && junk[12..14] == YTag::ETHER_TYPE.to_be_bytes(),
            Err(_) => true,
        };
        if !(tag_ok && round && truncated && decode_ytag(&bad_version).is_err() && decode_ytag(&nested).is_err() && junk_ok) {
            failures += 1;
        }
    }
    let m = format!("{failures} failures over {FRAMES} fuzzed frames");
    if failures == 0 {
        Ok(m)
    } else {
        Err(m)
    }
}

/// Parses `3A=1 3B=-` into link -> AP.
fn snapshot(r: &TraceRecord) -> BTreeMap<String, Option<String>> {
    r.detail
        .split(' ')
        .filter_map(|kv| kv.split_once('='))
        .map(|(l, a)| (l.to_string(), (a != "-").then(|| a.to_string())))
        .collect()
}

fn roaming_invariants() -> Outcome {
    let out = run(&topology::scenario3(), true, false);
    let recs = out.trace.records();
    // (a) reassociation intervals per station are disjoint
    let mut open: HashMap<&str, u64> = HashMap::new();
    let mut intervals = 0;
    let mut overlap = false;
    for r in recs.iter().filter(|r| r.kind == "reassoc") {
        match r.verdict.as_str() {
            "start" => {
                overlap |= open.contains_key(r.node.as_str());
                open.insert(r.node.as_str(), r.time.0);
            }
            "done" | "failed" => {
                intervals += usize::from(open.remove(r.node.as_str()).is_some());
            }
            _ => {}
        }
    }
    // (b), (d) and the three transition kinds
    let snaps: Vec<BTreeMap<String, Option<String>>> = recs.iter().filter(|r| r.kind == "assoc").map(snapshot).collect();
    let always_one = snaps.iter().all(|s| s.values().any(Option::is_some));
    let mut jump = false;
    let mut kinds = HashSet::new();
    let full: Vec<HashSet<&String>> = snaps
        .iter()
        .filter(|s| s.values().all(Option::is_some))
        .map(|s| s.values().flatten().collect())
        .collect();
    for w in snaps.windows(2) {
        let changed = w[0].iter().filter(|(k, v)| w[1].get(*k) != Some(v)).count();
        jump |= changed > 1;
    }
    for w in full.windows(2) {
        let kind = match (w[0].len(), w[1].len()) {
            (1, 1) => {
                jump |= w[0] != w[1];
                "single->single"
            }
            (1, _) => "single->multi",
            (_, 1) => "multi->single",
            _ => "multi->multi",
        };
        kinds.insert(kind);
    }
    // (c) no frame delivered twice
    let mut seen = HashSet::new();
    let doubles = recs.iter().filter(|r| r.kind == "deliver").filter(|r| !seen.insert(r.frame)).count();
    let lossless_delivery = out.report.flows.iter().all(|f| f.offered == f.delivered + f.lost + f.in_flight);
    let ok = !overlap
        && intervals == 3
        && open.is_empty()
        && always_one
        && !jump
        && doubles == 0
        && lossless_delivery
        && ["single->multi", "multi->multi", "multi->single"].iter().all(|k| kinds.contains(k));
    let m = format!(
        "{intervals} disjoint intervals (overlap={overlap}), always associated={always_one}, {doubles} double deliveries, jump={jump}, transitions={:?}",
        {
            let mut k: Vec<_> = kinds.into_iter().collect();
            k.sort();
            k
        }
    );
    if ok {
        Ok(m)
    } else {
        Err(m)
    }
}

/// A scenario with a legacy Wi-Fi node and two HR STAs talking to each other.
fn mixed() -> ScenarioSpec {
    let text = r#"{
      "name": "mixed", "seed": 3,
      "nodes": [
        {"kind": "switch", "id": 10, "name": "sw"},
        {"kind": "hr_ap", "id": 1, "name": "1", "mac": "02:00:00:00:01:00", "switch": "sw",
         "links": [{"name": "1A", "mac": "02:00:00:00:01:0a", "channel": 1},
                   {"name": "1B", "mac": "02:00:00:00:01:0b", "channel": 2},
                   {"name": "1C", "mac": "02:00:00:00:01:0c", "channel": 1}]},
        {"kind": "hr_ap", "id": 2, "name": "2", "mac": "02:00:00:00:02:00", "switch": "sw",
         "links": [{"name": "2A", "mac": "02:00:00:00:02:0a", "channel": 1},
                   {"name": "2B", "mac": "02:00:00:00:02:0b", "channel": 2}]},
        {"kind": "hr_sta", "id": 3, "name": "3", "primary": "3B",
         "links": [{"name": "3A", "mac": "02:00:00:00:03:0a", "channel": 1, "associate": "2"},
                   {"name": "3B", "mac": "02:00:00:00:03:0b", "channel": 2, "associate": "1"}]},
        {"kind": "hr_sta", "id": 5, "name": "5", "primary": "5A",
         "links": [{"name": "5A", "mac": "02:00:00:00:05:0a", "channel": 1, "associate": "1"},
                   {"name": "5B", "mac": "02:00:00:00:05:0b", "channel": 2, "associate": "2"}]},
        {"kind": "legacy_eth", "id": 4, "name": "4", "mac": "02:00:00:00:00:04", "switch": "sw"},
        {"kind": "legacy_sta", "id": 6, "name": "6", "mac": "02:00:00:00:00:06", "channel": 1, "associate": "1"}
      ],
      "flows": [
        {"name": "3to5", "src": "3", "dst": "5", "rc": {"reliable": 2}, "period_ns": 1000000, "count": 500},
        {"name": "5to4", "src": "5", "dst": "4", "rc": {"reliable": 2}, "period_ns": 1000000, "count": 500},
        {"name": "3to6", "src": "3", "dst": "6", "rc": {"reliable": 2}, "period_ns": 1000000, "count": 500},
        {"name": "6to3", "src": "6", "dst": "3", "rc": "best_effort", "period_ns": 1000000, "count": 500},
        {"name": "4to5", "src": "4", "dst": "5", "rc": {"reliable": 2}, "period_ns": 1000000, "count": 500, "start_ns": 250000}
      ],
      "roaming": [{"at_ns": 100000000, "sta": "5", "link": "5A", "target_ap": "2"}]
    }"#;
    ScenarioSpec::from_json(text).expect("mixed scenario parses")
}

fn all_scenarios() -> Vec<ScenarioSpec> {
    let mut v: Vec<ScenarioSpec> = topology::PRESETS.iter().map(|p| topology::preset(p).expect("preset")).collect();
    v.push(mixed());
    v
}

fn transparency() -> Outcome {
    let mut violations = 0u64;
    let mut checked = 0u64;
    let mut msgs = vec![];
    for spec in all_scenarios() {
        let primary: HashMap<String, String> = spec
            .nodes
            .iter()
            .filter_map(|n| match n {
                NodeSpec::HrSta { name, links, primary, .. } => {
                    links.iter().find(|l| &l.name == primary).map(|l| (name.clone(), l.mac.to_string()))
                }
                _ => None,
            })
            .collect();
        let legacy = topology::names_of(&spec, "legacy");
        let src_of: HashMap<String, String> = spec.flows.iter().map(|f| (f.name.clone(), f.src.clone())).collect();
        for seed in [1, 2] {
            let mut s = spec.clone();
            s.seed = seed;
            let out = run(&s, true, false);
            violations += out.report.transparency_violations;
            // independent check from the trace: offered flow per frame, SA on delivery
            let mut flow_of: HashMap<u64, String> = HashMap::new();
            for r in out.trace.records() {
                if r.kind == "app" && r.verdict == "offered" {
                    flow_of.insert(r.frame.unwrap_or(0), r.detail_value("flow").unwrap_or("").to_string());
                }
                if r.kind == "deliver" && legacy.contains(&r.node) {
                    checked += 1;
                    let flow = &flow_of[&r.frame.unwrap_or(0)];
                    if let Some(expected) = primary.get(&src_of[flow]) {
                        if r.detail_value("sa") != Some(expected.as_str()) {
                            violations += 1;
                        }
                    }
                }
            }
        }
        msgs.push(spec.name.clone());
    }
    let m = format!("{violations} violations over {checked} legacy deliveries in {}", msgs.join(", "));
    if violations == 0 && checked > 0 {
        Ok(m)
    } else {
        Err(m)
    }
}

fn fingerprint(spec: &ScenarioSpec) -> (String, String, String) {
    let out = run(spec, true, false);
    let r: &Report = &out.report;
    (out.trace.render(), r.to_json(), r.to_csv())
}

fn determinism() -> Outcome {
    let mut differing = vec![];
    let mut bytes = 0;
    for spec in all_scenarios() {
        let a = fingerprint(&spec);
        let b = fingerprint(&spec);
        bytes += a.0.len();
        if a != b {
            differing.push(spec.name.clone());
        }
    }
    if differing.is_empty() {
        Ok(format!("all scenarios identical across reruns ({bytes} trace bytes)"))
    } else {
        Err(format!("differs: {}", differing.join(", ")))
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("redundancy gain", redundancy_gain),
        ("ARQ residual loss", arq_oracle),
        ("latency dominance", latency_dominance),
        ("distributed relay golden trace", golden_trace),
        ("dedup oracle equivalence", dedup_oracle),
        ("Y-TAG codec", codec),
        ("roaming invariants", roaming_invariants),
        ("transparency", transparency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = std::time::Instant::now();
        let r = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(m) => println!("[{}/9] PASS {name}: {m} ({secs:.1}s)", i + 1),
            Err(m) => {
                failed += 1;
                println!("[{}/9] FAIL {name}: {m} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
