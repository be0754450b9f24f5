//! Three APs and three reassociations. Prints association changes, primary
//! AP moves and handoffs, then the per-flow summary.

use hr_wifi::topology::{self, BuildOptions};

fn main() {
    let out = topology::build(&topology::scenario3(), BuildOptions { trace: true, record_copies: false })
        .unwrap()
        .run()
        .unwrap();
    let mut last_pap = String::new();
    for r in out.trace.records() {
        let ms = r.time.as_nanos() as f64 / 1e6;
        match r.kind.as_str() {
            "assoc" | "reassoc" | "handoff" => println!("{ms:9.3} ms  {:>2} {:8} {:9} {}", r.node, r.kind, r.verdict, r.detail),
            "pap" => {
                if let Some(p) = r.detail_value("pap") {
                    if p != last_pap {
                        println!("{ms:9.3} ms  primary AP is now {p} ({})", r.detail);
                        last_pap = p.to_string();
                    }
                }
            }
            _ => {}
        }
    }
    for f in &out.report.flows {
        println!("{}: offered {} delivered {} lost {} p99 {:?} ns", f.name, f.offered, f.delivered, f.lost, f.latency_p99_ns);
    }
}
