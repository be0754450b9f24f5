//! One uplink frame through two APs: AP 2 relays its copy to the primary
//! AP in a Y-TAG, the primary AP forwards the first copy and drops the
//! other. Prints the event trace.

use hr_wifi::topology::{self, BuildOptions};

fn main() {
    let sim = topology::build(&topology::relay_demo(), BuildOptions { trace: true, record_copies: true }).unwrap();
    let out = sim.run().unwrap();
    print!("{}", out.trace.render());
    for c in out.metrics.copies() {
        println!("copy of frame {} at {} t={} passed={}", c.frame, c.node, c.time_ns, c.passed);
    }
}
