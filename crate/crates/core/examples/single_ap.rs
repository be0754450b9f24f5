//! Both links of one HR station on a single AP: duplicates are eliminated
//! at the AP and at the station, and no Y-TAG traffic appears.

use hr_wifi::frames::ReliabilityCategory;
use hr_wifi::topology::{self, BuildOptions};

fn main() {
    for rc in [ReliabilityCategory::BestEffort, ReliabilityCategory::Reliable(2)] {
        let mut spec = topology::scenario1();
        spec.defaults.wireless.retry_limit = 0;
        for f in &mut spec.flows {
            f.rc = rc;
            f.count = 20_000;
        }
        let out = topology::build(&spec, BuildOptions::default()).unwrap().run().unwrap();
        for f in &out.report.flows {
            println!(
                "{rc:?} {:4}: loss {:.4} dups {:5} relays {} p99 {} ns",
                f.name,
                f.loss_ratio,
                f.duplicates_discarded,
                f.ytag_relays,
                f.latency_p99_ns.unwrap_or(0)
            );
        }
    }
}
