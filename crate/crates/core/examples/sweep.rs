//! Loss ratio of single-copy and dual-copy delivery over a grid of loss
//! probabilities and retry limits, several seeds per point, run in parallel.

use rayon::prelude::*;

use hr_wifi::frames::ReliabilityCategory;
use hr_wifi::topology::{self, BuildOptions};

fn main() {
    let seeds = 4u64;
    let mut points = vec![];
    for p in [0.1, 0.2, 0.3, 0.5] {
        for r in [0u32, 1, 3] {
            for rc in [ReliabilityCategory::BestEffort, ReliabilityCategory::Reliable(2)] {
                points.push((p, r, rc));
            }
        }
    }
    let rows: Vec<_> = points
        .par_iter()
        .map(|&(p, r, rc)| {
            let (mut lost, mut offered) = (0, 0);
            for seed in 0..seeds {
                let mut spec = topology::scenario2();
                spec.seed = seed;
                spec.set_param("p", &p.to_string()).unwrap();
                spec.set_param("R", &r.to_string()).unwrap();
                for f in &mut spec.flows {
                    f.rc = rc;
                }
                let rep = topology::build(&spec, BuildOptions::default()).unwrap().run().unwrap().report;
                for f in &rep.flows {
                    lost += f.lost;
                    offered += f.offered;
                }
            }
            (p, r, rc, lost as f64 / offered as f64)
        })
        .collect();
    println!("{:>4} {:>2} {:>14} {:>10}", "p", "R", "category", "loss");
    for (p, r, rc, loss) in rows {
        println!("{p:4} {r:2} {:>14} {loss:10.2e}", format!("{rc:?}"));
    }
}
