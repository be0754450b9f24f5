//! Residual loss and delivery delay of the retransmitting wireless link for
//! a few loss probabilities and retry limits.
//!
//! cargo run --example arq_channel -- [frames]

use hr_wifi::channel::{Outcome, WirelessLink, WirelessParams};
use hr_wifi::engine::{RngStream, SimTime};

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200_000);
    println!("{:>5} {:>3} {:>12} {:>12} {:>14}", "p", "R", "drop ratio", "p^(R+1)", "mean delay us");
    for p in [0.1, 0.2, 0.4] {
        for r in [0, 1, 3, 7] {
            let params = WirelessParams { per_attempt_loss: p, retry_limit: r, ..Default::default() };
            let mut link = WirelessLink::new(params, RngStream::named(1, "arq"));
            let (mut drops, mut delay_sum, mut delivered) = (0u64, 0u64, 0u64);
            for _ in 0..n {
                match link.plan(SimTime::ZERO).outcome {
                    Outcome::DeliveredAt(t) => {
                        delivered += 1;
                        delay_sum += t.as_nanos();
                    }
                    Outcome::DroppedAt(_) => drops += 1,
                }
            }
            println!(
                "{p:5} {r:3} {:12.3e} {:12.3e} {:14.1}",
                drops as f64 / n as f64,
                params.residual_loss(),
                delay_sum as f64 / delivered.max(1) as f64 / 1000.0
            );
        }
    }
}
