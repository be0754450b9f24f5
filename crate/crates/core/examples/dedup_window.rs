//! Feeds a recovery window with duplicates, reordering, a sequence number
//! wrap and a copy that arrives too late.

use hr_wifi::dedup::DedupState;
use hr_wifi::engine::SimTime;

fn main() {
    let mut w = DedupState::new(64);
    let arrivals: [(u16, &str); 9] = [
        (65533, "first copy"),
        (65533, "second copy"),
        (65535, "skips one"),
        (65534, "late but in window"),
        (0, "wraps"),
        (65535, "duplicate after wrap"),
        (63, "advances the window"),
        (0, "63 behind, already seen"),
        (65535, "64 behind"),
    ];
    for (t, (seq, note)) in arrivals.into_iter().enumerate() {
        let v = w.accept(seq, SimTime(t as u64));
        println!("seq {seq:5} {:8} {note}", format!("{v:?}"));
    }
    println!("{:?}", w.counters());
}
