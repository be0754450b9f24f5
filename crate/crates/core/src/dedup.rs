//! Sequence numbering and duplicate elimination.
//!
//! The receive side is a vector recovery window: `latest` is the newest
//! sequence number accepted so far and bit `i` of the history records whether
//! `latest - i` has been seen. Sequence numbers compare with 16-bit serial
//! arithmetic: `a` is newer than `b` iff `(a - b) mod 2^16` lies in
//! `1..2^15`.

use std::collections::HashMap;

use serde::Serialize;

use crate::engine::{Duration, SimTime};
use crate::frames::NodeId;

pub const DEFAULT_WINDOW: u16 = 64;
pub const MAX_WINDOW: u16 = 1024;
pub const DEFAULT_STALE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Identifies one replicated stream at an eliminating node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct StreamKey {
    pub origin: NodeId,
    pub direction: Direction,
}

impl StreamKey {
    pub fn new(origin: NodeId, direction: Direction) -> Self {
        StreamKey { origin, direction }
    }
}

/// Per-MLD transmit sequence counters.
#[derive(Debug, Default, Clone)]
pub struct SeqAllocator {
    next: HashMap<NodeId, u16>,
}

impl SeqAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the current counter for `origin` and advances it modulo 2^16.
    pub fn next_seq(&mut self, origin: NodeId) -> u16 {
        let c = self.next.entry(origin).or_insert(0);
        let s = *c;
        *c = c.wrapping_add(1);
        s
    }

    pub fn set(&mut self, origin: NodeId, value: u16) {
        self.next.insert(origin, value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Discard,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DedupCounters {
    pub passed: u64,
    pub discarded: u64,
    pub out_of_window: u64,
    pub resets: u64,
}

impl DedupCounters {
    pub fn total(&self) -> u64 {
        self.passed + self.discarded + self.out_of_window
    }

    pub fn add(&mut self, o: &DedupCounters) {
        self.passed += o.passed;
        self.discarded += o.discarded;
        self.out_of_window += o.out_of_window;
        self.resets += o.resets;
    }
}

/// `true` iff `a` is strictly newer than `b` in serial-number arithmetic.
pub fn seq_newer(a: u16, b: u16) -> bool {
    let d = a.wrapping_sub(b);
    d != 0 && d < 0x8000
}

/// Recovery window for one stream.
#[derive(Debug, Clone)]
pub struct DedupState {
    window: u16,
    latest: Option<u16>,
    /// bit i of word i/64 set => `latest - i` seen.
    history: Vec<u64>,
    last_activity: SimTime,
    counters: DedupCounters,
}

impl DedupState {
    pub fn new(window: u16) -> Self {
        assert!((1..=MAX_WINDOW).contains(&window), "window must be in 1..={MAX_WINDOW}");
        DedupState {
            window,
            latest: None,
            history: vec![0; usize::from(window).div_ceil(64)],
            last_activity: SimTime::ZERO,
            counters: DedupCounters::default(),
        }
    }

    pub fn window(&self) -> u16 {
        self.window
    }
    pub fn latest(&self) -> Option<u16> {
        self.latest
    }
    pub fn last_activity(&self) -> SimTime {
        self.last_activity
    }
    pub fn counters(&self) -> DedupCounters {
        self.counters
    }

    /// Number of sequence numbers currently recorded in the window.
    pub fn tracked(&self) -> usize {
        self.history.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn bit(&self, i: u16) -> bool {
        let i = usize::from(i);
        self.history[i / 64] >> (i % 64) & 1 == 1
    }

    fn set_bit(&mut self, i: u16) {
        let i = usize::from(i);
        self.history[i / 64] |= 1 << (i % 64);
    }

    /// Shifts the history so that bit 0 corresponds to a sequence number
    /// `by` steps newer than the current `latest`.
    fn shift(&mut self, by: u16) {
        if by >= self.window {
            self.history.iter_mut().for_each(|w| *w = 0);
            return;
        }
        let words = usize::from(by) / 64;
        let bits = u32::from(by) % 64;
        let n = self.history.len();
        for i in (0..n).rev() {
            let hi = if i >= words { self.history[i - words] } else { 0 };
            let lo = if i > words { self.history[i - words - 1] } else { 0 };
            self.history[i] = if bits == 0 { hi } else { (hi << bits) | (lo >> (64 - bits)) };
        }
        self.mask_tail();
    }

    fn mask_tail(&mut self) {
        let extra = self.history.len() * 64 - usize::from(self.window);
        if extra > 0 {
            let last = self.history.len() - 1;
            self.history[last] &= u64::MAX >> extra;
        }
    }

    /// Records `seq` without touching the counters. Returns whether it was
    /// new, or `None` if it falls behind the window.
    fn record(&mut self, seq: u16) -> Option<bool> {
        let Some(latest) = self.latest else {
            self.latest = Some(seq);
            self.set_bit(0);
            return Some(true);
        };
        if seq_newer(seq, latest) {
            self.shift(seq.wrapping_sub(latest));
            self.latest = Some(seq);
            self.set_bit(0);
            return Some(true);
        }
        let back = latest.wrapping_sub(seq);
        if back >= self.window {
            return None;
        }
        if self.bit(back) {
            Some(false)
        } else {
            self.set_bit(back);
            Some(true)
        }
    }

    /// Decides whether the copy carrying `seq` is the first one seen.
    /// Copies older than the window are discarded and counted as
    /// out-of-window.
    pub fn accept(&mut self, seq: u16, now: SimTime) -> Verdict {
        self.last_activity = now;
        match self.record(seq) {
            Some(true) => {
                self.counters.passed += 1;
                Verdict::Pass
            }
            Some(false) => {
                self.counters.discarded += 1;
                Verdict::Discard
            }
            None => {
                self.counters.out_of_window += 1;
                Verdict::Discard
            }
        }
    }

    /// Clears the window if the stream has been idle for longer than
    /// `timeout`. Counters survive the reset.
    pub fn reset_if_stale(&mut self, now: SimTime, timeout: Duration) -> bool {
        if self.latest.is_none() || now.since(self.last_activity) <= timeout {
            return false;
        }
        self.latest = None;
        self.history.iter_mut().for_each(|w| *w = 0);
        self.counters.resets += 1;
        true
    }

    /// Sequence numbers currently marked as seen, newest first.
    pub fn seen(&self) -> Vec<u16> {
        let Some(latest) = self.latest else { return vec![] };
        (0..self.window)
            .filter(|&i| self.bit(i))
            .map(|i| latest.wrapping_sub(i))
            .collect()
    }

    /// Merges another window's seen set into this one, oldest first, so a
    /// new eliminator continues where the previous one stopped.
    pub fn absorb(&mut self, seen: &[u16]) {
        for &s in seen.iter().rev() {
            self.record(s);
        }
    }
}

/// All elimination state held by one node.
#[derive(Debug, Clone)]
pub struct DedupTable {
    window: u16,
    stale_timeout: Duration,
    streams: HashMap<StreamKey, DedupState>,
}

impl DedupTable {
    pub fn new(window: u16, stale_timeout: Duration) -> Self {
        DedupTable { window, stale_timeout, streams: HashMap::new() }
    }

    /// Ages the stream's state, then runs [`DedupState::accept`].
    pub fn accept(&mut self, key: StreamKey, seq: u16, now: SimTime) -> Verdict {
        let st = self.streams.entry(key).or_insert_with(|| DedupState::new(self.window));
        st.reset_if_stale(now, self.stale_timeout);
        st.accept(seq, now)
    }

    pub fn get(&self, key: &StreamKey) -> Option<&DedupState> {
        self.streams.get(key)
    }

    pub fn state_mut(&mut self, key: StreamKey) -> &mut DedupState {
        self.streams.entry(key).or_insert_with(|| DedupState::new(self.window))
    }

    /// Per-stream counters, sorted by key.
    pub fn counters(&self) -> Vec<(StreamKey, DedupCounters)> {
        let mut v: Vec<_> = self.streams.iter().map(|(k, s)| (*k, s.counters())).collect();
        v.sort_by_key(|x| x.0);
        v
    }

    pub fn totals(&self) -> DedupCounters {
        let mut t = DedupCounters::default();
        for s in self.streams.values() {
            t.add(&s.counters());
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    const T0: SimTime = SimTime(0);

    #[test]
    fn counter_starts_at_zero_and_wraps() {
        let mut a = SeqAllocator::new();
        let o = NodeId(3);
        assert_eq!((a.next_seq(o), a.next_seq(o), a.next_seq(o)), (0, 1, 2));
        a.set(o, 65535);
        assert_eq!(a.next_seq(o), 65535);
        assert_eq!(a.next_seq(o), 0);
        // independent per origin
        assert_eq!(a.next_seq(NodeId(4)), 0);
    }

    #[test]
    fn serial_comparison() {
        assert!(seq_newer(1, 0));
        assert!(seq_newer(0, 65535));
        assert!(!seq_newer(5, 5));
        assert!(!seq_newer(0, 1));
        assert!(seq_newer(0x7fff, 0));
        assert!(!seq_newer(0x8000, 0));
    }

    #[test]
    fn first_copy_passes_second_discards() {
        let mut s = DedupState::new(64);
        assert_eq!(s.accept(0, T0), Verdict::Pass);
        assert_eq!(s.accept(0, T0), Verdict::Discard);
    }

    #[test]
    fn cross_link_reordering() {
        let mut s = DedupState::new(64);
        let got: Vec<_> = [5, 6, 5].iter().map(|&q| s.accept(q, T0)).collect();
        assert_eq!(got, vec![Verdict::Pass, Verdict::Pass, Verdict::Discard]);
    }

    #[test]
    fn late_unseen_within_window_passes() {
        let mut s = DedupState::new(64);
        s.accept(10, T0);
        s.accept(70, T0);
        assert_eq!(s.accept(7, T0), Verdict::Pass); // 63 behind
        assert_eq!(s.accept(6, T0), Verdict::Discard); // 64 behind
        assert_eq!(s.counters().out_of_window, 1);
        assert_eq!(s.accept(11, T0), Verdict::Pass);
        assert_eq!(s.accept(10, T0), Verdict::Discard);
        assert_eq!(s.counters().out_of_window, 1);
        assert_eq!(s.counters().discarded, 1);
    }

    #[test]
    fn window_edge_is_exact() {
        let mut s = DedupState::new(64);
        s.accept(100, T0);
        s.accept(163, T0); // 100 is 63 behind: still inside
        assert_eq!(s.accept(100, T0), Verdict::Discard);
        assert_eq!(s.counters().out_of_window, 0);
        s.accept(164, T0); // now 64 behind: outside
        assert_eq!(s.accept(100, T0), Verdict::Discard);
        assert_eq!(s.counters().out_of_window, 1);
    }

    #[test]
    fn wraparound() {
        let mut s = DedupState::new(64);
        assert_eq!(s.accept(65534, T0), Verdict::Pass);
        assert_eq!(s.accept(1, T0), Verdict::Pass);
        assert_eq!(s.accept(65535, T0), Verdict::Pass);
        assert_eq!(s.accept(0, T0), Verdict::Pass);
        assert_eq!(s.accept(65534, T0), Verdict::Discard);
        assert_eq!(s.latest(), Some(1));
    }

    #[test]
    fn stale_reset_boundary() {
        let timeout = Duration::from_millis(10);
        let mut s = DedupState::new(64);
        s.accept(3, SimTime(0));
        assert!(!s.reset_if_stale(SimTime(timeout.as_nanos()), timeout));
        assert!(s.reset_if_stale(SimTime(timeout.as_nanos() + 1), timeout));
        assert_eq!(s.tracked(), 0);
        assert_eq!(s.latest(), None);
        // reused sequence number passes again after the reset
        assert_eq!(s.accept(3, SimTime(timeout.as_nanos() + 2)), Verdict::Pass);
    }

    #[test]
    fn table_applies_stale_timeout() {
        let mut t = DedupTable::new(64, Duration::from_millis(1));
        let k = StreamKey::new(NodeId(1), Direction::Uplink);
        assert_eq!(t.accept(k, 9, SimTime(0)), Verdict::Pass);
        assert_eq!(t.accept(k, 9, SimTime(500_000)), Verdict::Discard);
        assert_eq!(t.accept(k, 9, SimTime(2_000_000)), Verdict::Pass);
        let other = StreamKey::new(NodeId(1), Direction::Downlink);
        assert_eq!(t.accept(other, 9, SimTime(2_000_000)), Verdict::Pass);
        assert_eq!(t.totals().passed, 3);
    }

    #[test]
    fn window_never_tracks_more_than_capacity() {
        let mut s = DedupState::new(100);
        for q in 0..500u16 {
            s.accept(q.wrapping_mul(3), T0);
            assert!(s.tracked() <= 100);
        }
    }

    #[test]
    fn absorb_continues_previous_window() {
        let mut old = DedupState::new(64);
        for q in [10, 12, 11, 15] {
            old.accept(q, T0);
        }
        let mut new = DedupState::new(64);
        new.absorb(&old.seen());
        for q in [10, 11, 12, 15] {
            assert_eq!(new.accept(q, T0), Verdict::Discard);
        }
        assert_eq!(new.accept(13, T0), Verdict::Pass);
    }

    #[test]
    fn multiword_window_shift() {
        let mut s = DedupState::new(200);
        let mut oracle = HashSet::new();
        let seqs = [0u16, 70, 5, 130, 64, 199, 1, 70, 260, 100, 61, 62, 250];
        for &q in &seqs {
            let v = s.accept(q, T0);
            let latest = s.latest().unwrap();
            let inside = latest.wrapping_sub(q) < 200;
            let expect = if inside && oracle.insert(q) { Verdict::Pass } else { Verdict::Discard };
            assert_eq!(v, expect, "seq {q}");
        }
    }
}
