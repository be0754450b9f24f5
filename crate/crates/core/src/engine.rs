//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, seqno)`; `seqno` is a per-scheduler
//! insertion counter, so simultaneous events fire in FIFO order. Time is an
//! integer nanosecond count.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// A span of simulated time in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Duration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration(self.0.saturating_sub(earlier.0))
    }
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_nanos(ns: u64) -> Self {
        Duration(ns)
    }
    pub const fn from_micros(us: u64) -> Self {
        Duration(us * 1_000)
    }
    pub const fn from_millis(ms: u64) -> Self {
        Duration(ms * 1_000_000)
    }
    pub const fn from_secs(s: u64) -> Self {
        Duration(s * 1_000_000_000)
    }
    pub fn as_nanos(self) -> u64 {
        self.0
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Duration;
    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle returned by [`Scheduler::schedule`]; used to cancel the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seqno(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule at t={at} ns: current time is {now} ns")]
    InThePast { at: SimTime, now: SimTime },
}

struct Entry<E> {
    fire_at: SimTime,
    seqno: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seqno == other.seqno
    }
}
impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so that `BinaryHeap` pops the earliest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seqno.cmp(&self.seqno))
    }
}

/// Time-ordered event queue with cancellation.
pub struct Scheduler<E> {
    now: SimTime,
    next_seqno: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
    processed: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seqno: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events delivered so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::InThePast { at: fire_at, now: self.now });
        }
        let seqno = self.next_seqno;
        self.next_seqno += 1;
        self.heap.push(Entry { fire_at, seqno, payload });
        Ok(EventHandle(seqno))
    }

    pub fn schedule_in(&mut self, delay: Duration, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload).expect("relative schedule is never in the past")
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seqno || self.cancelled.contains(&handle.0) {
            return false;
        }
        if !self.heap.iter().any(|e| e.seqno == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Fire time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Pops the next live event if it fires at or before `until`, advancing
    /// the clock to its fire time.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        self.skip_cancelled();
        if self.heap.peek()?.fire_at > until {
            return None;
        }
        let entry = self.heap.pop()?;
        debug_assert!(entry.fire_at >= self.now);
        self.now = entry.fire_at;
        self.processed += 1;
        Some((entry.fire_at, entry.payload))
    }

    /// Advances the clock without processing anything. Used at run end so
    /// the final time reflects the horizon even if the queue drained early.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Iterates the payloads of all live queued events, in no particular order.
    pub fn pending_payloads(&self) -> impl Iterator<Item = &E> {
        self.heap
            .iter()
            .filter(|e| !self.cancelled.contains(&e.seqno))
            .map(|e| &e.payload)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.remove(&top.seqno) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }
}

/// Receives events from [`run`].
pub trait Handler<E> {
    type Error;
    fn handle(&mut self, sched: &mut Scheduler<E>, now: SimTime, event: E) -> Result<(), Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub events_processed: u64,
    pub final_time: SimTime,
    pub pending_at_end: usize,
}

/// Processes every event with `fire_at <= until`.
pub fn run<E, H: Handler<E>>(
    sched: &mut Scheduler<E>,
    handler: &mut H,
    until: SimTime,
) -> Result<RunSummary, H::Error> {
    let start = sched.processed();
    while let Some((now, ev)) = sched.pop_until(until) {
        handler.handle(sched, now, ev)?;
    }
    Ok(RunSummary {
        events_processed: sched.processed() - start,
        final_time: sched.now(),
        pending_at_end: sched.pending(),
    })
}

/// Stable 64-bit FNV-1a hash, used to derive stream ids from entity names so
/// that adding an entity never shifts another entity's stream.
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One independent pseudo-random stream.
///
/// Identical `(seed, stream_id)` yields the identical draw sequence on every
/// platform (ChaCha8 with the stream selected by `stream_id`).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng, draws: 0 }
    }

    pub fn named(seed: u64, name: &str) -> Self {
        Self::new(seed, stream_id(name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Bernoulli trial with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.draws += 1;
        // Always consume one draw so the stream position depends only on the
        // number of trials, not on `p`.
        let u: f64 = self.rng.gen();
        u < p
    }

    pub fn uniform_u64(&mut self, upper: u64) -> u64 {
        self.draws += 1;
        self.rng.gen_range(0..upper)
    }
}
