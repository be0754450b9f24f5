//! Wireless ARQ link and wired link models.
//!
//! A wireless transmission is a series of attempts. Attempt `k` (1-based)
//! starts at `start + (k-1)·slot` where `slot = airtime + ack_timeout`; on
//! success the frame is received at `start + (k-1)·slot + airtime`. After
//! `1 + retry_limit` failures the MAC gives up at `start + (1+R)·slot`.
//!
//! The attempt outcomes of a transmission are drawn up front, so a paired
//! run that aborts copies consumes the same random draws as one that does
//! not.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Duration, EventHandle, RngStream, Scheduler, SimTime};
use crate::frames::FrameId;

pub const DEFAULT_ATTEMPT_AIRTIME: Duration = Duration::from_micros(300);
pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_micros(100);
pub const DEFAULT_RETRY_LIMIT: u32 = 7;
pub const DEFAULT_WIRED_LATENCY: Duration = Duration::from_micros(10);

/// Two-state burst loss model. Each attempt first moves the chain, then
/// fails with the loss probability of the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GilbertElliott {
    pub p_good_to_bad: f64,
    pub p_bad_to_good: f64,
    pub loss_good: f64,
    pub loss_bad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WirelessParams {
    pub per_attempt_loss: f64,
    pub retry_limit: u32,
    pub attempt_airtime_ns: u64,
    pub ack_timeout_ns: u64,
    /// Replaces the independent per-attempt loss when set.
    pub burst: Option<GilbertElliott>,
}

impl Default for WirelessParams {
    fn default() -> Self {
        WirelessParams {
            per_attempt_loss: 0.15,
            retry_limit: DEFAULT_RETRY_LIMIT,
            attempt_airtime_ns: DEFAULT_ATTEMPT_AIRTIME.as_nanos(),
            ack_timeout_ns: DEFAULT_ACK_TIMEOUT.as_nanos(),
            burst: None,
        }
    }
}

impl WirelessParams {
    pub fn airtime(&self) -> Duration {
        Duration(self.attempt_airtime_ns)
    }
    pub fn ack_timeout(&self) -> Duration {
        Duration(self.ack_timeout_ns)
    }
    pub fn slot(&self) -> Duration {
        Duration(self.attempt_airtime_ns + self.ack_timeout_ns)
    }
    pub fn max_attempts(&self) -> u32 {
        self.retry_limit + 1
    }

    /// Residual MAC loss with independent attempts: `p^(R+1)`.
    pub fn residual_loss(&self) -> f64 {
        self.per_attempt_loss.powi(self.max_attempts() as i32)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.per_attempt_loss) {
            return Err(format!("per_attempt_loss {} outside [0,1]", self.per_attempt_loss));
        }
        if self.attempt_airtime_ns == 0 {
            return Err("attempt_airtime_ns must be positive".into());
        }
        if let Some(ge) = &self.burst {
            for (n, v) in [
                ("p_good_to_bad", ge.p_good_to_bad),
                ("p_bad_to_good", ge.p_bad_to_good),
                ("loss_good", ge.loss_good),
                ("loss_bad", ge.loss_bad),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("burst.{n} {v} outside [0,1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    DeliveredAt(SimTime),
    DroppedAt(SimTime),
}

impl Outcome {
    pub fn time(self) -> SimTime {
        match self {
            Outcome::DeliveredAt(t) | Outcome::DroppedAt(t) => t,
        }
    }
    pub fn delivered(self) -> bool {
        matches!(self, Outcome::DeliveredAt(_))
    }
}

/// Pre-drawn result of one transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxPlan {
    pub start: SimTime,
    /// Attempts performed until success or give-up.
    pub attempts: u32,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub frames: u64,
    pub attempts: u64,
    pub delivered: u64,
    pub mac_drops: u64,
    pub aborted: u64,
    pub airtime_ns: u64,
}

#[derive(Debug, Clone, Copy)]
struct PendingTx {
    frame_id: FrameId,
    plan: TxPlan,
    handle: Option<EventHandle>,
}

pub type TxId = u64;

/// One direction of one wireless association, with its own RNG stream.
#[derive(Debug, Clone)]
pub struct WirelessLink {
    params: WirelessParams,
    rng: RngStream,
    bad_state: bool,
    stats: LinkStats,
    pending: HashMap<TxId, PendingTx>,
    next_tx: TxId,
}

impl WirelessLink {
    pub fn new(params: WirelessParams, rng: RngStream) -> Self {
        WirelessLink {
            params,
            rng,
            bad_state: false,
            stats: LinkStats::default(),
            pending: HashMap::new(),
            next_tx: 0,
        }
    }

    pub fn params(&self) -> &WirelessParams {
        &self.params
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    fn attempt_fails(&mut self) -> bool {
        match self.params.burst {
            None => self.rng.bernoulli(self.params.per_attempt_loss),
            Some(ge) => {
                let flip = if self.bad_state { ge.p_bad_to_good } else { ge.p_good_to_bad };
                if self.rng.bernoulli(flip) {
                    self.bad_state = !self.bad_state;
                }
                let p = if self.bad_state { ge.loss_bad } else { ge.loss_good };
                self.rng.bernoulli(p)
            }
        }
    }

    /// Draws the attempt outcomes of one frame sent at `now`.
    pub fn plan(&mut self, now: SimTime) -> TxPlan {
        let slot = self.params.slot().as_nanos();
        let max = self.params.max_attempts();
        for k in 1..=max {
            if !self.attempt_fails() {
                let at = now + Duration((u64::from(k) - 1) * slot + self.params.attempt_airtime_ns);
                return TxPlan { start: now, attempts: k, outcome: Outcome::DeliveredAt(at) };
            }
        }
        TxPlan {
            start: now,
            attempts: max,
            outcome: Outcome::DroppedAt(now + Duration(u64::from(max) * slot)),
        }
    }

    /// Starts tracking a transmission; the caller schedules the outcome
    /// event and hands its handle to [`WirelessLink::attach`].
    pub fn transmit(&mut self, frame_id: FrameId, now: SimTime) -> (TxId, TxPlan) {
        let plan = self.plan(now);
        let id = self.next_tx;
        self.next_tx += 1;
        self.stats.frames += 1;
        self.pending.insert(id, PendingTx { frame_id, plan, handle: None });
        (id, plan)
    }

    pub fn attach(&mut self, tx: TxId, handle: EventHandle) {
        if let Some(p) = self.pending.get_mut(&tx) {
            p.handle = Some(handle);
        }
    }

    /// Called when the outcome event fires.
    pub fn complete(&mut self, tx: TxId) -> Option<TxPlan> {
        let p = self.pending.remove(&tx)?;
        self.charge(p.plan.attempts);
        match p.plan.outcome {
            Outcome::DeliveredAt(_) => self.stats.delivered += 1,
            Outcome::DroppedAt(_) => self.stats.mac_drops += 1,
        }
        Some(p.plan)
    }

    fn charge(&mut self, attempts: u32) {
        self.stats.attempts += u64::from(attempts);
        self.stats.airtime_ns += u64::from(attempts) * self.params.attempt_airtime_ns;
    }

    /// Cancels any transmission of `frame_id` whose outcome lies after
    /// `now`. Attempts started before `now` are still charged.
    pub fn abort<E>(&mut self, frame_id: FrameId, now: SimTime, sched: &mut Scheduler<E>) -> bool {
        let Some((&tx, _)) = self
            .pending
            .iter()
            .filter(|(_, p)| p.frame_id == frame_id && now < p.plan.outcome.time())
            .min_by_key(|(id, _)| **id)
        else {
            return false;
        };
        let p = self.pending.remove(&tx).expect("present");
        if let Some(h) = p.handle {
            sched.cancel(h);
        }
        let slot = self.params.slot().as_nanos();
        let elapsed = now.since(p.plan.start).as_nanos();
        let started = elapsed.div_ceil(slot).min(u64::from(p.plan.attempts)) as u32;
        self.charge(started);
        self.stats.aborted += 1;
        true
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

/// Fixed-latency lossless link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WiredLink {
    pub latency: Duration,
}

impl WiredLink {
    pub fn arrival(&self, now: SimTime) -> SimTime {
        now + self.latency
    }
}
