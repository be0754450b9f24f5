//! High-reliability station: a non-AP multi-link device.
//!
//! The station replicates frames across its associated affiliated links,
//! eliminates downlink duplicates, and reassociates one link at a time.

use std::collections::VecDeque;

use serde::Serialize;

use crate::dedup::{DedupTable, Direction, StreamKey, Verdict};
use crate::engine::{Duration, SimTime};
use crate::frames::{AffiliatedInfo, Frame, MacAddress, MultiLinkElement, NodeId, ReliabilityCategory};

pub const DEFAULT_REASSOCIATION_DELAY: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Associated { ap: NodeId, ap_link: usize },
    Reassociating { target: NodeId, prior: Option<(NodeId, usize)> },
    Idle,
}

impl LinkState {
    pub fn associated_ap(&self) -> Option<(NodeId, usize)> {
        match *self {
            LinkState::Associated { ap, ap_link } => Some((ap, ap_link)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffiliatedLink {
    pub name: String,
    pub mac: MacAddress,
    pub channel: u16,
    pub state: LinkState,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StaCounters {
    pub app_frames: u64,
    pub copies_sent: u64,
    pub queued: u64,
    pub delivered: u64,
    pub discarded: u64,
    pub ignored: u64,
    pub reassoc_started: u64,
    pub reassoc_completed: u64,
    pub reassoc_failed: u64,
    pub reassoc_deferred: u64,
}

/// Result of handing an application frame to the station.
#[derive(Debug, Clone, PartialEq)]
pub enum SendDecision {
    /// One entry per copy: affiliated link index and the copy to send.
    Transmit(Vec<(usize, Frame)>),
    /// No associated link; the frame waits in the pending queue.
    Queued,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RxOutcome {
    Deliver(Frame),
    Discard,
    Ignored(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReassocStart {
    Started { prior: Option<(NodeId, usize)> },
    /// Another link is reassociating; the trigger runs when it finishes.
    Deferred,
    Rejected(&'static str),
}

#[derive(Debug, Clone)]
pub struct HrSta {
    pub id: NodeId,
    pub name: String,
    pub links: Vec<AffiliatedLink>,
    /// Index of the primary STA, whose MAC identifies the device on the
    /// wired network.
    pub primary: usize,
    next_seq: u16,
    rx: DedupTable,
    pending: VecDeque<Frame>,
    deferred: VecDeque<(usize, NodeId)>,
    pub counters: StaCounters,
}

impl HrSta {
    pub fn new(id: NodeId, name: impl Into<String>, links: Vec<AffiliatedLink>, primary: usize, rx: DedupTable) -> Self {
        assert!(primary < links.len());
        HrSta {
            id,
            name: name.into(),
            links,
            primary,
            next_seq: 0,
            rx,
            pending: VecDeque::new(),
            deferred: VecDeque::new(),
            counters: StaCounters::default(),
        }
    }

    pub fn primary_mac(&self) -> MacAddress {
        self.links[self.primary].mac
    }

    pub fn mle(&self) -> MultiLinkElement {
        MultiLinkElement {
            mld_id: self.id,
            affiliated: self
                .links
                .iter()
                .enumerate()
                .map(|(i, l)| AffiliatedInfo { link_id: i as u8, channel: l.channel, mac: l.mac })
                .collect(),
            primary_sta: self.primary,
        }
    }

    pub fn link_by_mac(&self, mac: MacAddress) -> Option<usize> {
        self.links.iter().position(|l| l.mac == mac)
    }

    pub fn associated_links(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&i| self.links[i].state.associated_ap().is_some())
            .collect()
    }

    /// The primary link if it is associated, else the lowest-index
    /// associated link.
    pub fn effective_primary(&self) -> Option<usize> {
        if self.links[self.primary].state.associated_ap().is_some() {
            return Some(self.primary);
        }
        self.associated_links().first().copied()
    }

    pub fn reassociating(&self) -> Option<usize> {
        self.links
            .iter()
            .position(|l| matches!(l.state, LinkState::Reassociating { .. }))
    }

    /// Links carrying a frame of category `rc`, in ascending index order:
    /// `min(k, associated)` links for `Reliable(k)`, preferring the
    /// effective primary; the effective primary alone for best effort.
    pub fn select_links(&self, rc: ReliabilityCategory) -> Vec<usize> {
        let Some(first) = self.effective_primary() else { return vec![] };
        let mut chosen = vec![first];
        chosen.extend(
            self.associated_links()
                .into_iter()
                .filter(|&i| i != first)
                .take(rc.copies().saturating_sub(1)),
        );
        chosen.sort_unstable();
        chosen
    }

    fn take_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    /// Hands an application frame to the device. Every frame consumes one
    /// number from the shared MLD counter; all of its copies carry it.
    pub fn app_send(&mut self, frame: Frame) -> SendDecision {
        self.counters.app_frames += 1;
        if self.effective_primary().is_none() {
            self.counters.queued += 1;
            self.pending.push_back(frame);
            return SendDecision::Queued;
        }
        SendDecision::Transmit(self.replicate(frame))
    }

    fn replicate(&mut self, mut frame: Frame) -> Vec<(usize, Frame)> {
        frame.mld_seq = self.take_seq();
        frame.origin = self.id;
        let links = self.select_links(frame.rc);
        self.counters.copies_sent += links.len() as u64;
        links
            .into_iter()
            .map(|i| {
                let mut c = frame.clone();
                c.sa = self.links[i].mac;
                (i, c)
            })
            .collect()
    }

    /// Releases frames queued while no link was associated.
    pub fn flush_pending(&mut self) -> Vec<Vec<(usize, Frame)>> {
        let mut out = vec![];
        while self.effective_primary().is_some() {
            let Some(f) = self.pending.pop_front() else { break };
            out.push(self.replicate(f));
        }
        out
    }

    pub fn pending(&self) -> impl Iterator<Item = &Frame> {
        self.pending.iter()
    }

    /// Downlink reception on affiliated link `link`.
    pub fn on_air_receive(&mut self, link: usize, frame: Frame, now: SimTime) -> RxOutcome {
        let Some(l) = self.links.get(link) else {
            self.counters.ignored += 1;
            return RxOutcome::Ignored("no such link");
        };
        if frame.da != l.mac {
            self.counters.ignored += 1;
            return RxOutcome::Ignored("da mismatch");
        }
        if l.state.associated_ap().is_none() {
            self.counters.ignored += 1;
            return RxOutcome::Ignored("link not associated");
        }
        let key = StreamKey::new(frame.origin, Direction::Downlink);
        match self.rx.accept(key, frame.mld_seq, now) {
            Verdict::Pass => {
                self.counters.delivered += 1;
                RxOutcome::Deliver(frame)
            }
            Verdict::Discard => {
                self.counters.discarded += 1;
                RxOutcome::Discard
            }
        }
    }

    pub fn rx_dedup(&self) -> &DedupTable {
        &self.rx
    }

    /// Starts moving `link` to `target`. Only one link may reassociate at a
    /// time; a second trigger is deferred until the ongoing one finishes.
    pub fn start_reassociation(&mut self, link: usize, target: NodeId) -> ReassocStart {
        if link >= self.links.len() {
            return ReassocStart::Rejected("no such link");
        }
        if let Some(busy) = self.reassociating() {
            if busy == link {
                return ReassocStart::Rejected("link already reassociating");
            }
            self.counters.reassoc_deferred += 1;
            self.deferred.push_back((link, target));
            return ReassocStart::Deferred;
        }
        let prior = self.links[link].state.associated_ap();
        if prior.map(|p| p.0) == Some(target) {
            return ReassocStart::Rejected("already associated to target");
        }
        self.links[link].state = LinkState::Reassociating { target, prior };
        self.counters.reassoc_started += 1;
        ReassocStart::Started { prior }
    }

    /// Finishes the ongoing reassociation of `link`. `ap_link` is the
    /// target AP link that accepted it, or `None` if the target had no
    /// compatible free link, in which case the prior association is
    /// restored. Returns the new state and the next deferred trigger.
    pub fn complete_reassociation(&mut self, link: usize, ap_link: Option<usize>) -> (LinkState, Option<(usize, NodeId)>) {
        let LinkState::Reassociating { target, prior } = self.links[link].state else {
            return (self.links[link].state, None);
        };
        let state = match ap_link {
            Some(al) => {
                self.counters.reassoc_completed += 1;
                LinkState::Associated { ap: target, ap_link: al }
            }
            None => {
                self.counters.reassoc_failed += 1;
                match prior {
                    Some((ap, al)) => LinkState::Associated { ap, ap_link: al },
                    None => LinkState::Idle,
                }
            }
        };
        self.links[link].state = state;
        (state, self.deferred.pop_front())
    }

    /// `(link name, associated AP)` pairs; `None` while not associated.
    pub fn snapshot(&self) -> Vec<(String, Option<NodeId>)> {
        self.links
            .iter()
            .map(|l| (l.name.clone(), l.state.associated_ap().map(|a| a.0)))
            .collect()
    }
}
