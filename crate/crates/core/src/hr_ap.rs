//! High-reliability access point.
//!
//! Every AP keeps its own copy of the association table for all HR STAs,
//! kept in sync by notifications over the wired network. For each HR STA
//! exactly one serving AP, the primary AP (P-AP), eliminates uplink
//! duplicates and replicates downlink frames. Non-primary serving APs relay
//! what they receive on air to the P-AP inside a Y-TAG, and transmit on air
//! what the P-AP relays to them.
//!
//! When the P-AP changes, the old one hands its elimination window to the
//! new one. The new P-AP buffers traffic for that station until the handoff
//! arrives (or a timeout expires), so two APs never eliminate the same
//! stream at once.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::dedup::{DedupTable, Direction, StreamKey, Verdict};
use crate::engine::{Duration, SimTime};
use crate::frames::{
    rewrite_egress, untag, Egress, Frame, MacAddress, MultiLinkElement, NodeId, ReliabilityCategory, YTag,
    L2_UPDATE_ETHER_TYPE,
};

pub const DEFAULT_HANDOFF_TIMEOUT: Duration = Duration::from_millis(5);

/// One change of one affiliated link's association, as distributed among APs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssocUpdate {
    pub sta: NodeId,
    pub mle: MultiLinkElement,
    pub link: usize,
    pub assoc: Option<(NodeId, usize)>,
}

#[derive(Debug, Clone)]
pub struct StaEntry {
    pub mle: MultiLinkElement,
    /// STA link index -> (AP, AP link).
    pub links: BTreeMap<usize, (NodeId, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Election {
    pub ap: NodeId,
    /// The primary STA link is not associated; the lowest serving AP id was
    /// chosen instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AssociationTable {
    entries: BTreeMap<NodeId, StaEntry>,
    by_mac: HashMap<MacAddress, (NodeId, usize)>,
}

impl AssociationTable {
    pub fn apply(&mut self, u: &AssocUpdate) {
        let e = self.entries.entry(u.sta).or_insert_with(|| StaEntry { mle: u.mle.clone(), links: BTreeMap::new() });
        e.mle = u.mle.clone();
        for (i, a) in u.mle.affiliated.iter().enumerate() {
            self.by_mac.insert(a.mac, (u.sta, i));
        }
        match u.assoc {
            Some(a) => {
                e.links.insert(u.link, a);
            }
            None => {
                e.links.remove(&u.link);
            }
        }
    }

    pub fn entry(&self, sta: NodeId) -> Option<&StaEntry> {
        self.entries.get(&sta)
    }

    pub fn stations(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    /// HR STA and link index owning `mac`.
    pub fn by_mac(&self, mac: MacAddress) -> Option<(NodeId, usize)> {
        self.by_mac.get(&mac).copied()
    }

    pub fn serving_aps(&self, sta: NodeId) -> BTreeSet<NodeId> {
        self.entries
            .get(&sta)
            .map(|e| e.links.values().map(|a| a.0).collect())
            .unwrap_or_default()
    }

    /// The AP serving the primary STA link, or the lowest serving AP id if
    /// the primary link is not associated.
    pub fn elect_pap(&self, sta: NodeId) -> Option<Election> {
        let e = self.entries.get(&sta)?;
        if let Some(&(ap, _)) = e.links.get(&e.mle.primary_sta) {
            return Some(Election { ap, fallback: false });
        }
        self.serving_aps(sta)
            .into_iter()
            .next()
            .map(|ap| Election { ap, fallback: true })
    }

    /// Links to carry a frame of category `rc`, mirroring the station's own
    /// selection rule.
    pub fn downlink_links(&self, sta: NodeId, rc: ReliabilityCategory) -> Vec<(usize, NodeId, usize)> {
        let Some(e) = self.entries.get(&sta) else { return vec![] };
        let first = if e.links.contains_key(&e.mle.primary_sta) {
            e.mle.primary_sta
        } else if let Some((&i, _)) = e.links.iter().next() {
            i
        } else {
            return vec![];
        };
        let mut chosen = vec![first];
        chosen.extend(e.links.keys().copied().filter(|&i| i != first).take(rc.copies().saturating_sub(1)));
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|i| {
                let (ap, al) = e.links[&i];
                (i, ap, al)
            })
            .collect()
    }
}

/// Public view of an AP's role for one HR STA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PapRole {
    Primary,
    NonPrimary,
    NotServing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RoleState {
    NotServing,
    NonPrimary { pap: NodeId },
    /// Elected, waiting for the previous P-AP's window.
    Pending { epoch: u64 },
    Primary,
}

#[derive(Debug, Clone)]
enum Parked {
    Uplink(Frame),
    Downlink(Frame),
}

impl Parked {
    fn frame(&self) -> &Frame {
        match self {
            Parked::Uplink(f) | Parked::Downlink(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ApCounters {
    pub eliminated_pass: u64,
    pub eliminated_discard: u64,
    pub ytag_sent: u64,
    pub ytag_received: u64,
    pub relay_suppressed: u64,
    pub misdirected: u64,
    pub unassociated: u64,
    pub malformed: u64,
    pub no_route: u64,
    pub not_primary_ignored: u64,
    pub handoffs_sent: u64,
    pub handoffs_received: u64,
    pub handoff_timeouts: u64,
    pub parked: u64,
    pub downlink_replicated: u64,
}

/// Why a frame stopped at this AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Unassociated,
    Misdirected,
    Malformed,
    NoRoute,
    NotPrimary,
    NotForMe,
    RelaySuppressed,
    RoleLost,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Unassociated => "unassociated",
            DropReason::Misdirected => "misdirected",
            DropReason::Malformed => "malformed",
            DropReason::NoRoute => "no_route",
            DropReason::NotPrimary => "not_primary",
            DropReason::NotForMe => "ignored",
            DropReason::RelaySuppressed => "relay_suppressed",
            DropReason::RoleLost => "role_lost",
        }
    }
}

/// Side effects requested by the AP, applied by the simulation in order.
#[derive(Debug, Clone)]
pub enum ApAction {
    AirTx { ap_link: usize, frame: Frame },
    WireTx { frame: Frame },
    /// Elimination verdict for an uplink copy (the copy as received).
    Eliminated { sta: NodeId, frame: Frame, verdict: Verdict },
    /// A Y-TAG relay was emitted towards `to`.
    Relayed { to: NodeId, frame: Frame, downlink: bool },
    Decapsulated { frame: Frame, tag: YTag },
    Parked { sta: NodeId, frame: Frame },
    Dropped { frame: Frame, reason: DropReason },
    Notify { update: AssocUpdate },
    Handoff { to: NodeId, sta: NodeId, seen: Vec<u16> },
    HandoffTimer { sta: NodeId, epoch: u64 },
    RoleChanged { sta: NodeId, role: PapRole, pap: Option<NodeId>, fallback: bool },
}

#[derive(Debug, Clone)]
pub struct ApLinkInfo {
    pub name: String,
    pub mac: MacAddress,
    pub channel: u16,
}

#[derive(Debug, Clone)]
pub struct HrAp {
    pub id: NodeId,
    pub name: String,
    pub wired_mac: MacAddress,
    pub links: Vec<ApLinkInfo>,
    pub table: AssociationTable,
    /// Wired MAC of every HR AP, for addressing relays.
    ap_macs: BTreeMap<NodeId, MacAddress>,
    roles: BTreeMap<NodeId, RoleState>,
    last_pap: BTreeMap<NodeId, NodeId>,
    dedup: DedupTable,
    relay_filter: DedupTable,
    next_seq: u16,
    stash: BTreeMap<NodeId, Vec<u16>>,
    parked: BTreeMap<NodeId, Vec<Parked>>,
    legacy: BTreeMap<MacAddress, usize>,
    epoch: u64,
    pub handoff_timeout: Duration,
    pub counters: ApCounters,
}

impl HrAp {
    pub fn new(
        id: NodeId,
        name: impl Into<String>,
        wired_mac: MacAddress,
        links: Vec<ApLinkInfo>,
        dedup: DedupTable,
    ) -> Self {
        let relay_filter = dedup.clone();
        HrAp {
            id,
            name: name.into(),
            wired_mac,
            links,
            table: AssociationTable::default(),
            ap_macs: BTreeMap::new(),
            roles: BTreeMap::new(),
            last_pap: BTreeMap::new(),
            dedup,
            relay_filter,
            next_seq: 0,
            stash: BTreeMap::new(),
            parked: BTreeMap::new(),
            legacy: BTreeMap::new(),
            epoch: 0,
            handoff_timeout: DEFAULT_HANDOFF_TIMEOUT,
            counters: ApCounters::default(),
        }
    }

    pub fn set_ap_directory(&mut self, macs: BTreeMap<NodeId, MacAddress>) {
        self.ap_macs = macs;
    }

    pub fn attach_legacy(&mut self, mac: MacAddress, ap_link: usize) {
        self.legacy.insert(mac, ap_link);
    }

    pub fn detach_legacy(&mut self, mac: MacAddress) {
        self.legacy.remove(&mac);
    }

    pub fn role(&self, sta: NodeId) -> PapRole {
        match self.roles.get(&sta) {
            Some(RoleState::Primary) | Some(RoleState::Pending { .. }) => PapRole::Primary,
            Some(RoleState::NonPrimary { .. }) => PapRole::NonPrimary,
            _ => PapRole::NotServing,
        }
    }

    /// Whether this AP currently eliminates for `sta`.
    pub fn is_active_primary(&self, sta: NodeId) -> bool {
        matches!(self.roles.get(&sta), Some(RoleState::Primary))
    }

    pub fn elimination(&self) -> &DedupTable {
        &self.dedup
    }

    pub fn parked_frames(&self) -> impl Iterator<Item = &Frame> {
        self.parked.values().flatten().map(Parked::frame)
    }

    fn take_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    // ---- association management ----

    /// Initial table contents, applied before the run with no side effects
    /// besides role assignment.
    pub fn seed_association(&mut self, u: &AssocUpdate) {
        self.table.apply(u);
    }

    pub fn seed_roles(&mut self) {
        let stas: Vec<_> = self.table.stations().collect();
        for sta in stas {
            let e = self.table.elect_pap(sta);
            let state = match e {
                Some(e) if e.ap == self.id => RoleState::Primary,
                Some(e) if self.table.serving_aps(sta).contains(&self.id) => RoleState::NonPrimary { pap: e.ap },
                _ => RoleState::NotServing,
            };
            if let Some(e) = e {
                self.last_pap.insert(sta, e.ap);
            }
            self.roles.insert(sta, state);
        }
    }

    /// A link associated to or left this AP. The change is applied locally
    /// and announced to the other APs.
    pub fn local_association(&mut self, u: AssocUpdate, now: SimTime, out: &mut Vec<ApAction>) {
        self.table.apply(&u);
        out.push(ApAction::Notify { update: u.clone() });
        self.refresh_role(u.sta, now, out);
    }

    /// Association change announced by another AP.
    pub fn on_notify(&mut self, u: &AssocUpdate, now: SimTime, out: &mut Vec<ApAction>) {
        self.table.apply(u);
        self.refresh_role(u.sta, now, out);
    }

    fn refresh_role(&mut self, sta: NodeId, now: SimTime, out: &mut Vec<ApAction>) {
        let election = self.table.elect_pap(sta);
        let new_pap = election.map(|e| e.ap);
        let fallback = election.is_some_and(|e| e.fallback);
        let serving = self.table.serving_aps(sta).contains(&self.id);
        let old = self.roles.get(&sta).copied().unwrap_or(RoleState::NotServing);
        let was_primary = matches!(old, RoleState::Primary | RoleState::Pending { .. });
        let is_primary = new_pap == Some(self.id);
        let previous_pap = self.last_pap.get(&sta).copied();
        if let Some(p) = new_pap {
            self.last_pap.insert(sta, p);
        }

        let passive = |pap: Option<NodeId>| match pap {
            Some(p) if serving => RoleState::NonPrimary { pap: p },
            _ => RoleState::NotServing,
        };

        match (was_primary, is_primary) {
            (true, true) => {}
            (true, false) => {
                let mut seen = self.dedup.get(&StreamKey::new(sta, Direction::Uplink)).map(|s| s.seen()).unwrap_or_default();
                if let Some(extra) = self.stash.remove(&sta) {
                    seen.extend(extra);
                }
                if let Some(p) = new_pap {
                    self.counters.handoffs_sent += 1;
                    out.push(ApAction::Handoff { to: p, sta, seen });
                }
                for p in self.parked.remove(&sta).unwrap_or_default() {
                    let f = match p {
                        Parked::Uplink(f) | Parked::Downlink(f) => f,
                    };
                    self.counters.misdirected += 1;
                    out.push(ApAction::Dropped { frame: f, reason: DropReason::RoleLost });
                }
                let st = passive(new_pap);
                self.roles.insert(sta, st);
                out.push(ApAction::RoleChanged { sta, role: self.role(sta), pap: new_pap, fallback });
            }
            (false, true) => {
                if let Some(seen) = self.stash.remove(&sta) {
                    self.activate(sta, Some(seen), now, out);
                } else if previous_pap.is_some_and(|p| p != self.id) {
                    self.epoch += 1;
                    self.roles.insert(sta, RoleState::Pending { epoch: self.epoch });
                    out.push(ApAction::RoleChanged { sta, role: PapRole::Primary, pap: new_pap, fallback });
                    out.push(ApAction::HandoffTimer { sta, epoch: self.epoch });
                } else {
                    self.activate(sta, None, now, out);
                }
            }
            (false, false) => {
                let st = passive(new_pap);
                if st != old {
                    self.roles.insert(sta, st);
                    out.push(ApAction::RoleChanged { sta, role: self.role(sta), pap: new_pap, fallback });
                }
            }
        }
    }

    fn activate(&mut self, sta: NodeId, seen: Option<Vec<u16>>, now: SimTime, out: &mut Vec<ApAction>) {
        let was_pending = matches!(self.roles.get(&sta), Some(RoleState::Pending { .. }));
        if let Some(seen) = seen {
            let st = self.dedup.state_mut(StreamKey::new(sta, Direction::Uplink));
            st.absorb(&seen);
        }
        self.roles.insert(sta, RoleState::Primary);
        if !was_pending {
            let fallback = self.table.elect_pap(sta).is_some_and(|e| e.fallback);
            out.push(ApAction::RoleChanged { sta, role: PapRole::Primary, pap: Some(self.id), fallback });
        }
        // Switches learn the primary MAC behind this AP from now on.
        if let Some(e) = self.table.entry(sta) {
            let mut upd = Frame::new(MacAddress::BROADCAST, e.mle.primary_mac(), vec![]);
            upd.ether_type = L2_UPDATE_ETHER_TYPE;
            upd.created_at = now;
            out.push(ApAction::WireTx { frame: upd });
        }
        for p in self.parked.remove(&sta).unwrap_or_default() {
            match p {
                Parked::Uplink(f) => self.eliminate_uplink(sta, f, now, out),
                Parked::Downlink(f) => self.replicate_downlink(sta, f, out),
            }
        }
    }

    /// Elimination window handed over by the previous P-AP.
    pub fn on_handoff(&mut self, sta: NodeId, seen: Vec<u16>, now: SimTime, out: &mut Vec<ApAction>) {
        self.counters.handoffs_received += 1;
        match self.roles.get(&sta) {
            Some(RoleState::Pending { .. }) => self.activate(sta, Some(seen), now, out),
            Some(RoleState::Primary) => {
                self.dedup.state_mut(StreamKey::new(sta, Direction::Uplink)).absorb(&seen);
            }
            _ => {
                self.stash.entry(sta).or_default().extend(seen);
            }
        }
    }

    pub fn on_handoff_timeout(&mut self, sta: NodeId, epoch: u64, now: SimTime, out: &mut Vec<ApAction>) {
        if self.roles.get(&sta) == Some(&RoleState::Pending { epoch }) {
            self.counters.handoff_timeouts += 1;
            self.activate(sta, None, now, out);
        }
    }

    fn park(&mut self, sta: NodeId, p: Parked, out: &mut Vec<ApAction>) {
        self.counters.parked += 1;
        out.push(ApAction::Parked { sta, frame: p.frame().clone() });
        self.parked.entry(sta).or_default().push(p);
    }

    // ---- data path ----

    /// Frame received on affiliated AP link `ap_link`.
    pub fn on_air_receive(&mut self, ap_link: usize, frame: Frame, now: SimTime, out: &mut Vec<ApAction>) {
        if let Some((sta, l)) = self.table.by_mac(frame.sa) {
            let here = self.table.entry(sta).and_then(|e| e.links.get(&l)).copied();
            if here != Some((self.id, ap_link)) {
                self.counters.unassociated += 1;
                out.push(ApAction::Dropped { frame, reason: DropReason::Unassociated });
                return;
            }
            match self.roles.get(&sta).copied().unwrap_or(RoleState::NotServing) {
                RoleState::Primary => self.eliminate_uplink(sta, frame, now, out),
                RoleState::Pending { .. } => self.park(sta, Parked::Uplink(frame), out),
                RoleState::NonPrimary { pap } => self.relay_uplink(sta, pap, frame, now, out),
                RoleState::NotServing => {
                    self.counters.unassociated += 1;
                    out.push(ApAction::Dropped { frame, reason: DropReason::Unassociated });
                }
            }
        } else if self.legacy.get(&frame.sa) == Some(&ap_link) {
            self.forward(frame, now, out);
        } else {
            self.counters.unassociated += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::Unassociated });
        }
    }

    fn relay_uplink(&mut self, sta: NodeId, pap: NodeId, frame: Frame, now: SimTime, out: &mut Vec<ApAction>) {
        // at most one relay per frame from this AP
        if self.relay_filter.accept(StreamKey::new(sta, Direction::Uplink), frame.mld_seq, now) == Verdict::Discard {
            self.counters.relay_suppressed += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::RelaySuppressed });
            return;
        }
        let Some(&pap_mac) = self.ap_macs.get(&pap) else {
            self.counters.no_route += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::NoRoute });
            return;
        };
        let tag = YTag::new(frame.da, frame.mld_seq);
        match frame.tagged(pap_mac, self.wired_mac, tag) {
            Ok(t) => {
                self.counters.ytag_sent += 1;
                out.push(ApAction::Relayed { to: pap, frame: t.clone(), downlink: false });
                out.push(ApAction::WireTx { frame: t });
            }
            Err(_) => {
                self.counters.malformed += 1;
                out.push(ApAction::Dropped { frame, reason: DropReason::Malformed });
            }
        }
    }

    /// Elimination at the P-AP, then relay with `SA := primary STA MAC`.
    fn eliminate_uplink(&mut self, sta: NodeId, frame: Frame, now: SimTime, out: &mut Vec<ApAction>) {
        let verdict = self.dedup.accept(StreamKey::new(sta, Direction::Uplink), frame.mld_seq, now);
        out.push(ApAction::Eliminated { sta, frame: frame.clone(), verdict });
        match verdict {
            Verdict::Pass => {
                self.counters.eliminated_pass += 1;
                let Some(entry) = self.table.entry(sta) else { return };
                let fwd = match rewrite_egress(&frame, &entry.mle, Egress::Ethernet) {
                    Ok(f) => f,
                    // relayed copies carry the relaying AP's SA
                    Err(_) => {
                        let mut f = frame;
                        f.sa = entry.mle.primary_mac();
                        f
                    }
                };
                self.forward(fwd, now, out);
            }
            Verdict::Discard => self.counters.eliminated_discard += 1,
        }
    }

    /// Sends an already de-duplicated frame towards its DA.
    fn forward(&mut self, frame: Frame, _now: SimTime, out: &mut Vec<ApAction>) {
        if !frame.da.is_multicast() {
            if let Some((target, _)) = self.table.by_mac(frame.da) {
                match self.roles.get(&target).copied() {
                    Some(RoleState::Primary) => return self.replicate_downlink(target, frame, out),
                    Some(RoleState::Pending { .. }) => return self.park(target, Parked::Downlink(frame), out),
                    _ => {}
                }
            } else if let Some(&al) = self.legacy.get(&frame.da) {
                out.push(ApAction::AirTx { ap_link: al, frame });
                return;
            }
        }
        out.push(ApAction::WireTx { frame });
    }

    /// Downlink replication by the P-AP: copies on local links go straight
    /// to the air; copies for links served by other APs travel there in one
    /// Y-TAG relay per AP.
    fn replicate_downlink(&mut self, target: NodeId, mut frame: Frame, out: &mut Vec<ApAction>) {
        let links = self.table.downlink_links(target, frame.rc);
        let Some(entry) = self.table.entry(target) else { return };
        let mle = entry.mle.clone();
        if links.is_empty() {
            self.counters.no_route += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::NoRoute });
            return;
        }
        frame.mld_seq = self.take_seq();
        frame.origin = self.id;
        frame.da = mle.primary_mac();
        self.counters.downlink_replicated += 1;
        let mut remote: Vec<NodeId> = vec![];
        for (sta_link, ap, ap_link) in links {
            if ap == self.id {
                match rewrite_egress(&frame, &mle, Egress::Air { link: sta_link }) {
                    Ok(f) => out.push(ApAction::AirTx { ap_link, frame: f }),
                    Err(_) => out.push(ApAction::Dropped { frame: frame.clone(), reason: DropReason::NoRoute }),
                }
            } else if !remote.contains(&ap) {
                remote.push(ap);
            }
        }
        for ap in remote {
            let Some(&mac) = self.ap_macs.get(&ap) else { continue };
            let tag = YTag::new(mle.primary_mac(), frame.mld_seq).downlink();
            if let Ok(t) = frame.tagged(mac, self.wired_mac, tag) {
                self.counters.ytag_sent += 1;
                out.push(ApAction::Relayed { to: ap, frame: t.clone(), downlink: true });
                out.push(ApAction::WireTx { frame: t });
            }
        }
    }

    /// Frame received on the wired port.
    pub fn on_wired_receive(&mut self, frame: Frame, now: SimTime, out: &mut Vec<ApAction>) {
        if frame.y_tag.is_some() {
            if frame.da != self.wired_mac {
                out.push(ApAction::Dropped { frame, reason: DropReason::NotForMe });
                return;
            }
            self.counters.ytag_received += 1;
            let (inner, tag) = match untag(&frame) {
                Ok(x) => x,
                Err(_) => {
                    self.counters.malformed += 1;
                    out.push(ApAction::Dropped { frame, reason: DropReason::Malformed });
                    return;
                }
            };
            out.push(ApAction::Decapsulated { frame: inner.clone(), tag });
            if tag.is_downlink() {
                self.transmit_relayed_downlink(inner, out);
            } else {
                let sta = inner.origin;
                match self.roles.get(&sta).copied() {
                    Some(RoleState::Primary) => self.eliminate_uplink(sta, inner, now, out),
                    Some(RoleState::Pending { .. }) => self.park(sta, Parked::Uplink(inner), out),
                    _ => {
                        self.counters.misdirected += 1;
                        out.push(ApAction::Dropped { frame: inner, reason: DropReason::Misdirected });
                    }
                }
            }
            return;
        }
        if frame.da.is_multicast() {
            out.push(ApAction::Dropped { frame, reason: DropReason::NotForMe });
            return;
        }
        if let Some((target, _)) = self.table.by_mac(frame.da) {
            match self.roles.get(&target).copied() {
                Some(RoleState::Primary) => self.replicate_downlink(target, frame, out),
                Some(RoleState::Pending { .. }) => self.park(target, Parked::Downlink(frame), out),
                _ => {
                    self.counters.not_primary_ignored += 1;
                    out.push(ApAction::Dropped { frame, reason: DropReason::NotPrimary });
                }
            }
        } else if let Some(&al) = self.legacy.get(&frame.da) {
            out.push(ApAction::AirTx { ap_link: al, frame });
        } else {
            out.push(ApAction::Dropped { frame, reason: DropReason::NotForMe });
        }
    }

    fn transmit_relayed_downlink(&mut self, frame: Frame, out: &mut Vec<ApAction>) {
        let Some((target, _)) = self.table.by_mac(frame.da) else {
            self.counters.no_route += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::NoRoute });
            return;
        };
        let entry = self.table.entry(target).expect("indexed");
        let local: Vec<(usize, usize)> = entry
            .links
            .iter()
            .filter(|(_, a)| a.0 == self.id)
            .map(|(&l, a)| (l, a.1))
            .collect();
        if local.is_empty() {
            self.counters.no_route += 1;
            out.push(ApAction::Dropped { frame, reason: DropReason::NoRoute });
            return;
        }
        let mle = entry.mle.clone();
        for (sta_link, ap_link) in local {
            if let Ok(f) = rewrite_egress(&frame, &mle, Egress::Air { link: sta_link }) {
                out.push(ApAction::AirTx { ap_link, frame: f });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedup::DEFAULT_STALE_TIMEOUT;
    use crate::frames::AffiliatedInfo;

    const STA: NodeId = NodeId(3);
    const AP1: NodeId = NodeId(1);
    const AP2: NodeId = NodeId(2);
    const AP3: NodeId = NodeId(5);

    fn mac(a: u8, b: u8) -> MacAddress {
        MacAddress([2, 0, 0, 0, a, b])
    }
    const NODE4: MacAddress = MacAddress([2, 0, 0, 0, 0, 4]);

    fn mle(primary: usize) -> MultiLinkElement {
        MultiLinkElement {
            mld_id: STA,
            affiliated: vec![
                AffiliatedInfo { link_id: 0, channel: 1, mac: mac(3, 0xa) },
                AffiliatedInfo { link_id: 1, channel: 2, mac: mac(3, 0xb) },
            ],
            primary_sta: primary,
        }
    }

    fn ap(id: NodeId) -> HrAp {
        let n = id.0 as u8;
        let mut a = HrAp::new(
            id,
            id.to_string(),
            mac(n, 0),
            vec![
                ApLinkInfo { name: format!("{n}A"), mac: mac(n, 0xa), channel: 1 },
                ApLinkInfo { name: format!("{n}B"), mac: mac(n, 0xb), channel: 2 },
            ],
            DedupTable::new(64, DEFAULT_STALE_TIMEOUT),
        );
        a.set_ap_directory([(AP1, mac(1, 0)), (AP2, mac(2, 0)), (AP3, mac(5, 0))].into_iter().collect());
        a
    }

    fn upd(link: usize, assoc: Option<(NodeId, usize)>, primary: usize) -> AssocUpdate {
        AssocUpdate { sta: STA, mle: mle(primary), link, assoc }
    }

    /// Two-AP layout: 3A on AP2 link A, 3B (primary) on AP1 link B.
    fn relay_demo() -> (HrAp, HrAp) {
        let mut a1 = ap(AP1);
        let mut a2 = ap(AP2);
        for a in [&mut a1, &mut a2] {
            a.seed_association(&upd(0, Some((AP2, 0)), 1));
            a.seed_association(&upd(1, Some((AP1, 1)), 1));
            a.seed_roles();
        }
        (a1, a2)
    }

    fn uplink_copy(link: usize, seq: u16) -> Frame {
        let mut f = Frame::new(NODE4, mle(1).affiliated[link].mac, vec![7]);
        f.rc = ReliabilityCategory::Reliable(2);
        f.mld_seq = seq;
        f.origin = STA;
        f.id = 1;
        f
    }

    fn wire_frames(out: &[ApAction]) -> Vec<Frame> {
        out.iter()
            .filter_map(|a| match a {
                ApAction::WireTx { frame } => Some(frame.clone()),
                _ => None,
            })
            .collect()
    }

    fn verdicts(out: &[ApAction]) -> Vec<Verdict> {
        out.iter()
            .filter_map(|a| match a {
                ApAction::Eliminated { verdict, .. } => Some(*verdict),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn pap_is_ap_of_primary_sta() {
        let (a1, a2) = relay_demo();
        assert_eq!(a1.table.elect_pap(STA), Some(Election { ap: AP1, fallback: false }));
        assert_eq!(a1.role(STA), PapRole::Primary);
        assert_eq!(a2.role(STA), PapRole::NonPrimary);
    }

    #[test]
    fn single_ap_degenerates_to_that_ap() {
        let mut a = ap(AP1);
        a.seed_association(&upd(0, Some((AP1, 0)), 0));
        a.seed_association(&upd(1, Some((AP1, 1)), 0));
        a.seed_roles();
        assert_eq!(a.table.elect_pap(STA).unwrap().ap, AP1);
        assert_eq!(a.table.serving_aps(STA).len(), 1);
    }

    #[test]
    fn fallback_election_when_primary_unassociated() {
        let mut t = AssociationTable::default();
        t.apply(&upd(0, Some((AP2, 0)), 1));
        assert_eq!(t.elect_pap(STA), Some(Election { ap: AP2, fallback: true }));
        t.apply(&upd(0, None, 1));
        assert_eq!(t.elect_pap(STA), None);
    }

    #[test]
    fn single_ap_copies_yield_one_ethernet_frame() {
        let mut a = ap(AP1);
        a.seed_association(&upd(0, Some((AP1, 0)), 0));
        a.seed_association(&upd(1, Some((AP1, 1)), 0));
        a.seed_roles();
        let mut out = vec![];
        a.on_air_receive(0, uplink_copy(0, 5), SimTime(0), &mut out);
        a.on_air_receive(1, uplink_copy(1, 5), SimTime(1), &mut out);
        let w = wire_frames(&out);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].sa, mac(3, 0xa));
        assert!(w[0].y_tag.is_none());
        assert_eq!(verdicts(&out), vec![Verdict::Pass, Verdict::Discard]);
    }

    #[test]
    fn non_primary_relays_with_ytag_to_pap() {
        let (_, mut a2) = relay_demo();
        let mut out = vec![];
        a2.on_air_receive(0, uplink_copy(0, 9), SimTime(0), &mut out);
        let w = wire_frames(&out);
        assert_eq!(w.len(), 1);
        let tag = w[0].y_tag.unwrap();
        assert_eq!(tag.na, NODE4);
        assert_eq!(tag.seq, 9);
        assert!(!tag.is_downlink());
        assert_eq!(w[0].da, mac(1, 0));
        assert_eq!(w[0].sa, mac(2, 0));
        assert!(verdicts(&out).is_empty());
    }

    #[test]
    fn pap_passes_first_copy_and_discards_relayed_one() {
        let (mut a1, mut a2) = relay_demo();
        let mut out = vec![];
        a1.on_air_receive(1, uplink_copy(1, 3), SimTime(0), &mut out);
        let mut relay = vec![];
        a2.on_air_receive(0, uplink_copy(0, 3), SimTime(0), &mut relay);
        let tagged = wire_frames(&relay).pop().unwrap();
        a1.on_wired_receive(tagged.clone(), SimTime(20), &mut out);
        // duplicate relay is discarded again
        a1.on_wired_receive(tagged, SimTime(30), &mut out);
        assert_eq!(verdicts(&out), vec![Verdict::Pass, Verdict::Discard, Verdict::Discard]);
        let w = wire_frames(&out);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].da, NODE4);
        assert_eq!(w[0].sa, mac(3, 0xb));
    }

    #[test]
    fn relayed_copy_first_is_forwarded_with_primary_sa() {
        let (mut a1, mut a2) = relay_demo();
        let mut relay = vec![];
        a2.on_air_receive(0, uplink_copy(0, 3), SimTime(0), &mut relay);
        let mut out = vec![];
        a1.on_wired_receive(wire_frames(&relay).pop().unwrap(), SimTime(5), &mut out);
        let w = wire_frames(&out);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].sa, mac(3, 0xb));
        assert_eq!(w[0].da, NODE4);
        assert!(w[0].y_tag.is_none());
    }

    #[test]
    fn downlink_replicates_locally_and_via_ytag() {
        let (mut a1, mut a2) = relay_demo();
        let mut f = Frame::new(mac(3, 0xb), NODE4, vec![1]);
        f.rc = ReliabilityCategory::Reliable(2);
        let mut out = vec![];
        a1.on_wired_receive(f, SimTime(0), &mut out);
        let air: Vec<_> = out
            .iter()
            .filter_map(|a| match a {
                ApAction::AirTx { ap_link, frame } => Some((*ap_link, frame.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(air.len(), 1);
        assert_eq!(air[0].0, 1);
        assert_eq!(air[0].1.da, mac(3, 0xb));
        let w = wire_frames(&out);
        assert_eq!(w.len(), 1);
        assert!(w[0].y_tag.unwrap().is_downlink());
        assert_eq!(w[0].da, mac(2, 0));

        let mut out2 = vec![];
        a2.on_wired_receive(w[0].clone(), SimTime(10), &mut out2);
        let air2: Vec<_> = out2
            .iter()
            .filter_map(|a| match a {
                ApAction::AirTx { ap_link, frame } => Some((*ap_link, frame.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(air2.len(), 1);
        assert_eq!(air2[0].1.da, mac(3, 0xa));
        assert_eq!(air2[0].1.mld_seq, air[0].1.mld_seq);
        assert_eq!(air2[0].1.origin, AP1);
    }

    #[test]
    fn non_pap_ignores_plain_downlink() {
        let (_, mut a2) = relay_demo();
        let f = Frame::new(mac(3, 0xb), NODE4, vec![1]);
        let mut out = vec![];
        a2.on_wired_receive(f, SimTime(0), &mut out);
        assert!(matches!(out[0], ApAction::Dropped { reason: DropReason::NotPrimary, .. }));
    }

    #[test]
    fn hr_sta_to_hr_sta_on_same_ap_is_replicated_again() {
        let mut a = ap(AP1);
        a.seed_association(&upd(0, Some((AP1, 0)), 0));
        a.seed_association(&upd(1, Some((AP1, 1)), 0));
        let other = MultiLinkElement {
            mld_id: NodeId(6),
            affiliated: vec![
                AffiliatedInfo { link_id: 0, channel: 1, mac: mac(6, 0xa) },
                AffiliatedInfo { link_id: 1, channel: 2, mac: mac(6, 0xb) },
            ],
            primary_sta: 0,
        };
        for l in 0..2 {
            a.seed_association(&AssocUpdate { sta: NodeId(6), mle: other.clone(), link: l, assoc: Some((AP1, l)) });
        }
        a.seed_roles();
        let mut f = uplink_copy(1, 0);
        f.sa = mac(3, 0xa);
        f.da = mac(6, 0xa);
        let mut out = vec![];
        a.on_air_receive(0, f, SimTime(0), &mut out);
        let air: Vec<_> = out
            .iter()
            .filter_map(|x| match x {
                ApAction::AirTx { frame, .. } => Some(frame.da),
                _ => None,
            })
            .collect();
        assert_eq!(air, vec![mac(6, 0xa), mac(6, 0xb)]);
        assert!(wire_frames(&out).is_empty());
    }

    #[test]
    fn ytag_at_non_pap_is_misdirected() {
        let (_, mut a2) = relay_demo();
        let mut f = uplink_copy(0, 1);
        f = f.tagged(mac(2, 0), mac(5, 0), YTag::new(NODE4, 1)).unwrap();
        let mut out = vec![];
        a2.on_wired_receive(f, SimTime(0), &mut out);
        assert!(out.iter().any(|a| matches!(a, ApAction::Dropped { reason: DropReason::Misdirected, .. })));
        assert_eq!(a2.counters.misdirected, 1);
    }

    #[test]
    fn unassociated_sender_dropped() {
        let (mut a1, _) = relay_demo();
        let mut out = vec![];
        // 3A is on AP2, not AP1
        a1.on_air_receive(0, uplink_copy(0, 1), SimTime(0), &mut out);
        assert!(matches!(out[0], ApAction::Dropped { reason: DropReason::Unassociated, .. }));
    }

    #[test]
    fn pap_handoff_carries_window() {
        let (mut a1, mut a2) = relay_demo();
        let mut out = vec![];
        a1.on_air_receive(1, uplink_copy(1, 40), SimTime(0), &mut out);
        // primary link 3B leaves AP1 and joins AP2 link B
        let leave = upd(1, None, 1);
        let mut o1 = vec![];
        a1.local_association(leave.clone(), SimTime(10), &mut o1);
        let handoff = o1
            .iter()
            .find_map(|a| match a {
                ApAction::Handoff { to, seen, .. } => Some((*to, seen.clone())),
                _ => None,
            })
            .unwrap();
        assert_eq!(handoff.0, AP2);
        assert_eq!(a1.role(STA), PapRole::NotServing);

        let mut o2 = vec![];
        a2.on_notify(&leave, SimTime(20), &mut o2);
        // fallback: AP2 is the only serving AP; it waits for the window
        assert_eq!(a2.role(STA), PapRole::Primary);
        assert!(!a2.is_active_primary(STA));
        a2.on_air_receive(0, uplink_copy(0, 40), SimTime(25), &mut o2);
        assert!(o2.iter().any(|a| matches!(a, ApAction::Parked { .. })));
        a2.on_handoff(STA, handoff.1, SimTime(30), &mut o2);
        assert!(a2.is_active_primary(STA));
        // the parked copy of seq 40 was already passed by AP1
        assert_eq!(verdicts(&o2), vec![Verdict::Discard]);
        // L2 update announces the primary MAC behind AP2
        assert!(wire_frames(&o2).iter().any(|f| f.sa == mac(3, 0xb) && f.da == MacAddress::BROADCAST));
    }

    #[test]
    fn pending_primary_times_out() {
        let (_, mut a2) = relay_demo();
        let mut o = vec![];
        a2.on_notify(&upd(1, None, 1), SimTime(0), &mut o);
        let epoch = o
            .iter()
            .find_map(|a| match a {
                ApAction::HandoffTimer { epoch, .. } => Some(*epoch),
                _ => None,
            })
            .unwrap();
        a2.on_handoff_timeout(STA, epoch, SimTime(5_000_000), &mut o);
        assert!(a2.is_active_primary(STA));
        assert_eq!(a2.counters.handoff_timeouts, 1);
    }

    #[test]
    fn early_handoff_is_stashed() {
        let (_, mut a2) = relay_demo();
        let mut o = vec![];
        a2.on_handoff(STA, vec![1, 2, 3], SimTime(0), &mut o);
        assert!(!a2.is_active_primary(STA));
        a2.on_notify(&upd(1, None, 1), SimTime(1), &mut o);
        assert!(a2.is_active_primary(STA));
        let mut o = vec![];
        a2.on_air_receive(0, uplink_copy(0, 2), SimTime(2), &mut o);
        assert_eq!(verdicts(&o), vec![Verdict::Discard]);
    }

    #[test]
    fn relay_suppression_limits_one_relay_per_frame() {
        let (_, mut a2) = relay_demo();
        let mut out = vec![];
        a2.on_air_receive(0, uplink_copy(0, 8), SimTime(0), &mut out);
        a2.on_air_receive(0, uplink_copy(0, 8), SimTime(1), &mut out);
        assert_eq!(wire_frames(&out).len(), 1);
        assert_eq!(a2.counters.relay_suppressed, 1);
    }
}
