//! The simulated world: nodes, wired ports, air links and the event handler
//! that moves frames between them.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::channel::{WiredLink, WirelessLink, TxId};
use crate::dedup::Verdict;
use crate::engine::{self, Duration, Handler, RunSummary, Scheduler, SimTime};
use crate::frames::{AccessCategory, Frame, FrameId, MacAddress, NodeId, ReliabilityCategory, L2_UPDATE_ETHER_TYPE};
use crate::hr_ap::{ApAction, AssocUpdate, HrAp, PapRole};
use crate::hr_sta::{HrSta, LinkState, ReassocStart, RxOutcome, SendDecision};
use crate::metrics::{LinkReport, Metrics, NodeReport, Report};
use crate::topology::{Forwarding, Switch};
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant violated at {time} ns: {message}")]
    Invariant { time: SimTime, message: String, tail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldOptions {
    pub cross_link_abort: bool,
    pub reassociation_delay: Duration,
    pub notify_latency: Duration,
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Switch(Switch),
    HrAp(Box<HrAp>),
    HrSta(Box<HrSta>),
    LegacyEth { mac: MacAddress },
    LegacySta { mac: MacAddress, channel: u16, assoc: Option<(NodeId, usize)> },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Switch(_) => "switch",
            NodeKind::HrAp(_) => "hr_ap",
            NodeKind::HrSta(_) => "hr_sta",
            NodeKind::LegacyEth { .. } => "legacy_eth",
            NodeKind::LegacySta { .. } => "legacy_sta",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Port {
    pub peer: NodeId,
    pub peer_port: usize,
    pub link: WiredLink,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub ports: Vec<Port>,
}

/// Both directions of one station radio.
#[derive(Debug, Clone)]
pub struct AirPair {
    pub name: String,
    pub up: WirelessLink,
    pub down: WirelessLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AirDir {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub da: MacAddress,
    pub rc: ReliabilityCategory,
    pub ac: AccessCategory,
    pub start: SimTime,
    pub period: Duration,
    pub count: u64,
    pub payload_len: usize,
}

#[derive(Debug, Clone)]
pub enum Event {
    AppSend { flow: u32, index: u64 },
    Air { dir: AirDir, sta: NodeId, link: usize, ap: NodeId, ap_link: usize, tx: TxId, frame: Frame },
    Wire { node: NodeId, port: usize, frame: Frame },
    Reassoc { sta: NodeId, link: usize, target: NodeId },
    ReassocDone { sta: NodeId, link: usize },
    Notify { ap: NodeId, update: AssocUpdate },
    Handoff { ap: NodeId, sta: NodeId, seen: Vec<u16> },
    HandoffTimeout { ap: NodeId, sta: NodeId, epoch: u64 },
}

impl Event {
    fn carried_frame(&self) -> Option<&Frame> {
        match self {
            Event::Air { frame, .. } | Event::Wire { frame, .. } => Some(frame),
            _ => None,
        }
    }
}

pub struct World {
    pub nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    pub air: BTreeMap<(NodeId, usize), AirPair>,
    pub flows: Vec<Flow>,
    pub options: WorldOptions,
    pub metrics: Metrics,
    pub trace: Trace,
    next_frame: FrameId,
    /// Station radio owning a MAC.
    radios: HashMap<MacAddress, (NodeId, usize)>,
    ap_by_mac: HashMap<MacAddress, NodeId>,
    /// Where the frame being handled entered the current node.
    ingress: String,
}

fn seq_of(f: &Frame) -> Option<u16> {
    (f.origin != NodeId::default()).then_some(f.mld_seq)
}

impl World {
    pub fn new(
        nodes: Vec<Node>,
        air: BTreeMap<(NodeId, usize), AirPair>,
        flows: Vec<Flow>,
        options: WorldOptions,
        metrics: Metrics,
        trace: Trace,
    ) -> Self {
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut radios = HashMap::new();
        let mut ap_by_mac = HashMap::new();
        for n in &nodes {
            match &n.kind {
                NodeKind::HrAp(a) => {
                    ap_by_mac.insert(a.wired_mac, n.id);
                }
                NodeKind::HrSta(s) => {
                    for (i, l) in s.links.iter().enumerate() {
                        radios.insert(l.mac, (n.id, i));
                    }
                }
                NodeKind::LegacySta { mac, .. } => {
                    radios.insert(*mac, (n.id, 0));
                }
                _ => {}
            }
        }
        World {
            nodes,
            index,
            air,
            flows,
            options,
            metrics,
            trace,
            next_frame: 1,
            radios,
            ap_by_mac,
            ingress: String::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[self.index[&id]]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        let i = self.index[&id];
        &mut self.nodes[i]
    }

    pub fn name(&self, id: NodeId) -> &str {
        self.index.get(&id).map_or("?", |&i| self.nodes[i].name.as_str())
    }

    pub fn sta(&self, id: NodeId) -> Option<&HrSta> {
        match &self.node(id).kind {
            NodeKind::HrSta(s) => Some(s),
            _ => None,
        }
    }

    fn sta_mut(&mut self, id: NodeId) -> &mut HrSta {
        match &mut self.node_mut(id).kind {
            NodeKind::HrSta(s) => s,
            _ => panic!("node {id:?} is not an HR STA"),
        }
    }

    pub fn ap(&self, id: NodeId) -> Option<&HrAp> {
        match &self.node(id).kind {
            NodeKind::HrAp(a) => Some(a),
            _ => None,
        }
    }

    fn ap_mut(&mut self, id: NodeId) -> &mut HrAp {
        match &mut self.node_mut(id).kind {
            NodeKind::HrAp(a) => a,
            _ => panic!("node {id:?} is not an HR AP"),
        }
    }

    fn hr_aps(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::HrAp(_))).map(|n| n.id).collect()
    }

    fn link_name(&self, sta: NodeId, link: usize) -> String {
        self.air.get(&(sta, link)).map_or_else(|| format!("{}#{link}", self.name(sta)), |p| p.name.clone())
    }

    fn ap_link_name(&self, ap: NodeId, ap_link: usize) -> String {
        self.ap(ap)
            .and_then(|a| a.links.get(ap_link))
            .map_or_else(|| format!("{}#{ap_link}", self.name(ap)), |l| l.name.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn tr(
        &mut self,
        now: SimTime,
        node: NodeId,
        kind: &str,
        frame: Option<&Frame>,
        place: &str,
        verdict: &str,
        detail: impl FnOnce(&World) -> String,
    ) {
        if !self.trace.enabled() {
            return;
        }
        let r = TraceRecord {
            time: now,
            node: self.name(node).to_string(),
            kind: kind.to_string(),
            frame: frame.map(|f| f.id),
            seq: frame.and_then(seq_of),
            place: place.to_string(),
            verdict: verdict.to_string(),
            detail: detail(self),
        };
        self.trace.push(r);
    }

    fn invariant(&self, now: SimTime, message: String) -> SimError {
        SimError::Invariant { time: now, message, tail: self.trace.tail(20) }
    }

    fn enqueue(&mut self, sched: &mut Scheduler<Event>, at: SimTime, ev: Event) -> engine::EventHandle {
        if let Some(f) = ev.carried_frame() {
            if f.flow.is_some() {
                self.metrics.copy_enqueued(f.id);
            }
        }
        sched.schedule(at, ev).expect("events are never scheduled in the past")
    }

    /// Schedules the first application send of every flow and the roaming script.
    pub fn prime(&mut self, sched: &mut Scheduler<Event>, roaming: &[(SimTime, NodeId, usize, NodeId)]) {
        for (i, f) in self.flows.iter().enumerate() {
            if f.count > 0 {
                sched.schedule(f.start, Event::AppSend { flow: i as u32, index: 0 }).expect("start >= 0");
            }
        }
        let stas: Vec<NodeId> = self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::HrSta(_))).map(|n| n.id).collect();
        for sta in stas {
            self.snapshot(SimTime::ZERO, sta);
        }
        for &(at, sta, link, target) in roaming {
            sched.schedule(at, Event::Reassoc { sta, link, target }).expect("roaming time >= 0");
        }
    }

    // ---- application ----

    fn app_send(&mut self, sched: &mut Scheduler<Event>, now: SimTime, flow: u32, index: u64) -> Result<(), SimError> {
        let f = self.flows[flow as usize].clone();
        if index + 1 < f.count {
            sched.schedule(now + f.period, Event::AppSend { flow, index: index + 1 }).expect("future");
        }
        let id = self.next_frame;
        self.next_frame += 1;
        let sa = self.source_mac(f.src);
        let mut frame = Frame::new(f.da, sa, vec![0u8; f.payload_len]);
        frame.rc = f.rc;
        frame.ac = f.ac;
        frame.id = id;
        frame.flow = Some(flow);
        frame.created_at = now;
        self.metrics.record_offer(flow, id, now);
        let flow_name = f.name.clone();
        self.tr(now, f.src, "app", Some(&frame), "-", "offered", |w| {
            format!("flow={flow_name} dst={}", w.name(f.dst))
        });
        match &self.node(f.src).kind {
            NodeKind::HrSta(_) => {
                let decision = self.sta_mut(f.src).app_send(frame.clone());
                match decision {
                    SendDecision::Transmit(copies) => {
                        for (link, c) in copies {
                            self.air_uplink(sched, now, f.src, link, c);
                        }
                    }
                    SendDecision::Queued => self.tr(now, f.src, "app", Some(&frame), "-", "queued", |_| String::new()),
                }
            }
            NodeKind::LegacySta { .. } => self.air_uplink(sched, now, f.src, 0, frame),
            NodeKind::LegacyEth { .. } => self.wire_send(sched, now, f.src, 0, frame),
            NodeKind::HrAp(_) | NodeKind::Switch(_) => {
                return Err(self.invariant(now, format!("flow {} starts at a non-endpoint", f.name)));
            }
        }
        Ok(())
    }

    fn source_mac(&self, id: NodeId) -> MacAddress {
        match &self.node(id).kind {
            NodeKind::HrSta(s) => s.primary_mac(),
            NodeKind::LegacyEth { mac } | NodeKind::LegacySta { mac, .. } => *mac,
            NodeKind::HrAp(a) => a.wired_mac,
            NodeKind::Switch(_) => MacAddress::ZERO,
        }
    }

    fn radio_assoc(&self, sta: NodeId, link: usize) -> Option<(NodeId, usize)> {
        match &self.node(sta).kind {
            NodeKind::HrSta(s) => s.links.get(link).and_then(|l| l.state.associated_ap()),
            NodeKind::LegacySta { assoc, .. } => *assoc,
            _ => None,
        }
    }

    // ---- air ----

    fn air_uplink(&mut self, sched: &mut Scheduler<Event>, now: SimTime, sta: NodeId, link: usize, frame: Frame) {
        let Some((ap, ap_link)) = self.radio_assoc(sta, link) else {
            let ln = self.link_name(sta, link);
            self.tr(now, sta, "air_tx", Some(&frame), &ln, "dropped", |_| "reason=not_associated".into());
            return;
        };
        self.air_send(sched, now, AirDir::Up, sta, link, ap, ap_link, frame);
    }

    #[allow(clippy::too_many_arguments)]
    fn air_send(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        dir: AirDir,
        sta: NodeId,
        link: usize,
        ap: NodeId,
        ap_link: usize,
        frame: Frame,
    ) {
        let pair = self.air.get_mut(&(sta, link)).expect("every radio has an air pair");
        let l = match dir {
            AirDir::Up => &mut pair.up,
            AirDir::Down => &mut pair.down,
        };
        let (tx, plan) = l.transmit(frame.id, now);
        let ln = pair.name.clone();
        let (sender, to) = match dir {
            AirDir::Up => (sta, ap),
            AirDir::Down => (ap, sta),
        };
        let apl = self.ap_link_name(ap, ap_link);
        self.tr(now, sender, "air_tx", Some(&frame), &ln, "sent", |w| {
            let da = frame.da;
            match dir {
                AirDir::Up => format!("to={} via={apl} da={da}", w.name(to)),
                AirDir::Down => format!("to={} via={apl} da={da}", w.name(to)),
            }
        });
        let at = plan.outcome.time();
        let h = self.enqueue(sched, at, Event::Air { dir, sta, link, ap, ap_link, tx, frame });
        let pair = self.air.get_mut(&(sta, link)).expect("present");
        match dir {
            AirDir::Up => pair.up.attach(tx, h),
            AirDir::Down => pair.down.attach(tx, h),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn air_outcome(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        dir: AirDir,
        sta: NodeId,
        link: usize,
        ap: NodeId,
        ap_link: usize,
        tx: TxId,
        frame: Frame,
    ) -> Result<(), SimError> {
        let pair = self.air.get_mut(&(sta, link)).expect("present");
        let plan = match dir {
            AirDir::Up => pair.up.complete(tx),
            AirDir::Down => pair.down.complete(tx),
        };
        let Some(plan) = plan else { return Ok(()) };
        let ln = pair.name.clone();
        let receiver = match dir {
            AirDir::Up => ap,
            AirDir::Down => sta,
        };
        if !plan.outcome.delivered() {
            let attempts = plan.attempts;
            self.tr(now, receiver, "air_rx", Some(&frame), &ln, "dropped", |_| format!("attempts={attempts}"));
            return Ok(());
        }
        let attempts = plan.attempts;
        self.tr(now, receiver, "air_rx", Some(&frame), &ln, "received", |_| format!("attempts={attempts}"));
        if self.options.cross_link_abort && frame.flow.is_some() {
            self.abort_siblings(sched, now, dir, sta, link, ap, frame.id);
        }
        match dir {
            AirDir::Up => {
                self.ingress = self.ap_link_name(ap, ap_link);
                let mut out = vec![];
                self.ap_mut(ap).on_air_receive(ap_link, frame, now, &mut out);
                self.apply(sched, now, ap, out)?;
            }
            AirDir::Down => self.station_receive(now, sta, link, ap, ap_link, frame)?,
        }
        Ok(())
    }

    /// Cancels the other copies of a frame still on air once one succeeded.
    #[allow(clippy::too_many_arguments)]
    fn abort_siblings(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        dir: AirDir,
        sta: NodeId,
        link: usize,
        ap: NodeId,
        frame: FrameId,
    ) {
        let NodeKind::HrSta(s) = &self.node(sta).kind else { return };
        let others: Vec<usize> = (0..s.links.len())
            .filter(|&i| i != link)
            .filter(|&i| dir == AirDir::Up || s.links[i].state.associated_ap().map(|a| a.0) == Some(ap))
            .collect();
        for i in others {
            let pair = self.air.get_mut(&(sta, i)).expect("present");
            let l = match dir {
                AirDir::Up => &mut pair.up,
                AirDir::Down => &mut pair.down,
            };
            if l.abort(frame, now, sched) {
                self.metrics.copy_dequeued(frame);
                let ln = pair.name.clone();
                let sender = if dir == AirDir::Up { sta } else { ap };
                self.tr(now, sender, "abort", None, &ln, "aborted", |_| format!("frame={frame}"));
            }
        }
    }

    fn station_receive(
        &mut self,
        now: SimTime,
        sta: NodeId,
        link: usize,
        ap: NodeId,
        ap_link: usize,
        frame: Frame,
    ) -> Result<(), SimError> {
        let ln = self.link_name(sta, link);
        if self.radio_assoc(sta, link) != Some((ap, ap_link)) {
            self.tr(now, sta, "rx", Some(&frame), &ln, "ignored", |_| "reason=stale_association".into());
            return Ok(());
        }
        match &mut self.node_mut(sta).kind {
            NodeKind::HrSta(s) => match s.on_air_receive(link, frame.clone(), now) {
                RxOutcome::Deliver(f) => {
                    self.tr(now, sta, "elim", Some(&f), &ln, "pass", |_| String::new());
                    self.metrics.record_copy(f.id, &ln, now, true);
                    self.deliver(now, sta, &ln, f)?;
                }
                RxOutcome::Discard => {
                    self.tr(now, sta, "elim", Some(&frame), &ln, "discard", |_| String::new());
                    self.metrics.record_copy(frame.id, &ln, now, false);
                    self.metrics.record_discard(frame.flow);
                }
                RxOutcome::Ignored(why) => {
                    self.tr(now, sta, "rx", Some(&frame), &ln, "ignored", |_| format!("reason={}", why.replace(' ', "_")));
                }
            },
            NodeKind::LegacySta { mac, .. } => {
                if frame.da == *mac {
                    self.deliver(now, sta, &ln, frame)?;
                } else {
                    self.tr(now, sta, "rx", Some(&frame), &ln, "ignored", |_| "reason=da_mismatch".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Final delivery of an application frame at its destination node.
    fn deliver(&mut self, now: SimTime, node: NodeId, place: &str, frame: Frame) -> Result<(), SimError> {
        let Some(flow) = frame.flow else { return Ok(()) };
        let legacy = matches!(self.node(node).kind, NodeKind::LegacyEth { .. } | NodeKind::LegacySta { .. });
        let expected_sa = self.source_mac(self.flows[flow as usize].src);
        if legacy && (frame.y_tag.is_some() || frame.sa != expected_sa) {
            let msg = format!(
                "frame {} at {}: sa={} expected={} tagged={}",
                frame.id,
                self.name(node),
                frame.sa,
                expected_sa,
                frame.y_tag.is_some()
            );
            self.metrics.transparency_violations.push(msg);
        }
        let sa = frame.sa;
        self.tr(now, node, "deliver", Some(&frame), place, "delivered", |_| format!("sa={sa}"));
        if let Err(e) = self.metrics.record_delivery(flow, frame.id, frame.created_at, now) {
            return Err(self.invariant(now, e.to_string()));
        }
        Ok(())
    }

    // ---- wire ----

    fn wire_send(&mut self, sched: &mut Scheduler<Event>, now: SimTime, node: NodeId, port: usize, frame: Frame) {
        let Some(p) = self.node(node).ports.get(port).copied() else {
            self.tr(now, node, "wire_tx", Some(&frame), "-", "dropped", |_| "reason=no_port".into());
            return;
        };
        if frame.flow.is_some() || frame.y_tag.is_some() {
            self.tr(now, node, "wire_tx", Some(&frame), &format!("p{port}"), "sent", |w| {
                format!("to={} da={}", w.name(p.peer), frame.da)
            });
        }
        let at = p.link.arrival(now);
        self.enqueue(sched, at, Event::Wire { node: p.peer, port: p.peer_port, frame });
    }

    fn wire_arrival(&mut self, sched: &mut Scheduler<Event>, now: SimTime, node: NodeId, port: usize, frame: Frame) -> Result<(), SimError> {
        let control = frame.y_tag.is_none() && frame.ether_type == L2_UPDATE_ETHER_TYPE;
        let i = self.index[&node];
        match &mut self.nodes[i].kind {
            NodeKind::Switch(sw) => {
                let fwd = sw.relay(frame.sa, frame.da, port, now);
                let (verdict, ports) = match fwd {
                    Forwarding::Port(p) => ("forwarded", vec![p]),
                    Forwarding::Flood(ps) => ("flooded", ps),
                    Forwarding::Filter => ("filtered", vec![]),
                };
                if !control {
                    let list = ports.iter().map(|p| format!("p{p}")).collect::<Vec<_>>().join(",");
                    self.tr(now, node, "switch", Some(&frame), &format!("p{port}"), verdict, |_| format!("out={list}"));
                }
                for p in ports {
                    self.wire_send_quiet(sched, now, node, p, frame.clone());
                }
            }
            NodeKind::HrAp(_) => {
                if control {
                    return Ok(());
                }
                self.ingress = format!("p{port}");
                self.tr(now, node, "wire_rx", Some(&frame), &self.ingress.clone(), "received", |_| String::new());
                let mut out = vec![];
                self.ap_mut(node).on_wired_receive(frame, now, &mut out);
                self.apply(sched, now, node, out)?;
            }
            NodeKind::LegacyEth { mac } => {
                if control || frame.da != *mac {
                    return Ok(());
                }
                self.deliver(now, node, &format!("p{port}"), frame)?;
            }
            NodeKind::HrSta(_) | NodeKind::LegacySta { .. } => {}
        }
        Ok(())
    }

    fn wire_send_quiet(&mut self, sched: &mut Scheduler<Event>, now: SimTime, node: NodeId, port: usize, frame: Frame) {
        let p = self.node(node).ports[port];
        self.enqueue(sched, p.link.arrival(now), Event::Wire { node: p.peer, port: p.peer_port, frame });
    }

    // ---- AP side effects ----

    fn apply(&mut self, sched: &mut Scheduler<Event>, now: SimTime, ap: NodeId, actions: Vec<ApAction>) -> Result<(), SimError> {
        for a in actions {
            match a {
                ApAction::AirTx { ap_link, frame } => match self.radios.get(&frame.da).copied() {
                    Some((sta, link)) if self.radio_assoc(sta, link) == Some((ap, ap_link)) => {
                        self.air_send(sched, now, AirDir::Down, sta, link, ap, ap_link, frame);
                    }
                    _ => {
                        let apl = self.ap_link_name(ap, ap_link);
                        self.tr(now, ap, "air_tx", Some(&frame), &apl, "dropped", |_| "reason=no_station".into());
                    }
                },
                ApAction::WireTx { frame } => self.wire_send(sched, now, ap, 0, frame),
                ApAction::Eliminated { sta, frame, verdict } => {
                    let v = if verdict == Verdict::Pass { "pass" } else { "discard" };
                    let sn = self.name(sta).to_string();
                    let (via, from) = self.copy_origin(&frame);
                    self.tr(now, ap, "elim", Some(&frame), &via, v, |_| format!("sta={sn} from={from}"));
                    let node = self.name(ap).to_string();
                    self.metrics.record_copy(frame.id, &node, now, verdict == Verdict::Pass);
                    if verdict == Verdict::Discard {
                        self.metrics.record_discard(frame.flow);
                    }
                }
                ApAction::Relayed { to, frame, downlink } => {
                    let na = frame.y_tag.map(|t| t.na).unwrap_or(MacAddress::ZERO);
                    let dir = if downlink { "down" } else { "up" };
                    let place = if downlink { "wire".to_string() } else { self.ingress.clone() };
                    self.tr(now, ap, "ytag", Some(&frame), &place, "relayed", |w| {
                        format!("to={} na={na} dir={dir}", w.name(to))
                    });
                    self.metrics.record_relay(frame.flow);
                }
                ApAction::Decapsulated { frame, tag } => {
                    let dir = if tag.is_downlink() { "down" } else { "up" };
                    self.tr(now, ap, "ytag", Some(&frame), "wire", "decapsulated", |_| format!("na={} dir={dir}", tag.na));
                }
                ApAction::Parked { sta, frame } => {
                    let sn = self.name(sta).to_string();
                    self.tr(now, ap, "park", Some(&frame), "-", "parked", |_| format!("sta={sn}"));
                }
                ApAction::Dropped { frame, reason } => {
                    if frame.flow.is_some() {
                        self.tr(now, ap, "drop", Some(&frame), "-", reason.as_str(), |_| String::new());
                    }
                }
                ApAction::Notify { update } => {
                    for other in self.hr_aps() {
                        if other != ap {
                            sched.schedule(now + self.options.notify_latency, Event::Notify { ap: other, update: update.clone() }).expect("future");
                        }
                    }
                }
                ApAction::Handoff { to, sta, seen } => {
                    let (sn, n) = (self.name(sta).to_string(), seen.len());
                    self.tr(now, ap, "handoff", None, "-", "sent", |w| format!("sta={sn} to={} seen={n}", w.name(to)));
                    sched.schedule(now + self.options.notify_latency, Event::Handoff { ap: to, sta, seen }).expect("future");
                }
                ApAction::HandoffTimer { sta, epoch } => {
                    let t = self.ap(ap).expect("ap").handoff_timeout;
                    sched.schedule(now + t, Event::HandoffTimeout { ap, sta, epoch }).expect("future");
                }
                ApAction::RoleChanged { sta, role, pap, fallback } => {
                    let v = match role {
                        PapRole::Primary => "primary",
                        PapRole::NonPrimary => "non_primary",
                        PapRole::NotServing => "not_serving",
                    };
                    let sn = self.name(sta).to_string();
                    self.tr(now, ap, "pap", None, "-", v, |w| {
                        let p = pap.map_or("-".to_string(), |p| w.name(p).to_string());
                        format!("sta={sn} pap={p} fallback={fallback}")
                    });
                }
            }
        }
        Ok(())
    }

    /// Ingress of an uplink copy at the eliminator: the AP link it was
    /// received on, or `ytag` and the relaying AP.
    fn copy_origin(&self, frame: &Frame) -> (String, String) {
        if let Some(&relay) = self.ap_by_mac.get(&frame.sa) {
            return ("ytag".into(), self.name(relay).to_string());
        }
        match self.radios.get(&frame.sa).copied() {
            Some((sta, link)) => {
                let al = self.radio_assoc(sta, link).map_or("-".to_string(), |(ap, al)| self.ap_link_name(ap, al));
                (al, self.link_name(sta, link))
            }
            None => ("-".into(), frame.sa.to_string()),
        }
    }

    // ---- roaming ----

    fn snapshot(&mut self, now: SimTime, sta: NodeId) {
        let s = self.sta(sta).expect("sta");
        let snap = s.snapshot();
        self.tr(now, sta, "assoc", None, "-", "snapshot", |w| {
            snap.iter()
                .map(|(l, a)| format!("{l}={}", a.map_or("-".to_string(), |a| w.name(a).to_string())))
                .collect::<Vec<_>>()
                .join(" ")
        });
    }

    fn reassoc(&mut self, sched: &mut Scheduler<Event>, now: SimTime, sta: NodeId, link: usize, target: NodeId) -> Result<(), SimError> {
        let ln = self.link_name(sta, link);
        let tn = self.name(target).to_string();
        match self.sta_mut(sta).start_reassociation(link, target) {
            ReassocStart::Started { prior } => {
                self.tr(now, sta, "reassoc", None, &ln, "start", |w| {
                    let from = prior.map_or("-".to_string(), |p| w.name(p.0).to_string());
                    format!("from={from} to={tn}")
                });
                if let Some((old, _)) = prior {
                    let mle = self.sta(sta).expect("sta").mle();
                    let mut out = vec![];
                    self.ap_mut(old).local_association(AssocUpdate { sta, mle, link, assoc: None }, now, &mut out);
                    self.apply(sched, now, old, out)?;
                }
                self.snapshot(now, sta);
                let d = self.options.reassociation_delay;
                sched.schedule(now + d, Event::ReassocDone { sta, link }).expect("future");
            }
            ReassocStart::Deferred => {
                self.tr(now, sta, "reassoc", None, &ln, "deferred", |_| format!("to={tn}"));
            }
            ReassocStart::Rejected(why) => {
                let why = why.replace(' ', "_");
                self.tr(now, sta, "reassoc", None, &ln, "rejected", |_| format!("to={tn} reason={why}"));
            }
        }
        Ok(())
    }

    /// Free link of `ap` on `channel` not used by another radio of `sta`.
    fn free_ap_link(&self, ap: NodeId, channel: u16, sta: NodeId, link: usize) -> Option<usize> {
        let a = self.ap(ap)?;
        let s = self.sta(sta)?;
        (0..a.links.len()).find(|&al| {
            a.links[al].channel == channel
                && !s.links.iter().enumerate().any(|(i, l)| i != link && l.state.associated_ap() == Some((ap, al)))
        })
    }

    fn reassoc_done(&mut self, sched: &mut Scheduler<Event>, now: SimTime, sta: NodeId, link: usize) -> Result<(), SimError> {
        let s = self.sta(sta).expect("sta");
        let LinkState::Reassociating { target, .. } = s.links[link].state else { return Ok(()) };
        let channel = s.links[link].channel;
        let ap_link = self.free_ap_link(target, channel, sta, link);
        let (state, next) = self.sta_mut(sta).complete_reassociation(link, ap_link);
        let ln = self.link_name(sta, link);
        let verdict = if ap_link.is_some() { "done" } else { "failed" };
        self.tr(now, sta, "reassoc", None, &ln, verdict, |w| {
            let at = state.associated_ap().map_or("-".to_string(), |a| w.name(a.0).to_string());
            format!("at={at}")
        });
        if let Some((ap, al)) = state.associated_ap() {
            let mle = self.sta(sta).expect("sta").mle();
            let mut out = vec![];
            self.ap_mut(ap).local_association(AssocUpdate { sta, mle, link, assoc: Some((ap, al)) }, now, &mut out);
            self.apply(sched, now, ap, out)?;
        }
        self.snapshot(now, sta);
        for copies in self.sta_mut(sta).flush_pending() {
            for (l, c) in copies {
                self.air_uplink(sched, now, sta, l, c);
            }
        }
        if let Some((l, t)) = next {
            self.reassoc(sched, now, sta, l, t)?;
        }
        Ok(())
    }

    // ---- reporting ----

    fn in_flight(&self, id: FrameId) -> bool {
        if self.metrics.live_copies(id) > 0 {
            return true;
        }
        self.nodes.iter().any(|n| match &n.kind {
            NodeKind::HrSta(s) => s.pending().any(|f| f.id == id),
            NodeKind::HrAp(a) => a.parked_frames().any(|f| f.id == id),
            _ => false,
        })
    }

    pub fn report(&self, scenario: &str, seed: u64, engine: RunSummary) -> Report {
        let mut links = vec![];
        for p in self.air.values() {
            links.push(LinkReport { link: p.name.clone(), direction: "up".into(), stats: p.up.stats() });
            links.push(LinkReport { link: p.name.clone(), direction: "down".into(), stats: p.down.stats() });
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::HrAp(a) => {
                    let mut r = NodeReport::from_counters(&n.name, "hr_ap", &a.counters);
                    let d = a.elimination().totals();
                    r.counters.insert("dedup_out_of_window".into(), d.out_of_window);
                    r.counters.insert("dedup_resets".into(), d.resets);
                    r
                }
                NodeKind::HrSta(s) => {
                    let mut r = NodeReport::from_counters(&n.name, "hr_sta", &s.counters);
                    let d = s.rx_dedup().totals();
                    r.counters.insert("dedup_out_of_window".into(), d.out_of_window);
                    r.counters.insert("dedup_resets".into(), d.resets);
                    r
                }
                NodeKind::Switch(sw) => NodeReport::from_counters(&n.name, "switch", &sw.counters),
                k => NodeReport::from_counters(&n.name, k.label(), &()),
            })
            .collect();
        self.metrics.summarize(scenario, seed, engine, &|id| self.in_flight(id), links, nodes)
    }
}

impl Handler<Event> for World {
    type Error = SimError;

    fn handle(&mut self, sched: &mut Scheduler<Event>, now: SimTime, ev: Event) -> Result<(), SimError> {
        if let Some(f) = ev.carried_frame() {
            if f.flow.is_some() {
                self.metrics.copy_dequeued(f.id);
            }
        }
        match ev {
            Event::AppSend { flow, index } => self.app_send(sched, now, flow, index),
            Event::Air { dir, sta, link, ap, ap_link, tx, frame } => {
                self.air_outcome(sched, now, dir, sta, link, ap, ap_link, tx, frame)
            }
            Event::Wire { node, port, frame } => self.wire_arrival(sched, now, node, port, frame),
            Event::Reassoc { sta, link, target } => self.reassoc(sched, now, sta, link, target),
            Event::ReassocDone { sta, link } => self.reassoc_done(sched, now, sta, link),
            Event::Notify { ap, update } => {
                let mut out = vec![];
                self.ap_mut(ap).on_notify(&update, now, &mut out);
                self.apply(sched, now, ap, out)
            }
            Event::Handoff { ap, sta, seen } => {
                let sn = self.name(sta).to_string();
                self.tr(now, ap, "handoff", None, "-", "received", |_| format!("sta={sn} seen={}", seen.len()));
                let mut out = vec![];
                self.ap_mut(ap).on_handoff(sta, seen, now, &mut out);
                self.apply(sched, now, ap, out)
            }
            Event::HandoffTimeout { ap, sta, epoch } => {
                let mut out = vec![];
                self.ap_mut(ap).on_handoff_timeout(sta, epoch, now, &mut out);
                if !out.is_empty() {
                    let sn = self.name(sta).to_string();
                    self.tr(now, ap, "handoff", None, "-", "timeout", |_| format!("sta={sn}"));
                }
                self.apply(sched, now, ap, out)
            }
        }
    }
}

/// A built scenario ready to run.
pub struct Simulation {
    pub name: String,
    pub seed: u64,
    pub world: World,
    pub sched: Scheduler<Event>,
    pub end: SimTime,
}

/// Result of a completed run.
pub struct RunOutput {
    pub report: Report,
    pub trace: Trace,
    pub metrics: Metrics,
    pub world: World,
}

impl Simulation {
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let summary = engine::run(&mut self.sched, &mut self.world, self.end)?;
        let report = self.world.report(&self.name, self.seed, summary);
        if !report.conservation_ok {
            return Err(self.world.invariant(summary.final_time, "offered != delivered + lost + in_flight".into()));
        }
        let trace = std::mem::take(&mut self.world.trace);
        let metrics = self.world.metrics.clone();
        Ok(RunOutput { report, trace, metrics, world: self.world })
    }
}
