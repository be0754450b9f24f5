//! Scenario description, validation and construction, the learning switch,
//! and the preset scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::channel::{WiredLink, WirelessLink, WirelessParams, DEFAULT_WIRED_LATENCY};
use crate::dedup::{DedupTable, DEFAULT_STALE_TIMEOUT, DEFAULT_WINDOW, MAX_WINDOW};
use crate::engine::{Duration, RngStream, Scheduler, SimTime};
use crate::frames::{AccessCategory, MacAddress, NodeId, ReliabilityCategory};
use crate::hr_ap::{ApLinkInfo, AssocUpdate, HrAp, DEFAULT_HANDOFF_TIMEOUT};
use crate::hr_sta::{AffiliatedLink, HrSta, LinkState, DEFAULT_REASSOCIATION_DELAY};
use crate::metrics::{FlowInfo, Metrics};
use crate::sim::{AirPair, Flow, Node, NodeKind, Port, Simulation, World, WorldOptions};
use crate::trace::Trace;

pub const DEFAULT_MAC_AGING: Duration = Duration::from_secs(300);

// ---- switch ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Forwarding {
    Port(usize),
    Flood(Vec<usize>),
    /// Destination sits behind the ingress port.
    Filter,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SwitchCounters {
    pub frames: u64,
    pub forwarded: u64,
    pub flooded: u64,
    pub filtered: u64,
    pub relearned: u64,
}

/// Transparent learning bridge.
#[derive(Debug, Clone)]
pub struct Switch {
    ports: usize,
    aging: Duration,
    table: HashMap<MacAddress, (usize, SimTime)>,
    pub counters: SwitchCounters,
}

impl Switch {
    pub fn new(ports: usize, aging: Duration) -> Self {
        Switch { ports, aging, table: HashMap::new(), counters: SwitchCounters::default() }
    }

    pub fn add_port(&mut self) -> usize {
        self.ports += 1;
        self.ports - 1
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    /// Port currently learned for `mac`, if not aged out.
    pub fn lookup(&self, mac: MacAddress, now: SimTime) -> Option<usize> {
        self.table
            .get(&mac)
            .filter(|(_, t)| now.since(*t) < self.aging)
            .map(|(p, _)| *p)
    }

    pub fn learn(&mut self, mac: MacAddress, port: usize, now: SimTime) {
        if mac.is_multicast() {
            return;
        }
        if let Some((old, _)) = self.table.insert(mac, (port, now)) {
            if old != port {
                self.counters.relearned += 1;
            }
        }
    }

    /// Learns the source, then decides where the frame goes.
    pub fn relay(&mut self, sa: MacAddress, da: MacAddress, ingress: usize, now: SimTime) -> Forwarding {
        self.counters.frames += 1;
        self.learn(sa, ingress, now);
        let known = if da.is_multicast() { None } else { self.lookup(da, now) };
        match known {
            Some(p) if p == ingress => {
                self.counters.filtered += 1;
                Forwarding::Filter
            }
            Some(p) => {
                self.counters.forwarded += 1;
                Forwarding::Port(p)
            }
            None => {
                self.counters.flooded += 1;
                Forwarding::Flood((0..self.ports).filter(|&p| p != ingress).collect())
            }
        }
    }
}

// ---- scenario description ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub wireless: WirelessParams,
    pub wired_latency_ns: u64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults { wireless: WirelessParams::default(), wired_latency_ns: DEFAULT_WIRED_LATENCY.as_nanos() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub cross_link_abort: bool,
    pub dedup_window: u16,
    pub dedup_timeout_ns: u64,
    pub reassociation_delay_ns: u64,
    /// Delay of association notices and window handoffs between APs.
    pub notify_latency_ns: u64,
    pub handoff_timeout_ns: u64,
    pub mac_aging_ns: u64,
    /// Extra time after the last scheduled activity for frames to settle.
    pub drain_timeout_ns: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            cross_link_abort: false,
            dedup_window: DEFAULT_WINDOW,
            dedup_timeout_ns: DEFAULT_STALE_TIMEOUT.as_nanos(),
            reassociation_delay_ns: DEFAULT_REASSOCIATION_DELAY.as_nanos(),
            notify_latency_ns: 2 * DEFAULT_WIRED_LATENCY.as_nanos(),
            handoff_timeout_ns: DEFAULT_HANDOFF_TIMEOUT.as_nanos(),
            mac_aging_ns: DEFAULT_MAC_AGING.as_nanos(),
            drain_timeout_ns: Duration::from_millis(100).as_nanos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApLinkSpec {
    pub name: String,
    pub mac: MacAddress,
    pub channel: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaLinkSpec {
    pub name: String,
    pub mac: MacAddress,
    pub channel: u16,
    /// Name of the HR AP the link starts associated with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub associate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wireless: Option<WirelessParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSpec {
    Switch {
        id: u32,
        name: String,
    },
    HrAp {
        id: u32,
        name: String,
        mac: MacAddress,
        switch: String,
        links: Vec<ApLinkSpec>,
    },
    HrSta {
        id: u32,
        name: String,
        links: Vec<StaLinkSpec>,
        /// Name of the primary link.
        primary: String,
    },
    LegacyEth {
        id: u32,
        name: String,
        mac: MacAddress,
        switch: String,
    },
    LegacySta {
        id: u32,
        name: String,
        mac: MacAddress,
        channel: u16,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        associate: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wireless: Option<WirelessParams>,
    },
}

impl NodeSpec {
    pub fn id(&self) -> u32 {
        match self {
            NodeSpec::Switch { id, .. }
            | NodeSpec::HrAp { id, .. }
            | NodeSpec::HrSta { id, .. }
            | NodeSpec::LegacyEth { id, .. }
            | NodeSpec::LegacySta { id, .. } => *id,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            NodeSpec::Switch { name, .. }
            | NodeSpec::HrAp { name, .. }
            | NodeSpec::HrSta { name, .. }
            | NodeSpec::LegacyEth { name, .. }
            | NodeSpec::LegacySta { name, .. } => name,
        }
    }

    fn is_endpoint(&self) -> bool {
        matches!(self, NodeSpec::HrSta { .. } | NodeSpec::LegacyEth { .. } | NodeSpec::LegacySta { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchLinkSpec {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub rc: ReliabilityCategory,
    #[serde(default = "default_ac")]
    pub ac: AccessCategory,
    pub period_ns: u64,
    #[serde(default)]
    pub start_ns: u64,
    pub count: u64,
    #[serde(default = "default_payload")]
    pub payload_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ns: Option<u64>,
}

fn default_ac() -> AccessCategory {
    AccessCategory::BestEffort
}

fn default_payload() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoamSpec {
    pub at_ns: u64,
    pub sta: String,
    pub link: String,
    pub target_ap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub options: Options,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub switch_links: Vec<SwitchLinkSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub roaming: Vec<RoamSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn find(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name() == name)
    }

    /// Wireless parameters of a station radio.
    fn radio_params(&self, own: &Option<WirelessParams>) -> WirelessParams {
        own.unwrap_or(self.defaults.wireless)
    }

    /// Sets one parameter. `field` is a dotted path into the JSON form of
    /// the spec, or one of the short names `p`, `R`, `H`, `seed`, or any
    /// field of `options` or of the wireless parameters.
    pub fn set_param(&mut self, field: &str, value: &str) -> Result<(), SpecError> {
        let v: serde_json::Value = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let wireless_fields = ["per_attempt_loss", "retry_limit", "attempt_airtime_ns", "ack_timeout_ns", "burst"];
        let field = match field {
            "p" => "per_attempt_loss",
            "R" => "retry_limit",
            "H" => "dedup_window",
            f => f,
        };
        if wireless_fields.contains(&field) {
            doc["defaults"]["wireless"][field] = v.clone();
            // per-radio overrides follow the sweep too
            if let Some(nodes) = doc["nodes"].as_array_mut() {
                for n in nodes {
                    if n.get("wireless").is_some_and(|w| w.is_object()) {
                        n["wireless"][field] = v.clone();
                    }
                    if let Some(links) = n.get_mut("links").and_then(|l| l.as_array_mut()) {
                        for l in links {
                            if l.get("wireless").is_some_and(|w| w.is_object()) {
                                l["wireless"][field] = v.clone();
                            }
                        }
                    }
                }
            }
        } else if doc["options"].get(field).is_some() {
            doc["options"][field] = v;
        } else if field == "seed" || field == "name" {
            doc[field] = v;
        } else {
            let mut cur = &mut doc;
            for part in field.split('.') {
                cur = match cur {
                    serde_json::Value::Object(m) => m.get_mut(part),
                    serde_json::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| SpecError::UnknownParameter(field.to_string()))?;
            }
            *cur = v;
        }
        *self = serde_json::from_value(doc)?;
        Ok(())
    }
}

/// Lists every violated constraint; empty iff the spec can be built.
pub fn validate(spec: &ScenarioSpec) -> Vec<String> {
    let mut v = vec![];
    let mut ids = HashSet::new();
    let mut names = HashSet::new();
    let mut macs: HashMap<MacAddress, String> = HashMap::new();
    let mut mac = |m: MacAddress, owner: String, v: &mut Vec<String>| {
        if m.is_multicast() || m == MacAddress::ZERO {
            v.push(format!("{owner}: MAC {m} is not a unicast address"));
        }
        if let Some(prev) = macs.insert(m, owner.clone()) {
            v.push(format!("MAC uniqueness: {m} used by {prev} and {owner}"));
        }
    };
    let check_params = |p: &WirelessParams, owner: &str, v: &mut Vec<String>| {
        if let Err(e) = p.validate() {
            v.push(format!("{owner}.wireless: {e}"));
        }
    };
    check_params(&spec.defaults.wireless, "defaults", &mut v);

    for n in &spec.nodes {
        if n.id() == 0 {
            v.push(format!("nodes.{}: id 0 is reserved", n.name()));
        }
        if !ids.insert(n.id()) {
            v.push(format!("nodes.{}: duplicate id {}", n.name(), n.id()));
        }
        if !names.insert(n.name().to_string()) || n.name().is_empty() {
            v.push(format!("nodes: duplicate or empty name {:?}", n.name()));
        }
    }
    let is_switch = |s: &str| matches!(spec.find(s), Some(NodeSpec::Switch { .. }));
    let ap_channels = |s: &str| match spec.find(s) {
        Some(NodeSpec::HrAp { links, .. }) => Some(links.iter().map(|l| l.channel).collect::<Vec<_>>()),
        _ => None,
    };

    for n in &spec.nodes {
        let nm = n.name();
        match n {
            NodeSpec::Switch { .. } => {}
            NodeSpec::HrAp { mac: m, switch, links, .. } => {
                mac(*m, format!("{nm}.mac"), &mut v);
                if !is_switch(switch) {
                    v.push(format!("{nm}.switch: {switch:?} does not name a switch"));
                }
                if links.is_empty() {
                    v.push(format!("{nm}.links: an HR AP needs at least one link"));
                }
                for l in links {
                    mac(l.mac, format!("{nm}.{}", l.name), &mut v);
                }
            }
            NodeSpec::HrSta { links, primary, .. } => {
                if links.is_empty() {
                    v.push(format!("{nm}.links: an HR STA needs at least one link"));
                }
                if !links.iter().any(|l| &l.name == primary) {
                    v.push(format!("{nm}.primary: no link named {primary:?}"));
                }
                let mut used: HashMap<(String, u16), usize> = HashMap::new();
                for l in links {
                    mac(l.mac, format!("{nm}.{}", l.name), &mut v);
                    if let Some(w) = &l.wireless {
                        check_params(w, &format!("{nm}.{}", l.name), &mut v);
                    }
                    if let Some(ap) = &l.associate {
                        match ap_channels(ap) {
                            None => v.push(format!("{nm}.{}.associate: {ap:?} is not an HR AP", l.name)),
                            Some(ch) => {
                                let free = ch.iter().filter(|&&c| c == l.channel).count();
                                let n_used = used.entry((ap.clone(), l.channel)).or_insert(0);
                                *n_used += 1;
                                if free == 0 {
                                    v.push(format!(
                                        "{nm}.{}: channel mismatch, {ap} has no link on channel {}",
                                        l.name, l.channel
                                    ));
                                } else if *n_used > free {
                                    v.push(format!("{nm}.{}: no free link on {ap} channel {}", l.name, l.channel));
                                }
                            }
                        }
                    }
                }
            }
            NodeSpec::LegacyEth { mac: m, switch, .. } => {
                mac(*m, format!("{nm}.mac"), &mut v);
                if !is_switch(switch) {
                    v.push(format!("{nm}.switch: {switch:?} does not name a switch"));
                }
            }
            NodeSpec::LegacySta { mac: m, channel, associate, wireless, .. } => {
                mac(*m, format!("{nm}.mac"), &mut v);
                if let Some(w) = wireless {
                    check_params(w, nm, &mut v);
                }
                if let Some(ap) = associate {
                    match ap_channels(ap) {
                        None => v.push(format!("{nm}.associate: {ap:?} is not an HR AP")),
                        Some(ch) if !ch.contains(channel) => {
                            v.push(format!("{nm}: channel mismatch, {ap} has no link on channel {channel}"))
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    // switch graph must be a forest, otherwise flooding never ends
    let mut parent: HashMap<&str, &str> = HashMap::new();
    fn root<'a>(p: &HashMap<&'a str, &'a str>, mut x: &'a str) -> &'a str {
        while let Some(&y) = p.get(x) {
            if y == x {
                break;
            }
            x = y;
        }
        x
    }
    for (i, l) in spec.switch_links.iter().enumerate() {
        if !is_switch(&l.a) || !is_switch(&l.b) {
            v.push(format!("switch_links.{i}: both ends must be switches"));
            continue;
        }
        let (ra, rb) = (root(&parent, &l.a), root(&parent, &l.b));
        if ra == rb {
            v.push(format!("switch_links.{i}: switch loop between {} and {}", l.a, l.b));
        } else {
            parent.insert(ra, rb);
        }
    }

    for f in &spec.flows {
        let src = spec.find(&f.src);
        let dst = spec.find(&f.dst);
        for (what, end, n) in [("src", &f.src, src), ("dst", &f.dst, dst)] {
            match n {
                None => v.push(format!("flows.{}.{what}: unknown node {end:?}", f.name)),
                Some(n) if !n.is_endpoint() => v.push(format!("flows.{}.{what}: {end:?} is not an endpoint", f.name)),
                _ => {}
            }
        }
        if f.src == f.dst {
            v.push(format!("flows.{}: src and dst are the same node", f.name));
        }
        if f.count > 1 && f.period_ns == 0 {
            v.push(format!("flows.{}.period_ns: must be positive", f.name));
        }
        if let ReliabilityCategory::Reliable(k) = f.rc {
            let links = |n: Option<&NodeSpec>| match n {
                Some(NodeSpec::HrSta { links, .. }) => Some(links.len()),
                _ => None,
            };
            let avail = links(src).or(links(dst)).unwrap_or(1);
            if k == 0 {
                v.push(format!("flows.{}.rc: reliable(0) is not a category", f.name));
            } else if usize::from(k) > avail {
                v.push(format!("flows.{}.rc: k exceeds affiliated links ({k} > {avail})", f.name));
            }
        }
    }

    if spec.options.dedup_window == 0 || spec.options.dedup_window > MAX_WINDOW {
        v.push(format!("options.dedup_window: must be in 1..={MAX_WINDOW}"));
    }

    let mut intervals: BTreeMap<&str, Vec<(u64, u64, usize)>> = BTreeMap::new();
    for (i, r) in spec.roaming.iter().enumerate() {
        match spec.find(&r.sta) {
            Some(NodeSpec::HrSta { links, .. }) => match links.iter().find(|l| l.name == r.link) {
                None => v.push(format!("roaming.{i}.link: {} has no link {:?}", r.sta, r.link)),
                Some(l) => match ap_channels(&r.target_ap) {
                    None => v.push(format!("roaming.{i}.target_ap: {:?} is not an HR AP", r.target_ap)),
                    Some(ch) if !ch.contains(&l.channel) => v.push(format!(
                        "roaming.{i}: channel mismatch, {} has no link on channel {}",
                        r.target_ap, l.channel
                    )),
                    _ => {}
                },
            },
            _ => v.push(format!("roaming.{i}.sta: {:?} is not an HR STA", r.sta)),
        }
        let end = r.at_ns.saturating_add(spec.options.reassociation_delay_ns);
        intervals.entry(r.sta.as_str()).or_default().push((r.at_ns, end, i));
    }
    for list in intervals.values_mut() {
        list.sort_unstable();
        for w in list.windows(2) {
            if w[1].0 < w[0].1 {
                v.push(format!("roaming.{}: serialization, overlaps roaming.{} on the same HR STA", w[1].2, w[0].2));
            }
        }
    }
    v
}

/// Run-time knobs that do not belong to the scenario.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub trace: bool,
    /// Keep one record per copy reaching an eliminator.
    pub record_copies: bool,
}

/// Validates and constructs a simulation.
pub fn build(spec: &ScenarioSpec, opts: BuildOptions) -> Result<Simulation, SpecError> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(SpecError::Invalid(violations));
    }
    let o = &spec.options;
    let seed = spec.seed;
    let wired = WiredLink { latency: Duration(spec.defaults.wired_latency_ns) };
    let dedup = || DedupTable::new(o.dedup_window, Duration(o.dedup_timeout_ns));
    let id_of: HashMap<&str, NodeId> = spec.nodes.iter().map(|n| (n.name(), NodeId(n.id()))).collect();

    let mut nodes: Vec<Node> = vec![];
    let mut air = BTreeMap::new();
    let mut ap_macs = BTreeMap::new();
    for n in &spec.nodes {
        let id = NodeId(n.id());
        let kind = match n {
            NodeSpec::Switch { .. } => NodeKind::Switch(Switch::new(0, Duration(o.mac_aging_ns))),
            NodeSpec::HrAp { mac, links, name, .. } => {
                ap_macs.insert(id, *mac);
                let infos = links.iter().map(|l| ApLinkInfo { name: l.name.clone(), mac: l.mac, channel: l.channel }).collect();
                let mut ap = HrAp::new(id, name.clone(), *mac, infos, dedup());
                ap.handoff_timeout = Duration(o.handoff_timeout_ns);
                NodeKind::HrAp(Box::new(ap))
            }
            NodeSpec::HrSta { name, links, primary, .. } => {
                let mut taken: HashSet<(NodeId, usize)> = HashSet::new();
                let mut affiliated = vec![];
                for (i, l) in links.iter().enumerate() {
                    let state = match &l.associate {
                        Some(ap) => {
                            let apid = id_of[ap.as_str()];
                            let al = ap_link_for(spec, ap, l.channel, &taken).expect("validated");
                            taken.insert((apid, al));
                            LinkState::Associated { ap: apid, ap_link: al }
                        }
                        None => LinkState::Idle,
                    };
                    affiliated.push(AffiliatedLink { name: l.name.clone(), mac: l.mac, channel: l.channel, state });
                    air.insert((id, i), air_pair(seed, &l.name, spec.radio_params(&l.wireless)));
                }
                let p = links.iter().position(|l| &l.name == primary).expect("validated");
                NodeKind::HrSta(Box::new(HrSta::new(id, name.clone(), affiliated, p, dedup())))
            }
            NodeSpec::LegacyEth { mac, .. } => NodeKind::LegacyEth { mac: *mac },
            NodeSpec::LegacySta { mac, channel, associate, wireless, name, .. } => {
                air.insert((id, 0), air_pair(seed, name, spec.radio_params(wireless)));
                let assoc = associate.as_ref().map(|ap| {
                    (id_of[ap.as_str()], ap_link_for(spec, ap, *channel, &HashSet::new()).expect("validated"))
                });
                NodeKind::LegacySta { mac: *mac, channel: *channel, assoc }
            }
        };
        nodes.push(Node { id, name: n.name().to_string(), kind, ports: vec![] });
    }

    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let connect = |nodes: &mut Vec<Node>, a: NodeId, b: NodeId, link: WiredLink| {
        let pa = nodes[pos[&a]].ports.len();
        let pb = nodes[pos[&b]].ports.len();
        nodes[pos[&a]].ports.push(Port { peer: b, peer_port: pb, link });
        nodes[pos[&b]].ports.push(Port { peer: a, peer_port: pa, link });
        for (n, _) in [(a, pa), (b, pb)] {
            if let NodeKind::Switch(sw) = &mut nodes[pos[&n]].kind {
                sw.add_port();
            }
        }
    };
    for n in &spec.nodes {
        if let NodeSpec::HrAp { switch, .. } | NodeSpec::LegacyEth { switch, .. } = n {
            connect(&mut nodes, NodeId(n.id()), id_of[switch.as_str()], wired);
        }
    }
    for l in &spec.switch_links {
        let link = l.latency_ns.map_or(wired, |ns| WiredLink { latency: Duration(ns) });
        connect(&mut nodes, id_of[l.a.as_str()], id_of[l.b.as_str()], link);
    }

    // every AP starts with the full association picture
    let mut updates = vec![];
    let mut legacy = vec![];
    for n in &nodes {
        match &n.kind {
            NodeKind::HrSta(s) => {
                for (i, l) in s.links.iter().enumerate() {
                    if let Some(a) = l.state.associated_ap() {
                        updates.push(AssocUpdate { sta: n.id, mle: s.mle(), link: i, assoc: Some(a) });
                    }
                }
            }
            NodeKind::LegacySta { mac, assoc: Some(a), .. } => legacy.push((*mac, *a)),
            _ => {}
        }
    }
    for n in nodes.iter_mut() {
        if let NodeKind::HrAp(ap) = &mut n.kind {
            ap.set_ap_directory(ap_macs.clone());
            for u in &updates {
                ap.seed_association(u);
            }
            for (mac, (apid, al)) in &legacy {
                if *apid == ap.id {
                    ap.attach_legacy(*mac, *al);
                }
            }
            ap.seed_roles();
        }
    }

    let mut flows = vec![];
    let mut infos = vec![];
    let mut last = 0u64;
    for f in &spec.flows {
        let src = id_of[f.src.as_str()];
        let dst = id_of[f.dst.as_str()];
        let da = match &nodes[pos[&dst]].kind {
            NodeKind::HrSta(s) => s.primary_mac(),
            NodeKind::LegacyEth { mac } | NodeKind::LegacySta { mac, .. } => *mac,
            _ => unreachable!("validated endpoint"),
        };
        if f.count > 0 {
            last = last.max(f.start_ns + (f.count - 1) * f.period_ns);
        }
        flows.push(Flow {
            name: f.name.clone(),
            src,
            dst,
            da,
            rc: f.rc,
            ac: f.ac,
            start: SimTime(f.start_ns),
            period: Duration(f.period_ns),
            count: f.count,
            payload_len: f.payload_len,
        });
        infos.push(FlowInfo {
            name: f.name.clone(),
            src: f.src.clone(),
            dst: f.dst.clone(),
            rc: f.rc,
            deadline: f.deadline_ns.map(Duration),
        });
    }
    let mut roaming = vec![];
    for r in &spec.roaming {
        let sta = id_of[r.sta.as_str()];
        let NodeKind::HrSta(s) = &nodes[pos[&sta]].kind else { unreachable!("validated") };
        let link = s.links.iter().position(|l| l.name == r.link).expect("validated");
        roaming.push((SimTime(r.at_ns), sta, link, id_of[r.target_ap.as_str()]));
        last = last.max(r.at_ns + o.reassociation_delay_ns);
    }

    let options = WorldOptions {
        cross_link_abort: o.cross_link_abort,
        reassociation_delay: Duration(o.reassociation_delay_ns),
        notify_latency: Duration(o.notify_latency_ns),
    };
    let metrics = Metrics::new(infos, opts.record_copies);
    let mut world = World::new(nodes, air, flows, options, metrics, Trace::new(opts.trace));
    let mut sched = Scheduler::new();
    world.prime(&mut sched, &roaming);
    Ok(Simulation {
        name: spec.name.clone(),
        seed,
        world,
        sched,
        end: SimTime(last) + Duration(o.drain_timeout_ns),
    })
}

fn ap_link_for(spec: &ScenarioSpec, ap: &str, channel: u16, taken: &HashSet<(NodeId, usize)>) -> Option<usize> {
    let Some(NodeSpec::HrAp { id, links, .. }) = spec.find(ap) else { return None };
    links
        .iter()
        .enumerate()
        .position(|(i, l)| l.channel == channel && !taken.contains(&(NodeId(*id), i)))
}

fn air_pair(seed: u64, name: &str, params: WirelessParams) -> AirPair {
    AirPair {
        name: name.to_string(),
        up: WirelessLink::new(params, RngStream::named(seed, &format!("{name}/up"))),
        down: WirelessLink::new(params, RngStream::named(seed, &format!("{name}/down"))),
    }
}

// ---- presets ----

pub const PRESETS: [&str; 4] = ["scenario1", "scenario2", "scenario3", "relay_demo"];

pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "scenario1" => Some(scenario1()),
        "scenario2" => Some(scenario2()),
        "scenario3" => Some(scenario3()),
        "relay_demo" => Some(relay_demo()),
        _ => None,
    }
}

fn mac(a: u8, b: u8) -> MacAddress {
    MacAddress([0x02, 0, 0, 0, a, b])
}

fn sw() -> NodeSpec {
    NodeSpec::Switch { id: 10, name: "sw".into() }
}

fn hr_ap(id: u8) -> NodeSpec {
    NodeSpec::HrAp {
        id: id.into(),
        name: id.to_string(),
        mac: mac(id, 0),
        switch: "sw".into(),
        links: vec![
            ApLinkSpec { name: format!("{id}A"), mac: mac(id, 0x0a), channel: 1 },
            ApLinkSpec { name: format!("{id}B"), mac: mac(id, 0x0b), channel: 2 },
        ],
    }
}

fn hr_sta3(a: &str, b: &str, primary: &str) -> NodeSpec {
    NodeSpec::HrSta {
        id: 3,
        name: "3".into(),
        links: vec![
            StaLinkSpec { name: "3A".into(), mac: mac(3, 0x0a), channel: 1, associate: Some(a.into()), wireless: None },
            StaLinkSpec { name: "3B".into(), mac: mac(3, 0x0b), channel: 2, associate: Some(b.into()), wireless: None },
        ],
        primary: primary.into(),
    }
}

fn node4() -> NodeSpec {
    NodeSpec::LegacyEth { id: 4, name: "4".into(), mac: mac(0, 4), switch: "sw".into() }
}

fn flow(name: &str, src: &str, dst: &str, start_ns: u64, count: u64) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        src: src.into(),
        dst: dst.into(),
        rc: ReliabilityCategory::Reliable(2),
        ac: AccessCategory::Voice,
        period_ns: Duration::from_millis(1).as_nanos(),
        start_ns,
        count,
        payload_len: 64,
        deadline_ns: Some(Duration::from_millis(2).as_nanos()),
    }
}

/// Stationary, single AP: both links of HR STA 3 on AP 1.
pub fn scenario1() -> ScenarioSpec {
    ScenarioSpec {
        name: "scenario1".into(),
        seed: 1,
        defaults: Defaults::default(),
        options: Options::default(),
        nodes: vec![sw(), hr_ap(1), hr_sta3("1", "1", "3A"), node4()],
        switch_links: vec![],
        flows: vec![flow("up", "3", "4", 0, 1000), flow("down", "4", "3", 500_000, 1000)],
        roaming: vec![],
    }
}

/// Stationary, multiple APs: 3A on AP 2, 3B (primary) on AP 1.
pub fn scenario2() -> ScenarioSpec {
    ScenarioSpec {
        name: "scenario2".into(),
        seed: 1,
        defaults: Defaults::default(),
        options: Options::default(),
        nodes: vec![sw(), hr_ap(1), hr_ap(2), hr_sta3("2", "1", "3B"), node4()],
        switch_links: vec![],
        flows: vec![flow("up", "3", "4", 0, 1000), flow("down", "4", "3", 500_000, 1000)],
        roaming: vec![],
    }
}

/// Moving, multiple APs: one transition of each kind.
pub fn scenario3() -> ScenarioSpec {
    let ms = |m: u64| Duration::from_millis(m).as_nanos();
    let roam = |at: u64, link: &str, ap: &str| RoamSpec { at_ns: ms(at), sta: "3".into(), link: link.into(), target_ap: ap.into() };
    ScenarioSpec {
        name: "scenario3".into(),
        seed: 1,
        defaults: Defaults::default(),
        options: Options::default(),
        nodes: vec![sw(), hr_ap(1), hr_ap(2), hr_ap(5), hr_sta3("1", "1", "3B"), node4()],
        switch_links: vec![],
        flows: vec![flow("up", "3", "4", 0, 800), flow("down", "4", "3", 500_000, 800)],
        roaming: vec![roam(200, "3A", "2"), roam(400, "3B", "5"), roam(600, "3A", "5")],
    }
}

/// One redundant uplink frame over the distributed layout, lossless.
pub fn relay_demo() -> ScenarioSpec {
    let mut s = scenario2();
    s.name = "relay_demo".into();
    s.defaults.wireless.per_attempt_loss = 0.0;
    s.flows = vec![FlowSpec { count: 1, deadline_ns: None, ..flow("up", "3", "4", 0, 1) }];
    s
}

/// Counts of (HR STAs, HR APs, switches, legacy nodes).
pub fn node_counts(spec: &ScenarioSpec) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for n in &spec.nodes {
        match n {
            NodeSpec::HrSta { .. } => c.0 += 1,
            NodeSpec::HrAp { .. } => c.1 += 1,
            NodeSpec::Switch { .. } => c.2 += 1,
            NodeSpec::LegacyEth { .. } | NodeSpec::LegacySta { .. } => c.3 += 1,
        }
    }
    c
}

/// Names of the nodes of one kind, in spec order.
pub fn names_of(spec: &ScenarioSpec, kind: &str) -> BTreeSet<String> {
    spec.nodes
        .iter()
        .filter(|n| {
            matches!(
                (kind, n),
                ("hr_ap", NodeSpec::HrAp { .. })
                    | ("hr_sta", NodeSpec::HrSta { .. })
                    | ("switch", NodeSpec::Switch { .. })
                    | ("legacy", NodeSpec::LegacyEth { .. } | NodeSpec::LegacySta { .. })
            )
        })
        .map(|n| n.name().to_string())
        .collect()
}
