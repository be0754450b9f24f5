//! Per-flow loss, latency and overhead accounting, and the run report.

use std::collections::{BTreeMap, HashMap};
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::channel::LinkStats;
use crate::engine::{Duration, RunSummary, SimTime};
use crate::frames::{FrameId, ReliabilityCategory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("frame {frame} of flow {flow} delivered twice (at {first} ns and {second} ns)")]
    DoubleDelivery { flow: String, frame: FrameId, first: u64, second: u64 },
    #[error("frame {0} was never offered")]
    UnknownFrame(FrameId),
}

#[derive(Debug, Clone)]
pub struct FlowInfo {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub rc: ReliabilityCategory,
    pub deadline: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct FlowStats {
    pub info: FlowInfo,
    pub offered: u64,
    pub delivered: u64,
    /// First-delivery latency per delivered frame, ns, in delivery order.
    pub latencies: Vec<u64>,
    pub deadline_misses: u64,
    pub duplicates_discarded: u64,
    pub ytag_relays: u64,
}

impl FlowStats {
    fn new(info: FlowInfo) -> Self {
        FlowStats {
            info,
            offered: 0,
            delivered: 0,
            latencies: vec![],
            deadline_misses: 0,
            duplicates_discarded: 0,
            ytag_relays: 0,
        }
    }
}

/// Fate of one application frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub flow: u32,
    pub frame: FrameId,
    pub created_ns: u64,
    pub delivered_ns: Option<u64>,
}

/// Arrival of one copy at the node that eliminates duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CopyRecord {
    pub frame: FrameId,
    pub node: String,
    pub time_ns: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    flows: Vec<FlowStats>,
    frames: HashMap<FrameId, FrameRecord>,
    order: Vec<FrameId>,
    /// Copies of each frame currently carried by queued events.
    live: HashMap<FrameId, u32>,
    copies: Vec<CopyRecord>,
    record_copies: bool,
    pub transparency_violations: Vec<String>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl Metrics {
    pub fn new(flows: Vec<FlowInfo>, record_copies: bool) -> Self {
        Metrics {
            flows: flows.into_iter().map(FlowStats::new).collect(),
            record_copies,
            ..Default::default()
        }
    }

    pub fn flows(&self) -> &[FlowStats] {
        &self.flows
    }

    pub fn record_offer(&mut self, flow: u32, frame: FrameId, created_at: SimTime) {
        self.flows[flow as usize].offered += 1;
        self.frames.insert(frame, FrameRecord { flow, frame, created_ns: created_at.as_nanos(), delivered_ns: None });
        self.order.push(frame);
    }

    /// Records the first delivery of `frame`. A second delivery is an
    /// exactly-once violation.
    pub fn record_delivery(
        &mut self,
        flow: u32,
        frame: FrameId,
        created_at: SimTime,
        delivered_at: SimTime,
    ) -> Result<(), MetricsError> {
        let rec = self.frames.get_mut(&frame).ok_or(MetricsError::UnknownFrame(frame))?;
        let st = &mut self.flows[flow as usize];
        if let Some(first) = rec.delivered_ns {
            return Err(MetricsError::DoubleDelivery {
                flow: st.info.name.clone(),
                frame,
                first,
                second: delivered_at.as_nanos(),
            });
        }
        rec.delivered_ns = Some(delivered_at.as_nanos());
        let lat = delivered_at.since(created_at);
        st.delivered += 1;
        st.latencies.push(lat.as_nanos());
        if st.info.deadline.is_some_and(|d| lat > d) {
            st.deadline_misses += 1;
        }
        Ok(())
    }

    pub fn record_discard(&mut self, flow: Option<u32>) {
        if let Some(f) = flow {
            self.flows[f as usize].duplicates_discarded += 1;
        }
    }

    pub fn record_relay(&mut self, flow: Option<u32>) {
        if let Some(f) = flow {
            self.flows[f as usize].ytag_relays += 1;
        }
    }

    pub fn record_copy(&mut self, frame: FrameId, node: &str, at: SimTime, passed: bool) {
        if self.record_copies {
            self.copies.push(CopyRecord { frame, node: node.to_string(), time_ns: at.as_nanos(), passed });
        }
    }

    pub fn copies(&self) -> &[CopyRecord] {
        &self.copies
    }

    pub fn copy_enqueued(&mut self, frame: FrameId) {
        *self.live.entry(frame).or_insert(0) += 1;
    }

    pub fn copy_dequeued(&mut self, frame: FrameId) {
        if let Some(c) = self.live.get_mut(&frame) {
            *c -= 1;
            if *c == 0 {
                self.live.remove(&frame);
            }
        }
    }

    pub fn live_copies(&self, frame: FrameId) -> u32 {
        self.live.get(&frame).copied().unwrap_or(0)
    }

    pub fn frame(&self, id: FrameId) -> Option<&FrameRecord> {
        self.frames.get(&id)
    }

    /// All frame records in offer order.
    pub fn frame_records(&self) -> impl Iterator<Item = &FrameRecord> {
        self.order.iter().map(|id| &self.frames[id])
    }

    pub fn frame_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["flow", "frame", "created_ns", "delivered_ns", "latency_ns"])?;
        for r in self.frame_records() {
            let d = r.delivered_ns.map(|x| x.to_string()).unwrap_or_default();
            let l = r.delivered_ns.map(|x| (x - r.created_ns).to_string()).unwrap_or_default();
            wr.write_record([
                self.flows[r.flow as usize].info.name.clone(),
                r.frame.to_string(),
                r.created_ns.to_string(),
                d,
                l,
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Builds the run report. `in_flight` holds frames still carried by
    /// queued events or parked in node buffers at run end.
    pub fn summarize(
        &self,
        scenario: &str,
        seed: u64,
        engine: RunSummary,
        in_flight: &dyn Fn(FrameId) -> bool,
        links: Vec<LinkReport>,
        nodes: Vec<NodeReport>,
    ) -> Report {
        let mut per_flow: Vec<(u64, u64)> = vec![(0, 0); self.flows.len()];
        for r in self.frame_records() {
            if r.delivered_ns.is_none() {
                if in_flight(r.frame) {
                    per_flow[r.flow as usize].1 += 1;
                } else {
                    per_flow[r.flow as usize].0 += 1;
                }
            }
        }
        let flows = self
            .flows
            .iter()
            .zip(per_flow)
            .map(|(f, (lost, in_flight))| {
                let mut sorted = f.latencies.clone();
                sorted.sort_unstable();
                let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
                FlowReport {
                    name: f.info.name.clone(),
                    src: f.info.src.clone(),
                    dst: f.info.dst.clone(),
                    rc: f.info.rc.to_string(),
                    offered: f.offered,
                    delivered: f.delivered,
                    lost,
                    in_flight,
                    loss_ratio: ratio(lost, f.offered),
                    loss_std_error: {
                        let q = ratio(lost, f.offered);
                        if f.offered == 0 { 0.0 } else { (q * (1.0 - q) / f.offered as f64).sqrt() }
                    },
                    latency_p50_ns: percentile(&sorted, 50.0),
                    latency_p95_ns: percentile(&sorted, 95.0),
                    latency_p99_ns: percentile(&sorted, 99.0),
                    latency_max_ns: sorted.last().copied(),
                    deadline_ns: f.info.deadline.map(|d| d.as_nanos()),
                    deadline_misses: f.deadline_misses,
                    deadline_miss_ratio: ratio(f.deadline_misses, f.delivered),
                    duplicates_discarded: f.duplicates_discarded,
                    duplicate_ratio: ratio(f.duplicates_discarded, f.offered),
                    ytag_relays: f.ytag_relays,
                    wired_relay_overhead: ratio(f.ytag_relays, f.offered),
                }
            })
            .collect::<Vec<_>>();
        let conservation_ok = flows.iter().all(|f| f.offered == f.delivered + f.lost + f.in_flight);
        Report {
            scenario: scenario.to_string(),
            seed,
            events_processed: engine.events_processed,
            final_time_ns: engine.final_time.as_nanos(),
            conservation_ok,
            transparency_violations: self.transparency_violations.len() as u64,
            flows,
            links,
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub rc: String,
    pub offered: u64,
    pub delivered: u64,
    pub lost: u64,
    pub in_flight: u64,
    pub loss_ratio: f64,
    pub loss_std_error: f64,
    pub latency_p50_ns: Option<u64>,
    pub latency_p95_ns: Option<u64>,
    pub latency_p99_ns: Option<u64>,
    pub latency_max_ns: Option<u64>,
    pub deadline_ns: Option<u64>,
    pub deadline_misses: u64,
    pub deadline_miss_ratio: f64,
    pub duplicates_discarded: u64,
    pub duplicate_ratio: f64,
    pub ytag_relays: u64,
    pub wired_relay_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub link: String,
    pub direction: String,
    #[serde(flatten)]
    pub stats: LinkStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub node: String,
    pub kind: String,
    pub counters: BTreeMap<String, u64>,
}

impl NodeReport {
    /// Flattens a counters struct into a name -> value map.
    pub fn from_counters<T: Serialize>(node: &str, kind: &str, c: &T) -> Self {
        let mut counters = BTreeMap::new();
        if let Ok(serde_json::Value::Object(m)) = serde_json::to_value(c) {
            for (k, v) in m {
                if let Some(n) = v.as_u64() {
                    counters.insert(k, n);
                }
            }
        }
        NodeReport { node: node.to_string(), kind: kind.to_string(), counters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub events_processed: u64,
    pub final_time_ns: u64,
    pub conservation_ok: bool,
    pub transparency_violations: u64,
    pub flows: Vec<FlowReport>,
    pub links: Vec<LinkReport>,
    pub nodes: Vec<NodeReport>,
}

pub const FLOW_CSV_HEADER: [&str; 20] = [
    "scenario",
    "seed",
    "flow",
    "src",
    "dst",
    "rc",
    "offered",
    "delivered",
    "lost",
    "in_flight",
    "loss_ratio",
    "latency_p50_ns",
    "latency_p95_ns",
    "latency_p99_ns",
    "latency_max_ns",
    "deadline_misses",
    "deadline_miss_ratio",
    "duplicates_discarded",
    "ytag_relays",
    "wired_relay_overhead",
];

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per flow, without header.
    pub fn flow_rows(&self) -> Vec<Vec<String>> {
        let o = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.flows
            .iter()
            .map(|f| {
                vec![
                    self.scenario.clone(),
                    self.seed.to_string(),
                    f.name.clone(),
                    f.src.clone(),
                    f.dst.clone(),
                    f.rc.clone(),
                    f.offered.to_string(),
                    f.delivered.to_string(),
                    f.lost.to_string(),
                    f.in_flight.to_string(),
                    format!("{:.6}", f.loss_ratio),
                    o(f.latency_p50_ns),
                    o(f.latency_p95_ns),
                    o(f.latency_p99_ns),
                    o(f.latency_max_ns),
                    f.deadline_misses.to_string(),
                    format!("{:.6}", f.deadline_miss_ratio),
                    f.duplicates_discarded.to_string(),
                    f.ytag_relays.to_string(),
                    format!("{:.6}", f.wired_relay_overhead),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut wr = csv::Writer::from_writer(vec![]);
        wr.write_record(FLOW_CSV_HEADER).expect("in-memory write");
        for row in self.flow_rows() {
            wr.write_record(row).expect("in-memory write");
        }
        String::from_utf8(wr.into_inner().expect("flush")).expect("utf8")
    }

    pub fn flow(&self, name: &str) -> Option<&FlowReport> {
        self.flows.iter().find(|f| f.name == name)
    }
}
