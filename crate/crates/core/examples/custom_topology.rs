//! Builds a scenario from JSON: two HR stations on different APs, a legacy
//! Wi-Fi station and a wired server, with cross-link abort enabled.

use hr_wifi::topology::{self, BuildOptions, ScenarioSpec};

const SCENARIO: &str = r#"{
  "name": "custom", "seed": 9,
  "options": {"cross_link_abort": true},
  "defaults": {"wireless": {"per_attempt_loss": 0.25, "retry_limit": 3}},
  "nodes": [
    {"kind": "switch", "id": 10, "name": "sw"},
    {"kind": "hr_ap", "id": 1, "name": "ap1", "mac": "02:00:00:00:01:00", "switch": "sw",
     "links": [{"name": "1A", "mac": "02:00:00:00:01:0a", "channel": 1},
               {"name": "1B", "mac": "02:00:00:00:01:0b", "channel": 2}]},
    {"kind": "hr_ap", "id": 2, "name": "ap2", "mac": "02:00:00:00:02:00", "switch": "sw",
     "links": [{"name": "2A", "mac": "02:00:00:00:02:0a", "channel": 1},
               {"name": "2B", "mac": "02:00:00:00:02:0b", "channel": 2}]},
    {"kind": "hr_sta", "id": 3, "name": "robot", "primary": "rA",
     "links": [{"name": "rA", "mac": "02:00:00:00:03:0a", "channel": 1, "associate": "ap1"},
               {"name": "rB", "mac": "02:00:00:00:03:0b", "channel": 2, "associate": "ap2",
                "wireless": {"per_attempt_loss": 0.05, "retry_limit": 3}}]},
    {"kind": "hr_sta", "id": 5, "name": "plc", "primary": "pB",
     "links": [{"name": "pA", "mac": "02:00:00:00:05:0a", "channel": 1, "associate": "ap2"},
               {"name": "pB", "mac": "02:00:00:00:05:0b", "channel": 2, "associate": "ap1"}]},
    {"kind": "legacy_sta", "id": 6, "name": "laptop", "mac": "02:00:00:00:00:06", "channel": 1, "associate": "ap2"},
    {"kind": "legacy_eth", "id": 4, "name": "server", "mac": "02:00:00:00:00:04", "switch": "sw"}
  ],
  "flows": [
    {"name": "control", "src": "plc", "dst": "robot", "rc": {"reliable": 2}, "ac": "voice",
     "period_ns": 2000000, "count": 2000, "deadline_ns": 1500000},
    {"name": "telemetry", "src": "robot", "dst": "server", "rc": {"reliable": 2},
     "period_ns": 1000000, "count": 4000},
    {"name": "web", "src": "laptop", "dst": "server", "rc": "best_effort",
     "period_ns": 5000000, "count": 800}
  ]
}"#;

fn main() {
    let spec = ScenarioSpec::from_json(SCENARIO).unwrap();
    let problems = topology::validate(&spec);
    assert!(problems.is_empty(), "{problems:?}");
    let out = topology::build(&spec, BuildOptions::default()).unwrap().run().unwrap();
    print!("{}", out.report.to_csv());
    let aborted: u64 = out.report.links.iter().map(|l| l.stats.aborted).sum();
    println!("aborted transmissions: {aborted}, transparency violations: {}", out.report.transparency_violations);
}
