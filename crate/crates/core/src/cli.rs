//! `hrwifi` command-line harness: run, sweep, verify.
//!
//! Exit codes: 0 success, 1 trace divergence, 2 invalid input (bad config,
//! unknown parameter, missing file), 3 invariant violated during a run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::metrics::{Report, FLOW_CSV_HEADER};
use crate::sim::SimError;
use crate::topology::{self, BuildOptions, ScenarioSpec, SpecError};
use crate::trace::{compare_bytes, Comparison};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hrwifi", version, about = "Seamless-redundancy Wi-Fi simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario.
    Run {
        /// Scenario JSON file, or a preset name.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write trace.tsv.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Compare the trace with a golden trace.
        #[arg(long)]
        verify: Option<PathBuf>,
        /// Also write one CSV row per application frame.
        #[arg(long)]
        frames: bool,
    },
    /// Run a parameter grid over several seeds.
    Sweep {
        #[arg(long)]
        config: String,
        /// `field=v1,v2,...`; repeat for a multi-dimensional grid.
        #[arg(long = "sweep")]
        sweep: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// First seed; defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare a trace with a golden trace byte for byte.
    Verify { trace: PathBuf, golden: PathBuf },
    /// Print a preset scenario as JSON.
    Preset { name: String },
}

#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Invariant(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) | Failure::Io(_) => EXIT_INVALID,
            Failure::Invariant(_) => EXIT_INVARIANT,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Invariant(m) | Failure::Io(m) => m,
        }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let SimError::Invariant { tail, .. } = &e;
        Failure::Invariant(format!("{e}\nlast trace records:\n{tail}"))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Loads a scenario from a file, or a preset by name.
pub fn load_spec(config: &str) -> Result<ScenarioSpec, SpecError> {
    let path = Path::new(config);
    if !path.exists() {
        if let Some(p) = topology::preset(config.trim_end_matches(".json")) {
            return Ok(p);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpecError::Invalid(vec![format!("config {}: {e}", path.display())]))?;
    ScenarioSpec::from_json(&text)
}

/// One complete run with the trace kept in memory.
pub fn run_spec(spec: &ScenarioSpec, frames: bool) -> Result<(Report, String, Option<String>), Failure> {
    let sim = topology::build(spec, BuildOptions { trace: true, record_copies: false })?;
    let out = sim.run()?;
    let frames_csv = frames.then(|| {
        let mut buf = vec![];
        out.metrics.frame_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    });
    Ok((out.report, out.trace.render(), frames_csv))
}

fn write(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| io_err(path, e))
}

fn write_report(dir: &Path, report: &Report) -> Result<(), Failure> {
    write(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    write(&dir.join("report.csv"), &report.to_csv())
}

fn cmd_run(
    config: &str,
    seed: Option<u64>,
    trace: bool,
    out: &Path,
    verify: Option<&Path>,
    frames: bool,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let mut spec = load_spec(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (report, trace_text, frames_csv) = run_spec(&spec, frames)?;
    write_report(out, &report)?;
    if trace {
        write(&out.join("trace.tsv"), &trace_text)?;
    }
    if let Some(csv) = frames_csv {
        write(&out.join("frames.csv"), &csv)?;
    }
    for f in &report.flows {
        let _ = writeln!(
            stdout,
            "{}: offered={} delivered={} lost={} loss_ratio={:.6} p95_ns={}",
            f.name,
            f.offered,
            f.delivered,
            f.lost,
            f.loss_ratio,
            f.latency_p95_ns.map_or("-".into(), |v| v.to_string())
        );
    }
    if let Some(golden) = verify {
        let g = std::fs::read(golden).map_err(|e| io_err(golden, e))?;
        return Ok(report_comparison(compare_bytes(trace_text.as_bytes(), &g), stdout));
    }
    Ok(EXIT_OK)
}

fn report_comparison(c: Comparison, stdout: &mut dyn Write) -> i32 {
    match c {
        Comparison::Identical => {
            let _ = writeln!(stdout, "identical");
            EXIT_OK
        }
        Comparison::Differs { line, ours, golden } => {
            let _ = writeln!(stdout, "traces differ at line {line}");
            let _ = writeln!(stdout, "  trace:  {}", ours.as_deref().unwrap_or("<end of file>"));
            let _ = writeln!(stdout, "  golden: {}", golden.as_deref().unwrap_or("<end of file>"));
            EXIT_DIVERGED
        }
    }
}

/// Parses `field=v1,v2`. An empty value list yields an empty grid.
pub fn parse_axis(s: &str) -> Result<(String, Vec<String>), String> {
    let (field, values) = s.split_once('=').ok_or_else(|| format!("sweep {s:?}: expected field=v1,v2,..."))?;
    let values = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    Ok((field.trim().to_string(), values))
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for (field, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((field.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn label(point: &[(String, String)]) -> String {
    if point.is_empty() {
        return "base".into();
    }
    point.iter().map(|(f, v)| format!("{f}={v}")).collect::<Vec<_>>().join(",")
}

fn cmd_sweep(
    config: &str,
    sweep: &[String],
    seeds: u64,
    seed: Option<u64>,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let base = load_spec(config)?;
    let axes = sweep.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>().map_err(Failure::Invalid)?;
    for (field, values) in &axes {
        // reject unknown names even when the value list is empty
        let probe = values.first().cloned().unwrap_or_else(|| "0".into());
        let mut s = base.clone();
        match s.set_param(field, &probe) {
            Err(SpecError::UnknownParameter(f)) => return Err(Failure::Invalid(format!("unknown parameter {f:?}"))),
            Err(e) if !values.is_empty() => return Err(e.into()),
            _ => {}
        }
    }
    let points = grid(&axes);
    let first = seed.unwrap_or(base.seed);
    let mut jobs = vec![];
    for p in &points {
        let mut spec = base.clone();
        for (f, v) in p {
            spec.set_param(f, v)?;
        }
        for s in first..first + seeds {
            let mut sp = spec.clone();
            sp.seed = s;
            jobs.push((label(p), sp));
        }
    }
    let results: Vec<Result<Report, Failure>> = jobs
        .par_iter()
        .map(|(_, spec)| -> Result<Report, Failure> {
            let sim = topology::build(spec, BuildOptions::default())?;
            Ok(sim.run()?.report)
        })
        .collect();

    let mut agg = csv::Writer::from_writer(vec![]);
    let mut header = vec!["point"];
    header.extend(FLOW_CSV_HEADER);
    agg.write_record(&header).expect("in-memory write");
    for ((lbl, spec), r) in jobs.iter().zip(results) {
        let report = r?;
        write_report(&out.join(sanitize(lbl)).join(format!("seed-{}", spec.seed)), &report)?;
        for row in report.flow_rows() {
            let mut rec = vec![lbl.clone()];
            rec.extend(row);
            agg.write_record(&rec).expect("in-memory write");
        }
    }
    let text = String::from_utf8(agg.into_inner().expect("flush")).expect("utf8");
    write(&out.join("aggregate.csv"), &text)?;
    let _ = writeln!(stdout, "{} runs ({} points x {} seeds)", jobs.len(), points.len(), seeds);
    Ok(EXIT_OK)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "=.-_,".contains(c) { c } else { '_' }).collect()
}

fn cmd_verify(trace: &Path, golden: &Path, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let a = std::fs::read(trace).map_err(|e| io_err(trace, e))?;
    let b = std::fs::read(golden).map_err(|e| io_err(golden, e))?;
    Ok(report_comparison(compare_bytes(&a, &b), stdout))
}

/// Entry point with injectable arguments and output streams.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
            } else {
                let _ = write!(stdout, "{}", e.render());
            }
            return code;
        }
    };
    let r = match &cli.command {
        Command::Run { config, seed, trace, out, verify, frames } => {
            cmd_run(config, *seed, *trace, out, verify.as_deref(), *frames, stdout)
        }
        Command::Sweep { config, sweep, seeds, seed, out } => cmd_sweep(config, sweep, *seeds, *seed, out, stdout),
        Command::Verify { trace, golden } => cmd_verify(trace, golden, stdout),
        Command::Preset { name } => match topology::preset(name) {
            Some(p) => {
                let _ = writeln!(stdout, "{}", p.to_json());
                Ok(EXIT_OK)
            }
            None => Err(Failure::Invalid(format!("no preset {name:?}; known: {}", topology::PRESETS.join(", ")))),
        },
    };
    match r {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_and_grid() {
        assert_eq!(parse_axis("p=0.1,0.2").unwrap(), ("p".into(), vec!["0.1".into(), "0.2".into()]));
        assert_eq!(parse_axis("p=").unwrap().1, Vec::<String>::new());
        assert!(parse_axis("p").is_err());
        let g = grid(&[("a".into(), vec!["1".into(), "2".into()]), ("b".into(), vec!["x".into(), "y".into(), "z".into()])]);
        assert_eq!(g.len(), 6);
        assert_eq!(label(&g[1]), "a=1,b=y");
        assert!(grid(&[("a".into(), vec![])]).is_empty());
        assert_eq!(grid(&[]), vec![vec![]]);
    }
}
