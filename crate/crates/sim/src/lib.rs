//! Scenario files, event logs and run artefacts for the SLA ledger engine.
//!
//! [`run_scenario`] drives a [`Simulation`] and writes everything a run
//! produces into one directory; [`replay`] re-scores a saved event log
//! without simulating anything.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sla_ledger_core::sim::{InvariantViolation, LogEvent, RunMetrics, Scenario, SimError, Simulation};
use sla_ledger_core::ledger::{export_line, import_line, verify_blocks, Block, ChainVerdict};
use sla_ledger_core::{Digest, Tick};

/// Version of the event log layout.
pub const LOG_SCHEMA_VERSION: u32 = 1;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHAINS_DIR: &str = "chains";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    ScenarioParse { path: String, line: usize, message: String },
    #[error("scenario rejected: {0}")]
    Scenario(#[from] SimError),
    #[error("log schema {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("{0}")]
    Invariant(#[from] InvariantViolation),
    #[error("chain export corrupt at height {height}")]
    CorruptChain { height: u64 },
    #[error("bad chain export line {line}: {message}")]
    BadExport { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl Error {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ScenarioParse { .. } | Error::Scenario(_) | Error::SchemaMismatch { .. } => 2,
            Error::BadExport { .. } => 2,
            Error::Invariant(_) | Error::CorruptLog(_) | Error::CorruptChain { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a TOML scenario. `origin` names the source in errors.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, Error> {
    toml::from_str(text).map_err(|e: toml::de::Error| Error::ScenarioParse {
        path: origin.into(),
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().into(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogTrailer {
    pub events: u64,
    pub metrics: RunMetrics,
    /// Hash over the event lines, newline-terminated.
    pub digest: String,
    /// First failed invariant, when the run stopped early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<InvariantViolation>,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("log records serialise")
}

/// Renders a complete event log.
pub fn render_log(header: &LogHeader, events: &[LogEvent], failure: Option<&InvariantViolation>) -> String {
    let mut out = json(header);
    out.push('\n');
    let mut body = String::new();
    for e in events {
        body.push_str(&json(e));
        body.push('\n');
    }
    let trailer = LogTrailer {
        events: events.len() as u64,
        metrics: RunMetrics::from_events(events),
        digest: Digest::of(body.as_bytes()).to_hex(),
        failure: failure.cloned(),
    };
    out.push_str(&body);
    out.push_str(&json(&trailer));
    out.push('\n');
    out
}

/// A parsed and checked event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<LogEvent>,
    pub trailer: LogTrailer,
}

/// Reads an event log, checking its schema, length and digest.
pub fn read_log(reader: impl BufRead) -> Result<EventLog, Error> {
    let mut lines = reader.lines().enumerate();
    let corrupt = |n: usize, what: String| Error::CorruptLog(format!("line {}: {what}", n + 1));
    let (_, first) = lines.next().ok_or_else(|| Error::CorruptLog("empty log".into()))?;
    let first = first.map_err(|e| Error::CorruptLog(e.to_string()))?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| corrupt(0, e.to_string()))?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64());
    match found {
        Some(v) if v == u64::from(LOG_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::SchemaMismatch {
                found: v as u32,
                expected: LOG_SCHEMA_VERSION,
            })
        }
        None => return Err(corrupt(0, "missing header".into())),
    }
    let header: LogHeader = serde_json::from_value(raw).map_err(|e| corrupt(0, e.to_string()))?;
    let mut events = Vec::new();
    let mut body = String::new();
    let mut trailer = None;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::CorruptLog(e.to_string()))?;
        if trailer.is_some() {
            return Err(corrupt(n, "data after trailer".into()));
        }
        match serde_json::from_str::<LogEvent>(&line) {
            Ok(e) => {
                body.push_str(&line);
                body.push('\n');
                events.push(e);
            }
            Err(_) => match serde_json::from_str::<LogTrailer>(&line) {
                Ok(t) => trailer = Some(t),
                Err(e) => return Err(corrupt(n, e.to_string())),
            },
        }
    }
    let trailer = trailer.ok_or_else(|| Error::CorruptLog("truncated: no trailer".into()))?;
    if trailer.events != events.len() as u64 {
        return Err(Error::CorruptLog(format!(
            "trailer counts {} events, log has {}",
            trailer.events,
            events.len()
        )));
    }
    if Digest::of(body.as_bytes()).to_hex() != trailer.digest {
        return Err(Error::CorruptLog("event digest mismatch".into()));
    }
    Ok(EventLog { header, events, trailer })
}

/// Re-scores a saved log. The result must match the metrics recorded when
/// the log was written.
pub fn replay(path: &Path) -> Result<RunMetrics, Error> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let log = read_log(BufReader::new(f))?;
    let metrics = RunMetrics::from_events(&log.events);
    if metrics != log.trailer.metrics {
        return Err(Error::CorruptLog("recorded metrics disagree with events".into()));
    }
    Ok(metrics)
}

/// Chain export for one ledger channel: one line per block.
pub fn export_chain(blocks: &[impl AsRef<Block>]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&export_line(b.as_ref()));
        out.push('\n');
    }
    out
}

/// Checks a chain export; returns the number of blocks.
pub fn verify_export(text: &str) -> Result<usize, Error> {
    let blocks = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            import_line(l).map_err(|e| Error::BadExport {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    match verify_blocks(&blocks) {
        ChainVerdict::Intact => Ok(blocks.len()),
        ChainVerdict::Corrupt { height } => Err(Error::CorruptChain { height }),
    }
}

/// What a finished run produced, in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub simulation: Simulation,
    pub log: String,
    pub metrics: RunMetrics,
}

impl RunOutput {
    pub fn failure(&self) -> Option<&InvariantViolation> {
        self.simulation.failure()
    }

    /// Chain exports keyed `<ledger>-<channel>.chain`.
    pub fn chain_exports(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for l in self.simulation.ledgers() {
            for ch in l.channel_ids() {
                let blocks = l.blocks(ch).expect("listed channel");
                out.push((format!("{}-{ch}.chain", l.id()), export_chain(blocks)));
            }
        }
        out
    }

    /// Final reports, governance reports and violations, keyed by file name.
    pub fn reports(&self) -> Vec<(String, String)> {
        let pretty = |v: &dyn erased::Json| v.pretty();
        let mut out = Vec::new();
        for r in self.simulation.lifecycle().reports() {
            out.push((format!("final-{}.json", r.report.sla_id), pretty(r)));
        }
        for r in self.simulation.monitor().reports() {
            out.push((format!("governance-{:06}.json", r.period.end), pretty(r)));
        }
        let violations = self.simulation.monitor().events().to_vec();
        out.push(("violations.json".into(), pretty(&violations)));
        out
    }

    /// Writes the log, metrics, chain exports and reports under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), Error> {
        let write = |path: PathBuf, body: &str| -> Result<(), Error> {
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(body.as_bytes()).map_err(io_err(&path))
        };
        for sub in [CHAINS_DIR, REPORTS_DIR] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        write(dir.join(EVENTS_FILE), &self.log)?;
        let mut metrics = serde_json::to_string_pretty(&self.metrics).expect("metrics serialise");
        metrics.push('\n');
        write(dir.join(METRICS_FILE), &metrics)?;
        for (name, body) in self.chain_exports() {
            write(dir.join(CHAINS_DIR).join(name), &body)?;
        }
        for (name, body) in self.reports() {
            write(dir.join(REPORTS_DIR).join(name), &body)?;
        }
        Ok(())
    }
}

mod erased {
    use serde::Serialize;

    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: Serialize> Json for T {
        fn pretty(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("reports serialise");
            s.push('\n');
            s
        }
    }
}

/// Runs a scenario in memory. An invariant failure still yields output;
/// check [`RunOutput::failure`].
pub fn simulate(scenario: Scenario, seed: Option<u64>, until: Option<Tick>) -> Result<RunOutput, Error> {
    let mut sim = Simulation::new(scenario, seed)?;
    sim.run(until);
    let header = LogHeader {
        schema_version: LOG_SCHEMA_VERSION,
        scenario: sim.scenario().name.clone(),
        seed: sim.scenario().seed,
    };
    let log = render_log(&header, sim.events(), sim.failure());
    let metrics = sim.metrics();
    Ok(RunOutput {
        simulation: sim,
        log,
        metrics,
    })
}

/// Loads, runs and writes a scenario. Artefacts are written even when an
/// invariant fails, so the log can be inspected.
pub fn run_scenario(path: &Path, out: &Path, seed: Option<u64>, until: Option<Tick>) -> Result<RunOutput, Error> {
    let scenario = load_scenario(path)?;
    let output = simulate(scenario, seed, until)?;
    output.write_to(out)?;
    if let Some(v) = output.failure() {
        return Err(v.clone().into());
    }
    Ok(output)
}

/// Report files under a run directory, sorted.
pub fn list_reports(run_dir: &Path) -> Result<Vec<String>, Error> {
    let dir = run_dir.join(REPORTS_DIR);
    let mut names = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(&dir))?;
    names.sort();
    Ok(names)
}

pub fn show_report(run_dir: &Path, name: &str) -> Result<String, Error> {
    let path = run_dir.join(REPORTS_DIR).join(name);
    fs::read_to_string(&path).map_err(io_err(&path))
}

/// The bundled scenarios, in a fixed order.
pub const BUNDLED: [&str; 7] = [
    "football-slice",
    "surgery-breach",
    "churn-consensus",
    "collusion-blacklist",
    "oracle-attack",
    "npn-plmn-handover",
    "relay-interop",
];

/// Directory holding the bundled scenario files.
pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn bundled_path(name: &str) -> PathBuf {
    scenarios_dir().join(format!("{name}.toml"))
}
