//! Run logs and their on-disk formats.
//!
//! Runs are stored as JSON Lines. The first line is a header
//! `{"schema":"reversal-runs","version":1}`; every following line is one
//! [`RunRecord`]. Field order is fixed by the struct definitions, so the same
//! record always serializes to the same bytes. Every record is validated on
//! read and errors carry the 1-based line number.
//!
//! External human data is imported from CSV with the header
//! `participant,trial,choice,outcome[,condition]`; see [`import_human`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentParams, UpdateRule};
use crate::error::{Error, Result};
use crate::task_env::{Action, LatentState, ScheduleKind, StepResult, SwitchEvent};

pub const SCHEMA_NAME: &str = "reversal-runs";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub t: usize,
    pub action: Action,
    /// Label the agent saw/typed, when the run went through a labelled interface.
    pub label_shown: Option<char>,
    pub win: u8,
    pub coins: i32,
    /// Latent state; absent for imported external data.
    pub state: Option<LatentState>,
    pub segment: Option<usize>,
    pub switch_after: Option<SwitchEvent>,
    pub retries: u32,
    /// Milliseconds since the Unix epoch; absent for synthetic runs.
    pub timestamp_ms: Option<u64>,
}

impl TrialRecord {
    pub fn from_step(step: &StepResult) -> Self {
        TrialRecord {
            t: step.trial,
            action: step.action,
            label_shown: None,
            win: step.outcome.win as u8,
            coins: step.outcome.coins,
            state: Some(step.state),
            segment: Some(step.segment),
            switch_after: step.switch,
            retries: 0,
            timestamp_ms: None,
        }
    }

    pub fn won(&self) -> bool {
        self.win == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Complete,
    Incomplete,
}

/// Schedule tag as persisted. `External` marks imported data with no task metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunSchedule {
    FixedCycle,
    RandomUniform,
    External,
}

impl From<ScheduleKind> for RunSchedule {
    fn from(s: ScheduleKind) -> Self {
        match s {
            ScheduleKind::FixedCycle => RunSchedule::FixedCycle,
            ScheduleKind::RandomUniform => RunSchedule::RandomUniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentDescriptor {
    Synthetic {
        rule: UpdateRule,
        params: AgentParams,
    },
    Scripted {
        policy: String,
    },
    Llm {
        provider: String,
        model: String,
        variant: String,
        temperature: f64,
        top_p: f64,
    },
    Human {
        participant: String,
        condition: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub agent: AgentDescriptor,
    pub schedule: RunSchedule,
    pub seed: u64,
    /// Planned run length.
    pub n_trials: usize,
    pub status: RunStatus,
    pub trials: Vec<TrialRecord>,
    pub invalid_attempt_count: u32,
}

impl RunRecord {
    /// True when every trial carries latent state and segment metadata.
    pub fn has_task_metadata(&self) -> bool {
        !self.trials.is_empty() && self.trials.iter().all(|t| t.state.is_some() && t.segment.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InconsistentRun(format!("run {}: {m}", self.run_id)));
        match self.status {
            RunStatus::Complete if self.trials.len() != self.n_trials => {
                return bad(format!("complete run has {} of {} trials", self.trials.len(), self.n_trials))
            }
            RunStatus::Incomplete if self.trials.len() >= self.n_trials => {
                return bad("incomplete run has a full trial count".into())
            }
            _ => {}
        }
        let mut prev: Option<&TrialRecord> = None;
        for tr in &self.trials {
            if tr.win > 1 {
                return bad(format!("trial {}: win must be 0 or 1", tr.t));
            }
            if (tr.coins > 0) != tr.won() || tr.coins == 0 {
                return bad(format!("trial {}: coins {} inconsistent with win={}", tr.t, tr.coins, tr.win));
            }
            if tr.state.is_some() != tr.segment.is_some() {
                return bad(format!("trial {}: state and segment must be both present or both absent", tr.t));
            }
            if let Some(p) = prev {
                if tr.t <= p.t {
                    return bad(format!("trial indices not strictly increasing at {}", tr.t));
                }
                match (p.segment, tr.segment) {
                    (Some(a), Some(b)) => {
                        if b < a || b > a + 1 {
                            return bad(format!("segment index jumps from {a} to {b} at trial {}", tr.t));
                        }
                        if b == a && p.state != tr.state {
                            return bad(format!("state changes within segment {a} at trial {}", tr.t));
                        }
                        if (b == a + 1) != p.switch_after.is_some() {
                            return bad(format!("segment boundary at trial {} without matching switch event", tr.t));
                        }
                    }
                    (None, None) => {}
                    _ => return bad(format!("mixed latent metadata at trial {}", tr.t)),
                }
            } else if tr.t == 0 {
                return bad("trial indices are 1-based".into());
            }
            prev = Some(tr);
        }
        Ok(())
    }

    pub fn total_wins(&self) -> usize {
        self.trials.iter().filter(|t| t.won()).count()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Streaming JSONL writer. Writes the header on creation.
pub struct RunWriter<W: Write> {
    out: W,
}

impl RunWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        RunWriter::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> RunWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        serde_json::to_writer(
            &mut out,
            &Header {
                schema: SCHEMA_NAME.into(),
                version: SCHEMA_VERSION,
            },
        )?;
        out.write_all(b"\n")?;
        Ok(RunWriter { out })
    }

    pub fn write(&mut self, run: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, run)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_runs<'a>(path: impl AsRef<Path>, runs: impl IntoIterator<Item = &'a RunRecord>) -> Result<()> {
    let mut w = RunWriter::create(path)?;
    for r in runs {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Appends one run to a JSONL file, writing the header first if the file is
/// new or empty. Existing files must carry a matching header.
pub fn append_run(path: impl AsRef<Path>, run: &RunRecord) -> Result<()> {
    let path = path.as_ref();
    run.validate()?;
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    if !fresh {
        RunReader::open(path)?;
    }
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let out = BufWriter::new(file);
    let mut w = if fresh { RunWriter::new(out)? } else { RunWriter { out } };
    w.write(run)?;
    w.finish()?;
    Ok(())
}

/// Serializes runs (with header) to a byte buffer.
pub fn runs_to_bytes<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> Result<Vec<u8>> {
    let mut w = RunWriter::new(Vec::new())?;
    for r in runs {
        w.write(r)?;
    }
    w.finish()
}

/// Streaming JSONL reader; yields one validated run per line.
pub struct RunReader<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl RunReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        RunReader::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> RunReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing schema header".into(),
        })??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad schema header: {e}"),
        })?;
        if header.schema != SCHEMA_NAME {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected schema '{}'", header.schema),
            });
        }
        if header.version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(RunReader { lines, line_no: 1 })
    }
}

impl<R: BufRead> Iterator for RunReader<R> {
    type Item = Result<RunRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<RunRecord>(&line)
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })
                .and_then(|run| {
                    run.validate().map_err(|e| Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    Ok(run)
                });
            return Some(parsed);
        }
    }
}

pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    RunReader::open(path)?.collect()
}

pub fn runs_from_bytes(bytes: &[u8]) -> Result<Vec<RunRecord>> {
    RunReader::new(bytes)?.collect()
}

/// One row of an external human-data CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanImportRow {
    pub participant: String,
    pub trial: usize,
    pub choice: String,
    pub outcome: String,
    #[serde(default)]
    pub condition: Option<String>,
}

/// Maps choice symbols to abstract actions for [`import_human`].
#[derive(Clone, Debug)]
pub struct LabelMap {
    pub a0: String,
    pub a1: String,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            a0: "E".into(),
            a1: "V".into(),
        }
    }
}

impl LabelMap {
    fn action(&self, symbol: &str) -> Option<Action> {
        let s = symbol.trim();
        if s == self.a0 {
            Some(Action::A0)
        } else if s == self.a1 {
            Some(Action::A1)
        } else {
            None
        }
    }
}

fn parse_outcome(raw: &str) -> Option<bool> {
    match raw.trim() {
        "+100" | "100" | "1" | "win" => Some(true),
        "-100" | "0" | "loss" => Some(false),
        _ => None,
    }
}

/// Imports external human runs, one per participant (in order of first appearance).
///
/// Imported runs have no latent metadata: they are valid for win-stay,
/// lose-shift, total wins and model fitting, while state-dependent metrics
/// come out missing.
pub fn import_human<R: std::io::Read>(input: R, labels: &LabelMap) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut order: Vec<String> = Vec::new();
    let mut by_participant: HashMap<String, (Option<String>, Vec<TrialRecord>)> = HashMap::new();

    for (i, row) in rdr.deserialize::<HumanImportRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let action = labels.action(&row.choice).ok_or_else(|| Error::Parse {
            line,
            message: format!("unmapped choice symbol '{}'", row.choice),
        })?;
        let win = parse_outcome(&row.outcome).ok_or_else(|| Error::Parse {
            line,
            message: format!("unrecognised outcome '{}'", row.outcome),
        })?;
        let entry = by_participant.entry(row.participant.clone()).or_insert_with(|| {
            order.push(row.participant.clone());
            (row.condition.clone(), Vec::new())
        });
        if let Some(last) = entry.1.last() {
            if row.trial <= last.t {
                return Err(Error::Parse {
                    line,
                    message: format!("trial {} not increasing for participant {}", row.trial, row.participant),
                });
            }
        } else if row.trial == 0 {
            return Err(Error::Parse {
                line,
                message: "trial indices are 1-based".into(),
            });
        }
        entry.1.push(TrialRecord {
            t: row.trial,
            action,
            label_shown: row.choice.trim().chars().next().filter(|_| row.choice.trim().chars().count() == 1),
            win: win as u8,
            coins: if win { 100 } else { -100 },
            state: None,
            segment: None,
            switch_after: None,
            retries: 0,
            timestamp_ms: None,
        });
    }

    Ok(order
        .into_iter()
        .map(|p| {
            let (condition, trials) = by_participant.remove(&p).expect("participant recorded");
            RunRecord {
                run_id: format!("human-{p}"),
                agent: AgentDescriptor::Human {
                    participant: p,
                    condition,
                },
                schedule: RunSchedule::External,
                seed: 0,
                n_trials: trials.len(),
                status: RunStatus::Complete,
                trials,
                invalid_attempt_count: 0,
            }
        })
        .collect())
}

pub fn import_human_file(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Vec<RunRecord>> {
    import_human(File::open(path)?, labels)
}
