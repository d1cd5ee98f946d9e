//! Append-only experiment logs, one JSON event per line.
//!
//! A record is written as a `start` event carrying the configuration,
//! followed by one `epoch` event per logged epoch and a `diverged` event
//! for every run that produced a non-finite loss. Emergence values are
//! decimal strings, so arbitrarily large counts survive the round trip.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::experiment::{Arm, ExperimentConfig, ExperimentRecord, RunRecord};
use crate::nn::EpochLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        config: ExperimentConfig,
        alpha: f64,
        created_unix_ms: u64,
    },
    Epoch {
        seed: u64,
        arm: Arm,
        log: EpochLog,
    },
    Diverged {
        seed: u64,
        arm: Arm,
        epoch: usize,
    },
}

impl ExperimentRecord {
    pub fn to_events(&self) -> Vec<LogEvent> {
        let mut events = vec![LogEvent::Start {
            config: self.config.clone(),
            alpha: self.alpha,
            created_unix_ms: self.created_unix_ms,
        }];
        for run in &self.runs {
            events.extend(run.logs.iter().map(|log| LogEvent::Epoch {
                seed: run.seed,
                arm: run.arm,
                log: log.clone(),
            }));
            if let Some(epoch) = run.diverged_at {
                events.push(LogEvent::Diverged {
                    seed: run.seed,
                    arm: run.arm,
                    epoch,
                });
            }
        }
        events
    }

    /// Groups events into records; each `start` opens a new record. Events
    /// before the first `start` are ignored.
    pub fn from_events(events: &[LogEvent]) -> Vec<ExperimentRecord> {
        let mut records: Vec<ExperimentRecord> = Vec::new();
        for event in events {
            match event {
                LogEvent::Start {
                    config,
                    alpha,
                    created_unix_ms,
                } => records.push(ExperimentRecord {
                    config: config.clone(),
                    alpha: *alpha,
                    created_unix_ms: *created_unix_ms,
                    runs: Vec::new(),
                }),
                LogEvent::Epoch { seed, arm, log } => {
                    if let Some(rec) = records.last_mut() {
                        rec.run_mut(*seed, *arm).logs.push(log.clone());
                    }
                }
                LogEvent::Diverged { seed, arm, epoch } => {
                    if let Some(rec) = records.last_mut() {
                        rec.run_mut(*seed, *arm).diverged_at = Some(*epoch);
                    }
                }
            }
        }
        records
    }

    fn run_mut(&mut self, seed: u64, arm: Arm) -> &mut RunRecord {
        let idx = match self.runs.iter().position(|r| r.seed == seed && r.arm == arm) {
            Some(i) => i,
            None => {
                self.runs.push(RunRecord {
                    seed,
                    arm,
                    logs: Vec::new(),
                    diverged_at: None,
                });
                self.runs.len() - 1
            }
        };
        &mut self.runs[idx]
    }
}

pub fn append_events(path: &Path, events: &[LogEvent]) -> Result<(), DataError> {
    let mut buf = String::new();
    for e in events {
        buf.push_str(&serde_json::to_string(e).expect("log events always serialize"));
        buf.push('\n');
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn append_record(path: &Path, record: &ExperimentRecord) -> Result<(), DataError> {
    append_events(path, &record.to_events())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRead {
    pub events: Vec<LogEvent>,
    /// A final line without a newline that did not parse and was dropped.
    pub dropped_partial: bool,
}

impl LogRead {
    pub fn records(&self) -> Vec<ExperimentRecord> {
        ExperimentRecord::from_events(&self.events)
    }
}

/// Reads every complete event. An unparseable last line that lacks its
/// newline is treated as an interrupted write and dropped with a warning;
/// any other malformed line is an error.
pub fn read_logs(path: &Path) -> Result<LogRead, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_logs(&text)
}

pub(crate) fn parse_logs(text: &str) -> Result<LogRead, DataError> {
    let mut events = Vec::new();
    let mut dropped_partial = false;
    let mut offset = 0;
    let mut segments = text.split('\n').enumerate().peekable();
    while let Some((idx, line)) = segments.next() {
        let is_last = segments.peek().is_none();
        let start = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEvent>(line) {
            Ok(e) => events.push(e),
            Err(_) if is_last => {
                log::warn!("dropping partial trailing log line {} ({} bytes)", idx + 1, line.len());
                dropped_partial = true;
            }
            Err(e) => {
                return Err(DataError::Parse {
                    line: Some(idx + 1),
                    field: None,
                    message: format!("byte {start}: {e}"),
                })
            }
        }
    }
    Ok(LogRead {
        events,
        dropped_partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emergence::EmergenceValue;
    use crate::graph::ActivationProfile;

    fn epoch(seed: u64, e: usize) -> LogEvent {
        LogEvent::Epoch {
            seed,
            arm: Arm::Scaled,
            log: EpochLog {
                epoch: e,
                train_loss: 0.1 * e as f64 + 1.0 / 3.0,
                train_accuracy: 0.5,
                test_accuracy: None,
                emergence: "123456789012345678901234567890".parse::<EmergenceValue>().unwrap(),
                profile: ActivationProfile(vec![2, 1, 3]),
            },
        }
    }

    #[test]
    fn three_events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let events = vec![epoch(0, 1), epoch(0, 2), epoch(1, 1)];
        append_events(&path, &events[..2]).unwrap();
        append_events(&path, &events[2..]).unwrap();
        let read = read_logs(&path).unwrap();
        assert_eq!(read.events, events);
        assert!(!read.dropped_partial);
    }

    #[test]
    fn partial_trailing_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let events = vec![epoch(0, 1), epoch(0, 2), epoch(1, 1)];
        append_events(&path, &events).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"event":"epoch","seed":3,"ar"#).unwrap();
        let read = read_logs(&path).unwrap();
        assert_eq!(read.events.len(), 3);
        assert!(read.dropped_partial);
    }

    #[test]
    fn malformed_middle_line_is_an_error() {
        let text = "{\"event\":\"nope\"}\n\n";
        assert!(matches!(parse_logs(text), Err(DataError::Parse { line: Some(1), .. })));
    }

    #[test]
    fn emergence_is_a_decimal_string_on_disk() {
        let line = serde_json::to_string(&epoch(0, 1)).unwrap();
        assert!(line.contains(r#""emergence":"123456789012345678901234567890""#));
    }
}
