//! Event-sourced participant sessions. Every state change is an [`Event`]
//! appended to `sessions/<id>.jsonl`; the results file is a pure function of
//! the event list.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use concealer_core::bws::design::{presentation_order, Trial, TupleDesign};
use concealer_core::bws::results::{results_csv, ResultRow};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
    #[error("event out of order: {0}")]
    Order(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        participant_id: u32,
        at_ms: u64,
        design: TupleDesign,
        verbalization_order: Vec<String>,
    },
    Judged {
        trial_index: usize,
        best_id: String,
        worst_id: String,
        rt_ms: u64,
        at_ms: u64,
    },
    Verbalized {
        positive_id: String,
        text: String,
        at_ms: u64,
    },
    Finished {
        at_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub trial_index: usize,
    pub best_id: String,
    pub worst_id: String,
    pub rt_ms: u64,
}

/// Where a session stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Trial(usize),
    Verbalization(usize),
    Complete,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub participant_id: u32,
    pub design: TupleDesign,
    pub trials: Vec<Trial>,
    pub verbalization_order: Vec<String>,
    /// Next trial index, 1-based. `trials.len() + 1` once all are judged.
    pub cursor: usize,
    pub judged: Vec<Judged>,
    /// In submission order, which follows `verbalization_order`.
    pub verbalizations: Vec<(String, String)>,
    pub started_at_ms: u64,
    pub finished_at_ms: Option<u64>,
}

impl Session {
    pub fn from_created(event: &Event) -> Result<Self, SessionError> {
        let Event::Created {
            participant_id,
            at_ms,
            design,
            verbalization_order,
        } = event
        else {
            return Err(SessionError::Order("log must start with a created event".into()));
        };
        Ok(Self {
            participant_id: *participant_id,
            trials: presentation_order(design),
            design: design.clone(),
            verbalization_order: verbalization_order.clone(),
            cursor: 1,
            judged: Vec::new(),
            verbalizations: Vec::new(),
            started_at_ms: *at_ms,
            finished_at_ms: None,
        })
    }

    pub fn from_events(events: &[Event]) -> Result<Self, SessionError> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| SessionError::Order("empty event log".into()))?;
        let mut session = Self::from_created(first)?;
        for e in rest {
            session.apply(e)?;
        }
        Ok(session)
    }

    pub fn stage(&self) -> Stage {
        if self.finished_at_ms.is_some() {
            Stage::Finished
        } else if self.cursor <= self.trials.len() {
            Stage::Trial(self.cursor)
        } else if self.verbalizations.len() < self.verbalization_order.len() {
            Stage::Verbalization(self.verbalizations.len())
        } else {
            Stage::Complete
        }
    }

    pub fn current_trial(&self) -> Option<&Trial> {
        match self.stage() {
            Stage::Trial(i) => self.trials.get(i - 1),
            _ => None,
        }
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), SessionError> {
        match (event, self.stage()) {
            (
                Event::Judged {
                    trial_index,
                    best_id,
                    worst_id,
                    rt_ms,
                    ..
                },
                Stage::Trial(cursor),
            ) if *trial_index == cursor => {
                let trial = &self.trials[cursor - 1];
                if best_id == worst_id || !trial.tuple.contains(best_id) || !trial.tuple.contains(worst_id) {
                    return Err(SessionError::Order(format!("invalid choice for trial {cursor}")));
                }
                self.judged.push(Judged {
                    trial_index: cursor,
                    best_id: best_id.clone(),
                    worst_id: worst_id.clone(),
                    rt_ms: *rt_ms,
                });
                self.cursor += 1;
            }
            (Event::Verbalized { positive_id, text, .. }, Stage::Verbalization(k))
                if self.verbalization_order[k] == *positive_id =>
            {
                self.verbalizations.push((positive_id.clone(), text.clone()));
            }
            (Event::Finished { at_ms }, Stage::Complete) => self.finished_at_ms = Some(*at_ms),
            (e, stage) => return Err(SessionError::Order(format!("{e:?} at {stage:?}"))),
        }
        Ok(())
    }

    /// Whole seconds between creation and finish, rounded down.
    pub fn duration_s(&self) -> Option<u64> {
        self.finished_at_ms
            .map(|f| f.saturating_sub(self.started_at_ms) / 1000)
    }

    pub fn result_rows(&self) -> Vec<ResultRow> {
        let pid = self.participant_id;
        let mut rows = Vec::new();
        for j in &self.judged {
            let trial = &self.trials[j.trial_index - 1];
            if !trial.phase.is_recorded() {
                continue;
            }
            let best = trial.tuple.position(&j.best_id).expect("validated on apply");
            let worst = trial.tuple.position(&j.worst_id).expect("validated on apply");
            rows.push(ResultRow::judgment(pid, trial.index, trial.phase, &trial.tuple, best, worst, j.rt_ms));
        }
        for (k, (positive, text)) in self.verbalizations.iter().enumerate() {
            rows.push(ResultRow::verbalization(pid, k + 1, positive, text));
        }
        if let Some(d) = self.duration_s() {
            rows.push(ResultRow::duration(pid, d));
        }
        rows
    }

    pub fn results_csv(&self) -> Vec<u8> {
        results_csv(&self.result_rows())
    }
}

pub fn log_path(sessions_dir: &Path, participant_id: u32) -> PathBuf {
    sessions_dir.join(format!("{participant_id}.jsonl"))
}

pub fn results_path(output_dir: &Path, participant_id: u32) -> PathBuf {
    output_dir.join(format!("results{participant_id}.csv"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Appends one event as a JSON line and syncs it to disk.
pub fn append_event(path: &Path, event: &Event, create: bool) -> Result<(), SessionError> {
    let mut line = serde_json::to_vec(event).expect("events serialize");
    line.push(b'\n');
    let mut opts = OpenOptions::new();
    if create {
        opts.write(true).create_new(true);
    } else {
        opts.append(true);
    }
    let mut f = opts.open(path).map_err(io_err(path))?;
    f.write_all(&line).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

/// Reads an event log. A torn final line without its newline is dropped.
pub fn read_events(path: &Path) -> Result<Vec<Event>, SessionError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SessionError::Log {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn replay(path: &Path) -> Result<Session, SessionError> {
    Session::from_events(&read_events(path)?)
}

pub fn write_results_file(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}
