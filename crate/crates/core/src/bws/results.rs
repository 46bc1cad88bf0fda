//! `results<participant>.csv`: one row per recorded judgment, one per
//! verbalization, and a final duration row.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::design::{Phase, Tuple};
use super::scoring::Judgment;

pub const RESULTS_COLUMNS: [&str; 12] = [
    "participant_id",
    "trial_index",
    "phase",
    "s1",
    "s2",
    "s3",
    "s4",
    "best_id",
    "worst_id",
    "rt_ms",
    "text",
    "duration_s",
];

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Main,
    Retest,
    Verbalization,
    Duration,
}

/// Verbalization rows carry the positive id in `s1` and the answer in
/// `text`; their `trial_index` is the 1-based verbalization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub participant_id: u32,
    pub trial_index: Option<usize>,
    pub phase: RowKind,
    pub s1: String,
    pub s2: String,
    pub s3: String,
    pub s4: String,
    pub best_id: String,
    pub worst_id: String,
    pub rt_ms: Option<u64>,
    pub text: String,
    pub duration_s: Option<u64>,
}

impl ResultRow {
    pub fn judgment(participant_id: u32, trial_index: usize, phase: Phase, tuple: &Tuple, best: usize, worst: usize, rt_ms: u64) -> Self {
        let [s1, s2, s3, s4] = tuple.0.clone();
        Self {
            participant_id,
            trial_index: Some(trial_index),
            phase: if phase == Phase::Retest { RowKind::Retest } else { RowKind::Main },
            best_id: tuple.0[best].clone(),
            worst_id: tuple.0[worst].clone(),
            s1,
            s2,
            s3,
            s4,
            rt_ms: Some(rt_ms),
            text: String::new(),
            duration_s: None,
        }
    }

    pub fn verbalization(participant_id: u32, order: usize, positive_id: &str, text: &str) -> Self {
        Self {
            participant_id,
            trial_index: Some(order),
            phase: RowKind::Verbalization,
            s1: positive_id.to_string(),
            s2: String::new(),
            s3: String::new(),
            s4: String::new(),
            best_id: String::new(),
            worst_id: String::new(),
            rt_ms: None,
            text: text.to_string(),
            duration_s: None,
        }
    }

    pub fn duration(participant_id: u32, seconds: u64) -> Self {
        Self {
            trial_index: None,
            phase: RowKind::Duration,
            duration_s: Some(seconds),
            ..Self::verbalization(participant_id, 0, "", "")
        }
    }

    pub fn is_judgment(&self) -> bool {
        matches!(self.phase, RowKind::Main | RowKind::Retest)
    }

    pub fn tuple(&self) -> Tuple {
        Tuple([self.s1.clone(), self.s2.clone(), self.s3.clone(), self.s4.clone()])
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<(), ResultsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn results_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = Vec::new();
    write_results(rows, &mut out).expect("writing to memory");
    out
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, ResultsError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_COLUMNS {
        return Err(ResultsError::Invalid {
            row: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

/// Judgment rows as scoring input; other rows are skipped.
pub fn judgments(rows: &[ResultRow]) -> Result<Vec<Judgment>, ResultsError> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.is_judgment())
        .map(|(i, r)| {
            let tuple = r.tuple();
            let invalid = |message: String| ResultsError::Invalid { row: i + 1, message };
            let best = tuple
                .position(&r.best_id)
                .ok_or_else(|| invalid(format!("best '{}' is not in the tuple", r.best_id)))?;
            let worst = tuple
                .position(&r.worst_id)
                .ok_or_else(|| invalid(format!("worst '{}' is not in the tuple", r.worst_id)))?;
            let j = Judgment {
                participant_id: r.participant_id,
                trial_index: r.trial_index.ok_or_else(|| invalid("missing trial_index".into()))?,
                tuple,
                best,
                worst,
                phase: if r.phase == RowKind::Retest { Phase::Retest } else { Phase::Main },
            };
            j.validate().map_err(|e| invalid(e.to_string()))?;
            Ok(j)
        })
        .collect()
}
