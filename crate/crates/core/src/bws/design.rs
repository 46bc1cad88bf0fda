//! Per-participant 4-tuple designs: seeded partition of the stimulus set,
//! cross-participant uniqueness, fixed training tuples and hidden retests.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TUPLE_SIZE: usize = 4;
pub const DESIGN_SCHEMA: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("{count} stimuli cannot be split into tuples of {TUPLE_SIZE}")]
    Divisibility { count: usize },
    #[error("duplicate stimulus id '{0}'")]
    DuplicateStimulus(String),
    #[error("need at least {need} stimuli for the training tuples, have {have}")]
    TooFewStimuli { need: usize, have: usize },
    #[error("no collision-free design after {0} reshuffles; the registry is saturated")]
    Saturated(usize),
    #[error("could not place retests after {0} attempts")]
    RetestPlacement(usize),
}

/// An ordered 4-tuple in display order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tuple(pub [String; TUPLE_SIZE]);

impl Tuple {
    pub fn ids(&self) -> &[String; TUPLE_SIZE] {
        &self.0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.iter().any(|s| s == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|s| s == id)
    }

    /// Order-free identity used for collision checks.
    pub fn set_key(&self) -> [String; TUPLE_SIZE] {
        let mut key = self.0.clone();
        key.sort();
        key
    }

    fn from_slice(ids: &[String]) -> Self {
        Tuple(std::array::from_fn(|i| ids[i].clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Main,
    Retest,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Main => "main",
            Phase::Retest => "retest",
        }
    }

    pub fn is_recorded(self) -> bool {
        self != Phase::Training
    }
}

/// One presented trial. `index` is 1-based over the full presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub tuple: Tuple,
    /// For retests, the trial index of the original main trial.
    pub original: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleDesign {
    pub schema: u32,
    pub participant_id: u32,
    pub seed: u64,
    pub training: Vec<Tuple>,
    pub main: Vec<Tuple>,
    /// Indices into `main` that are shown a second time.
    pub retest: Vec<usize>,
    /// Judged sequence after training: `(main index, is_retest)`.
    pub sequence: Vec<(usize, bool)>,
}

impl TupleDesign {
    pub fn trial_count(&self) -> usize {
        self.training.len() + self.sequence.len()
    }

    pub fn judged_count(&self) -> usize {
        self.sequence.len()
    }

    pub fn contains_stimulus(&self, id: &str) -> bool {
        self.main.iter().chain(&self.training).any(|t| t.contains(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub retests: usize,
    pub training: usize,
    pub max_reshuffles: usize,
    /// Seed of the training tuples, shared by every participant.
    pub training_seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            retests: 4,
            training: 2,
            max_reshuffles: 1000,
            training_seed: 0x7261_696e,
        }
    }
}

/// Set-keys of every main tuple issued so far.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    issued: HashSet<[String; TUPLE_SIZE]>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.issued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issued.is_empty()
    }

    pub fn contains(&self, tuple: &Tuple) -> bool {
        self.issued.contains(&tuple.set_key())
    }

    pub fn register(&mut self, design: &TupleDesign) {
        for t in &design.main {
            self.issued.insert(t.set_key());
        }
    }
}

fn check_stimuli(stimuli: &[String]) -> Result<(), DesignError> {
    if stimuli.is_empty() || stimuli.len() % TUPLE_SIZE != 0 {
        return Err(DesignError::Divisibility { count: stimuli.len() });
    }
    let mut seen = HashSet::new();
    for s in stimuli {
        if !seen.insert(s) {
            return Err(DesignError::DuplicateStimulus(s.clone()));
        }
    }
    Ok(())
}

/// Training tuples, identical for every participant using `config`.
pub fn training_tuples(stimuli: &[String], config: &DesignConfig) -> Result<Vec<Tuple>, DesignError> {
    let need = TUPLE_SIZE * config.training;
    if stimuli.len() < need {
        return Err(DesignError::TooFewStimuli {
            need,
            have: stimuli.len(),
        });
    }
    let mut sorted = stimuli.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(config.training_seed);
    sorted.shuffle(&mut rng);
    Ok(sorted[..need].chunks(TUPLE_SIZE).map(Tuple::from_slice).collect())
}

/// Builds a design for one participant and registers its main tuples.
pub fn design_participant(
    stimuli: &[String],
    participant_id: u32,
    seed: u64,
    registry: &mut Registry,
    config: &DesignConfig,
) -> Result<TupleDesign, DesignError> {
    check_stimuli(stimuli)?;
    let training = training_tuples(stimuli, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = stimuli.to_vec();
    let mut main = None;
    for _ in 0..config.max_reshuffles.max(1) {
        pool.shuffle(&mut rng);
        let tuples: Vec<Tuple> = pool.chunks(TUPLE_SIZE).map(Tuple::from_slice).collect();
        if !tuples.iter().any(|t| registry.contains(t)) {
            main = Some(tuples);
            break;
        }
    }
    let main = main.ok_or(DesignError::Saturated(config.max_reshuffles))?;
    let retest_count = config.retests.min(main.len());
    let (retest, sequence) = place_retests(main.len(), retest_count, &mut rng, config.max_reshuffles.max(1))?;
    let design = TupleDesign {
        schema: DESIGN_SCHEMA,
        participant_id,
        seed,
        training,
        main,
        retest,
        sequence,
    };
    registry.register(&design);
    Ok(design)
}

/// Picks `count` main tuples and inserts their repeats into the last
/// two-thirds of the judged sequence, never directly after the original.
fn place_retests(
    main_len: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Result<(Vec<usize>, Vec<(usize, bool)>), DesignError> {
    let total = main_len + count;
    let lo = total / 3;
    'attempt: for _ in 0..attempts {
        let mut picks: Vec<usize> = rand::seq::index::sample(rng, main_len, count).into_vec();
        let mut sequence: Vec<(usize, bool)> = (0..main_len).map(|i| (i, false)).collect();
        for &m in &picks {
            let original = sequence.iter().position(|&e| e == (m, false)).expect("main tuple present");
            let start = lo.max(original + 2);
            if start > sequence.len() {
                continue 'attempt;
            }
            let at = rng.random_range(start..=sequence.len());
            sequence.insert(at, (m, true));
        }
        picks.sort_unstable();
        return Ok((picks, sequence));
    }
    Err(DesignError::RetestPlacement(attempts))
}

/// Full trial list: training, then main and retest trials interleaved.
pub fn presentation_order(design: &TupleDesign) -> Vec<Trial> {
    let mut trials: Vec<Trial> = design
        .training
        .iter()
        .map(|t| Trial {
            index: 0,
            phase: Phase::Training,
            tuple: t.clone(),
            original: None,
        })
        .collect();
    let offset = trials.len();
    let mut main_trial = vec![0usize; design.main.len()];
    for (k, &(m, is_retest)) in design.sequence.iter().enumerate() {
        let index = offset + k + 1;
        if is_retest {
            trials.push(Trial {
                index,
                phase: Phase::Retest,
                tuple: design.main[m].clone(),
                original: Some(main_trial[m]),
            });
        } else {
            main_trial[m] = index;
            trials.push(Trial {
                index,
                phase: Phase::Main,
                tuple: design.main[m].clone(),
                original: None,
            });
        }
    }
    for (i, t) in trials.iter_mut().enumerate().take(offset) {
        t.index = i + 1;
    }
    trials
}
