//! Best/worst judgments to pairwise relations, and three tournament-style
//! scorers over them: Elo, Rescorla-Wagner and Value Learning.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::design::{Phase, Tuple, TUPLE_SIZE};
use crate::gengrid::parse_stimulus_id;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("best and worst are both position {0}")]
    BestIsWorst(usize),
    #[error("position {0} is outside the tuple")]
    BadPosition(usize),
    #[error("unknown stimulus '{0}'")]
    UnknownStimulus(String),
    #[error("no judgments to score")]
    NoJudgments,
    #[error("stimulus '{0}' has no reference score")]
    MissingScore(String),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub participant_id: u32,
    pub trial_index: usize,
    pub tuple: Tuple,
    pub best: usize,
    pub worst: usize,
    pub phase: Phase,
}

impl Judgment {
    pub fn best_id(&self) -> &str {
        &self.tuple.0[self.best]
    }

    pub fn worst_id(&self) -> &str {
        &self.tuple.0[self.worst]
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        for p in [self.best, self.worst] {
            if p >= TUPLE_SIZE {
                return Err(ScoreError::BadPosition(p));
            }
        }
        if self.best == self.worst {
            return Err(ScoreError::BestIsWorst(self.best));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRelation {
    pub winner: String,
    pub loser: String,
}

/// The five relations implied by one best/worst choice. The two middle
/// items are never compared.
pub fn expand_judgment(j: &Judgment) -> Result<[PairRelation; 5], ScoreError> {
    j.validate()?;
    let rel = |w: usize, l: usize| PairRelation {
        winner: j.tuple.0[w].clone(),
        loser: j.tuple.0[l].clone(),
    };
    let mut middle = (0..TUPLE_SIZE).filter(|&i| i != j.best && i != j.worst);
    let (b, c) = (middle.next().unwrap(), middle.next().unwrap());
    Ok([
        rel(j.best, b),
        rel(j.best, c),
        rel(j.best, j.worst),
        rel(b, j.worst),
        rel(c, j.worst),
    ])
}

/// Expected score of A against B: `1 / (1 + 10^((R_B − R_A)/400))`.
///
/// The lower-rated side is computed as the complement so that
/// `elo_expected(a, b) + elo_expected(b, a) == 1.0` exactly.
pub fn elo_expected(r_a: f64, r_b: f64) -> f64 {
    if r_a >= r_b {
        1.0 / (1.0 + 10f64.powf((r_b - r_a) / 400.0))
    } else {
        1.0 - elo_expected(r_b, r_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloParams {
    pub k: f64,
    pub initial: f64,
}

impl Default for EloParams {
    fn default() -> Self {
        Self { k: 32.0, initial: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescorlaWagnerParams {
    pub beta: f64,
    pub lambda: f64,
}

impl Default for RescorlaWagnerParams {
    fn default() -> Self {
        Self { beta: 0.1, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueLearningParams {
    pub beta: f64,
    pub outcome_win: f64,
    pub outcome_loss: f64,
    pub odds_epsilon: f64,
}

impl Default for ValueLearningParams {
    fn default() -> Self {
        Self {
            beta: 0.1,
            outcome_win: 1.0,
            outcome_loss: 0.0,
            odds_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    Elo(EloParams),
    RescorlaWagner(RescorlaWagnerParams),
    ValueLearning(ValueLearningParams),
}

impl Algorithm {
    pub fn elo() -> Self {
        Algorithm::Elo(EloParams::default())
    }

    pub fn rescorla_wagner() -> Self {
        Algorithm::RescorlaWagner(RescorlaWagnerParams::default())
    }

    pub fn value_learning() -> Self {
        Algorithm::ValueLearning(ValueLearningParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Elo(_) => "elo",
            Algorithm::RescorlaWagner(_) => "rescorla_wagner",
            Algorithm::ValueLearning(_) => "value_learning",
        }
    }

    /// Default-parameter algorithm by name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "elo" => Some(Self::elo()),
            "rescorla_wagner" | "rw" => Some(Self::rescorla_wagner()),
            "value_learning" | "vl" => Some(Self::value_learning()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |m: &str| Err(ScoreError::BadParams(m.to_string()));
        match *self {
            Algorithm::Elo(p) if !(p.k > 0.0) || !p.initial.is_finite() => bad("Elo needs K > 0"),
            Algorithm::RescorlaWagner(p) if !(p.beta > 0.0 && p.beta <= 1.0) || !(p.lambda > 0.0) => {
                bad("Rescorla-Wagner needs 0 < beta <= 1 and lambda > 0")
            }
            Algorithm::ValueLearning(p)
                if !(p.beta > 0.0 && p.beta <= 1.0)
                    || !(p.outcome_win > p.outcome_loss)
                    || !(p.odds_epsilon > 0.0 && p.odds_epsilon < 0.5) =>
            {
                bad("Value Learning needs 0 < beta <= 1, win > loss and 0 < epsilon < 0.5")
            }
            _ => Ok(()),
        }
    }
}

/// Scores indexed by dense stimulus index.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    algorithm: Algorithm,
    state: Vec<f64>,
}

impl Learner {
    pub fn new(algorithm: Algorithm, n: usize) -> Self {
        let initial = match algorithm {
            Algorithm::Elo(p) => p.initial,
            _ => 0.0,
        };
        Self {
            algorithm,
            state: vec![initial; n],
        }
    }

    /// Applies one relation given dense indices.
    pub fn update(&mut self, winner: usize, loser: usize) {
        let (w, l) = (self.state[winner], self.state[loser]);
        let (nw, nl) = match self.algorithm {
            Algorithm::Elo(p) => {
                let delta = p.k * (1.0 - elo_expected(w, l));
                (w + delta, l - delta)
            }
            Algorithm::RescorlaWagner(p) => {
                let alpha = if w + l > 0.0 { 1.0 - w / (w + l) } else { 0.5 };
                let nw = w + alpha * p.beta * (p.lambda - w);
                let nl = l + alpha * p.beta * (0.0 - l);
                (nw.clamp(0.0, p.lambda), nl.clamp(0.0, p.lambda))
            }
            // state holds (V − γ_loss)/(γ_win − γ_loss), so the outcome scale
            // never enters the dynamics
            Algorithm::ValueLearning(p) => {
                let eps = p.odds_epsilon;
                let alpha = if w == 0.0 && l == 0.0 {
                    0.5
                } else {
                    let odds = |v: f64| {
                        let v = v.clamp(eps, 1.0 - eps);
                        v / (1.0 - v)
                    };
                    let (ow, ol) = (odds(w), odds(l));
                    1.0 - ow / (ow + ol)
                };
                let nw = w + alpha * p.beta * (1.0 - w);
                let nl = l + (1.0 - alpha) * p.beta * (0.0 - l);
                let top = 1.0 - eps;
                (nw.clamp(0.0, top), nl.clamp(0.0, top))
            }
        };
        self.state[winner] = nw;
        self.state[loser] = nl;
    }

    /// Reported score of entry `i`.
    pub fn score(&self, i: usize) -> f64 {
        match self.algorithm {
            Algorithm::ValueLearning(p) => p.outcome_loss + (p.outcome_win - p.outcome_loss) * self.state[i],
            _ => self.state[i],
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.state
    }
}

/// Per-id learner over string relations.
#[derive(Debug, Clone)]
pub struct ScoreState {
    index: HashMap<String, usize>,
    ids: Vec<String>,
    learner: Learner,
}

impl ScoreState {
    pub fn new(algorithm: Algorithm, stimuli: &[String]) -> Result<Self, ScoreError> {
        algorithm.validate()?;
        let mut index = HashMap::new();
        let mut ids = Vec::new();
        for s in stimuli {
            if !index.contains_key(s) {
                index.insert(s.clone(), ids.len());
                ids.push(s.clone());
            }
        }
        Ok(Self {
            learner: Learner::new(algorithm, ids.len()),
            index,
            ids,
        })
    }

    fn idx(&self, id: &str) -> Result<usize, ScoreError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ScoreError::UnknownStimulus(id.to_string()))
    }

    pub fn update(&mut self, rel: &PairRelation) -> Result<(), ScoreError> {
        let (w, l) = (self.idx(&rel.winner)?, self.idx(&rel.loser)?);
        self.learner.update(w, l);
        Ok(())
    }

    pub fn score(&self, id: &str) -> Result<f64, ScoreError> {
        Ok(self.learner.score(self.idx(id)?))
    }

    pub fn table(&self, epochs: usize, seed: u64) -> ScoreTable {
        ScoreTable {
            algorithm: self.learner.algorithm.name().to_string(),
            epochs,
            seed,
            scores: self
                .ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), self.learner.score(i)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::value_learning(),
            epochs: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub algorithm: String,
    pub epochs: usize,
    pub seed: u64,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreTable {
    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Ids from highest to lowest score (ties by id).
    pub fn ranking(&self) -> Vec<&str> {
        let mut v: Vec<(&str, f64)> = self.scores.iter().map(|(k, &s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v.into_iter().map(|(k, _)| k).collect()
    }

    /// Writes `stimulus_id,source_id,positive_id,approach,delta_laeq,score,algorithm,seed,epochs`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "stimulus_id",
            "source_id",
            "positive_id",
            "approach",
            "delta_laeq",
            "score",
            "algorithm",
            "seed",
            "epochs",
        ])?;
        for (id, score) in &self.scores {
            let spec = parse_stimulus_id(id);
            let (src, pos, app, delta) = match &spec {
                Some(s) => (s.source_id.clone(), s.positive_id.clone(), s.approach.to_string(), s.delta_laeq.to_string()),
                None => Default::default(),
            };
            w.write_record([
                id.as_str(),
                &src,
                &pos,
                &app,
                &delta,
                &score.to_string(),
                &self.algorithm,
                &self.seed.to_string(),
                &self.epochs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits scores on the main-phase relations of `judgments`, replayed for
/// `epochs` passes, each pass in a fresh seeded shuffle.
pub fn score_all(stimuli: &[String], judgments: &[Judgment], config: &ScoringConfig) -> Result<ScoreTable, ScoreError> {
    let fitted: Vec<&Judgment> = judgments.iter().filter(|j| j.phase == Phase::Main).collect();
    if fitted.is_empty() {
        return Err(ScoreError::NoJudgments);
    }
    let mut state = ScoreState::new(config.algorithm, stimuli)?;
    let mut relations = Vec::with_capacity(fitted.len() * 5);
    for j in fitted {
        for rel in expand_judgment(j)? {
            relations.push((state.idx(&rel.winner)?, state.idx(&rel.loser)?));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        relations.shuffle(&mut rng);
        for &(w, l) in &relations {
            state.learner.update(w, l);
        }
    }
    Ok(state.table(config.epochs, config.seed))
}

/// Fraction of the expanded relations of `judgments` that `reference`
/// orders strictly. Ties count as violations.
pub fn compliance(judgments: &[Judgment], reference: &ScoreTable) -> Result<f64, ScoreError> {
    if judgments.is_empty() {
        return Err(ScoreError::NoJudgments);
    }
    let lookup = |id: &str| reference.get(id).ok_or_else(|| ScoreError::MissingScore(id.to_string()));
    let (mut kept, mut total) = (0usize, 0usize);
    for j in judgments {
        for rel in expand_judgment(j)? {
            total += 1;
            if lookup(&rel.winner)? > lookup(&rel.loser)? {
                kept += 1;
            }
        }
    }
    Ok(kept as f64 / total as f64)
}

/// Compliance of one participant against scores fit on their own judgments.
pub fn intra_compliance(stimuli: &[String], judgments: &[Judgment], config: &ScoringConfig) -> Result<f64, ScoreError> {
    let own = score_all(stimuli, judgments, config)?;
    compliance(judgments, &own)
}

/// Per-participant compliance against scores fit on everyone's judgments.
pub fn inter_compliance(
    stimuli: &[String],
    judgments: &[Judgment],
    config: &ScoringConfig,
) -> Result<BTreeMap<u32, f64>, ScoreError> {
    let group = score_all(stimuli, judgments, config)?;
    let mut by_participant: BTreeMap<u32, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        by_participant.entry(j.participant_id).or_default().push(j.clone());
    }
    by_participant
        .into_iter()
        .map(|(p, js)| Ok((p, compliance(&js, &group)?)))
        .collect()
}
