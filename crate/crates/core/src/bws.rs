//! Best-Worst Scaling: experiment design, judgment scoring, the results
//! file schema, and simulated judges.

pub mod design;
pub mod results;
pub mod scoring;
pub mod simulate;

pub use design::{design_participant, presentation_order, DesignConfig, Phase, Registry, Trial, Tuple, TupleDesign};
pub use scoring::{
    compliance, elo_expected, expand_judgment, score_all, Algorithm, Judgment, PairRelation, ScoreTable, ScoringConfig,
};
