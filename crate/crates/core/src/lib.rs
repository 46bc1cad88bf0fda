//! Masker/concealer stimulus synthesis with A-weighted level calibration,
//! Best-Worst Scaling experiment design, and BWS judgment scoring.

pub mod analysis;
pub mod audio;
pub mod bws;
pub mod concealer;
pub mod gengrid;
pub mod leveling;
pub mod synth;
pub mod tf;
pub mod weighting;

pub use audio::{AudioBuffer, AudioError, Calibration, LevelDBA};
pub use concealer::{Approach, ConcealerMethod};
pub use tf::{Spectrogram, StftParams};
