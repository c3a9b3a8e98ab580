//! Split/merge moves and the nonparametric fitting loop.

pub mod engine;
pub mod moves;

pub use engine::{fit_nonparametric, trial_iteration, MoveKind, MoveRecord, NonparametricOptions, NonparametricRun};
pub use moves::{merge_candidate, merge_shortlist, split_candidate, split_share, SplitCandidate};
