//! Seeded trajectory runner and the Monte-Carlo studies built on it.

mod study;
mod trajectory;

pub use study::*;
pub use trajectory::*;

use crate::lemmas::LemmaError;
use crate::optim::OptimError;
use crate::oracles::OracleError;
use crate::schedule::ScheduleError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Lemma(#[from] LemmaError),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("{diverged} of {total} trajectories diverged")]
    TooManyDiverged { diverged: usize, total: usize },
}
