//! Learning under label noise with two uncertainty signals: annotator
//! disagreement (UoD/iUoD) to drop or adjudicate contested samples, and
//! MC-dropout uncertainty of the adjudicated label (UoSL) to down-weight
//! suspect ones during a focal/weighted-CE curriculum.

pub mod agreement;
pub mod cli;
pub mod curriculum;
pub mod datahub;
pub mod error;
pub mod evalkit;
pub mod jsonl;
pub mod mcuq;
pub mod netcore;
pub mod objectives;
pub mod seeding;

pub use error::{DuetError, Result};
