//! Staggered difference-in-differences for transfer events in person-year
//! panels: cohort construction, cohort-year 2x2 cells with not-yet-treated
//! controls, event-time aggregation with bootstrap bands, a two-way fixed
//! effects comparator, a propensity-score matching baseline and a
//! simulator with known effects.

pub mod aggregate;
pub mod cli;
pub mod did;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod matching;
pub mod panel;
pub mod regression;
pub mod synth;
pub mod twfe;

pub use error::{Error, Result};
