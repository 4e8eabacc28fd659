//! Gaze-gated read-aloud pacing.
//!
//! The crate is organised bottom-up: [`text`] tokenizes and segments Italian
//! text into phrases, [`layout`] paginates them and derives areas of interest,
//! [`gaze`] turns tracker samples into fixations, [`engine`] is the pacing
//! state machine, [`session`] persists and replays its event log,
//! [`simulator`] generates closed-loop synthetic readers and [`harness`] runs
//! the crossover experiment over them.

pub mod engine;
pub mod gaze;
pub mod harness;
pub mod layout;
pub mod session;
pub mod simulator;
pub mod text;
