//! Speaker identification in emotional speech.
//!
//! The crate covers the whole chain: an MFCC front end ([`dsp`]), prosodic
//! segment features ([`prosody`]), Gaussian-mixture HMMs ([`hmm`]), the
//! acoustic/prosodic score fusion ([`sphmm`]), one-stage and cascaded
//! recognizers over a trained [`pipeline::ModelRegistry`], corpus handling
//! and synthesis ([`corpus`]), and evaluation reports ([`eval`]).

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod labels;
pub mod math;
pub mod pipeline;
pub mod prosody;
pub mod seed;
pub mod sphmm;

pub use error::{Error, Result};
