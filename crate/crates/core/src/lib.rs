//! Low-delay online joint dereverberation and separation for two-channel
//! audio.

pub mod cbf;
pub mod dereverb;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod history;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod rirsim;
pub mod separation;
pub mod stft;
pub mod tdfilter;
pub mod wav;

pub use error::{Error, Result};
