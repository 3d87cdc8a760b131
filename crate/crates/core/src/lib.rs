//! Simulation testbed for vertical federated edge learning over distributed
//! integrated sensing and communication (ISAC).
//!
//! The crate covers the whole chain: modulated-FMCW frame synthesis
//! ([`waveform`]), echo and link propagation ([`channel`]), the sensing
//! receiver down to micro-Doppler spectrograms ([`sensing`]), the QPSK modem
//! used for data exchange ([`comm`]), a kinematic multi-view human-motion
//! generator ([`motion`]), a small CNN stack with exact backpropagation
//! ([`neural`]), the split-learning protocol and its baselines ([`vfeel`]) and
//! the experiment harness behind the `vfeel` CLI ([`harness`]).

pub mod channel;
pub mod comm;
pub mod error;
pub mod harness;
pub mod motion;
pub mod neural;
pub mod par;
pub mod seeding;
pub mod sensing;
pub mod vfeel;
pub mod waveform;

pub use error::{Error, Result};
pub use par::Execution;
