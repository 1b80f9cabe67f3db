//! Grid-of-origin identification for audio and power recordings.
//!
//! A recording is typed (50/60 Hz nominal, audio/power), its electric network
//! frequency (ENF) trace is extracted and summarised into per-segment feature
//! vectors, a per-kind multiclass SVM narrows the candidate grids to a short
//! list, and a pole-matching classifier over autoregressive models of the raw
//! waveform takes the final decision.

pub mod armodel;
pub mod cli;
pub mod cascade;
pub mod config;
pub mod enf;
pub mod error;
pub mod features;
pub mod grid;
pub mod polematch;
pub mod pretyping;
pub mod signal_io;
pub mod spectral;
pub mod svm;
pub mod synth;

pub use cascade::{CascadeModel, ClassificationReport, LabeledRecording};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use grid::{DataKind, GridLabel, Nominal, SignalType};
pub use signal_io::Recording;
