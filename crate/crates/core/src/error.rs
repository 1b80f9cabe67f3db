use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(u16),
    #[error("multi-channel input ({0} channels) is not supported")]
    MultiChannelUnsupported(u16),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("input too short: need {needed}, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("FFT length {n_fft} is smaller than the frame length {frame_len}")]
    FftTooShort { n_fft: usize, frame_len: usize },
    #[error("band is empty or flat")]
    EmptyOrFlatBand,
    #[error("spectrum reaches {available_hz:.3} Hz, need {needed_hz:.3} Hz")]
    InsufficientBandwidth { needed_hz: f64, available_hz: f64 },
    #[error("no energy around the nominal frequencies")]
    NoNominalEnergy,
    #[error("signal has no energy")]
    Silent,
    #[error("at least two classes are required")]
    NeedTwoClasses,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenvalue solver did not converge")]
    EigenNonConvergence,
    #[error("grid {0} is not in the pole database")]
    GridMissing(String),
    #[error("grid {grid} has {available} training poles, need at least {needed}")]
    NotEnoughPoles {
        grid: String,
        available: usize,
        needed: usize,
    },
    #[error("model has no classifier for {0}")]
    KindUnavailable(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("unsupported model format version {found} (supported up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("failed on {path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(source),
        }
    }
}

impl Error {
    /// Innermost error, looking through file-context wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
