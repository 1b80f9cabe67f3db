//! Loading, validating and framing raw recordings.
//!
//! Two on-disk formats are understood: mono RIFF/WAVE files (8/16/24-bit
//! integer PCM or 32-bit float) and a numeric text format whose first line is
//! `fs=<rate>` followed by one sample per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::SignalType;

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    source_path: PathBuf,
    declared_type: Option<SignalType>,
}

impl Recording {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::TooShort {
                needed: 1,
                available: 0,
            });
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_path: PathBuf::new(),
            declared_type: None,
        })
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source_path = path.into();
        self
    }

    pub fn with_declared_type(mut self, declared: Option<SignalType>) -> Self {
        self.declared_type = declared;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn declared_type(&self) -> Option<SignalType> {
        self.declared_type
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Number of samples spanning `seconds`, rounded to the nearest sample.
    pub fn samples_for(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate_hz).round() as usize
    }
}

/// Loads a recording, sniffing the container from its first bytes.
pub fn load_recording(path: impl AsRef<Path>, declared_type: Option<SignalType>) -> Result<Recording> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = if bytes.starts_with(b"RIFF") {
        read_wav(path, &bytes)?
    } else {
        read_text(path, &bytes)?
    };
    Ok(rec.with_source(path).with_declared_type(declared_type))
}

fn read_wav(path: &Path, bytes: &[u8]) -> Result<Recording> {
    let format_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(format_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::MultiChannelUnsupported(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(format_err)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(format_err)?,
        (_, bits) => return Err(Error::UnsupportedBitDepth(bits)),
    };
    Recording::new(samples, f64::from(spec.sample_rate))
}

fn read_text(path: &Path, bytes: &[u8]) -> Result<Recording> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "neither a WAVE file nor UTF-8 text".into(),
    })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().unwrap_or_default().trim();
    let rate: f64 = header
        .strip_prefix("fs=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("expected `fs=<rate>` header, found {header:?}"),
        })?;
    let samples = lines
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: not a number: {:?}", i + 2, l.trim()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::new(samples, rate)
}

/// Writes the numeric text format. Values use the shortest round-trip
/// representation so that reloading is bit-identical.
pub fn write_text(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "fs={}", rec.sample_rate_hz())?;
        for x in rec.samples() {
            writeln!(w, "{x}")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Writes a mono 32-bit float WAVE file. The rate is rounded to an integer.
pub fn write_wav_f32(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rec.sample_rate_hz().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &x in rec.samples() {
        writer.write_sample(x as f32).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Iterator over complete, equally spaced frames of a sample buffer.
#[derive(Debug, Clone)]
pub struct FrameIterator<'a> {
    samples: &'a [f64],
    frame_len_samples: usize,
    hop_samples: usize,
    next: usize,
    count: usize,
}

impl<'a> FrameIterator<'a> {
    pub fn new(samples: &'a [f64], frame_len_samples: usize, hop_samples: usize) -> Result<Self> {
        if frame_len_samples == 0 || hop_samples == 0 || hop_samples > frame_len_samples {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop ({hop_samples}) <= frame ({frame_len_samples})"
            )));
        }
        if samples.len() < frame_len_samples {
            return Err(Error::TooShort {
                needed: frame_len_samples,
                available: samples.len(),
            });
        }
        let count = (samples.len() - frame_len_samples) / hop_samples + 1;
        Ok(Self {
            samples,
            frame_len_samples,
            hop_samples,
            next: 0,
            count,
        })
    }

    pub fn frame_len_samples(&self) -> usize {
        self.frame_len_samples
    }

    pub fn hop_samples(&self) -> usize {
        self.hop_samples
    }

    /// Total number of frames, independent of iteration progress.
    pub fn frame_count(&self) -> usize {
        self.count
    }

    pub fn start_of(&self, index: usize) -> usize {
        index * self.hop_samples
    }
}

impl<'a> Iterator for FrameIterator<'a> {
    type Item = &'a [f64];

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let start = self.next * self.hop_samples;
        self.next += 1;
        Some(&self.samples[start..start + self.frame_len_samples])
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for FrameIterator<'_> {}

/// Frames of `frame_seconds` whose starts are `frame_seconds - overlap_seconds` apart.
pub fn frames(rec: &Recording, frame_seconds: f64, overlap_seconds: f64) -> Result<FrameIterator<'_>> {
    if !(frame_seconds > 0.0) || !(overlap_seconds >= 0.0) || overlap_seconds >= frame_seconds {
        return Err(Error::InvalidArgument(format!(
            "frame {frame_seconds} s with overlap {overlap_seconds} s"
        )));
    }
    let frame_len = rec.samples_for(frame_seconds);
    let hop = rec.samples_for(frame_seconds - overlap_seconds);
    FrameIterator::new(rec.samples(), frame_len, hop)
}
