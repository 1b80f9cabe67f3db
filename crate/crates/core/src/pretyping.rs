//! Nominal-frequency and data-type gate computed from one whole-recording spectrum.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{Nominal, SignalType};
use crate::signal_io::Recording;
use crate::spectral::{next_pow2, BandSlice, Spectrum, SpectrumAnalyzer, Window};

/// Centres of the near-nominal bands: both nominals and their second harmonics.
pub const NOMINAL_CENTRES_HZ: [f64; 4] = [50.0, 60.0, 100.0, 120.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypingResult {
    pub nominal: Nominal,
    pub data_type: SignalType,
    pub d50: f64,
    pub d60: f64,
    pub ratio_pr_pn: f64,
    pub fp_hz: f64,
}

/// Partition of the spectrum below the typing limit into near-nominal bins
/// (`sn`) and the rest (`sr`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSplit {
    pub sn_bands: Vec<BandSlice>,
    pub sn_bins: Vec<usize>,
    pub sr_bins: Vec<usize>,
}

pub fn split_spectrum(spec: &Spectrum, half_width_hz: f64, max_hz: f64) -> Result<SpectralSplit> {
    if spec.nyquist_hz() < max_hz {
        return Err(Error::InsufficientBandwidth {
            needed_hz: max_hz,
            available_hz: spec.nyquist_hz(),
        });
    }
    let sn_bands = NOMINAL_CENTRES_HZ
        .iter()
        .map(|&c| spec.band(c - half_width_hz, c + half_width_hz))
        .collect::<Result<Vec<_>>>()?;
    let last = (max_hz / spec.bin_hz).floor() as usize;
    let (sn_bins, sr_bins): (Vec<usize>, Vec<usize>) =
        (0..=last).partition(|&k| sn_bands.iter().any(|b| b.contains_bin(k)));
    Ok(SpectralSplit {
        sn_bands,
        sn_bins,
        sr_bins,
    })
}

/// Distance of a peak frequency to the 50 Hz and 60 Hz families.
pub fn nominal_distances(fp_hz: f64) -> (f64, f64) {
    let d50 = (fp_hz - 50.0).abs().min((fp_hz - 100.0).abs());
    let d60 = (fp_hz - 60.0).abs().min((fp_hz - 120.0).abs());
    (d50, d60)
}

/// 50 Hz wins strictly closer distances; ties go to 50 Hz as well.
pub fn nominal_from_distances(d50: f64, d60: f64) -> Nominal {
    if d50 <= d60 {
        Nominal::Hz50
    } else {
        Nominal::Hz60
    }
}

pub fn data_type_from_ratio(ratio_pr_pn: f64, threshold: f64) -> SignalType {
    if ratio_pr_pn > threshold {
        SignalType::Audio
    } else {
        SignalType::Power
    }
}

/// Returns `(nominal, d50, d60, fp_hz)`.
pub fn detect_nominal(spec: &Spectrum, split: &SpectralSplit) -> Result<(Nominal, f64, f64, f64)> {
    let k = split
        .sn_bins
        .iter()
        .copied()
        .fold(None::<usize>, |best, k| match best {
            Some(b) if spec.magnitudes[b] >= spec.magnitudes[k] => Some(b),
            _ => Some(k),
        })
        .ok_or(Error::EmptyOrFlatBand)?;
    let fp = spec.freq_of(k);
    let (d50, d60) = nominal_distances(fp);
    Ok((nominal_from_distances(d50, d60), d50, d60, fp))
}

/// Returns `(data_type, Pr/Pn)`.
pub fn detect_data_type(
    spec: &Spectrum,
    split: &SpectralSplit,
    threshold: f64,
) -> Result<(SignalType, f64)> {
    let pn: f64 = split.sn_bins.iter().map(|&k| spec.magnitudes[k]).sum();
    let pr: f64 = split.sr_bins.iter().map(|&k| spec.magnitudes[k]).sum();
    if !(pn > 0.0) {
        return Err(Error::NoNominalEnergy);
    }
    let ratio = pr / pn;
    Ok((data_type_from_ratio(ratio, threshold), ratio))
}

/// Single transform over the mean-removed recording, zero-padded to a power
/// of two; recordings longer than `typing_max_fft` samples use their prefix.
pub fn typing_spectrum(rec: &Recording, cfg: &PipelineConfig) -> Result<Spectrum> {
    let n = rec.len().min(cfg.typing_max_fft);
    let head = &rec.samples()[..n];
    let mean = head.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = head.iter().map(|x| x - mean).collect();
    let n_fft = next_pow2(n).min(cfg.typing_max_fft);
    SpectrumAnalyzer::new(n_fft, Window::Rectangular)?.magnitude(&centred, rec.sample_rate_hz())
}

pub fn classify_type(rec: &Recording, cfg: &PipelineConfig) -> Result<TypingResult> {
    let spec = typing_spectrum(rec, cfg)?;
    type_from_spectrum(&spec, cfg)
}

pub fn type_from_spectrum(spec: &Spectrum, cfg: &PipelineConfig) -> Result<TypingResult> {
    let split = split_spectrum(spec, cfg.nominal_band_half_width_hz, cfg.typing_max_hz)?;
    let (nominal, d50, d60, fp_hz) = detect_nominal(spec, &split)?;
    let (data_type, ratio_pr_pn) = detect_data_type(spec, &split, cfg.type_threshold)?;
    Ok(TypingResult {
        nominal,
        data_type,
        d50,
        d60,
        ratio_pr_pn,
        fp_hz,
    })
}
