//! ENF trace extraction.
//!
//! Audio recordings use harmonic spectrum combining: the bands around each
//! harmonic `k f0` are compressed by `k` onto the base band, weighted by their
//! SNR and summed. Three base-band widths are tried and the least varying
//! trace wins. Power recordings use the fundamental only, with quadratic
//! interpolation of the log-power peak.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{Nominal, SignalType};
use crate::signal_io::{frames, Recording};
use crate::spectral::{interpolated_peak_hz, next_pow2, quadratic_peak, SpectrumAnalyzer, Window};

/// Scale factor turning a median absolute deviation into a standard deviation
/// estimate for Gaussian data.
const MAD_SCALE: f64 = 1.4826;
const MAD_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnfSignal {
    pub values_hz: Vec<f64>,
    pub hop_seconds: f64,
    pub nominal: Nominal,
    pub source_type: SignalType,
}

impl EnfSignal {
    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn hampel(&self, window: usize, n_sigmas: f64) -> Self {
        Self {
            values_hz: hampel_filter(&self.values_hz, window, n_sigmas),
            ..self.clone()
        }
    }

    pub fn smooth(&self, window: usize) -> Self {
        Self {
            values_hz: smooth(&self.values_hz, window),
            ..self.clone()
        }
    }

    pub fn summary(&self) -> EnfSummary {
        let n = self.values_hz.len().max(1) as f64;
        let mean = self.values_hz.iter().sum::<f64>() / n;
        let var = self.values_hz.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        EnfSummary {
            samples: self.values_hz.len(),
            mean_hz: mean,
            std_hz: var.sqrt(),
            min_hz: self.values_hz.iter().copied().fold(f64::INFINITY, f64::min),
            max_hz: self.values_hz.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnfSummary {
    pub samples: usize,
    pub mean_hz: f64,
    pub std_hz: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

/// Sum of absolute first differences.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Recursive Hampel filter.
///
/// Each sample is compared against the median of the (edge-truncated) window
/// around it, and replaced by that median when it deviates by more than
/// `n_sigmas` scaled MADs. Replacements feed back into later windows, and
/// passes repeat until one leaves the sequence unchanged, so the output is a
/// fixed point of the filter. Sequences shorter than `window` are returned as is.
pub fn hampel_filter(values: &[f64], window: usize, n_sigmas: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    if window < 3 || values.len() < window {
        return out;
    }
    let half = window / 2;
    let mut scratch = Vec::with_capacity(window);
    for _ in 0..values.len() {
        let mut replaced = 0;
        for i in 0..out.len() {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(out.len());
            scratch.clear();
            scratch.extend_from_slice(&out[lo..hi]);
            let med = median(&mut scratch);
            for v in scratch.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median(&mut scratch);
            let threshold = (n_sigmas * MAD_SCALE * mad).max(MAD_GUARD);
            if (out[i] - med).abs() > threshold {
                out[i] = med;
                replaced += 1;
            }
        }
        if replaced == 0 {
            break;
        }
    }
    out
}

/// Centred moving average; near the ends the window shrinks symmetrically.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &values[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// SNR-derived combining weights, one per band, normalised to sum to one.
///
/// Signal power is the band maximum, noise power the band median.
pub fn snr_weights(bands: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut raw = Vec::with_capacity(bands.len());
    let mut scratch = Vec::new();
    for band in bands {
        let peak = band.iter().copied().fold(0.0, f64::max);
        if band.is_empty() || !(peak > 0.0) {
            raw.push(0.0);
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(band);
        let noise = median(&mut scratch).max(peak * 1e-15);
        raw.push(peak / noise);
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Silent);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Catmull-Rom interpolation of a sampled non-negative curve at fractional index `x`.
fn cubic_at(p: &[f64], x: f64) -> f64 {
    let last = p.len() as isize - 1;
    let i = x.floor() as isize;
    let t = x - i as f64;
    let at = |j: isize| p[j.clamp(0, last) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let v = p1
        + 0.5
            * t
            * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
    v.max(0.0)
}

/// ENF candidates from one audio frame's power spectrum, one per bandwidth.
struct Combiner {
    f0: f64,
    bin_hz: f64,
    nyquist: f64,
    harmonics: usize,
    resolution: f64,
}

impl Combiner {
    fn candidate(&self, power: &[f64], f_b: f64) -> Result<f64> {
        let ks: Vec<usize> = (1..=self.harmonics)
            .filter(|&k| k as f64 * (self.f0 + f_b) < self.nyquist)
            .collect();
        if ks.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no harmonic band of {} +/- {} Hz fits below Nyquist",
                self.f0, f_b
            )));
        }
        let bands: Vec<Vec<f64>> = ks
            .iter()
            .map(|&k| {
                let kf = k as f64;
                let lo = ((kf * (self.f0 - f_b)) / self.bin_hz).ceil() as usize;
                let hi = (((kf * (self.f0 + f_b)) / self.bin_hz).floor() as usize).min(power.len() - 1);
                power[lo..=hi].to_vec()
            })
            .collect();
        let weights = snr_weights(&bands)?;

        let steps = (2.0 * f_b / self.resolution).round() as usize;
        let lo_f = self.f0 - f_b;
        let combined: Vec<f64> = (0..=steps)
            .map(|j| {
                let f = lo_f + j as f64 * self.resolution;
                ks.iter()
                    .zip(&weights)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(&k, &w)| w * cubic_at(power, k as f64 * f / self.bin_hz))
                    .sum()
            })
            .collect();
        let (best, _) = combined
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        let offset = if best == 0 || best == steps {
            0.0
        } else {
            let lp = |j: usize| (combined[j] + crate::spectral::LOG_POWER_FLOOR).ln();
            quadratic_peak(lp(best - 1), lp(best), lp(best + 1)).offset
        };
        Ok(lo_f + (best as f64 + offset) * self.resolution)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioCandidate {
    pub bandwidth_hz: f64,
    pub values_hz: Vec<f64>,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioExtraction {
    pub candidates: Vec<AudioCandidate>,
    /// Index of the least varying candidate.
    pub chosen: usize,
    /// Chosen candidate after Hampel filtering and smoothing.
    pub signal: EnfSignal,
}

/// Audio path with all intermediate candidates exposed.
pub fn extract_enf_audio_detailed(
    rec: &Recording,
    nominal: Nominal,
    cfg: &PipelineConfig,
) -> Result<AudioExtraction> {
    let it = frames(rec, cfg.audio_frame_s, cfg.audio_overlap_s)?;
    let n_fft = next_pow2(cfg.zero_pad_factor * it.frame_len_samples());
    let analyzer = SpectrumAnalyzer::new(n_fft, Window::Hann)?;
    let combiner = Combiner {
        f0: nominal.hz(),
        bin_hz: rec.sample_rate_hz() / n_fft as f64,
        nyquist: rec.sample_rate_hz() / 2.0,
        harmonics: cfg.audio_harmonics,
        resolution: cfg.audio_resolution_hz,
    };
    let hop_seconds = it.hop_samples() as f64 / rec.sample_rate_hz();
    let mut per_bw: Vec<Vec<f64>> = vec![Vec::with_capacity(it.frame_count()); cfg.audio_bandwidths_hz.len()];
    for frame in it {
        let power = analyzer.power(frame)?;
        for (values, &f_b) in per_bw.iter_mut().zip(&cfg.audio_bandwidths_hz) {
            values.push(combiner.candidate(&power, f_b)?);
        }
    }
    let candidates: Vec<AudioCandidate> = per_bw
        .into_iter()
        .zip(&cfg.audio_bandwidths_hz)
        .map(|(values_hz, &bandwidth_hz)| AudioCandidate {
            bandwidth_hz,
            total_variation: total_variation(&values_hz),
            values_hz,
        })
        .collect();
    let chosen = candidates
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| {
            if c.total_variation < candidates[best].total_variation {
                i
            } else {
                best
            }
        });
    let raw = EnfSignal {
        values_hz: candidates[chosen].values_hz.clone(),
        hop_seconds,
        nominal,
        source_type: SignalType::Audio,
    };
    let signal = raw
        .hampel(cfg.hampel_window, cfg.hampel_sigmas)
        .smooth(cfg.smooth_window);
    Ok(AudioExtraction {
        candidates,
        chosen,
        signal,
    })
}

pub fn extract_enf_audio(rec: &Recording, nominal: Nominal, cfg: &PipelineConfig) -> Result<EnfSignal> {
    if rec.samples().iter().all(|&x| x == 0.0) {
        return Err(Error::Silent);
    }
    Ok(extract_enf_audio_detailed(rec, nominal, cfg)?.signal)
}

/// Power path: non-overlapping frames, log-power peak in the search band,
/// quadratic interpolation.
pub fn extract_enf_power(rec: &Recording, nominal: Nominal, cfg: &PipelineConfig) -> Result<EnfSignal> {
    let it = frames(rec, cfg.power_frame_s, 0.0)?;
    let n_fft = next_pow2(cfg.zero_pad_factor * it.frame_len_samples());
    let analyzer = SpectrumAnalyzer::new(n_fft, Window::Rectangular)?;
    let hop_seconds = it.hop_samples() as f64 / rec.sample_rate_hz();
    let mut values = Vec::with_capacity(it.frame_count());
    let mut band = None;
    for frame in it {
        let spec = analyzer.magnitude(frame, rec.sample_rate_hz())?;
        let b = match band {
            Some(b) => b,
            None => *band.insert(spec.band(cfg.power_band_lo_hz, cfg.power_band_hi_hz)?),
        };
        values.push(interpolated_peak_hz(&spec, &b)?.freq_hz);
    }
    let raw = EnfSignal {
        values_hz: values,
        hop_seconds,
        nominal,
        source_type: SignalType::Power,
    };
    Ok(if cfg.filter_power_enf {
        raw.hampel(cfg.hampel_window, cfg.hampel_sigmas)
            .smooth(cfg.smooth_window)
    } else {
        raw
    })
}

pub fn extract_enf(
    rec: &Recording,
    nominal: Nominal,
    data_type: SignalType,
    cfg: &PipelineConfig,
) -> Result<EnfSignal> {
    match data_type {
        SignalType::Audio => extract_enf_audio(rec, nominal, cfg),
        SignalType::Power => extract_enf_power(rec, nominal, cfg),
    }
}
