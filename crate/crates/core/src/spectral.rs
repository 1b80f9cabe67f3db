//! FFT-based spectral primitives and sub-bin peak interpolation.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to squared magnitudes before taking the natural log.
pub const LOG_POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

/// One-sided magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub bin_hz: f64,
    pub n_fft: usize,
    pub window: Window,
}

impl Spectrum {
    pub fn sample_rate_hz(&self) -> f64 {
        self.bin_hz * self.n_fft as f64
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.bin_hz * (self.magnitudes.len() - 1) as f64
    }

    pub fn freq_of(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }

    pub fn log_power(&self, bin: usize) -> f64 {
        let m = self.magnitudes[bin];
        (m * m + LOG_POWER_FLOOR).ln()
    }

    /// Energy of the (windowed, zero-padded) time-domain frame, recovered from
    /// the one-sided spectrum.
    pub fn energy(&self) -> f64 {
        let n = self.n_fft;
        let last = self.magnitudes.len() - 1;
        let mut e = 0.0;
        for (k, m) in self.magnitudes.iter().enumerate() {
            let twice = k != 0 && !(n % 2 == 0 && k == last);
            e += if twice { 2.0 * m * m } else { m * m };
        }
        e / n as f64
    }

    /// Bins whose centre frequency lies in `[lo_hz, hi_hz]`.
    pub fn band(&self, lo_hz: f64, hi_hz: f64) -> Result<BandSlice> {
        if !(lo_hz < hi_hz) {
            return Err(Error::InvalidArgument(format!("band [{lo_hz}, {hi_hz}]")));
        }
        let lo_bin = (lo_hz / self.bin_hz).ceil().max(0.0) as usize;
        let hi_bin = ((hi_hz / self.bin_hz).floor() as usize).min(self.magnitudes.len() - 1);
        if lo_bin > hi_bin || lo_bin >= self.magnitudes.len() {
            return Err(Error::EmptyOrFlatBand);
        }
        Ok(BandSlice {
            lo_hz,
            hi_hz,
            lo_bin,
            hi_bin,
        })
    }
}

/// Frequency interval of a parent spectrum, with inclusive bin bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSlice {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub lo_bin: usize,
    pub hi_bin: usize,
}

impl BandSlice {
    pub fn bins(&self) -> std::ops::RangeInclusive<usize> {
        self.lo_bin..=self.hi_bin
    }

    pub fn contains_bin(&self, k: usize) -> bool {
        self.bins().contains(&k)
    }
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Reusable FFT plan for one transform length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    window: Window,
    scratch_len: usize,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("n_fft", &self.n_fft)
            .field("window", &self.window)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(n_fft: usize, window: Window) -> Result<Self> {
        if n_fft < 2 {
            return Err(Error::InvalidArgument(format!("n_fft must be at least 2, got {n_fft}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let scratch_len = fft.get_inplace_scratch_len();
        Ok(Self {
            fft,
            n_fft,
            window,
            scratch_len,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Complex one-sided spectrum of the windowed, zero-padded frame.
    pub fn complex(&self, frame: &[f64]) -> Result<Vec<Complex<f64>>> {
        if frame.len() > self.n_fft {
            return Err(Error::FftTooShort {
                n_fft: self.n_fft,
                frame_len: frame.len(),
            });
        }
        let w = self.window.coefficients(frame.len());
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (b, (x, c)) in buf.iter_mut().zip(frame.iter().zip(&w)) {
            b.re = x * c;
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); self.scratch_len];
        self.fft.process_with_scratch(&mut buf, &mut scratch);
        buf.truncate(self.n_fft / 2 + 1);
        Ok(buf)
    }

    pub fn magnitude(&self, frame: &[f64], sample_rate_hz: f64) -> Result<Spectrum> {
        let magnitudes = self.complex(frame)?.iter().map(|c| c.norm()).collect();
        Ok(Spectrum {
            magnitudes,
            bin_hz: sample_rate_hz / self.n_fft as f64,
            n_fft: self.n_fft,
            window: self.window,
        })
    }

    /// Squared magnitudes, skipping the square root.
    pub fn power(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.complex(frame)?.iter().map(|c| c.norm_sqr()).collect())
    }
}

pub fn magnitude_spectrum(
    frame: &[f64],
    sample_rate_hz: f64,
    n_fft: usize,
    window: Window,
) -> Result<Spectrum> {
    SpectrumAnalyzer::new(n_fft, window)?.magnitude(frame, sample_rate_hz)
}

/// Short-time magnitude spectra over frames of `frame_len` samples spaced `hop` apart.
pub fn stft(
    samples: &[f64],
    sample_rate_hz: f64,
    frame_len: usize,
    hop: usize,
    n_fft: usize,
    window: Window,
) -> Result<Vec<Spectrum>> {
    let analyzer = SpectrumAnalyzer::new(n_fft, window)?;
    crate::signal_io::FrameIterator::new(samples, frame_len, hop)?
        .map(|f| analyzer.magnitude(f, sample_rate_hz))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPeak {
    /// Offset of the vertex from the centre sample, in bins.
    pub offset: f64,
    pub degenerate: bool,
}

/// Vertex of the parabola through `(-1, alpha)`, `(0, beta)`, `(1, gamma)`.
pub fn quadratic_peak(alpha: f64, beta: f64, gamma: f64) -> QuadPeak {
    let denom = alpha - 2.0 * beta + gamma;
    if denom == 0.0 || !denom.is_finite() {
        return QuadPeak {
            offset: 0.0,
            degenerate: true,
        };
    }
    QuadPeak {
        offset: (alpha - gamma) / (2.0 * denom),
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub freq_hz: f64,
    pub log_power: f64,
    pub bin: usize,
    pub offset: f64,
    /// Discrete maximum on the band edge with the spectrum still rising outside, so no interpolation was applied.
    pub at_edge: bool,
    pub degenerate: bool,
}

/// Interpolated peak of the log-power spectrum inside `band`.
pub fn interpolated_peak_hz(spec: &Spectrum, band: &BandSlice) -> Result<PeakEstimate> {
    if band.hi_bin >= spec.magnitudes.len() || band.lo_bin > band.hi_bin {
        return Err(Error::EmptyOrFlatBand);
    }
    let (mut best, mut best_val, mut min_val) = (band.lo_bin, f64::NEG_INFINITY, f64::INFINITY);
    for k in band.bins() {
        let v = spec.log_power(k);
        if v > best_val {
            best = k;
            best_val = v;
        }
        min_val = min_val.min(v);
    }
    if best_val <= min_val {
        return Err(Error::EmptyOrFlatBand);
    }
    // an edge bin with a lower neighbour outside the band is still a true local peak
    let rising_below = best == band.lo_bin && (best == 0 || spec.log_power(best - 1) >= best_val);
    let rising_above =
        best == band.hi_bin && (best + 1 >= spec.magnitudes.len() || spec.log_power(best + 1) >= best_val);
    if rising_below || rising_above {
        return Ok(PeakEstimate {
            freq_hz: spec.freq_of(best),
            log_power: best_val,
            bin: best,
            offset: 0.0,
            at_edge: true,
            degenerate: false,
        });
    }
    let alpha = spec.log_power(best - 1);
    let gamma = spec.log_power(best + 1);
    let q = quadratic_peak(alpha, best_val, gamma);
    let log_power = best_val - 0.25 * (alpha - gamma) * q.offset;
    Ok(PeakEstimate {
        freq_hz: (best as f64 + q.offset) * spec.bin_hz,
        log_power,
        bin: best,
        offset: q.offset,
        at_edge: false,
        degenerate: q.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate + phase).cos())
            .collect()
    }

    /// Independent least-squares parabola through three points, solved with a
    /// general 3x3 Vandermonde system.
    fn parabola_vertex_oracle(a: f64, b: f64, c: f64) -> f64 {
        let m = nalgebra::Matrix3::new(1.0, -1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0);
        let coef = m.lu().solve(&nalgebra::Vector3::new(a, b, c)).unwrap();
        -coef[1] / (2.0 * coef[0])
    }

    #[test]
    fn quadratic_peak_cases() {
        assert_eq!(quadratic_peak(1.0, 3.0, 1.0).offset, 0.0);
        let expected = parabola_vertex_oracle(1.0, 3.0, 2.0);
        assert!((expected - 1.0 / 6.0).abs() < 1e-12);
        let q = quadratic_peak(1.0, 3.0, 2.0);
        assert!((q.offset - expected).abs() < 1e-12);
        assert!((q.offset - 0.1667).abs() < 1e-4);
        let flat = quadratic_peak(2.0, 2.0, 2.0);
        assert_eq!(flat.offset, 0.0);
        assert!(flat.degenerate);
    }

    #[test]
    fn single_tone_peak() {
        let s = magnitude_spectrum(&tone(50.0, 400.0, 800, 0.3), 400.0, 4096, Window::Rectangular)
            .unwrap();
        let (k, _) = s
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((s.freq_of(k) - 50.0).abs() <= s.bin_hz / 2.0);
        assert_eq!(s.magnitudes.len(), 2049);
        assert!((s.bin_hz * s.n_fft as f64 - 400.0).abs() < 1e-9);
    }

    #[test]
    fn zero_frame_and_fft_length_check() {
        let s = magnitude_spectrum(&[0.0; 64], 100.0, 128, Window::Hann).unwrap();
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert!(matches!(
            magnitude_spectrum(&[0.0; 64], 100.0, 32, Window::Hann),
            Err(Error::FftTooShort { .. })
        ));
        let band = s.band(10.0, 30.0).unwrap();
        assert!(matches!(interpolated_peak_hz(&s, &band), Err(Error::EmptyOrFlatBand)));
    }

    #[test]
    fn two_tones_match_dense_dft() {
        let rate = 400.0;
        let x: Vec<f64> = tone(50.0, rate, 800, 0.0)
            .iter()
            .zip(tone(100.0, rate, 800, 1.0))
            .map(|(a, b)| a + b)
            .collect();
        let s = magnitude_spectrum(&x, rate, 4096, Window::Rectangular).unwrap();
        // direct DFT evaluation at the two tone frequencies
        let dft = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let w = 2.0 * PI * f * n as f64 / rate;
                re += v * w.cos();
                im -= v * w.sin();
            }
            (re * re + im * im).sqrt()
        };
        for f in [50.0, 100.0] {
            let k = (f / s.bin_hz).round() as usize;
            assert!((s.magnitudes[k] - dft(s.freq_of(k))).abs() < 1e-8 * dft(f));
            assert!(s.magnitudes[k] > s.magnitudes[k - 1] && s.magnitudes[k] > s.magnitudes[k + 1]);
            assert!(s.magnitudes[k] > 0.9 * 400.0);
        }
        let k75 = (75.0 / s.bin_hz).round() as usize;
        assert!(s.magnitudes[k75] < 0.05 * s.magnitudes[(50.0 / s.bin_hz) as usize]);
    }

    #[test]
    fn on_bin_tone() {
        let x = tone(50.0, 400.0, 800, 0.0);
        let s = magnitude_spectrum(&x, 400.0, 800, Window::Rectangular).unwrap();
        let band = s.band(46.0, 64.0).unwrap();
        let p = interpolated_peak_hz(&s, &band).unwrap();
        assert_eq!(p.bin, 100);
        assert!((p.freq_hz - 50.0).abs() < 1e-9);
        assert!(p.offset.abs() < 1e-9);
    }

    #[test]
    fn off_bin_tone_recovered() {
        let x = tone(50.13, 400.0, 800, 0.7);
        let s = magnitude_spectrum(&x, 400.0, 4096, Window::Rectangular).unwrap();
        let p = interpolated_peak_hz(&s, &s.band(46.0, 64.0).unwrap()).unwrap();
        assert!((p.freq_hz - 50.13).abs() < 0.01, "{}", p.freq_hz);
    }

    #[test]
    fn edge_peak_is_flagged() {
        let s = Spectrum {
            magnitudes: (0..2049).map(|k| 1.0 / (1.0 + k as f64)).collect(),
            bin_hz: 400.0 / 4096.0,
            n_fft: 4096,
            window: Window::Rectangular,
        };
        let p = interpolated_peak_hz(&s, &s.band(46.0, 64.0).unwrap()).unwrap();
        assert!(p.at_edge);
        assert_eq!(p.offset, 0.0);
        assert_eq!(p.bin, s.band(46.0, 64.0).unwrap().lo_bin);
    }

    #[test]
    fn local_peak_on_band_edge_is_interpolated() {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 46.03 * i as f64 / 1000.0 + 1.0).sin()).collect();
        let s = magnitude_spectrum(&x, 1000.0, 16384, Window::Rectangular).unwrap();
        let p = interpolated_peak_hz(&s, &s.band(46.0, 64.0).unwrap()).unwrap();
        assert_eq!(p.bin, s.band(46.0, 64.0).unwrap().lo_bin);
        assert!(!p.at_edge);
        assert!((p.freq_hz - 46.03).abs() < 0.005, "{}", p.freq_hz);
    }

    #[test]
    fn interpolation_error_below_bin_fraction_at_40db() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rate = 400.0;
        // 4 s frames: at 2 s the negative-frequency image alone pushes the
        // worst case just past bin_hz/50
        let n = 1600;
        let n_fft = next_pow2(8 * n);
        let analyzer = SpectrumAnalyzer::new(n_fft, Window::Rectangular).unwrap();
        let noise_std = (0.5f64 / 1e4).sqrt();
        let normal = rand_distr::Normal::new(0.0, noise_std).unwrap();
        for _ in 0..200 {
            let f = rng.gen_range(46.5..63.5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let x: Vec<f64> = tone(f, rate, n, phase)
                .into_iter()
                .map(|v| v + rng.sample(normal))
                .collect();
            let s = analyzer.magnitude(&x, rate).unwrap();
            let p = interpolated_peak_hz(&s, &s.band(46.0, 64.0).unwrap()).unwrap();
            assert!((p.freq_hz - f).abs() < s.bin_hz / 50.0, "f={f} est={}", p.freq_hz);
        }
    }

    proptest! {
        #[test]
        fn parseval_rectangular(x in prop::collection::vec(-10.0f64..10.0, 1..300), extra in 0u32..3) {
            let n_fft = next_pow2(x.len()) << extra;
            let s = magnitude_spectrum(&x, 1.0, n_fft, Window::Rectangular).unwrap();
            let e: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((s.energy() - e).abs() <= 1e-6 * e.max(1e-300));
        }

        #[test]
        fn quadratic_offset_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
            prop_assume!(b > a && b > c);
            let q = quadratic_peak(a, b, c);
            prop_assert!(q.offset.abs() <= 0.5);
        }
    }
}
