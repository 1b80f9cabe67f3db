//! Synthetic multi-grid corpora.
//!
//! Each grid profile drives an Ornstein-Uhlenbeck ENF trajectory which is
//! rendered by a phase-continuous harmonic oscillator. Power mode adds a small
//! amount of coloured noise; audio mode buries the hum under broadband noise
//! and band-limited bursts. Every sample is a function of the master seed.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridLabel, Nominal, SignalType};
use crate::signal_io::{write_wav_f32, Recording};

/// Panel shipped with the crate: twelve synthetic grids with the nominal
/// split of the reference dataset (eight at 50 Hz, four at 60 Hz).
pub const DEFAULT_PANEL_TOML: &str = include_str!("../../../config/synthetic_panel.toml");

fn default_power_snr() -> f64 {
    50.0
}

fn default_true() -> bool {
    true
}

fn default_burst_rate() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridProfile {
    pub label: GridLabel,
    pub nominal_hz: Nominal,
    /// Mean ENF deviation from nominal.
    #[serde(default)]
    pub enf_offset_hz: f64,
    pub enf_std_hz: f64,
    pub enf_range_hz: f64,
    pub drift_timescale_s: f64,
    /// Amplitude of harmonic `k + 1` at index `k`.
    pub harmonic_amplitudes: Vec<f64>,
    #[serde(default)]
    pub amplitude_flicker_std: f64,
    /// Hum power over broadband noise power, audio mode.
    pub noise_snr_db: f64,
    /// Hum power over noise power, power mode.
    #[serde(default = "default_power_snr")]
    pub power_noise_snr_db: f64,
    /// One-pole coefficient of the additive noise; 0 is white.
    #[serde(default)]
    pub noise_color: f64,
    /// Mean number of audio noise bursts per second.
    #[serde(default = "default_burst_rate")]
    pub burst_rate_hz: f64,
    #[serde(default = "default_true")]
    pub audio: bool,
}

impl GridProfile {
    /// Plain 50 or 60 Hz profile with a clean fundamental and two weak harmonics.
    pub fn simple(label: GridLabel, enf_std_hz: f64) -> Self {
        Self {
            label,
            nominal_hz: label.nominal(),
            enf_offset_hz: 0.0,
            enf_std_hz,
            enf_range_hz: (6.0 * enf_std_hz).max(0.05),
            drift_timescale_s: 30.0,
            harmonic_amplitudes: vec![1.0, 0.3, 0.1],
            amplitude_flicker_std: 0.0,
            noise_snr_db: 0.0,
            power_noise_snr_db: default_power_snr(),
            noise_color: 0.0,
            burst_rate_hz: default_burst_rate(),
            audio: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("grid {}: {m}", self.label)));
        if !(self.enf_std_hz >= 0.0) || !(self.enf_range_hz > 0.0) || !(self.drift_timescale_s > 0.0) {
            return bad("enf_std_hz must be >= 0, enf_range_hz and drift_timescale_s > 0");
        }
        if self.enf_offset_hz.abs() + self.enf_range_hz >= 4.0 {
            return bad("offset plus range must stay inside the ENF search band");
        }
        if self.harmonic_amplitudes.is_empty() || self.harmonic_amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return bad("harmonic_amplitudes must be non-empty and non-negative");
        }
        if !(self.amplitude_flicker_std >= 0.0) || !(self.noise_color.abs() < 1.0) || !(self.burst_rate_hz >= 0.0) {
            return bad("flicker and burst rate must be >= 0 and |noise_color| < 1");
        }
        Ok(())
    }

    fn centre_hz(&self) -> f64 {
        self.nominal_hz.hz() + self.enf_offset_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCorpusSpec {
    pub seed: u64,
    pub files_per_grid: usize,
    pub duration_s: f64,
    pub power_rate_hz: f64,
    pub audio_rate_hz: f64,
    /// Time step of the generated ENF trajectory.
    #[serde(default = "default_step")]
    pub trajectory_step_s: f64,
    #[serde(rename = "grid")]
    pub profiles: Vec<GridProfile>,
}

fn default_step() -> f64 {
    0.1
}

impl SynthCorpusSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::in_file(path, e))
    }

    pub fn default_panel() -> Self {
        Self::from_toml_str(DEFAULT_PANEL_TOML).expect("shipped panel is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !(self.trajectory_step_s > 0.0) {
            return Err(Error::Config("duration_s and trajectory_step_s must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !seen.insert(p.label) {
                return Err(Error::Config(format!("grid {} listed twice", p.label)));
            }
        }
        Ok(())
    }

    pub fn rate_for(&self, ty: SignalType) -> f64 {
        match ty {
            SignalType::Power => self.power_rate_hz,
            SignalType::Audio => self.audio_rate_hz,
        }
    }

    /// Files the spec describes, in generation order.
    pub fn entries(&self) -> Vec<CorpusEntry> {
        let mut out = Vec::new();
        for p in &self.profiles {
            for ty in [SignalType::Power, SignalType::Audio] {
                if ty == SignalType::Audio && !p.audio {
                    continue;
                }
                for i in 0..self.files_per_grid {
                    let index = out.len() as u64;
                    out.push(CorpusEntry {
                        file: format!("{}_{}_{:02}.wav", p.label, ty, i),
                        grid: p.label,
                        signal_type: ty,
                        nominal: p.nominal_hz,
                        seed: derive_seed(self.seed, index),
                    });
                }
            }
        }
        out
    }

    fn profile(&self, grid: GridLabel) -> &GridProfile {
        self.profiles.iter().find(|p| p.label == grid).expect("entry grid is in spec")
    }

    /// Renders one entry; the trajectory comes from the entry seed, the
    /// waveform noise from a second stream derived from it.
    pub fn render_entry(&self, entry: &CorpusEntry) -> Result<(Vec<f64>, Recording)> {
        let profile = self.profile(entry.grid);
        let traj = generate_enf_trajectory(profile, self.duration_s, self.trajectory_step_s, entry.seed)?;
        let rec = render_recording(
            profile,
            &traj,
            self.trajectory_step_s,
            entry.signal_type,
            self.rate_for(entry.signal_type),
            derive_seed(entry.seed, 1),
        )?;
        Ok((traj, rec))
    }

    /// All recordings of the spec in memory, in `entries()` order.
    pub fn render_all(&self) -> Result<Vec<(CorpusEntry, Recording)>> {
        self.entries()
            .into_par_iter()
            .map(|e| {
                let (_, rec) = self.render_entry(&e)?;
                Ok((e, rec))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    pub grid: GridLabel,
    #[serde(rename = "type")]
    pub signal_type: SignalType,
    pub nominal: Nominal,
    pub seed: u64,
}

/// SplitMix64 finaliser applied to `master + splitmix(index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master.wrapping_add(mix(index)))
}

/// Discrete OU process around the profile centre, clipped to nominal ± range.
pub fn generate_enf_trajectory(profile: &GridProfile, duration_s: f64, step_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(step_s > 0.0) || !(duration_s >= 0.0) {
        return Err(Error::InvalidArgument("step_s must be positive".into()));
    }
    let n = (duration_s / step_s).ceil() as usize + 1;
    let mu = profile.centre_hz();
    let lo = profile.nominal_hz.hz() - profile.enf_range_hz;
    let hi = profile.nominal_hz.hz() + profile.enf_range_hz;
    if profile.enf_std_hz == 0.0 {
        return Ok(vec![mu.clamp(lo, hi); n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = (-step_s / profile.drift_timescale_s).exp();
    let innovation = profile.enf_std_hz * (1.0 - phi * phi).sqrt();
    let mut x = mu + profile.enf_std_hz * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x.clamp(lo, hi));
        x = mu + phi * (x - mu) + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

/// One-pole filtered Gaussian noise scaled to unit variance.
fn coloured_noise(rng: &mut ChaCha8Rng, n: usize, pole: f64) -> Vec<f64> {
    let gain = (1.0 - pole * pole).sqrt();
    let mut y = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        y = if i == 0 { e } else { pole * y + gain * e };
        out.push(y);
    }
    out
}

/// Band-limited bursts: resonator-filtered noise under a Hann envelope.
fn add_bursts(rng: &mut ChaCha8Rng, x: &mut [f64], rate: f64, per_second: f64, level: f64) {
    let count = (per_second * x.len() as f64 / rate).round() as usize;
    for _ in 0..count {
        let len = (rng.gen_range(0.2..1.0) * rate) as usize;
        if len >= x.len() {
            continue;
        }
        let start = rng.gen_range(0..x.len() - len);
        let centre = rng.gen_range(0.15..0.4) * rate;
        let r: f64 = 0.97;
        let (a1, a2) = (2.0 * r * (2.0 * PI * centre / rate).cos(), -r * r);
        let gain = level * (1.0 - r) * 4.0;
        let (mut y1, mut y2) = (0.0, 0.0);
        for j in 0..len {
            let e: f64 = rng.sample(StandardNormal);
            let y = gain * e + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            let env = 0.5 - 0.5 * (2.0 * PI * j as f64 / len as f64).cos();
            x[start + j] += env * y;
        }
    }
}

/// Phase-continuous rendering of a trajectory sampled every `step_s` seconds
/// (linearly interpolated between steps).
pub fn render_recording(
    profile: &GridProfile,
    trajectory: &[f64],
    step_s: f64,
    signal_type: SignalType,
    rate: f64,
    seed: u64,
) -> Result<Recording> {
    if trajectory.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least two points".into()));
    }
    let top = profile.harmonic_amplitudes.len() as f64 * (profile.nominal_hz.hz() + profile.enf_range_hz);
    if rate <= 2.0 * top {
        return Err(Error::InvalidArgument(format!(
            "sample rate {rate} Hz is below twice the highest harmonic ({top} Hz)"
        )));
    }
    let duration = (trajectory.len() - 1) as f64 * step_s;
    let n = (duration * rate).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = profile
        .harmonic_amplitudes
        .iter()
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();

    // slow amplitude flicker, OU with a 1 s timescale
    let phi = (-1.0 / rate).exp();
    let flicker_gain = profile.amplitude_flicker_std * (1.0 - phi * phi).sqrt();
    let mut flicker = profile.amplitude_flicker_std * rng.sample::<f64, _>(StandardNormal);

    let mut phase = 0.0;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let pos = t / step_s;
        let j = (pos.floor() as usize).min(trajectory.len() - 2);
        let frac = pos - j as f64;
        let f = trajectory[j] + frac * (trajectory[j + 1] - trajectory[j]);
        let amp = 1.0 + flicker;
        let v: f64 = profile
            .harmonic_amplitudes
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin())
            .sum();
        x.push(amp * v);
        phase = (phase + 2.0 * PI * f / rate) % (2.0 * PI);
        flicker = phi * flicker + flicker_gain * rng.sample::<f64, _>(StandardNormal);
    }

    let hum_power: f64 = profile.harmonic_amplitudes.iter().map(|a| a * a / 2.0).sum();
    let (snr_db, hum_level) = match signal_type {
        SignalType::Power => (profile.power_noise_snr_db, 1.0),
        SignalType::Audio => (profile.noise_snr_db, 0.05),
    };
    let noise_std = (hum_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let noise = coloured_noise(&mut rng, n, profile.noise_color);
    for (v, e) in x.iter_mut().zip(noise) {
        *v = hum_level * (*v + noise_std * e);
    }
    if signal_type == SignalType::Audio {
        add_bursts(&mut rng, &mut x, rate, profile.burst_rate_hz, hum_level * noise_std * 2.0);
    }
    Recording::new(x, rate).map(|r| r.with_declared_type(None))
}

/// Writes every recording of `spec` as 32-bit float WAV plus `manifest.csv`.
pub fn generate_corpus(spec: &SynthCorpusSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = spec.entries();
    entries.par_iter().try_for_each(|e| {
        let (_, rec) = spec.render_entry(e)?;
        write_wav_f32(out_dir.join(&e.file), &rec)
    })?;
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let fail = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if entries.is_empty() {
        w.write_record(["file", "grid", "type", "nominal", "seed"]).map_err(fail)?;
    }
    for e in entries {
        w.serialize(e).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest; `file` paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, CorpusEntry)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    r.deserialize::<CorpusEntry>()
        .map(|row| {
            let e = row.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Ok((base.join(&e.file), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::enf::extract_enf_power;

    fn sample_std(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
    }

    #[test]
    fn zero_std_is_constant() {
        let p = GridProfile::simple(GridLabel::B, 0.0);
        let t = generate_enf_trajectory(&p, 60.0, 0.1, 1).unwrap();
        assert_eq!(t.len(), 601);
        assert!(t.iter().all(|&f| f == 50.0));
    }

    #[test]
    fn stationary_std_matches() {
        let mut p = GridProfile::simple(GridLabel::B, 0.02);
        p.enf_range_hz = 1.0;
        p.drift_timescale_s = 5.0;
        let t = generate_enf_trajectory(&p, 20_000.0, 0.5, 3).unwrap();
        let s = sample_std(&t);
        assert!((s - 0.02).abs() < 0.2 * 0.02, "{s}");
    }

    #[test]
    fn seeded_and_clipped() {
        let mut p = GridProfile::simple(GridLabel::A, 0.05);
        p.enf_range_hz = 0.04;
        let a = generate_enf_trajectory(&p, 300.0, 0.1, 9).unwrap();
        assert_eq!(a, generate_enf_trajectory(&p, 300.0, 0.1, 9).unwrap());
        assert_ne!(a, generate_enf_trajectory(&p, 300.0, 0.1, 10).unwrap());
        assert!(a.iter().all(|f| (f - 60.0).abs() <= 0.04));
    }

    #[test]
    fn nyquist_violation() {
        let mut p = GridProfile::simple(GridLabel::A, 0.01);
        p.harmonic_amplitudes = vec![1.0; 6];
        let t = generate_enf_trajectory(&p, 10.0, 0.1, 1).unwrap();
        assert!(render_recording(&p, &t, 0.1, SignalType::Power, 400.0, 1).is_err());
        assert!(render_recording(&p, &t, 0.1, SignalType::Power, 1000.0, 1).is_ok());
    }

    #[test]
    fn constant_power_closed_loop() {
        let mut p = GridProfile::simple(GridLabel::B, 0.0);
        p.power_noise_snr_db = 120.0;
        let t = generate_enf_trajectory(&p, 60.0, 0.1, 1).unwrap();
        let rec = render_recording(&p, &t, 0.1, SignalType::Power, 400.0, 2).unwrap();
        let enf = extract_enf_power(&rec, Nominal::Hz50, &PipelineConfig::default()).unwrap();
        assert!(enf.values_hz.iter().all(|v| (v - 50.0).abs() < 0.001));
    }

    #[test]
    fn phase_continuity() {
        let mut p = GridProfile::simple(GridLabel::C, 0.05);
        p.power_noise_snr_db = 200.0;
        let t = generate_enf_trajectory(&p, 30.0, 0.1, 4).unwrap();
        let rate = 1000.0;
        let rec = render_recording(&p, &t, 0.1, SignalType::Power, rate, 5).unwrap();
        // |dx/dt| <= sum_k a_k * 2 pi k f_max
        let fmax = 60.0 + p.enf_range_hz;
        let slew: f64 = p
            .harmonic_amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| a * 2.0 * PI * (k + 1) as f64 * fmax)
            .sum();
        for w in rec.samples().windows(2) {
            assert!((w[1] - w[0]).abs() <= slew / rate * 1.000001);
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let spec = SynthCorpusSpec::default_panel();
        let e = spec.entries();
        let mut seeds: Vec<u64> = e.iter().map(|e| e.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), e.len());
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn default_panel_layout() {
        let spec = SynthCorpusSpec::default_panel();
        assert_eq!(spec.profiles.len(), 12);
        let n50 = spec.profiles.iter().filter(|p| p.nominal_hz == Nominal::Hz50).count();
        assert_eq!(n50, 8);
        for p in &spec.profiles {
            assert_eq!(p.nominal_hz, p.label.nominal());
        }
        let round = SynthCorpusSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(round, spec);
    }

    #[test]
    fn empty_corpus_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthCorpusSpec::default_panel();
        spec.files_per_grid = 0;
        let m = generate_corpus(&spec, dir.path()).unwrap();
        assert!(read_manifest(&m).unwrap().is_empty());
    }

    #[test]
    fn unknown_field_rejected() {
        let mut text = SynthCorpusSpec::default_panel().to_toml_string();
        text.push_str("\nbogus = 1\n");
        assert!(SynthCorpusSpec::from_toml_str(&text).is_err());
    }
}
