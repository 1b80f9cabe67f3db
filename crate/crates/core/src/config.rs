//! Pipeline parameters shared by training and classification.
//!
//! Loaded from a flat TOML document; unknown keys are rejected so that every
//! run's parameters are auditable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "ENF_CASCADE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// All 38 features.
    All,
    /// The fixed per-kind feature lists.
    #[serde(rename = "table3", alias = "selected")]
    Selected,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FeatureMode::All),
            "table3" | "selected" => Ok(FeatureMode::Selected),
            other => Err(Error::Config(format!(
                "feature mode {other:?} (expected `all` or `table3`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Audio is declared when the off-nominal to near-nominal magnitude ratio exceeds this.
    pub type_threshold: f64,
    /// Half-width of the bands around 50, 60, 100 and 120 Hz used for typing.
    pub nominal_band_half_width_hz: f64,
    /// Upper frequency limit of the typing spectrum.
    pub typing_max_hz: f64,
    /// Cap on the whole-recording transform length used for typing.
    pub typing_max_fft: usize,

    pub audio_frame_s: f64,
    pub audio_overlap_s: f64,
    pub audio_bandwidths_hz: Vec<f64>,
    pub audio_harmonics: usize,
    /// Grid spacing of the combined spectrum before interpolation.
    pub audio_resolution_hz: f64,

    pub power_frame_s: f64,
    pub power_band_lo_hz: f64,
    pub power_band_hi_hz: f64,
    /// Zero-padding factor: n_fft is the next power of two at or above this
    /// multiple of the frame length.
    pub zero_pad_factor: usize,

    pub hampel_window: usize,
    pub hampel_sigmas: f64,
    pub smooth_window: usize,
    /// Hampel and smoothing are always applied to audio traces; this toggles them for power.
    pub filter_power_enf: bool,

    pub segment_len: usize,
    pub feature_mode: FeatureMode,

    pub svm_c_grid: Vec<f64>,
    /// Multiplied by 1 / (feature dimension).
    pub svm_gamma_grid: Vec<f64>,
    pub svm_folds: usize,
    pub svm_tolerance: f64,
    pub svm_max_iter: usize,
    pub calibration_folds: usize,
    pub probability_floor: f64,

    pub ar_order_power: usize,
    pub ar_order_audio: usize,
    pub pole_block_s: f64,
    pub nearest_poles: usize,

    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            type_threshold: 3.0,
            nominal_band_half_width_hz: 1.5,
            typing_max_hz: 125.0,
            typing_max_fft: 1 << 22,
            audio_frame_s: 5.0,
            audio_overlap_s: 3.0,
            audio_bandwidths_hz: vec![1.0, 3.0, 8.0],
            audio_harmonics: 6,
            audio_resolution_hz: 0.001,
            power_frame_s: 2.0,
            power_band_lo_hz: 46.0,
            power_band_hi_hz: 64.0,
            zero_pad_factor: 8,
            hampel_window: 11,
            hampel_sigmas: 3.0,
            smooth_window: 5,
            filter_power_enf: false,
            segment_len: 32,
            feature_mode: FeatureMode::All,
            svm_c_grid: vec![0.1, 1.0, 10.0, 100.0],
            svm_gamma_grid: vec![0.01, 0.1, 1.0, 10.0],
            svm_folds: 5,
            svm_tolerance: 1e-3,
            svm_max_iter: 1_000_000,
            calibration_folds: 3,
            probability_floor: 1e-12,
            ar_order_power: 8,
            ar_order_audio: 12,
            pole_block_s: 10.0,
            nearest_poles: 2,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::in_file(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies a `key=value` override, with the value in TOML syntax.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let key = key.trim();
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        let value = value.trim();
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        // integers written where floats are expected
        let parsed = match (&table[key], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        let updated: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.type_threshold > 0.0) {
            return bad("type_threshold must be positive");
        }
        if !(self.nominal_band_half_width_hz > 0.0 && self.nominal_band_half_width_hz < 5.0) {
            return bad("nominal_band_half_width_hz must be in (0, 5)");
        }
        if !(self.typing_max_hz >= 121.0 + self.nominal_band_half_width_hz) {
            return bad("typing_max_hz must cover the 120 Hz band");
        }
        if !self.typing_max_fft.is_power_of_two() {
            return bad("typing_max_fft must be a power of two");
        }
        if !(self.audio_overlap_s >= 0.0 && self.audio_overlap_s < self.audio_frame_s) {
            return bad("audio overlap must be in [0, frame)");
        }
        if self.audio_bandwidths_hz.is_empty()
            || self.audio_bandwidths_hz.iter().any(|&b| !(b > 0.0 && b < 10.0))
        {
            return bad("audio_bandwidths_hz must be non-empty, each in (0, 10)");
        }
        if self.audio_harmonics == 0 {
            return bad("audio_harmonics must be at least 1");
        }
        if !(self.audio_resolution_hz > 0.0) || !(self.power_frame_s > 0.0) {
            return bad("resolutions and frame lengths must be positive");
        }
        if !(self.power_band_lo_hz < self.power_band_hi_hz) {
            return bad("power band must be increasing");
        }
        if self.zero_pad_factor == 0 {
            return bad("zero_pad_factor must be at least 1");
        }
        if self.hampel_window < 3 || self.hampel_window % 2 == 0 || self.smooth_window % 2 == 0 {
            return bad("hampel_window must be odd and >= 3; smooth_window must be odd");
        }
        if self.segment_len != 32 {
            return bad("segment_len is fixed at 32 (5-level Haar layout)");
        }
        if self.svm_c_grid.is_empty() || self.svm_c_grid.iter().any(|&c| !(c > 0.0)) {
            return bad("svm_c_grid must hold positive values");
        }
        if self.svm_gamma_grid.is_empty() || self.svm_gamma_grid.iter().any(|&g| !(g > 0.0)) {
            return bad("svm_gamma_grid must hold positive values");
        }
        if self.svm_folds < 2 || self.calibration_folds < 2 {
            return bad("fold counts must be at least 2");
        }
        if !(self.svm_tolerance > 0.0) || self.svm_max_iter == 0 {
            return bad("svm tolerance and iteration cap must be positive");
        }
        if !(self.probability_floor > 0.0 && self.probability_floor < 1e-3) {
            return bad("probability_floor must be in (0, 1e-3)");
        }
        if self.ar_order_power == 0 || self.ar_order_audio == 0 {
            return bad("AR orders must be positive");
        }
        if !(self.pole_block_s > 0.0) || self.nearest_poles == 0 {
            return bad("pole_block_s and nearest_poles must be positive");
        }
        Ok(())
    }

    pub fn ar_order(&self, ty: crate::grid::SignalType) -> usize {
        match ty {
            crate::grid::SignalType::Audio => self.ar_order_audio,
            crate::grid::SignalType::Power => self.ar_order_power,
        }
    }
}
