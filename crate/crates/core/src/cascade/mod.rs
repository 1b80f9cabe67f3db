//! End-to-end pipeline: typing, ENF extraction, SVM shortlist, pole matching.

mod archive;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::armodel::{block_poles, grid_pole_database};
use crate::config::{FeatureMode, PipelineConfig};
use crate::enf::{extract_enf, EnfSummary};
use crate::error::{Error, Result};
use crate::features::{extract_all, FeatureMask, SEGMENT_LEN};
use crate::grid::{DataKind, GridInfo, GridLabel, SignalType};
use crate::polematch::{match_poles, MatchResult, PoleDatabase};
use crate::pretyping::{classify_type, TypingResult};
use crate::signal_io::Recording;
use crate::svm::{aggregate_and_shortlist, train_multiclass, GridProbabilities, MulticlassSvm};

pub use archive::{load_model, read_model, save_model, write_model};

pub const FORMAT_VERSION: u32 = 1;
pub const REPORT_SCHEMA: &str = "1.0";
/// Fewest ENF samples a recording must yield (two feature segments).
pub const MIN_ENF_SAMPLES: usize = 2 * SEGMENT_LEN;

/// SVM and pole database for one data kind.
#[derive(Debug, Clone, PartialEq)]
pub struct KindModel {
    pub svm: MulticlassSvm,
    pub poles: PoleDatabase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub kinds: BTreeMap<DataKind, KindModel>,
    pub grids: Vec<GridInfo>,
}

/// Training or evaluation input with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledRecording {
    pub recording: Recording,
    pub grid: GridLabel,
    pub signal_type: SignalType,
}

impl LabeledRecording {
    pub fn new(recording: Recording, grid: GridLabel, signal_type: SignalType) -> Self {
        Self {
            recording,
            grid,
            signal_type,
        }
    }

    pub fn kind(&self) -> DataKind {
        DataKind::new(self.grid.nominal(), self.signal_type)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifyOptions {
    /// Stop after the SVM stage and report its argmax.
    pub baseline_only: bool,
    /// Include wall-clock stage timings (makes reports run-dependent).
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmStage {
    pub kind: DataKind,
    pub segments: usize,
    pub probabilities: BTreeMap<GridLabel, f64>,
    pub shortlist: Vec<GridLabel>,
    pub argmax: GridLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub schema: String,
    pub source: String,
    pub typing: TypingResult,
    pub declared_type: Option<SignalType>,
    pub data_type: SignalType,
    pub type_disagreement: bool,
    pub enf: EnfSummary,
    pub svm: SvmStage,
    pub pole_match: Option<MatchResult>,
    /// Pole-match winner, or the SVM argmax in baseline-only mode.
    pub final_label: GridLabel,
    pub location: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl ClassificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn summary(&self) -> String {
        let shortlist: Vec<String> = self
            .svm
            .shortlist
            .iter()
            .map(|g| format!("{g} ({:.3})", self.svm.probabilities[g]))
            .collect();
        let mut s = format!(
            "{}: {} Hz {} (ratio {:.3}), {} ENF samples, mean {:.4} Hz\n  shortlist {}\n",
            self.source,
            self.typing.nominal,
            self.data_type,
            self.typing.ratio_pr_pn,
            self.enf.samples,
            self.enf.mean_hz,
            shortlist.join(", ")
        );
        if let Some(m) = &self.pole_match {
            let d: Vec<String> = m.distances.iter().map(|(g, o)| format!("{g}={o:.4e}")).collect();
            s.push_str(&format!("  pole distances {}\n", d.join(", ")));
        }
        s.push_str(&format!("  decision: {} ({})", self.final_label, self.location));
        s
    }
}

struct FileContribution {
    kind: DataKind,
    grid: GridLabel,
    rows: Vec<Vec<f64>>,
    poles: Vec<Complex64>,
}

fn mask_for(kind: DataKind, cfg: &PipelineConfig) -> FeatureMask {
    match cfg.feature_mode {
        FeatureMode::All => FeatureMask::all(Some(kind)),
        FeatureMode::Selected => FeatureMask::selected(kind),
    }
}

fn source_of(rec: &Recording) -> String {
    rec.source_path().display().to_string()
}

fn train_file(item: &LabeledRecording, cfg: &PipelineConfig) -> Result<FileContribution> {
    let kind = item.kind();
    let mask = mask_for(kind, cfg);
    let enf = extract_enf(&item.recording, kind.nominal, item.signal_type, cfg)?;
    let rows = extract_all(&enf.values_hz)?.iter().map(|f| mask.apply(f)).collect();
    let poles = grid_pole_database(&item.recording, item.signal_type, item.grid, cfg)?
        .into_iter()
        .flat_map(|s| s.poles)
        .collect();
    Ok(FileContribution {
        kind,
        grid: item.grid,
        rows,
        poles,
    })
}

impl CascadeModel {
    /// Trains one SVM and one pole database per data kind present in the corpus.
    pub fn train(corpus: &[LabeledRecording], cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::InsufficientData("empty training corpus".into()));
        }
        let contributions: Vec<FileContribution> = corpus
            .par_iter()
            .map(|item| train_file(item, cfg).map_err(|e| Error::in_file(item.recording.source_path(), e)))
            .collect::<Result<_>>()?;

        let mut by_kind: BTreeMap<DataKind, Vec<&FileContribution>> = BTreeMap::new();
        for c in &contributions {
            by_kind.entry(c.kind).or_default().push(c);
        }
        let kinds: Vec<(DataKind, KindModel)> = by_kind
            .into_par_iter()
            .map(|(kind, files)| {
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                let mut poles = PoleDatabase::new();
                for f in files {
                    labels.extend(std::iter::repeat(f.grid).take(f.rows.len()));
                    rows.extend(f.rows.iter().cloned());
                    poles.insert(f.grid, f.poles.iter().copied());
                }
                let svm = train_multiclass(kind, &rows, &labels, mask_for(kind, cfg), cfg)?;
                for g in &svm.labels {
                    if poles.pole_count(*g) < cfg.nearest_poles {
                        return Err(Error::NotEnoughPoles {
                            grid: g.to_string(),
                            available: poles.pole_count(*g),
                            needed: cfg.nearest_poles,
                        });
                    }
                }
                Ok((kind, KindModel { svm, poles }))
            })
            .collect::<Result<_>>()?;

        let mut grids: Vec<GridLabel> = corpus.iter().map(|c| c.grid).collect();
        grids.sort();
        grids.dedup();
        Ok(Self {
            format_version: FORMAT_VERSION,
            config: cfg.clone(),
            kinds: kinds.into_iter().collect(),
            grids: grids.into_iter().map(GridInfo::from).collect(),
        })
    }

    pub fn kind(&self, kind: DataKind) -> Option<&KindModel> {
        self.kinds.get(&kind)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_model(path)
    }

    pub fn classify(&self, rec: &Recording) -> Result<ClassificationReport> {
        self.classify_with(rec, ClassifyOptions::default())
    }

    pub fn classify_with(&self, rec: &Recording, opts: ClassifyOptions) -> Result<ClassificationReport> {
        let cfg = &self.config;
        let mut timings = BTreeMap::new();
        let mut clock = Instant::now();
        let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
            timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
            clock = Instant::now();
        };

        let typing = classify_type(rec, cfg)?;
        let declared = rec.declared_type();
        let data_type = declared.unwrap_or(typing.data_type);
        let type_disagreement = declared.is_some_and(|d| d != typing.data_type);
        if type_disagreement {
            log::warn!(
                "{}: typing says {}, declared {}; using declared type",
                source_of(rec),
                typing.data_type,
                data_type
            );
        }
        let kind = DataKind::new(typing.nominal, data_type);
        let km = self.kind(kind).ok_or_else(|| Error::KindUnavailable(kind.to_string()))?;
        lap("typing", &mut timings);

        let enf = extract_enf(rec, kind.nominal, data_type, cfg)?;
        if enf.len() < MIN_ENF_SAMPLES {
            return Err(Error::TooShort {
                needed: MIN_ENF_SAMPLES,
                available: enf.len(),
            });
        }
        lap("enf", &mut timings);

        let features = extract_all(&enf.values_hz)?;
        let segments: Vec<GridProbabilities> = features
            .iter()
            .map(|f| km.svm.segment_probabilities(&km.svm.mask.apply(f)))
            .collect::<Result<_>>()?;
        let decision = aggregate_and_shortlist(&segments, cfg.probability_floor, kind.nominal.shortlist_len())?;
        let argmax = decision.aggregated.argmax();
        let svm = SvmStage {
            kind,
            segments: segments.len(),
            probabilities: decision
                .aggregated
                .labels
                .iter()
                .copied()
                .zip(decision.aggregated.probabilities.iter().copied())
                .collect(),
            shortlist: decision.shortlist.clone(),
            argmax,
        };
        lap("svm", &mut timings);

        let (pole_match, final_label) = if opts.baseline_only {
            (None, argmax)
        } else {
            let test_poles: Vec<Complex64> = block_poles(rec, cfg.ar_order(data_type), cfg.pole_block_s)?
                .into_iter()
                .flat_map(|s| s.poles)
                .collect();
            let m = match_poles(&test_poles, &km.poles, &decision.shortlist, cfg.nearest_poles)?;
            let chosen = m.chosen;
            (Some(m), chosen)
        };
        lap("poles", &mut timings);

        Ok(ClassificationReport {
            schema: REPORT_SCHEMA.to_string(),
            source: source_of(rec),
            typing,
            declared_type: declared,
            data_type,
            type_disagreement,
            enf: enf.summary(),
            svm,
            pole_match,
            final_label,
            location: final_label.location().to_string(),
            timings_ms: opts.timings.then_some(timings),
        })
    }

    /// Cascade and SVM-only accuracy over a labelled corpus. Files that fail
    /// to classify count as misclassified for both.
    pub fn evaluate(&self, corpus: &[LabeledRecording]) -> Result<Evaluation> {
        if corpus.is_empty() {
            return Err(Error::InsufficientData("empty evaluation corpus".into()));
        }
        let outcomes: Vec<FileOutcome> = corpus
            .par_iter()
            .map(|item| match self.classify(&item.recording) {
                Ok(r) => FileOutcome {
                    source: source_of(&item.recording),
                    grid: item.grid,
                    signal_type: item.signal_type,
                    cascade: Some(r.final_label),
                    baseline: Some(r.svm.argmax),
                    error: None,
                },
                Err(e) => FileOutcome {
                    source: source_of(&item.recording),
                    grid: item.grid,
                    signal_type: item.signal_type,
                    cascade: None,
                    baseline: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        Ok(Evaluation::from_outcomes(outcomes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub source: String,
    pub grid: GridLabel,
    pub signal_type: SignalType,
    pub cascade: Option<GridLabel>,
    pub baseline: Option<GridLabel>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub baseline_correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, o: &FileOutcome) {
        self.total += 1;
        self.correct += usize::from(o.cascade == Some(o.grid));
        self.baseline_correct += usize::from(o.baseline == Some(o.grid));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub power: Tally,
    pub audio: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_grid: BTreeMap<GridLabel, GridRow>,
    pub overall: Tally,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub files: Vec<FileOutcome>,
}

impl Evaluation {
    pub fn from_outcomes(files: Vec<FileOutcome>) -> Self {
        let mut per_grid: BTreeMap<GridLabel, GridRow> = BTreeMap::new();
        let mut overall = Tally::default();
        for o in &files {
            let row = per_grid.entry(o.grid).or_default();
            match o.signal_type {
                SignalType::Power => row.power.add(o),
                SignalType::Audio => row.audio.add(o),
            }
            overall.add(o);
        }
        let denom = overall.total.max(1) as f64;
        Self {
            per_grid,
            accuracy: overall.correct as f64 / denom,
            baseline_accuracy: overall.baseline_correct as f64 / denom,
            overall,
            files,
        }
    }

    /// Per-grid correct counts by data type with the SVM-only column alongside.
    pub fn table(&self) -> String {
        let mut s = String::from("grid  location                  power      audio      svm-only\n");
        let cell = |t: &Tally, v: usize| {
            if t.total == 0 {
                "-".to_string()
            } else {
                format!("{v}/{}", t.total)
            }
        };
        for (g, row) in &self.per_grid {
            s.push_str(&format!(
                "{:<5} {:<25} {:<10} {:<10} {}\n",
                g.to_string(),
                g.location(),
                cell(&row.power, row.power.correct),
                cell(&row.audio, row.audio.correct),
                format!(
                    "{}/{}",
                    row.power.baseline_correct + row.audio.baseline_correct,
                    row.power.total + row.audio.total
                ),
            ));
        }
        s.push_str(&format!(
            "total: cascade {}/{} ({:.2}%), svm-only {}/{} ({:.2}%)\n",
            self.overall.correct,
            self.overall.total,
            100.0 * self.accuracy,
            self.overall.baseline_correct,
            self.overall.total,
            100.0 * self.baseline_accuracy
        ));
        s
    }
}
