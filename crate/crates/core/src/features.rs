//! Per-segment ENF descriptors.
//!
//! Layout of the 38 features (1-based):
//!
//! | index | feature |
//! |-------|---------|
//! | 1     | unbiased variance |
//! | 2     | mean |
//! | 3     | mean of the three largest absolute first differences |
//! | 4-5   | order-2 AR coefficients of the mean-removed segment (Yule-Walker) |
//! | 6-37  | 5-level orthonormal Haar DWT, `[A5, D5, D4, D3, D2, D1]` |
//! | 38    | range (max - min) |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::armodel::{autocorrelation, levinson_durbin};
use crate::error::{Error, Result};
use crate::grid::{DataKind, Nominal, SignalType};

pub const SEGMENT_LEN: usize = 32;
pub const FEATURE_COUNT: usize = 38;
pub const HAAR_LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub segment_index: usize,
}

impl FeatureVector {
    /// Feature by its 1-based index.
    pub fn get(&self, index: usize) -> f64 {
        self.values[index - 1]
    }
}

/// Non-overlapping 32-sample segments; the remainder is dropped.
pub fn segment_enf(values: &[f64]) -> Result<Vec<&[f64]>> {
    if values.len() < SEGMENT_LEN {
        return Err(Error::TooShort {
            needed: SEGMENT_LEN,
            available: values.len(),
        });
    }
    Ok(values.chunks_exact(SEGMENT_LEN).collect())
}

/// Orthonormal Haar DWT of a length `2^levels * m` signal.
///
/// Output is `[A_L, D_L, D_{L-1}, ..., D_1]`.
pub fn haar_dwt(x: &[f64], levels: usize) -> Vec<f64> {
    assert!(x.len() % (1 << levels) == 0, "length must be divisible by 2^levels");
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut approx = x.to_vec();
    let mut details: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d): (Vec<f64>, Vec<f64>) = approx
            .chunks_exact(2)
            .map(|p| (s * (p[0] + p[1]), s * (p[0] - p[1])))
            .unzip();
        details.push(d);
        approx = a;
    }
    let mut out = approx;
    for d in details.into_iter().rev() {
        out.extend(d);
    }
    out
}

pub fn haar_idwt(coeffs: &[f64], levels: usize) -> Vec<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let n = coeffs.len();
    let mut len = n >> levels;
    let mut approx = coeffs[..len].to_vec();
    while len < n {
        let d = &coeffs[len..2 * len];
        approx = approx
            .iter()
            .zip(d)
            .flat_map(|(a, d)| [s * (a + d), s * (a - d)])
            .collect();
        len *= 2;
    }
    approx
}

pub fn extract_features(segment: &[f64], segment_index: usize) -> Result<FeatureVector> {
    if segment.len() != SEGMENT_LEN {
        return Err(Error::DimensionMismatch {
            expected: SEGMENT_LEN,
            got: segment.len(),
        });
    }
    if let Some(i) = segment.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = SEGMENT_LEN as f64;
    // shifted by the first sample so that constant segments centre to exact zeros
    let origin = segment[0];
    let shifted_mean = segment.iter().map(|v| v - origin).sum::<f64>() / n;
    let mean = origin + shifted_mean;
    let centred: Vec<f64> = segment.iter().map(|v| (v - origin) - shifted_mean).collect();
    let variance = centred.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);

    let mut diffs: Vec<f64> = segment.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    diffs.sort_unstable_by(|a, b| b.total_cmp(a));
    let fluctuation = diffs[..3].iter().sum::<f64>() / 3.0;

    let r = autocorrelation(&centred, 2)?;
    let ar = if r[0] > 0.0 {
        levinson_durbin(&r, 2)?.coefficients
    } else {
        vec![0.0, 0.0]
    };

    let max = segment.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = segment.iter().copied().fold(f64::INFINITY, f64::min);

    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.extend([variance, mean, fluctuation, ar[0], ar[1]]);
    values.extend(haar_dwt(segment, HAAR_LEVELS));
    values.push(max - min);
    debug_assert_eq!(values.len(), FEATURE_COUNT);
    Ok(FeatureVector {
        values,
        segment_index,
    })
}

pub fn extract_all(enf_values: &[f64]) -> Result<Vec<FeatureVector>> {
    segment_enf(enf_values)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| extract_features(s, i))
        .collect()
}

/// Ordered subset of 1-based feature indices, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub kind: Option<DataKind>,
    pub indices: Vec<usize>,
}

impl FeatureMask {
    pub fn new(kind: Option<DataKind>, indices: Vec<usize>) -> Result<Self> {
        let mut seen = [false; FEATURE_COUNT + 1];
        for &i in &indices {
            if i == 0 || i > FEATURE_COUNT || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("feature mask index {i}")));
            }
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty feature mask".into()));
        }
        Ok(Self { kind, indices })
    }

    pub fn all(kind: Option<DataKind>) -> Self {
        Self {
            kind,
            indices: (1..=FEATURE_COUNT).collect(),
        }
    }

    /// Fixed selected-feature lists per data kind.
    pub fn selected(kind: DataKind) -> Self {
        let indices: &[usize] = match (kind.nominal, kind.signal_type) {
            (Nominal::Hz60, SignalType::Power) => &[
                1, 38, 5, 3, 13, 4, 20, 26, 22, 34, 30, 6, 37, 27, 19, 31, 36, 32, 33, 18, 14,
            ],
            (Nominal::Hz50, SignalType::Power) => &[
                6, 3, 1, 2, 5, 26, 13, 33, 18, 4, 12, 11, 38, 24, 31, 32, 23, 34, 22, 36, 21, 30,
                25, 28, 20, 29,
            ],
            (Nominal::Hz60, SignalType::Audio) => &[3, 1, 4, 25, 12, 33, 30, 28, 37, 21],
            (Nominal::Hz50, SignalType::Audio) => &[
                2, 1, 3, 26, 37, 4, 6, 11, 22, 13, 28, 29, 5, 35, 10, 31,
            ],
        };
        Self {
            kind: Some(kind),
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn apply(&self, fv: &FeatureVector) -> Vec<f64> {
        self.indices.iter().map(|&i| fv.get(i)).collect()
    }
}

pub fn apply_mask(fv: &FeatureVector, mask: &FeatureMask) -> Vec<f64> {
    mask.apply(fv)
}

/// Per-feature z-score statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InsufficientData("no rows to standardise".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Writes feature rows as comma-separated text with a header of feature indices.
pub fn write_feature_matrix<W: Write>(mut w: W, rows: &[FeatureVector], mask: &FeatureMask) -> std::io::Result<()> {
    let header: Vec<String> = std::iter::once("segment".to_string())
        .chain(mask.indices.iter().map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for fv in rows {
        let mut line = fv.segment_index.to_string();
        for v in mask.apply(fv) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
