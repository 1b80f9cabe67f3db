//! Grid identities, nominal frequencies and data kinds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Nominal {
    #[serde(rename = "50")]
    Hz50,
    #[serde(rename = "60")]
    Hz60,
}

impl Nominal {
    pub fn hz(self) -> f64 {
        match self {
            Nominal::Hz50 => 50.0,
            Nominal::Hz60 => 60.0,
        }
    }

    /// Shortlist length handed from the SVM stage to pole matching.
    pub fn shortlist_len(self) -> usize {
        match self {
            Nominal::Hz50 => 3,
            Nominal::Hz60 => 2,
        }
    }
}

impl fmt::Display for Nominal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.hz() as u32)
    }
}

impl FromStr for Nominal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().trim_end_matches("Hz").trim() {
            "50" => Ok(Nominal::Hz50),
            "60" => Ok(Nominal::Hz60),
            other => Err(Error::InvalidArgument(format!("nominal frequency {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalType {
    Audio,
    Power,
}

impl fmt::Display for SignalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalType::Audio => "audio",
            SignalType::Power => "power",
        })
    }
}

impl FromStr for SignalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" => Ok(SignalType::Audio),
            "power" => Ok(SignalType::Power),
            other => Err(Error::InvalidArgument(format!("data type {other:?}"))),
        }
    }
}

/// One of the four per-kind classifiers: nominal frequency crossed with data type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataKind {
    pub nominal: Nominal,
    pub signal_type: SignalType,
}

impl DataKind {
    pub const ALL: [DataKind; 4] = [
        DataKind::new(Nominal::Hz50, SignalType::Power),
        DataKind::new(Nominal::Hz60, SignalType::Power),
        DataKind::new(Nominal::Hz50, SignalType::Audio),
        DataKind::new(Nominal::Hz60, SignalType::Audio),
    ];

    pub const fn new(nominal: Nominal, signal_type: SignalType) -> Self {
        Self {
            nominal,
            signal_type,
        }
    }

    /// Stable identifier, e.g. `50power`.
    pub fn key(self) -> String {
        format!("{}{}", self.nominal, self.signal_type)
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Hz {}", self.nominal, self.signal_type)
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() < 3 {
            return Err(Error::InvalidArgument(format!("data kind {s:?}")));
        }
        let (nominal, ty) = s.split_at(2);
        Ok(DataKind::new(nominal.parse()?, ty.parse()?))
    }
}

/// Grid identity, labelled A to L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GridLabel {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    J,
    K,
    L,
}

impl GridLabel {
    pub const ALL: [GridLabel; 12] = [
        GridLabel::A,
        GridLabel::B,
        GridLabel::C,
        GridLabel::D,
        GridLabel::E,
        GridLabel::F,
        GridLabel::G,
        GridLabel::H,
        GridLabel::I,
        GridLabel::J,
        GridLabel::K,
        GridLabel::L,
    ];

    pub fn nominal(self) -> Nominal {
        match self {
            GridLabel::A | GridLabel::C | GridLabel::I | GridLabel::J => Nominal::Hz60,
            _ => Nominal::Hz50,
        }
    }

    pub fn location(self) -> &'static str {
        match self {
            GridLabel::A => "Texas",
            GridLabel::B => "Lebanon",
            GridLabel::C => "Eastern U.S.",
            GridLabel::D => "Turkey",
            GridLabel::E => "Ireland",
            GridLabel::F => "France",
            GridLabel::G => "Tenerife",
            GridLabel::H => "India (Agra)",
            GridLabel::I => "Western U.S.",
            GridLabel::J => "Brazil",
            GridLabel::K => "Norway",
            GridLabel::L => "Australia",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for GridLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix("S-").unwrap_or(t);
        GridLabel::ALL
            .iter()
            .copied()
            .find(|g| g.to_string().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::InvalidArgument(format!("grid label {s:?}")))
    }
}

/// Row of the grid metadata table carried inside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub label: GridLabel,
    pub location: String,
    pub nominal: Nominal,
}

impl From<GridLabel> for GridInfo {
    fn from(label: GridLabel) -> Self {
        Self {
            label,
            location: label.location().to_string(),
            nominal: label.nominal(),
        }
    }
}
