//! Nearest-pole matching over the SVM shortlist.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::armodel::PoleSet;
use crate::error::{Error, Result};
use crate::grid::GridLabel;

/// Training poles of each grid, flattened across blocks and files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoleDatabase {
    grids: BTreeMap<GridLabel, Vec<Complex64>>,
}

impl PoleDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, grid: GridLabel, poles: impl IntoIterator<Item = Complex64>) {
        self.grids.entry(grid).or_default().extend(poles);
    }

    pub fn insert_sets(&mut self, grid: GridLabel, sets: &[PoleSet]) {
        self.insert(grid, sets.iter().flat_map(|s| s.poles.iter().copied()));
    }

    pub fn poles(&self, grid: GridLabel) -> Option<&[Complex64]> {
        self.grids.get(&grid).map(Vec::as_slice)
    }

    pub fn grids(&self) -> impl Iterator<Item = GridLabel> + '_ {
        self.grids.keys().copied()
    }

    pub fn grid_count(&self) -> usize {
        self.grids.len()
    }

    pub fn pole_count(&self, grid: GridLabel) -> usize {
        self.grids.get(&grid).map_or(0, Vec::len)
    }

    pub fn contains(&self, grid: GridLabel) -> bool {
        self.grids.get(&grid).is_some_and(|p| !p.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(grid, average distance)` in shortlist order.
    pub distances: Vec<(GridLabel, f64)>,
    pub chosen: GridLabel,
    pub nearest: usize,
    pub test_poles: usize,
}

pub fn pairwise_distance(p: Complex64, g: Complex64) -> f64 {
    (p - g).norm()
}

/// Mean over test poles of the mean distance to the `x` nearest training poles.
pub fn average_nearest_distance(test: &[Complex64], train: &[Complex64], x: usize) -> f64 {
    let mut d = vec![0.0; train.len()];
    let mut total = 0.0;
    for &p in test {
        for (slot, &g) in d.iter_mut().zip(train) {
            *slot = pairwise_distance(p, g);
        }
        if x < d.len() {
            d.select_nth_unstable_by(x - 1, f64::total_cmp);
        }
        let mut kept = d[..x].to_vec();
        kept.sort_by(f64::total_cmp);
        total += kept.iter().sum::<f64>();
    }
    total / (x * test.len()) as f64
}

/// Grid with the smallest distance; ties go to the earlier entry.
pub fn choose_min(distances: &[(GridLabel, f64)]) -> Option<GridLabel> {
    let mut best: Option<(GridLabel, f64)> = None;
    for &(g, d) in distances {
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((g, d));
        }
    }
    best.map(|(g, _)| g)
}

pub fn match_poles(
    test_poles: &[Complex64],
    db: &PoleDatabase,
    shortlist: &[GridLabel],
    x: usize,
) -> Result<MatchResult> {
    if test_poles.is_empty() {
        return Err(Error::InvalidArgument("no test poles".into()));
    }
    if shortlist.is_empty() {
        return Err(Error::InvalidArgument("empty shortlist".into()));
    }
    if x == 0 {
        return Err(Error::InvalidArgument("nearest-pole count must be at least 1".into()));
    }
    let mut distances = Vec::with_capacity(shortlist.len());
    for &g in shortlist {
        let train = db
            .poles(g)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::GridMissing(g.to_string()))?;
        if train.len() < x {
            return Err(Error::NotEnoughPoles {
                grid: g.to_string(),
                available: train.len(),
                needed: x,
            });
        }
        distances.push((g, average_nearest_distance(test_poles, train, x)));
    }
    let chosen = choose_min(&distances).expect("non-empty shortlist");
    Ok(MatchResult {
        distances,
        chosen,
        nearest: x,
        test_poles: test_poles.len(),
    })
}
