//! Per-kind multiclass SVM stage.
//!
//! One-vs-one RBF machines trained with SMO; pairwise probabilities come from
//! per-machine sigmoid calibration and are coupled into one distribution per
//! segment. Segment distributions are aggregated by a floored geometric mean
//! and the top grids form the shortlist handed to pole matching.

pub mod smo;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureMask, Standardizer};
use crate::grid::{DataKind, GridLabel};
pub use smo::{train_binary, BinarySvm, DualSolution};

/// Lower clamp for pairwise and coupled probabilities.
pub const COUPLING_EPSILON: f64 = 1e-10;
pub const COUPLING_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    pub kind: DataKind,
    /// Sorted class labels.
    pub labels: Vec<GridLabel>,
    /// Machines for pairs `(i, j)`, `i < j`, in lexicographic order; the
    /// positive class of each machine is `labels[i]`.
    pub machines: Vec<BinarySvm>,
    pub mask: FeatureMask,
    pub standardizer: Standardizer,
    pub c: f64,
    pub gamma: f64,
    pub cv_accuracy: f64,
}

/// Per-grid probabilities aligned with a label list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProbabilities {
    pub labels: Vec<GridLabel>,
    pub probabilities: Vec<f64>,
}

impl GridProbabilities {
    pub fn get(&self, g: GridLabel) -> Option<f64> {
        self.labels.iter().position(|&l| l == g).map(|i| self.probabilities[i])
    }

    pub fn argmax(&self) -> GridLabel {
        let mut best = 0;
        for i in 1..self.probabilities.len() {
            if self.probabilities[i] > self.probabilities[best] {
                best = i;
            }
        }
        self.labels[best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistDecision {
    pub aggregated: GridProbabilities,
    /// Most probable grids, descending.
    pub shortlist: Vec<GridLabel>,
}

fn pair_index(k: usize, i: usize, j: usize) -> usize {
    // number of pairs before row i plus offset within the row
    i * k - i * (i + 1) / 2 + (j - i - 1)
}

impl MulticlassSvm {
    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    fn machine(&self, i: usize, j: usize) -> &BinarySvm {
        &self.machines[pair_index(self.labels.len(), i, j)]
    }

    /// Pairwise matrix `r[i][j] = P(label i | label i or j)` for a raw (masked, unscaled) row.
    pub fn pairwise(&self, row: &[f64]) -> Result<Vec<Vec<f64>>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        let z = self.standardizer.apply(row);
        let k = self.labels.len();
        let mut r = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let p = self
                    .machine(i, j)
                    .probability(&z)
                    .clamp(COUPLING_EPSILON, 1.0 - COUPLING_EPSILON);
                r[i][j] = p;
                r[j][i] = 1.0 - p;
            }
        }
        Ok(r)
    }

    pub fn segment_probabilities(&self, row: &[f64]) -> Result<GridProbabilities> {
        let r = self.pairwise(row)?;
        Ok(GridProbabilities {
            labels: self.labels.clone(),
            probabilities: couple_pairwise(&r),
        })
    }

    /// One-vs-one majority vote on decision signs; ties go to the lower label.
    pub fn vote(&self, row: &[f64]) -> Result<GridLabel> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        let z = self.standardizer.apply(row);
        Ok(self.labels[vote_scaled(&self.machines, self.labels.len(), &z)])
    }
}

fn vote_scaled(machines: &[BinarySvm], k: usize, z: &[f64]) -> usize {
    let mut votes = vec![0usize; k];
    for i in 0..k {
        for j in i + 1..k {
            if machines[pair_index(k, i, j)].decision(z) > 0.0 {
                votes[i] += 1;
            } else {
                votes[j] += 1;
            }
        }
    }
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    best
}

/// Couples pairwise probabilities into a class distribution by iterative
/// scaling: each class probability is multiplied by the ratio of its observed
/// to its implied pairwise mass, then the vector is renormalised.
pub fn couple_pairwise(r: &[Vec<f64>]) -> Vec<f64> {
    let k = r.len();
    if k == 1 {
        return vec![1.0];
    }
    let mut p = vec![1.0 / k as f64; k];
    for _ in 0..COUPLING_MAX_ITER {
        let mut change: f64 = 0.0;
        for i in 0..k {
            let mut observed = 0.0;
            let mut implied = 0.0;
            for j in 0..k {
                if j != i {
                    observed += r[i][j];
                    implied += p[i] / (p[i] + p[j]);
                }
            }
            let updated = p[i] * observed / implied;
            change = change.max((updated - p[i]).abs());
            p[i] = updated;
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
        }
        if change < 1e-12 {
            break;
        }
    }
    floor_and_normalize(p, COUPLING_EPSILON)
}

/// Raises entries to at least `floor` and rescales the rest so the total is one.
fn floor_and_normalize(mut p: Vec<f64>, floor: f64) -> Vec<f64> {
    let mut fixed = vec![false; p.len()];
    loop {
        let mut changed = false;
        for (v, f) in p.iter_mut().zip(fixed.iter_mut()) {
            if !*f && *v < floor {
                *v = floor;
                *f = true;
                changed = true;
            }
        }
        let fixed_mass: f64 = p.iter().zip(&fixed).filter(|(_, f)| **f).map(|(v, _)| v).sum();
        let free_mass: f64 = p.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(v, _)| v).sum();
        if free_mass > 0.0 {
            let scale = (1.0 - fixed_mass) / free_mass;
            for (v, f) in p.iter_mut().zip(&fixed) {
                if !*f {
                    *v *= scale;
                }
            }
        }
        if !changed {
            break;
        }
    }
    p
}

/// Geometric-mean aggregation over segments, renormalised, and the top-`k` shortlist.
pub fn aggregate_and_shortlist(
    segments: &[GridProbabilities],
    floor: f64,
    k: usize,
) -> Result<ShortlistDecision> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InsufficientData("no segment probabilities".into()))?;
    let labels = first.labels.clone();
    let mut log_sum = vec![0.0; labels.len()];
    for s in segments {
        if s.labels != labels {
            return Err(Error::InvalidArgument("segment label sets differ".into()));
        }
        for (acc, p) in log_sum.iter_mut().zip(&s.probabilities) {
            *acc += p.max(floor).ln();
        }
    }
    let n = segments.len() as f64;
    let gm: Vec<f64> = log_sum.iter().map(|l| (l / n).exp()).collect();
    let total: f64 = gm.iter().sum();
    let probabilities: Vec<f64> = gm.iter().map(|g| g / total).collect();
    let aggregated = GridProbabilities {
        labels,
        probabilities,
    };
    let shortlist = shortlist_from_scores(&aggregated, k);
    Ok(ShortlistDecision {
        aggregated,
        shortlist,
    })
}

/// Top-`k` labels by score, descending; equal scores keep label order.
pub fn shortlist_from_scores(scores: &GridProbabilities, k: usize) -> Vec<GridLabel> {
    let mut order: Vec<usize> = (0..scores.labels.len()).collect();
    order.sort_by(|&a, &b| scores.probabilities[b].total_cmp(&scores.probabilities[a]));
    order
        .into_iter()
        .take(k.min(scores.labels.len()))
        .map(|i| scores.labels[i])
        .collect()
}

struct Problem<'a> {
    rows: &'a [Vec<f64>],
    classes: &'a [usize],
    k: usize,
}

fn train_pairs(
    p: &Problem<'_>,
    subset: &[usize],
    c: f64,
    gamma: f64,
    cfg: &PipelineConfig,
    calibrate: bool,
) -> Result<Vec<BinarySvm>> {
    let mut machines = Vec::with_capacity(p.k * (p.k - 1) / 2);
    for i in 0..p.k {
        for j in i + 1..p.k {
            let idx: Vec<usize> = subset
                .iter()
                .copied()
                .filter(|&t| p.classes[t] == i || p.classes[t] == j)
                .collect();
            let x: Vec<Vec<f64>> = idx.iter().map(|&t| p.rows[t].clone()).collect();
            let y: Vec<f64> = idx
                .iter()
                .map(|&t| if p.classes[t] == i { 1.0 } else { -1.0 })
                .collect();
            let m = if calibrate {
                smo::train_binary(&x, &y, c, gamma, cfg.svm_tolerance, cfg.svm_max_iter, cfg.calibration_folds)?
            } else {
                smo::fit_uncalibrated(&x, &y, c, gamma, cfg.svm_tolerance, cfg.svm_max_iter)?
            };
            machines.push(m);
        }
    }
    Ok(machines)
}

/// Stratified fold assignment with a seeded shuffle inside each class.
fn cv_folds(classes: &[usize], k: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; classes.len()];
    let mut offset = 0;
    for c in 0..k {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&t| classes[t] == c).collect();
        members.shuffle(&mut rng);
        for (pos, t) in members.into_iter().enumerate() {
            out[t] = (pos + offset) % folds;
        }
        offset += 1;
    }
    out
}

fn cv_accuracy(p: &Problem<'_>, folds: &[usize], n_folds: usize, c: f64, gamma: f64, cfg: &PipelineConfig) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for f in 0..n_folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..p.rows.len()).partition(|&t| folds[t] != f);
        if test.is_empty() {
            continue;
        }
        let machines = train_pairs(p, &train, c, gamma, cfg, false)?;
        for &t in &test {
            total += 1;
            if vote_scaled(&machines, p.k, &p.rows[t]) == p.classes[t] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Grid search over `(C, gamma)` by stratified k-fold accuracy, then a final
/// calibrated fit on all rows. Rows are masked but unscaled; standardisation
/// is fitted here and stored in the model.
pub fn train_multiclass(
    kind: DataKind,
    rows: &[Vec<f64>],
    labels: &[GridLabel],
    mask: FeatureMask,
    cfg: &PipelineConfig,
) -> Result<MulticlassSvm> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let mut classes_sorted: Vec<GridLabel> = labels.to_vec();
    classes_sorted.sort();
    classes_sorted.dedup();
    if classes_sorted.len() < 2 {
        return Err(Error::NeedTwoClasses);
    }
    for g in &classes_sorted {
        let n = labels.iter().filter(|l| *l == g).count();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "grid {g} has {n} segment(s) for {kind}; need at least 2"
            )));
        }
    }
    let n_folds = cfg.svm_folds.min(rows.len());
    if n_folds < 2 {
        return Err(Error::InsufficientData("need at least two folds".into()));
    }
    let dim = mask.len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    let standardizer = Standardizer::fit(rows)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let classes: Vec<usize> = labels
        .iter()
        .map(|l| classes_sorted.binary_search(l).expect("label present"))
        .collect();
    let problem = Problem {
        rows: &scaled,
        classes: &classes,
        k: classes_sorted.len(),
    };
    let folds = cv_folds(&classes, problem.k, n_folds, cfg.seed);

    let mut c_grid = cfg.svm_c_grid.clone();
    c_grid.sort_by(f64::total_cmp);
    let mut g_grid: Vec<f64> = cfg.svm_gamma_grid.iter().map(|g| g / dim as f64).collect();
    g_grid.sort_by(f64::total_cmp);
    let candidates: Vec<(f64, f64)> = c_grid
        .iter()
        .flat_map(|&c| g_grid.iter().map(move |&g| (c, g)))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&(c, g)| cv_accuracy(&problem, &folds, n_folds, c, g, cfg))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..candidates.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    let (c, gamma) = candidates[best];
    log::info!(
        "{kind}: C={c} gamma={gamma:.4} cross-validation accuracy {:.3}",
        scores[best]
    );
    let all: Vec<usize> = (0..scaled.len()).collect();
    let machines = train_pairs(&problem, &all, c, gamma, cfg, true)?;
    Ok(MulticlassSvm {
        kind,
        labels: classes_sorted,
        machines,
        mask,
        standardizer,
        c,
        gamma,
        cv_accuracy: scores[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Nominal, SignalType};
    use proptest::prelude::*;
    use rand::Rng;

    fn kind() -> DataKind {
        DataKind::new(Nominal::Hz50, SignalType::Power)
    }

    fn clusters(centres: &[(GridLabel, f64)], per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<GridLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &(g, c) in centres {
            for _ in 0..per {
                rows.push(vec![c + rng.gen_range(-spread..spread), rng.gen_range(-1.0..1.0)]);
                labels.push(g);
            }
        }
        (rows, labels)
    }

    fn mask2() -> FeatureMask {
        FeatureMask::new(None, vec![1, 2]).unwrap()
    }

    #[test]
    fn pair_indexing_is_lexicographic() {
        let k = 5;
        let mut n = 0;
        for i in 0..k {
            for j in i + 1..k {
                assert_eq!(pair_index(k, i, j), n);
                n += 1;
            }
        }
    }

    #[test]
    fn separable_grids_reach_full_cv_accuracy() {
        let (rows, labels) = clusters(&[(GridLabel::B, 0.0), (GridLabel::D, 5.0), (GridLabel::E, 10.0)], 12, 1.0, 1);
        let cfg = PipelineConfig::default();
        let m = train_multiclass(kind(), &rows, &labels, mask2(), &cfg).unwrap();
        assert_eq!(m.cv_accuracy, 1.0);
        assert_eq!(m.machines.len(), 3);
        let p = m.segment_probabilities(&[5.0, 0.0]).unwrap();
        assert!(p.get(GridLabel::D).unwrap() > 0.9, "{p:?}");
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(m.vote(&[10.0, 0.0]).unwrap(), GridLabel::E);
        assert!(matches!(
            m.segment_probabilities(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn leave_one_out_runs() {
        let (rows, labels) = clusters(&[(GridLabel::A, 0.0), (GridLabel::C, 4.0)], 5, 0.5, 2);
        let cfg = PipelineConfig {
            svm_folds: rows.len(),
            ..PipelineConfig::default()
        };
        let m = train_multiclass(kind(), &rows, &labels, mask2(), &cfg).unwrap();
        assert!(m.cv_accuracy > 0.5);
    }

    #[test]
    fn one_grid_rejected() {
        let (rows, labels) = clusters(&[(GridLabel::A, 0.0)], 10, 0.5, 3);
        let cfg = PipelineConfig::default();
        assert!(matches!(
            train_multiclass(kind(), &rows, &labels, mask2(), &cfg),
            Err(Error::NeedTwoClasses)
        ));
    }

    #[test]
    fn symmetric_two_class_coupling() {
        let r = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
        assert_eq!(couple_pairwise(&r), vec![0.5, 0.5]);
        let r = vec![vec![0.0, 0.8], vec![0.2, 0.0]];
        let p = couple_pairwise(&r);
        assert!((p[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn identical_segments_aggregate_to_themselves() {
        let s = GridProbabilities {
            labels: vec![GridLabel::B, GridLabel::D, GridLabel::E],
            probabilities: vec![0.2, 0.5, 0.3],
        };
        let d = aggregate_and_shortlist(&vec![s.clone(); 9], 1e-12, 3).unwrap();
        for (a, b) in d.aggregated.probabilities.iter().zip(&s.probabilities) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(d.shortlist, vec![GridLabel::D, GridLabel::E, GridLabel::B]);
        assert!(aggregate_and_shortlist(&[], 1e-12, 3).is_err());
    }

    #[test]
    fn two_grid_shortlist() {
        let s = GridProbabilities {
            labels: vec![GridLabel::F, GridLabel::G],
            probabilities: vec![0.369, 0.631],
        };
        let d = aggregate_and_shortlist(&[s], 1e-12, Nominal::Hz50.shortlist_len()).unwrap();
        assert_eq!(d.shortlist, vec![GridLabel::G, GridLabel::F]);
    }

    #[test]
    fn geometric_mean_suppresses_outlier_grid() {
        let labels = vec![GridLabel::B, GridLabel::D];
        let mut segs: Vec<GridProbabilities> = (0..8)
            .map(|_| GridProbabilities {
                labels: labels.clone(),
                probabilities: vec![0.6, 0.4],
            })
            .collect();
        segs.push(GridProbabilities {
            labels: labels.clone(),
            probabilities: vec![1e-12, 1.0 - 1e-12],
        });
        let arith_b: f64 = segs.iter().map(|s| s.probabilities[0]).sum::<f64>() / 9.0;
        let d = aggregate_and_shortlist(&segs, 1e-12, 2).unwrap();
        let gm_raw_b = (8.0 * 0.6f64.ln() + 1e-12f64.ln()) / 9.0;
        let gm_raw_d = (8.0 * 0.4f64.ln() + (1.0f64 - 1e-12).ln()) / 9.0;
        let expected_b = gm_raw_b.exp() / (gm_raw_b.exp() + gm_raw_d.exp());
        assert!((d.aggregated.probabilities[0] - expected_b).abs() < 1e-12);
        assert!(d.aggregated.probabilities[0] < 0.5 * arith_b);
        assert_eq!(d.shortlist[0], GridLabel::D);
    }

    #[test]
    fn short_kind_shortlists_everything() {
        let s = GridProbabilities {
            labels: vec![GridLabel::A, GridLabel::C],
            probabilities: vec![0.3, 0.7],
        };
        assert_eq!(shortlist_from_scores(&s, 3), vec![GridLabel::C, GridLabel::A]);
    }

    proptest! {
        #[test]
        fn coupled_probabilities_are_distributions(vals in prop::collection::vec(0.0f64..1.0, 10)) {
            // 5 classes -> 10 pairs
            let k = 5;
            let mut r = vec![vec![0.0; k]; k];
            let mut it = vals.into_iter();
            for i in 0..k {
                for j in i + 1..k {
                    let p = it.next().unwrap().clamp(COUPLING_EPSILON, 1.0 - COUPLING_EPSILON);
                    r[i][j] = p;
                    r[j][i] = 1.0 - p;
                }
            }
            let p = couple_pairwise(&r);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for v in p {
                prop_assert!(v >= COUPLING_EPSILON * (1.0 - 1e-9) && v <= 1.0);
            }
        }

        #[test]
        fn shortlist_invariant_under_monotone_maps(scores in prop::collection::vec(0.001f64..1.0, 2..9), k in 1usize..4) {
            let labels: Vec<GridLabel> = GridLabel::ALL[..scores.len()].to_vec();
            let a = GridProbabilities { labels: labels.clone(), probabilities: scores.clone() };
            let b = GridProbabilities { labels, probabilities: scores.iter().map(|s| s.ln() * 3.0 + 7.0).collect() };
            prop_assert_eq!(shortlist_from_scores(&a, k), shortlist_from_scores(&b, k));
        }
    }
}
