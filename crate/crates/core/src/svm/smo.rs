//! Soft-margin SVM dual solver (sequential minimal optimisation with
//! second-order working-set selection).
//!
//! Solves `min 1/2 a'Qa - e'a` subject to `y'a = 0`, `0 <= a_i <= C`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d2).exp()
}

pub fn kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset `b` of the decision function `sum a_i y_i K(x_i, x) + b`.
    pub bias: f64,
    pub objective: f64,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximal KKT violation `max_{I_up} -y_t G_t - min_{I_low} -y_t G_t`, where
/// `G = Q a - e`. Zero or negative means the point is optimal.
pub fn kkt_violation(kernel: &[f64], y: &[f64], c: f64, alpha: &[f64]) -> f64 {
    let n = y.len();
    let grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * kernel[i * n + j] * alpha[j]).sum::<f64>() - 1.0)
        .collect();
    let (up, low) = extreme_gradients(y, c, alpha, &grad);
    up - low
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

fn extreme_gradients(y: &[f64], c: f64, alpha: &[f64], grad: &[f64]) -> (f64, f64) {
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for t in 0..y.len() {
        let v = -y[t] * grad[t];
        if in_up(y[t], alpha[t], c) {
            up = up.max(v);
        }
        if in_low(y[t], alpha[t], c) {
            low = low.min(v);
        }
    }
    if up == f64::NEG_INFINITY || low == f64::INFINITY {
        return (0.0, 0.0);
    }
    (up, low)
}

pub fn dual_objective(kernel: &[f64], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel[i * n + j];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Solves the dual for a precomputed row-major kernel matrix.
pub fn solve_dual(kernel: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let n = y.len();
    if kernel.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: kernel.len(),
        });
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::NeedTwoClasses);
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        // first index: maximal violating from I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        // second index: largest objective decrease from I_low
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel == usize::MAX {
                continue;
            }
            let b = gmax - v;
            if b > 0.0 {
                let a = kernel[i_sel * n + i_sel] + kernel[t * n + t] - 2.0 * kernel[i_sel * n + t];
                let a = if a > 0.0 { a } else { TAU };
                let obj = -(b * b) / a;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let kii = kernel[i * n + i];
        let kjj = kernel[j * n + j];
        let kij = kernel[i * n + j];
        if y[i] != y[j] {
            let mut quad = kii + kjj + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kii + kjj - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += q(t, i) * dai + q(t, j) * daj;
        }
    }

    // offset from free variables, or the midpoint of the feasible interval
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_count += 1;
            free_sum += yg;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (ub + lb) / 2.0
    };
    let (up, low) = extreme_gradients(y, c, &alpha, &grad);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias: -rho,
        objective,
        kkt_violation: up - low,
        iterations,
        converged,
    })
}

/// Trained two-class machine with its sigmoid calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    /// Sigmoid `P(+1 | f) = 1 / (1 + exp(A f + B))`.
    pub sigmoid_a: f64,
    pub sigmoid_b: f64,
    pub converged: bool,
    pub kkt_violation: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Calibrated probability of the positive class.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid_predict(self.decision(x), self.sigmoid_a, self.sigmoid_b)
    }
}

/// Trains a machine without calibration (sigmoid fixed at `A = -1, B = 0`).
pub fn fit_uncalibrated(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, tol: f64, max_iter: usize) -> Result<BinarySvm> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    let kernel = kernel_matrix(x, gamma);
    let sol = solve_dual(&kernel, y, c, tol, max_iter)?;
    if !sol.converged {
        log::warn!(
            "SMO hit the iteration cap ({max_iter}) with KKT violation {:.3e}",
            sol.kkt_violation
        );
    }
    let (support_vectors, dual_coef) = sol
        .alpha
        .iter()
        .zip(x.iter().zip(y))
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, (xi, yi))| (xi.clone(), a * yi))
        .unzip();
    Ok(BinarySvm {
        support_vectors,
        dual_coef,
        bias: sol.bias,
        gamma,
        c,
        sigmoid_a: -1.0,
        sigmoid_b: 0.0,
        converged: sol.converged,
        kkt_violation: sol.kkt_violation,
    })
}

/// Trains a machine and fits its sigmoid on held-out decision values from
/// `calibration_folds`-fold stratified cross-validation.
pub fn train_binary(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    calibration_folds: usize,
) -> Result<BinarySvm> {
    let mut model = fit_uncalibrated(x, y, c, gamma, tol, max_iter)?;
    let folds = stratified_folds(y, calibration_folds);
    let mut dec = vec![0.0; y.len()];
    for f in 0..calibration_folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] != f);
        if test.is_empty() {
            continue;
        }
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let has_both = ty.iter().any(|&v| v > 0.0) && ty.iter().any(|&v| v < 0.0);
        if has_both {
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let sub = fit_uncalibrated(&tx, &ty, c, gamma, tol, max_iter)?;
            for &i in &test {
                dec[i] = sub.decision(&x[i]);
            }
        } else {
            for &i in &test {
                dec[i] = model.decision(&x[i]);
            }
        }
    }
    let (a, b) = sigmoid_train(&dec, y);
    model.sigmoid_a = a;
    model.sigmoid_b = b;
    Ok(model)
}

/// Fold index per example; each class is dealt round-robin in index order.
pub fn stratified_folds(y: &[f64], folds: usize) -> Vec<usize> {
    let mut pos = 0;
    let mut neg = 0;
    y.iter()
        .map(|&v| {
            let counter = if v > 0.0 { &mut pos } else { &mut neg };
            let f = *counter % folds;
            *counter += 1;
            f
        })
        .collect()
}

/// Maximum-likelihood sigmoid fit with regularised targets
/// `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`, by Newton's method with backtracking.
pub fn sigmoid_train(dec: &[f64], y: &[f64]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v > 0.0 { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(f, ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (f, ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

pub fn sigmoid_predict(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}
