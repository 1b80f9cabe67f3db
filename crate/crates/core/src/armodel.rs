//! Autoregressive modelling of raw waveform blocks and z-plane pole extraction.
//!
//! A block `x(n)` is modelled as `x(n) = sum_k a_k x(n-k) + e(n)`. The
//! coefficients come from the Yule-Walker equations, solved with the
//! Levinson-Durbin recursion on biased autocorrelations, and the poles are the
//! roots of `z^N - a_1 z^(N-1) - ... - a_N`.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{GridLabel, SignalType};
use crate::signal_io::{frames, Recording};

/// Largest reflection coefficient magnitude accepted before clamping.
pub const REFLECTION_LIMIT: f64 = 1.0 - 1e-9;
const ROOT_RESIDUAL_TOL: f64 = 1e-6;
const CONJUGATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub order: usize,
    /// `a_1..a_N` in the convention `x(n) = sum a_k x(n-k) + e(n)`.
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    pub reflection: Vec<f64>,
    /// A reflection coefficient had to be clamped to keep the fit stable.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleSet {
    pub poles: Vec<Complex64>,
    pub grid: Option<GridLabel>,
    pub segment_index: usize,
    /// All coefficients were zero, so there is no meaningful pole.
    pub degenerate: bool,
}

/// Biased autocorrelation `r(j) = (1/n) sum_t x(t) x(t-j)` for `j = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if x.len() <= max_lag {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            available: x.len(),
        });
    }
    let n = x.len() as f64;
    Ok((0..=max_lag)
        .map(|j| x[j..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect())
}

pub fn levinson_durbin(r: &[f64], order: usize) -> Result<ArFit> {
    if order >= r.len() {
        return Err(Error::InvalidArgument(format!(
            "order {order} needs {} autocorrelation lags, have {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) {
        return Err(Error::Silent);
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    let mut clamped = false;
    for m in 0..order {
        let acc = r[m + 1] - (0..m).map(|k| a[k] * r[m - k]).sum::<f64>();
        let mut kappa = acc / err;
        if !(kappa.abs() < REFLECTION_LIMIT) {
            kappa = if kappa.is_nan() { 0.0 } else { kappa.signum() * REFLECTION_LIMIT };
            clamped = true;
        }
        prev[..m].copy_from_slice(&a[..m]);
        for k in 0..m {
            a[k] = prev[k] - kappa * prev[m - 1 - k];
        }
        a[m] = kappa;
        err *= 1.0 - kappa * kappa;
        reflection.push(kappa);
    }
    Ok(ArFit {
        order,
        coefficients: a,
        residual_variance: err.max(0.0),
        reflection,
        clamped,
    })
}

/// Monic characteristic polynomial coefficients, highest power first.
fn characteristic(fit: &ArFit) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(fit.coefficients.iter().map(|a| -a))
        .collect()
}

fn horner(c: &[f64], z: Complex64) -> (Complex64, Complex64, f64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    let mut zn = 1.0;
    for &ci in c {
        dp = dp * z + p;
        p = p * z + ci;
    }
    for &ci in c.iter().rev() {
        scale += ci.abs() * zn;
        zn *= z.norm();
    }
    (p, dp, scale)
}

pub fn poles_from_ar(fit: &ArFit) -> Result<PoleSet> {
    if fit.order == 0 {
        return Err(Error::InvalidArgument("pole extraction needs order >= 1".into()));
    }
    if fit.coefficients.iter().all(|&a| a == 0.0) {
        return Ok(PoleSet {
            poles: Vec::new(),
            grid: None,
            segment_index: 0,
            degenerate: true,
        });
    }
    let n = fit.order;
    let companion = DMatrix::from_fn(n, n, |i, j| {
        if i == 0 {
            fit.coefficients[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let schur = nalgebra::linalg::Schur::try_new(companion, f64::EPSILON, 10_000)
        .ok_or(Error::EigenNonConvergence)?;
    let c = characteristic(fit);
    let mut roots: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| {
            let mut z = Complex64::new(z.re, z.im);
            // Newton polishing; keep a step only when it lowers the residual
            for _ in 0..4 {
                let (p, dp, _) = horner(&c, z);
                if dp.norm() == 0.0 {
                    break;
                }
                let next = z - p / dp;
                if horner(&c, next).0.norm() < p.norm() {
                    z = next;
                } else {
                    break;
                }
            }
            z
        })
        .collect();
    for z in &roots {
        let (p, _, scale) = horner(&c, *z);
        if !(p.norm() <= ROOT_RESIDUAL_TOL * scale.max(1.0)) {
            return Err(Error::EigenNonConvergence);
        }
    }
    roots = pair_conjugates(roots);
    Ok(PoleSet {
        poles: roots,
        grid: None,
        segment_index: 0,
        degenerate: false,
    })
}

/// Makes complex roots of a real polynomial appear as exact conjugate pairs,
/// ordered by decreasing imaginary part then real part.
fn pair_conjugates(roots: Vec<Complex64>) -> Vec<Complex64> {
    let tol = |z: &Complex64| CONJUGATE_TOL * z.norm().max(1.0);
    let upper: Vec<Complex64> = roots.iter().copied().filter(|z| z.im > tol(z)).collect();
    let lower = roots.iter().filter(|z| z.im < -tol(z)).count();
    if upper.len() != lower {
        return roots;
    }
    let mut out: Vec<Complex64> = roots
        .iter()
        .filter(|z| z.im.abs() <= tol(z))
        .map(|z| Complex64::new(z.re, 0.0))
        .collect();
    for z in upper {
        out.push(z);
        out.push(z.conj());
    }
    out.sort_by(|a, b| b.im.total_cmp(&a.im).then(b.re.total_cmp(&a.re)));
    out
}

/// Poles of each non-overlapping block of `block_s` seconds.
///
/// Blocks are mean-removed before fitting; silent blocks are skipped.
pub fn block_poles(rec: &Recording, order: usize, block_s: f64) -> Result<Vec<PoleSet>> {
    let it = frames(rec, block_s, 0.0)?;
    let mut out = Vec::with_capacity(it.frame_count());
    for (i, block) in it.enumerate() {
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        let centred: Vec<f64> = block.iter().map(|x| x - mean).collect();
        let r = autocorrelation(&centred, order)?;
        if !(r[0] > 0.0) {
            log::warn!(
                "{}: block {i} is silent, skipped for pole estimation",
                rec.source_path().display()
            );
            continue;
        }
        let fit = levinson_durbin(&r, order)?;
        if fit.clamped {
            log::debug!("{}: block {i} reflection clamped", rec.source_path().display());
        }
        let mut set = poles_from_ar(&fit)?;
        if set.degenerate {
            continue;
        }
        set.segment_index = i;
        out.push(set);
    }
    if out.is_empty() {
        log::warn!("{}: no pole sets (silent input)", rec.source_path().display());
    }
    Ok(out)
}

pub fn grid_pole_database(
    rec: &Recording,
    data_type: SignalType,
    grid: GridLabel,
    cfg: &PipelineConfig,
) -> Result<Vec<PoleSet>> {
    let mut sets = block_poles(rec, cfg.ar_order(data_type), cfg.pole_block_s)?;
    for s in &mut sets {
        s.grid = Some(grid);
    }
    Ok(sets)
}
