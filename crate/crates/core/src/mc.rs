//! Monte Carlo verification of catalogued identities.
//!
//! Both sides of an identity are evaluated on the same sampled path; the
//! statistic is the mean over paths of the squared difference. Paths are
//! evaluated in parallel, but every reduction runs in path-index order, so
//! results do not depend on the thread count.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{Identity, Resolution, Term, WeightedTerm};
use crate::domain::{DriverKind, Interval, KernelExpr, Partition};
use crate::error::{Error, Result};
use crate::eval::{eval_kernel_forward, eval_kernel_reversed, evaluate, evaluate_kernel, evaluate_kernel_split, evaluate_split};
use crate::numeric::{compensated_sum, derive_seed, fit_loglog_slope, median};
use crate::paths::{PathSampler, PathSet};
use crate::quadrature::simplex_quadrature;

pub const MIN_PATHS: usize = 100;
pub const MIN_STEPS: usize = 2;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub identity_id: String,
    pub citation: String,
    pub interval: Interval,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(rename = "M")]
    pub paths: usize,
    pub seed: u64,
    pub ms_error: f64,
    pub ci95: [f64; 2],
    pub median_sq_error: f64,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub lhs_second_moment: f64,
    pub rhs_second_moment: f64,
    /// Excluded from serialised reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl EstimateReport {
    /// Typical squared size of either side.
    pub fn scale(&self) -> f64 {
        self.lhs_second_moment.max(self.rhs_second_moment)
    }
}

fn eval_weighted(t: &WeightedTerm, fine: &PathSet, coarse: &PathSet) -> Result<f64> {
    let v = match (&t.term, t.resolution) {
        (Term::Constant { value }, _) => *value,
        (Term::Iterated { spec }, Resolution::Grid) => evaluate(spec, coarse)?,
        (Term::Iterated { spec }, Resolution::Split { .. }) => evaluate_split(spec, fine, coarse)?,
        (Term::Kernel { spec }, Resolution::Grid) => evaluate_kernel(spec, coarse)?,
        (Term::Kernel { spec }, Resolution::Split { .. }) => evaluate_kernel_split(spec, fine, coarse)?,
    };
    Ok(t.coefficient * v)
}

fn side(terms: &[WeightedTerm], fine: &PathSet, coarse: &PathSet) -> Result<f64> {
    let vals = terms.iter().map(|t| eval_weighted(t, fine, coarse)).collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(vals))
}

/// Sampler for an identity at `steps` verification cells.
pub fn sampler_for(identity: &Identity, steps: usize, seed: u64) -> Result<PathSampler> {
    let iv = identity.interval();
    let fine = Arc::new(Partition::uniform(iv.start, iv.end, steps * identity.refine())?);
    let req = identity.requirements();
    PathSampler::new(fine, req.dims, req.martingales.clone(), seed)
}

/// Left and right sides of `identity` on one path sampled at the fine scale.
pub fn evaluate_identity(identity: &Identity, fine: &PathSet) -> Result<(f64, f64)> {
    let coarse = coarse_partition(identity, fine.partition())?;
    evaluate_on(identity, fine, coarse.as_ref())
}

fn coarse_partition(identity: &Identity, fine: &Partition) -> Result<Option<Arc<Partition>>> {
    Ok(if identity.refine() > 1 { Some(Arc::new(fine.coarsen(identity.refine())?)) } else { None })
}

fn evaluate_on(identity: &Identity, fine: &PathSet, coarse: Option<&Arc<Partition>>) -> Result<(f64, f64)> {
    let coarse_owned;
    let coarse = match coarse {
        Some(c) => {
            coarse_owned = fine.coarsen_onto(Arc::clone(c))?;
            &coarse_owned
        }
        None => fine,
    };
    Ok((side(identity.lhs(), fine, coarse)?, side(identity.rhs(), fine, coarse)?))
}

fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Mean-square discrepancy between the two sides over `paths` paths.
pub fn verify_identity(identity: &Identity, steps: usize, paths: usize, seed: u64) -> Result<EstimateReport> {
    if steps < MIN_STEPS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_STEPS} steps, got {steps}")));
    }
    if paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PATHS} paths, got {paths}")));
    }
    let started = Instant::now();
    let sampler = sampler_for(identity, steps, seed)?;
    let coarse = coarse_partition(identity, sampler.partition())?;
    let sides = (0..paths as u64)
        .into_par_iter()
        .map(|p| evaluate_on(identity, &sampler.path(p), coarse.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let sq: Vec<f64> = sides.iter().map(|(l, r)| (l - r) * (l - r)).collect();
    let ms = mean(&sq);
    let var = compensated_sum(sq.iter().map(|d| (d - ms) * (d - ms))) / (paths - 1) as f64;
    let half = Z95 * (var / paths as f64).sqrt();
    let lhs: Vec<f64> = sides.iter().map(|s| s.0).collect();
    let rhs: Vec<f64> = sides.iter().map(|s| s.1).collect();
    Ok(EstimateReport {
        identity_id: identity.id().to_string(),
        citation: identity.citation().to_string(),
        interval: identity.interval(),
        steps,
        paths,
        seed,
        ms_error: ms,
        ci95: [(ms - half).max(0.0), ms + half],
        median_sq_error: median(&sq).unwrap_or(0.0),
        lhs_mean: mean(&lhs),
        rhs_mean: mean(&rhs),
        lhs_second_moment: mean(&lhs.iter().map(|x| x * x).collect::<Vec<_>>()),
        rhs_second_moment: mean(&rhs.iter().map(|x| x * x).collect::<Vec<_>>()),
        wall_time: started.elapsed(),
    })
}

/// Pass rule for a verification run.
///
/// A pilot at `pilot_steps` fixes `C = N_pilot * ms_pilot`; the run passes
/// when `ms <= factor * C / N` and also `ms <= factor * S / N`, where `S` is
/// the larger second moment of the two sides. The second bound catches
/// identities that do not hold at all, whose error does not shrink with `N`
/// and so would also fit under the pilot envelope. Both bounds are floored
/// at `roundoff * S` for identities that hold exactly on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopePolicy {
    pub pilot_steps: usize,
    pub factor: f64,
    pub jump_factor: f64,
    pub roundoff: f64,
}

impl Default for EnvelopePolicy {
    fn default() -> Self {
        Self { pilot_steps: 256, factor: 10.0, jump_factor: 20.0, roundoff: 1e-20 }
    }
}

impl EnvelopePolicy {
    pub fn factor_for(&self, identity: &Identity) -> f64 {
        if identity.requirements().has_jumps() {
            self.jump_factor
        } else {
            self.factor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub report: EstimateReport,
    pub pilot_steps: usize,
    pub pilot_ms_error: f64,
    pub envelope_constant: f64,
    pub envelope_factor: f64,
    pub envelope: f64,
    pub scale_bound: f64,
    pub pass: bool,
}

/// Runs the pilot and the main estimate and applies the envelope rule.
pub fn check_identity(identity: &Identity, steps: usize, paths: usize, seed: u64, policy: &EnvelopePolicy) -> Result<Verdict> {
    let pilot = verify_identity(identity, policy.pilot_steps, paths, derive_seed(seed, policy.pilot_steps as u64))?;
    let report = verify_identity(identity, steps, paths, seed)?;
    let factor = policy.factor_for(identity);
    let constant = pilot.ms_error * policy.pilot_steps as f64;
    let scale = report.scale().max(pilot.scale());
    let floor = policy.roundoff * scale;
    let envelope = (factor * constant / steps as f64).max(floor);
    let scale_bound = (factor * scale / steps as f64).max(floor);
    let pass = report.ms_error.is_finite() && report.ms_error <= envelope && report.ms_error <= scale_bound;
    Ok(Verdict {
        report,
        pilot_steps: policy.pilot_steps,
        pilot_ms_error: pilot.ms_error,
        envelope_constant: constant,
        envelope_factor: factor,
        envelope,
        scale_bound,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub steps: usize,
    pub seed: u64,
    pub ms_error: f64,
    pub ci95: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub identity_id: String,
    pub citation: String,
    #[serde(rename = "M")]
    pub paths: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log ms_error` against `log N`; absent when
    /// some error is exactly zero.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// `ms_error` at each step count, each with its own derived seed.
pub fn convergence_sweep(identity: &Identity, steps: &[usize], paths: usize, seed: u64) -> Result<ConvergenceReport> {
    let mut distinct = steps.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidArgument("a sweep needs at least three distinct step counts".into()));
    }
    let rows = steps
        .iter()
        .map(|&n| {
            let s = derive_seed(seed, n as u64);
            let r = verify_identity(identity, n, paths, s)?;
            Ok(ConvergenceRow { steps: n, seed: s, ms_error: r.ms_error, ci95: r.ci95 })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.ms_error).collect();
    let fit = fit_loglog_slope(&xs, &ys).ok();
    Ok(ConvergenceReport {
        identity_id: identity.id().to_string(),
        citation: identity.citation().to_string(),
        paths,
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub phi1: String,
    pub phi2: String,
    pub i1: usize,
    pub i2: usize,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(rename = "M")]
    pub paths: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub target: f64,
    pub quadrature: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Nodes per axis for the reference double integral.
pub const COVARIANCE_QUADRATURE_NODES: usize = 2001;

/// Sample mean of `I * J` for
/// `I = ∫ df^{(i2)}_{t_2} ∫_{t_2}^T Φ_1(t_1, t_2) df^{(i1)}_{t_1}` and
/// `J = ∫ ∫_t^{t_2} Φ_2(t_1, t_2) df^{(i1)}_{t_1} df^{(i2)}_{t_2}`, against
/// `1{i1 = i2} ∫∫_{t_1 < t_2} Φ_1(t_2, t_1) Φ_2(t_1, t_2)`.
///
/// Kernels take `(t_1, t_2)` in that order. Passing means within four
/// standard errors.
#[allow(clippy::too_many_arguments)]
pub fn covariance_experiment(
    phi1: &KernelExpr,
    phi2: &KernelExpr,
    i1: usize,
    i2: usize,
    steps: usize,
    paths: usize,
    seed: u64,
    interval: Interval,
) -> Result<CovarianceReport> {
    if i1 == 0 || i2 == 0 {
        return Err(Error::InvalidArgument("Wiener components are numbered from 1".into()));
    }
    if paths < MIN_PATHS || steps < MIN_STEPS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PATHS} paths and {MIN_STEPS} steps")));
    }
    phi1.validate(2)?;
    phi2.validate(2)?;
    // I runs over t_1 > t_2 with t_1 in the tail, which matches the
    // outermost-first argument order. J has t_2 outside, so swap.
    let phi2_outer_first = phi2.swap_args()?;
    let (w1, w2) = (DriverKind::Wiener(i1), DriverKind::Wiener(i2));
    let partition = Arc::new(Partition::uniform(interval.start, interval.end, steps)?);
    let sampler = PathSampler::new(partition, i1.max(i2), vec![], seed)?;
    let products = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = sampler.path(p);
            let i = eval_kernel_reversed(phi1, None, &[w1, w2], &path)?;
            let j = eval_kernel_forward(&phi2_outer_first, None, &[w2, w1], &path)?;
            Ok(i * j)
        })
        .collect::<Result<Vec<f64>>>()?;
    let estimate = mean(&products);
    let var = compensated_sum(products.iter().map(|x| (x - estimate) * (x - estimate))) / (paths - 1) as f64;
    let std_error = (var / paths as f64).sqrt();
    let quadrature = simplex_quadrature(phi1, phi2, interval, COVARIANCE_QUADRATURE_NODES)?;
    let target = if i1 == i2 { quadrature } else { 0.0 };
    let z_score = if std_error > 0.0 { (estimate - target) / std_error } else { 0.0 };
    Ok(CovarianceReport {
        phi1: phi1.to_string(),
        phi2: phi2.to_string(),
        i1,
        i2,
        steps,
        paths,
        seed,
        estimate,
        std_error,
        target,
        quadrature,
        z_score,
        pass: z_score.abs() <= 4.0,
    })
}
