//! Evaluation of iterated and kernel integrals on a sampled path.
//!
//! Forward sums accumulate prefix sums from the innermost layer outwards.
//! Reversed sums build suffix tails from the outermost layer inwards and then
//! run a single sum over the innermost layer. Both are `O(k N)` per path.
//! All accumulation is compensated.
//!
//! The `split` evaluators take a fine path and its coarsening. The layer that
//! carries the outer sum is evaluated on the coarse grid while the nested
//! part uses the fine grid sampled at coarse nodes. This approximates the
//! exact inner integrals, so forward and reversed forms differ by a genuine
//! discretisation error instead of rounding.

use crate::domain::{
    kernel_arity, DriverKind, IntegralSpec, IntegrandKind, KernelExpr, KernelIntegralSpec, Orientation,
    WeightExpr,
};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::paths::PathSet;
use std::sync::Arc;

/// Largest multiplicity evaluated by direct summation for kernels without a
/// separable expansion.
pub const MAX_DIRECT_MULTIPLICITY: usize = 3;

fn check_interval(spec: crate::domain::Interval, path: &PathSet) -> Result<()> {
    let iv = path.partition().interval();
    if iv != spec {
        return Err(Error::PartitionMismatch(format!("integral over {spec} but path over {iv}")));
    }
    Ok(())
}

/// Integrand values at every node of the path's partition.
pub fn integrand_values(integrand: &IntegrandKind, path: &PathSet) -> Result<Vec<f64>> {
    let partition = path.partition();
    Ok(match integrand {
        IntegrandKind::One => vec![1.0; partition.steps() + 1],
        IntegrandKind::WienerValue { component } | IntegrandKind::WienerIncrement { component } => {
            path.values(DriverKind::Wiener(*component))?
        }
        IntegrandKind::WeightedPath { weight, component } => {
            let v = path.values(DriverKind::Wiener(*component))?;
            weight.on_nodes(partition).iter().zip(&v).map(|(g, f)| g * f).collect()
        }
        IntegrandKind::Deterministic { weight } => weight.on_nodes(partition).to_vec(),
        IntegrandKind::MartingaleValue { id } => path.values(DriverKind::Martingale(*id))?,
        IntegrandKind::WeightedMartingale { weight, id } => {
            let v = path.values(DriverKind::Martingale(*id))?;
            weight.on_nodes(partition).iter().zip(&v).map(|(g, m)| g * m).collect()
        }
    })
}

fn prefix(n: usize, term: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::new();
    out.push(0.0);
    for j in 0..n {
        acc.add(term(j));
        out.push(acc.value());
    }
    out
}

/// Running values `S(l) = Σ_{j<l} ψ_1(τ_j) S_2(j) Δw^{(1)}_j` of the outermost
/// layer, for `l = 0..=N`.
fn forward_prefix<W: AsRef<[f64]>>(phi: &[f64], weights: &[W], incs: &[&[f64]]) -> Vec<f64> {
    let k = weights.len();
    let n = incs[0].len();
    let mut level = prefix(n, |j| phi[j] * incs[k][j]);
    for r in (0..k).rev() {
        let (w, d) = (weights[r].as_ref(), incs[r]);
        level = prefix(n, |j| w[j] * level[j] * d[j]);
    }
    level
}

/// Nested forward sum over value arrays; `incs[0]` is the outermost layer
/// and `weights[r]` pairs with `incs[r]`.
pub fn forward_sum<W: AsRef<[f64]>>(phi: &[f64], weights: &[W], incs: &[&[f64]]) -> f64 {
    let level = forward_prefix(phi, weights, incs);
    level[level.len() - 1]
}

/// Suffix tails of the outer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TailAccumulator {
    levels: Vec<Vec<f64>>,
}

impl TailAccumulator {
    fn from_arrays<W: AsRef<[f64]>>(weights: &[W], incs: &[&[f64]], n: usize) -> Self {
        let mut levels = Vec::with_capacity(weights.len() + 1);
        levels.push(vec![1.0; n + 1]);
        for r in 1..=weights.len() {
            let (w, d, prev) = (weights[r - 1].as_ref(), incs[r - 1], &levels[r - 1]);
            let mut out = vec![0.0; n + 1];
            let mut acc = CompensatedSum::new();
            for l in (0..n).rev() {
                acc.add(w[l] * d[l] * prev[l + 1]);
                out[l] = acc.value();
            }
            levels.push(out);
        }
        Self { levels }
    }

    /// Number of collapsed layers.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Tail built from the outermost `r` layers, at every node. Level 0 is
    /// identically one.
    pub fn level(&self, r: usize) -> &[f64] {
        &self.levels[r]
    }

    pub fn top(&self) -> &[f64] {
        &self.levels[self.depth()]
    }
}

/// Reversed sum `Σ_l φ_l Δw^{(k+1)}_l h(τ_{l+1}) tail_k(l+1)` over arrays.
pub fn reversed_sum<W: AsRef<[f64]>>(phi: &[f64], weights: &[W], incs: &[&[f64]], post: Option<&[f64]>) -> f64 {
    let k = weights.len();
    let n = incs[0].len();
    let tail = TailAccumulator::from_arrays(weights, incs, n);
    let top = tail.top();
    let d = incs[k];
    let mut acc = CompensatedSum::new();
    for l in 0..n {
        let h = post.map_or(1.0, |p| p[l + 1]);
        acc.add(phi[l] * d[l] * h * top[l + 1]);
    }
    acc.value()
}

/// Tail accumulator for `ψ_1..ψ_k` against `drivers[0..k]`.
pub fn build_tail(weights: &[WeightExpr], drivers: &[DriverKind], path: &PathSet) -> Result<TailAccumulator> {
    if weights.len() != drivers.len() {
        return Err(Error::InvalidSpec(format!("{} weights but {} drivers", weights.len(), drivers.len())));
    }
    let w: Vec<Arc<[f64]>> = weights.iter().map(|g| g.on_nodes(path.partition())).collect();
    let incs = drivers.iter().map(|d| path.increments(*d)).collect::<Result<Vec<_>>>()?;
    Ok(TailAccumulator::from_arrays(&w, &incs, path.steps()))
}

struct Arrays<'a> {
    phi: Vec<f64>,
    weights: Vec<Arc<[f64]>>,
    incs: Vec<&'a [f64]>,
    post: Option<Arc<[f64]>>,
}

fn spec_arrays<'a>(spec: &IntegralSpec, path: &'a PathSet) -> Result<Arrays<'a>> {
    check_interval(spec.interval(), path)?;
    let partition = path.partition();
    Ok(Arrays {
        phi: integrand_values(spec.integrand(), path)?,
        weights: spec.weights().iter().map(|w| w.on_nodes(partition)).collect(),
        incs: spec.drivers().iter().map(|d| path.increments(*d)).collect::<Result<_>>()?,
        post: match spec.orientation() {
            Orientation::ReversedPostFactor { factor } => Some(factor.on_nodes(partition)),
            _ => None,
        },
    })
}

/// Forward iterated sum `J[φ, ψ^{(k)}]_{T,t}`.
pub fn eval_forward(spec: &IntegralSpec, path: &PathSet) -> Result<f64> {
    if !spec.orientation().is_forward() {
        return Err(Error::InvalidSpec("forward evaluation of a reversed integral".into()));
    }
    let a = spec_arrays(spec, path)?;
    Ok(forward_sum(&a.phi, &a.weights, &a.incs))
}

/// Reversed sum `Ĵ[φ, ψ^{(k)}]_{T,t}`, with the post factor if present.
pub fn eval_reversed(spec: &IntegralSpec, path: &PathSet) -> Result<f64> {
    if spec.orientation().is_forward() {
        return Err(Error::InvalidSpec("reversed evaluation of a forward integral".into()));
    }
    let a = spec_arrays(spec, path)?;
    Ok(reversed_sum(&a.phi, &a.weights, &a.incs, a.post.as_deref()))
}

/// Dispatches on the orientation of `spec`.
pub fn evaluate(spec: &IntegralSpec, path: &PathSet) -> Result<f64> {
    if spec.orientation().is_forward() {
        eval_forward(spec, path)
    } else {
        eval_reversed(spec, path)
    }
}

/// Right-endpoint factor of a combined sum.
#[derive(Debug, Clone, Copy)]
pub enum Theta<'a> {
    Tail(&'a TailAccumulator),
    Weight(&'a WeightExpr),
}

/// `Σ_j φ(τ_j) Δw_j θ(τ_{j+1})`.
pub fn eval_combined(integrand: &IntegrandKind, theta: Theta<'_>, driver: DriverKind, path: &PathSet) -> Result<f64> {
    let phi = integrand_values(integrand, path)?;
    let inc = path.increments(driver)?;
    let owned;
    let th: &[f64] = match theta {
        Theta::Tail(t) => t.top(),
        Theta::Weight(w) => {
            owned = w.on_nodes(path.partition());
            &owned
        }
    };
    if th.len() != inc.len() + 1 {
        return Err(Error::PartitionMismatch(format!(
            "tail has {} nodes, path has {}",
            th.len(),
            inc.len() + 1
        )));
    }
    let mut acc = CompensatedSum::new();
    for j in 0..inc.len() {
        acc.add(phi[j] * inc[j] * th[j + 1]);
    }
    Ok(acc.value())
}

fn check_split(fine: &PathSet, coarse: &PathSet) -> Result<usize> {
    let (nf, nc) = (fine.steps(), coarse.steps());
    if nf % nc != 0 || fine.partition().interval() != coarse.partition().interval() {
        return Err(Error::PartitionMismatch(format!(
            "coarse grid of {nc} steps is not a coarsening of {nf} steps"
        )));
    }
    Ok(nf / nc)
}

fn split_forward(f: &Arrays<'_>, c: &Arrays<'_>, refine: usize) -> f64 {
    if c.weights.is_empty() {
        return forward_sum::<&[f64]>(&c.phi, &[], &c.incs);
    }
    let inner = forward_prefix(&f.phi, &f.weights[1..], &f.incs[1..]);
    let (w, d) = (&c.weights[0], c.incs[0]);
    let mut acc = CompensatedSum::new();
    for l in 0..d.len() {
        acc.add(w[l] * inner[l * refine] * d[l]);
    }
    acc.value()
}

fn split_reversed(f: &Arrays<'_>, c: &Arrays<'_>, refine: usize) -> f64 {
    let k = c.weights.len();
    let tail = TailAccumulator::from_arrays(&f.weights, &f.incs[..k], f.incs[0].len());
    let top = tail.top();
    let d = c.incs[k];
    let mut acc = CompensatedSum::new();
    for l in 0..d.len() {
        let h = c.post.as_ref().map_or(1.0, |p| p[l + 1]);
        acc.add(c.phi[l] * d[l] * h * top[(l + 1) * refine]);
    }
    acc.value()
}

/// Two-scale evaluation: the outer layer (forward) or the integrand layer
/// (reversed) on `coarse`, the nested part on `fine`.
pub fn evaluate_split(spec: &IntegralSpec, fine: &PathSet, coarse: &PathSet) -> Result<f64> {
    let refine = check_split(fine, coarse)?;
    let f = spec_arrays(spec, fine)?;
    let c = spec_arrays(spec, coarse)?;
    Ok(if spec.orientation().is_forward() {
        split_forward(&f, &c, refine)
    } else {
        split_reversed(&f, &c, refine)
    })
}

fn kernel_term_arrays<'a>(
    factors: &[WeightExpr],
    integrand: Option<&IntegrandKind>,
    incs: &[&'a [f64]],
    path: &PathSet,
    xi: Option<&[f64]>,
) -> Arrays<'a> {
    let partition = path.partition();
    let k = incs.len() - 1;
    let weights = factors[..k].iter().map(|w| w.on_nodes(partition)).collect();
    let phi = match (integrand, xi) {
        (Some(_), Some(v)) => v.to_vec(),
        _ => factors[k].on_nodes(partition).to_vec(),
    };
    Arrays { phi, weights, incs: incs.to_vec(), post: None }
}

fn check_kernel(kernel: &KernelExpr, integrand: Option<&IntegrandKind>, drivers: &[DriverKind]) -> Result<usize> {
    if drivers.is_empty() || (integrand.is_some() && drivers.len() < 2) {
        return Err(Error::InvalidSpec("too few drivers for a kernel integral".into()));
    }
    let arity = kernel_arity(integrand.is_some(), drivers.len());
    kernel.validate(arity)?;
    Ok(arity)
}

fn eval_kernel(
    kernel: &KernelExpr,
    integrand: Option<&IntegrandKind>,
    drivers: &[DriverKind],
    path: &PathSet,
    forward: bool,
) -> Result<f64> {
    let arity = check_kernel(kernel, integrand, drivers)?;
    let incs = drivers.iter().map(|d| path.increments(*d)).collect::<Result<Vec<_>>>()?;
    let xi = integrand.map(|x| integrand_values(x, path)).transpose()?;
    match kernel.separable_terms(arity) {
        Some(terms) => {
            let mut acc = CompensatedSum::new();
            for (coef, factors) in &terms {
                let a = kernel_term_arrays(factors, integrand, &incs, path, xi.as_deref());
                let v = if forward {
                    forward_sum(&a.phi, &a.weights, &a.incs)
                } else {
                    reversed_sum(&a.phi, &a.weights, &a.incs, None)
                };
                acc.add(coef * v);
            }
            Ok(acc.value())
        }
        None if drivers.len() <= MAX_DIRECT_MULTIPLICITY => {
            let direct = Direct { kernel, times: path.partition().times(), interval: path.partition().interval(), incs: &incs };
            Ok(if forward { direct.forward(xi.as_deref()) } else { direct.reversed(xi.as_deref()) })
        }
        None => Err(Error::Unsupported(format!(
            "kernel {kernel} has no separable expansion and multiplicity {} exceeds {MAX_DIRECT_MULTIPLICITY}",
            drivers.len()
        ))),
    }
}

/// Forward kernel integral `J[ξ, Φ]` (with `integrand`) or `J'[Φ]` (without).
pub fn eval_kernel_forward(
    kernel: &KernelExpr,
    integrand: Option<&IntegrandKind>,
    drivers: &[DriverKind],
    path: &PathSet,
) -> Result<f64> {
    eval_kernel(kernel, integrand, drivers, path, true)
}

/// Reversed kernel integral `Ĵ[ξ, Φ]` (with `integrand`) or `J̃[Φ]` (without).
pub fn eval_kernel_reversed(
    kernel: &KernelExpr,
    integrand: Option<&IntegrandKind>,
    drivers: &[DriverKind],
    path: &PathSet,
) -> Result<f64> {
    eval_kernel(kernel, integrand, drivers, path, false)
}

pub fn evaluate_kernel(spec: &KernelIntegralSpec, path: &PathSet) -> Result<f64> {
    check_interval(spec.interval(), path)?;
    eval_kernel(spec.kernel(), spec.integrand(), spec.drivers(), path, spec.orientation().is_forward())
}

/// Two-scale counterpart of [`evaluate_kernel`]; needs a separable kernel.
pub fn evaluate_kernel_split(spec: &KernelIntegralSpec, fine: &PathSet, coarse: &PathSet) -> Result<f64> {
    let refine = check_split(fine, coarse)?;
    check_interval(spec.interval(), fine)?;
    let terms = spec
        .kernel()
        .separable_terms(spec.arity())
        .ok_or_else(|| Error::Unsupported(format!("two-scale evaluation of non-separable kernel {}", spec.kernel())))?;
    let inc_f = spec.drivers().iter().map(|d| fine.increments(*d)).collect::<Result<Vec<_>>>()?;
    let inc_c = spec.drivers().iter().map(|d| coarse.increments(*d)).collect::<Result<Vec<_>>>()?;
    let xi_f = spec.integrand().map(|x| integrand_values(x, fine)).transpose()?;
    let xi_c = spec.integrand().map(|x| integrand_values(x, coarse)).transpose()?;
    let mut acc = CompensatedSum::new();
    for (coef, factors) in &terms {
        let f = kernel_term_arrays(factors, spec.integrand(), &inc_f, fine, xi_f.as_deref());
        let c = kernel_term_arrays(factors, spec.integrand(), &inc_c, coarse, xi_c.as_deref());
        let v = if spec.orientation().is_forward() {
            split_forward(&f, &c, refine)
        } else {
            split_reversed(&f, &c, refine)
        };
        acc.add(coef * v);
    }
    Ok(acc.value())
}

/// Direct summation over ordered index tuples for general kernels.
struct Direct<'a> {
    kernel: &'a KernelExpr,
    times: &'a [f64],
    interval: crate::domain::Interval,
    incs: &'a [&'a [f64]],
}

impl Direct<'_> {
    /// Σ over `upper > j_depth > j_{depth+1} > …` of the outer layers,
    /// calling `leaf` with the full argument list and the last index.
    fn descend(&self, layers: usize, depth: usize, upper: usize, args: &mut Vec<f64>, leaf: &dyn Fn(&[f64], usize) -> f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for j in 0..upper {
            args[depth] = self.times[j];
            let inner = if depth + 1 == layers { leaf(args, j) } else { self.descend(layers, depth + 1, j, args, leaf) };
            acc.add(self.incs[depth][j] * inner);
        }
        acc.value()
    }

    /// Σ over `lower <= j_depth < j_{depth-1} < …` down to layer 0.
    fn ascend(&self, depth: usize, lower: usize, args: &mut Vec<f64>) -> f64 {
        let n = self.times.len() - 1;
        let mut acc = CompensatedSum::new();
        for j in lower..n {
            args[depth] = self.times[j];
            let inner = if depth == 0 { self.kernel.eval(args, self.interval) } else { self.ascend(depth - 1, j + 1, args) };
            acc.add(self.incs[depth][j] * inner);
        }
        acc.value()
    }

    fn forward(&self, xi: Option<&[f64]>) -> f64 {
        let m = self.incs.len();
        let n = self.times.len() - 1;
        match xi {
            Some(xi) => {
                let inner = self.incs[m - 1];
                let p = prefix(n, |j| xi[j] * inner[j]);
                let mut args = vec![0.0; m - 1];
                self.descend(m - 1, 0, n, &mut args, &|a, j| self.kernel.eval(a, self.interval) * p[j])
            }
            None => {
                let mut args = vec![0.0; m];
                self.descend(m, 0, n, &mut args, &|a, _| self.kernel.eval(a, self.interval))
            }
        }
    }

    fn reversed(&self, xi: Option<&[f64]>) -> f64 {
        let m = self.incs.len();
        let n = self.times.len() - 1;
        let d = self.incs[m - 1];
        let mut acc = CompensatedSum::new();
        match xi {
            Some(xi) => {
                // The tail does not see the innermost time: build it once.
                let mut args = vec![0.0; m - 1];
                let mut tail = vec![0.0; n + 1];
                let mut t = CompensatedSum::new();
                for j in (0..n).rev() {
                    args[m - 2] = self.times[j];
                    let g = if m == 2 { self.kernel.eval(&args, self.interval) } else { self.ascend(m - 3, j + 1, &mut args) };
                    t.add(self.incs[m - 2][j] * g);
                    tail[j] = t.value();
                }
                for l in 0..n {
                    acc.add(xi[l] * d[l] * tail[l + 1]);
                }
            }
            None => {
                let mut args = vec![0.0; m];
                for (l, &dl) in d.iter().enumerate().take(n) {
                    args[m - 1] = self.times[l];
                    let tail = if m == 1 { self.kernel.eval(&args, self.interval) } else { self.ascend(m - 2, l + 1, &mut args) };
                    acc.add(dl * tail);
                }
            }
        }
        acc.value()
    }
}
