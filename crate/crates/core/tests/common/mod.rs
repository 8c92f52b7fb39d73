//! Naive reference evaluators shared by the integration tests and the
//! acceptance harness. They enumerate every ordered index tuple and read the
//! path only through its raw increments.

#![allow(dead_code)]

use ito_reorder::domain::{Anchor, DriverKind, IntegrandKind, Interval, KernelExpr, WeightExpr};
use ito_reorder::paths::PathSet;
use rand::Rng;

/// Error-free accumulation (Knuth two-sum), independent of the crate's own.
#[derive(Default)]
pub struct TwoSum {
    sum: f64,
    err: f64,
}

impl TwoSum {
    pub fn add(&mut self, x: f64) {
        let s = self.sum + x;
        let bp = s - self.sum;
        self.err += (self.sum - (s - bp)) + (x - bp);
        self.sum = s;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Sum of the terms and sum of their absolute values.
pub struct Brute {
    pub value: f64,
    pub magnitude: f64,
}

impl Brute {
    /// `|x - value| / |value|`.
    pub fn rel_error(&self, x: f64) -> f64 {
        (x - self.value).abs() / self.value.abs().max(1e-300)
    }
}

fn increments(path: &PathSet, d: DriverKind) -> Vec<f64> {
    path.increments(d).unwrap().to_vec()
}

/// Running values built by plain summation of raw increments.
fn running(path: &PathSet, d: DriverKind) -> Vec<f64> {
    let inc = increments(path, d);
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for x in inc {
        acc += x;
        out.push(acc);
    }
    out
}

pub fn integrand_at(kind: &IntegrandKind, path: &PathSet) -> Vec<f64> {
    let times = path.partition().times();
    let iv = path.partition().interval();
    match kind {
        IntegrandKind::One => vec![1.0; times.len()],
        IntegrandKind::WienerValue { component } | IntegrandKind::WienerIncrement { component } => {
            running(path, DriverKind::Wiener(*component))
        }
        IntegrandKind::WeightedPath { weight, component } => running(path, DriverKind::Wiener(*component))
            .iter()
            .zip(times)
            .map(|(f, &s)| weight.eval(s, iv) * f)
            .collect(),
        IntegrandKind::Deterministic { weight } => times.iter().map(|&s| weight.eval(s, iv)).collect(),
        IntegrandKind::MartingaleValue { id } => running(path, DriverKind::Martingale(*id)),
        IntegrandKind::WeightedMartingale { weight, id } => running(path, DriverKind::Martingale(*id))
            .iter()
            .zip(times)
            .map(|(m, &s)| weight.eval(s, iv) * m)
            .collect(),
    }
}

/// Visits every tuple `n > j_0 > j_1 > … > j_{m-1} >= 0`.
fn tuples(n: usize, m: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(upper: usize, depth: usize, m: usize, idx: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if depth == m {
            visit(idx);
            return;
        }
        for j in 0..upper {
            idx[depth] = j;
            rec(j, depth + 1, m, idx, visit);
        }
    }
    let mut idx = vec![0; m];
    rec(n, 0, m, &mut idx, visit);
}

/// Iterated sum over all strictly ordered tuples, drivers outermost first.
/// `post` multiplies each term by its value at the node after the innermost
/// index, as in the reversed form with a post factor.
pub fn brute_iterated(
    phi: &IntegrandKind,
    weights: &[WeightExpr],
    drivers: &[DriverKind],
    post: Option<&WeightExpr>,
    path: &PathSet,
) -> Brute {
    let times = path.partition().times();
    let iv = path.partition().interval();
    let n = path.steps();
    let m = drivers.len();
    let incs: Vec<Vec<f64>> = drivers.iter().map(|d| increments(path, *d)).collect();
    let xi = integrand_at(phi, path);
    let (mut sum, mut mag) = (TwoSum::default(), 0.0);
    tuples(n, m, &mut |idx| {
        let mut term = xi[idx[m - 1]] * incs[m - 1][idx[m - 1]];
        for r in 0..m - 1 {
            term *= weights[r].eval(times[idx[r]], iv) * incs[r][idx[r]];
        }
        if let Some(h) = post {
            term *= h.eval(times[idx[m - 1] + 1], iv);
        }
        sum.add(term);
        mag += term.abs();
    });
    Brute { value: sum.value(), magnitude: mag }
}

/// Kernel sum over all strictly ordered tuples. The kernel sees the times
/// of every layer except the innermost when an integrand is given, and of
/// every layer otherwise.
pub fn brute_kernel(kernel: &KernelExpr, xi: Option<&IntegrandKind>, drivers: &[DriverKind], path: &PathSet) -> Brute {
    let times = path.partition().times();
    let iv = path.partition().interval();
    let n = path.steps();
    let m = drivers.len();
    let incs: Vec<Vec<f64>> = drivers.iter().map(|d| increments(path, *d)).collect();
    let xv = xi.map(|x| integrand_at(x, path));
    let arity = if xi.is_some() { m - 1 } else { m };
    let (mut sum, mut mag) = (TwoSum::default(), 0.0);
    let mut args = vec![0.0; arity];
    tuples(n, m, &mut |idx| {
        for (a, &j) in args.iter_mut().zip(idx) {
            *a = times[j];
        }
        let mut term = kernel.eval(&args, iv);
        for r in 0..m {
            term *= incs[r][idx[r]];
        }
        if let Some(x) = &xv {
            term *= x[idx[m - 1]];
        }
        sum.add(term);
        mag += term.abs();
    });
    Brute { value: sum.value(), magnitude: mag }
}

pub fn weight_pool() -> Vec<WeightExpr> {
    vec![
        WeightExpr::one(),
        WeightExpr::constant(-1.75),
        WeightExpr::since_start(1.0),
        WeightExpr::until_end(2.0),
        WeightExpr::pow_shift(0.5, Anchor::End).unwrap(),
        WeightExpr::exp(0.7, Anchor::Start),
        WeightExpr::Cos { anchor: Anchor::Start },
        WeightExpr::Sin { anchor: Anchor::End },
        WeightExpr::sum(vec![(2.0, WeightExpr::one()), (-1.0, WeightExpr::since_start(2.0))]),
    ]
}

pub fn integrand_pool() -> Vec<IntegrandKind> {
    vec![
        IntegrandKind::One,
        IntegrandKind::WienerValue { component: 1 },
        IntegrandKind::WienerValue { component: 2 },
        IntegrandKind::WeightedPath { weight: WeightExpr::Cos { anchor: Anchor::End }, component: 1 },
        IntegrandKind::Deterministic { weight: WeightExpr::exp(-0.3, Anchor::End) },
    ]
}

pub const DRIVER_POOL: [DriverKind; 3] = [DriverKind::Time, DriverKind::Wiener(1), DriverKind::Wiener(2)];

pub fn pick<T: Clone, R: Rng>(rng: &mut R, pool: &[T]) -> T {
    pool[rng.random_range(0..pool.len())].clone()
}

/// Random kernel of the given arity mixing separable and difference factors.
pub fn random_kernel<R: Rng>(rng: &mut R, arity: usize) -> KernelExpr {
    let weights = weight_pool();
    let separable = || KernelExpr::separable((0..arity).map(|_| weights[0].clone()).collect());
    let mut factors = vec![KernelExpr::separable((0..arity).map(|_| pick(rng, &weights)).collect())];
    if arity >= 2 {
        let a = rng.random_range(0..arity - 1);
        let b = rng.random_range(a + 1..arity);
        let exponent = pick(rng, &[1.0, 2.0, 0.5, 1.5]);
        factors.push(KernelExpr::diff_pow(a, b, exponent));
    }
    if rng.random_bool(0.3) {
        return KernelExpr::sum(vec![(0.5, KernelExpr::product(factors)), (-2.0, separable())]);
    }
    KernelExpr::product(factors)
}

pub fn interval() -> Interval {
    Interval::new(0.25, 1.75).unwrap()
}
