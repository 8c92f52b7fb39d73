//! Partitions, nonrandom weight and kernel expressions, integrand kinds and
//! iterated-integral descriptions.
//!
//! Layer convention: drivers and weights are stored outermost first. For an
//! integral of multiplicity `k + 1`, `drivers[0]` is the outermost layer and
//! `drivers[k]` is the innermost one, which carries the integrand. Weight
//! `weights[r]` multiplies the layer driven by `drivers[r]`.
//!
//! Multi-index bits are the opposite way round: bit 0 is the innermost layer.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::InvalidInterval(format!("[{start}, {end}] is not finite")));
        }
        if start >= end {
            return Err(Error::InvalidInterval(format!("start {start} must be below end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn unit() -> Self {
        Self { start: 0.0, end: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// Strictly increasing grid `t = τ_0 < … < τ_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
    deltas: Vec<f64>,
    memo: NodeMemo,
}

/// Memoised node values of weight expressions. Ignored by equality.
#[derive(Default)]
struct NodeMemo(RwLock<HashMap<String, Arc<[f64]>>>);

impl Clone for NodeMemo {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PartialEq for NodeMemo {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Debug for NodeMemo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NodeMemo")
    }
}

impl Partition {
    /// `steps` equal cells over `[start, end]`.
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        let interval = Interval::new(start, end)?;
        if steps == 0 {
            return Err(Error::InvalidPartition("at least one step is required".into()));
        }
        let len = interval.length();
        let n = steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|j| start + len * (j as f64) / n).collect();
        times[steps] = end;
        Self::from_times(times)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidPartition("need at least two nodes".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPartition("non-finite node".into()));
        }
        if let Some(j) = times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPartition(format!(
                "nodes {j} and {} are not strictly increasing",
                j + 1
            )));
        }
        let deltas = times.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { times, deltas, memo: NodeMemo::default() })
    }

    pub fn steps(&self) -> usize {
        self.deltas.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Cell lengths `τ_{j+1} - τ_j`.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn interval(&self) -> Interval {
        Interval { start: self.times[0], end: self.times[self.steps()] }
    }

    pub fn mesh(&self) -> f64 {
        self.deltas.iter().copied().fold(0.0, f64::max)
    }

    /// Values of `weight` at every node, computed once per partition.
    pub fn weight_nodes(&self, weight: &WeightExpr) -> Arc<[f64]> {
        let key = format!("{weight:?}");
        if let Some(v) = self.memo.0.read().expect("memo lock").get(&key) {
            return Arc::clone(v);
        }
        let iv = self.interval();
        let v: Arc<[f64]> = self.times.iter().map(|&s| weight.eval(s, iv)).collect();
        self.memo.0.write().expect("memo lock").insert(key, Arc::clone(&v));
        v
    }

    /// Keeps every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::InvalidPartition(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps()
            )));
        }
        Self::from_times(self.times.iter().copied().step_by(factor).collect())
    }
}

/// Integrator of one layer. Wiener components are numbered from 1;
/// martingale drivers index the model list of the sampler from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum DriverKind {
    Time,
    Wiener(usize),
    Martingale(usize),
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverKind::Time => write!(f, "dt"),
            DriverKind::Wiener(i) => write!(f, "df{i}"),
            DriverKind::Martingale(id) => write!(f, "dM{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Start,
    End,
}

/// Deterministic function of time, evaluated relative to an interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightExpr {
    Const { value: f64 },
    /// `(s - t)^exponent` for `Start`, `(T - s)^exponent` for `End`.
    PowShift { exponent: f64, anchor: Anchor },
    /// `exp(rate * (s - anchor))`.
    Exp { rate: f64, anchor: Anchor },
    /// `sin(s - anchor)`.
    Sin { anchor: Anchor },
    /// `cos(s - anchor)`.
    Cos { anchor: Anchor },
    /// `Σ_{n < octaves} 2^{-n/2} cos(2^n π (s - t) / (T - t))`. Hölder-1/2
    /// down to scale `2^{-octaves}`, so its squared increments shrink only
    /// linearly with the step.
    Lacunary { octaves: u32 },
    Product { factors: Vec<WeightExpr> },
    Sum { terms: Vec<(f64, WeightExpr)> },
}

/// Largest number of octaves in a lacunary weight.
pub const MAX_OCTAVES: u32 = 48;

fn power(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

impl WeightExpr {
    pub fn constant(value: f64) -> Self {
        WeightExpr::Const { value }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn pow_shift(exponent: f64, anchor: Anchor) -> Result<Self> {
        let w = WeightExpr::PowShift { exponent, anchor };
        w.validate()?;
        Ok(w)
    }

    /// `(s - t)^exponent`; panics on a negative or non-finite exponent.
    pub fn since_start(exponent: f64) -> Self {
        Self::pow_shift(exponent, Anchor::Start).expect("valid exponent")
    }

    /// `(T - s)^exponent`; panics on a negative or non-finite exponent.
    pub fn until_end(exponent: f64) -> Self {
        Self::pow_shift(exponent, Anchor::End).expect("valid exponent")
    }

    pub fn exp(rate: f64, anchor: Anchor) -> Self {
        WeightExpr::Exp { rate, anchor }
    }

    pub fn product(factors: Vec<WeightExpr>) -> Self {
        WeightExpr::Product { factors }
    }

    pub fn sum(terms: Vec<(f64, WeightExpr)>) -> Self {
        WeightExpr::Sum { terms }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightExpr::Const { value } if !value.is_finite() => {
                Err(Error::InvalidExpression(format!("non-finite constant {value}")))
            }
            WeightExpr::PowShift { exponent, .. } if !(exponent.is_finite() && *exponent >= 0.0) => {
                Err(Error::InvalidExpression(format!(
                    "power exponent {exponent} must be finite and non-negative"
                )))
            }
            WeightExpr::Exp { rate, .. } if !rate.is_finite() => {
                Err(Error::InvalidExpression(format!("non-finite rate {rate}")))
            }
            WeightExpr::Lacunary { octaves } if !(1..=MAX_OCTAVES).contains(octaves) => {
                Err(Error::InvalidExpression(format!("octaves must be in 1..={MAX_OCTAVES}, got {octaves}")))
            }
            WeightExpr::Product { factors } => factors.iter().try_for_each(Self::validate),
            WeightExpr::Sum { terms } => terms.iter().try_for_each(|(c, w)| {
                if !c.is_finite() {
                    return Err(Error::InvalidExpression(format!("non-finite coefficient {c}")));
                }
                w.validate()
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, s: f64, interval: Interval) -> f64 {
        let anchor_time = |a: &Anchor| match a {
            Anchor::Start => interval.start,
            Anchor::End => interval.end,
        };
        match self {
            WeightExpr::Const { value } => *value,
            WeightExpr::PowShift { exponent, anchor } => {
                let base = match anchor {
                    Anchor::Start => s - interval.start,
                    Anchor::End => interval.end - s,
                };
                power(base.max(0.0), *exponent)
            }
            WeightExpr::Exp { rate, anchor } => (rate * (s - anchor_time(anchor))).exp(),
            WeightExpr::Sin { anchor } => (s - anchor_time(anchor)).sin(),
            WeightExpr::Cos { anchor } => (s - anchor_time(anchor)).cos(),
            WeightExpr::Lacunary { octaves } => {
                let x = std::f64::consts::PI * (s - interval.start) / interval.length();
                (0..*octaves).map(|n| (0.5f64).powf(0.5 * f64::from(n)) * (f64::from(n).exp2() * x).cos()).sum()
            }
            WeightExpr::Product { factors } => factors.iter().map(|w| w.eval(s, interval)).product(),
            WeightExpr::Sum { terms } => terms.iter().map(|(c, w)| c * w.eval(s, interval)).sum(),
        }
    }

    /// Values at every node of `partition`.
    pub fn on_nodes(&self, partition: &Partition) -> Arc<[f64]> {
        partition.weight_nodes(self)
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, WeightExpr::Const { value } if *value == 1.0)
    }
}

fn anchor_label(a: Anchor) -> &'static str {
    match a {
        Anchor::Start => "t",
        Anchor::End => "T",
    }
}

impl fmt::Display for WeightExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightExpr::Const { value } => write!(f, "{value}"),
            WeightExpr::PowShift { exponent, anchor: Anchor::Start } => write!(f, "(s-t)^{exponent}"),
            WeightExpr::PowShift { exponent, anchor: Anchor::End } => write!(f, "(T-s)^{exponent}"),
            WeightExpr::Exp { rate, anchor } => write!(f, "exp({rate}(s-{}))", anchor_label(*anchor)),
            WeightExpr::Sin { anchor } => write!(f, "sin(s-{})", anchor_label(*anchor)),
            WeightExpr::Cos { anchor } => write!(f, "cos(s-{})", anchor_label(*anchor)),
            WeightExpr::Lacunary { octaves } => write!(f, "lacunary{octaves}"),
            WeightExpr::Product { factors } => {
                if factors.is_empty() {
                    return write!(f, "1");
                }
                for (i, w) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{w}")?;
                }
                Ok(())
            }
            WeightExpr::Sum { terms } => {
                write!(f, "(")?;
                for (i, (c, w)) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{c}*{w}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Deterministic function of several ordered times. Argument 0 is the
/// outermost (latest) integration variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelExpr {
    Const { value: f64 },
    /// `factors[a](x_a)` multiplied over all arguments.
    Separable { factors: Vec<WeightExpr> },
    /// `(x_minuend - x_subtrahend)^exponent`.
    DiffPow { minuend: usize, subtrahend: usize, exponent: f64 },
    Product { factors: Vec<KernelExpr> },
    Sum { terms: Vec<(f64, KernelExpr)> },
}

fn binomial(n: u32, m: u32) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// One separable piece: a coefficient and one weight per argument.
pub type SeparableTerm = (f64, Vec<WeightExpr>);

impl KernelExpr {
    pub fn constant(value: f64) -> Self {
        KernelExpr::Const { value }
    }

    pub fn separable(factors: Vec<WeightExpr>) -> Self {
        KernelExpr::Separable { factors }
    }

    pub fn diff_pow(minuend: usize, subtrahend: usize, exponent: f64) -> Self {
        KernelExpr::DiffPow { minuend, subtrahend, exponent }
    }

    pub fn product(factors: Vec<KernelExpr>) -> Self {
        KernelExpr::Product { factors }
    }

    pub fn sum(terms: Vec<(f64, KernelExpr)>) -> Self {
        KernelExpr::Sum { terms }
    }

    /// Checks the expression against the number of arguments it will see.
    pub fn validate(&self, arity: usize) -> Result<()> {
        match self {
            KernelExpr::Const { value } if !value.is_finite() => {
                Err(Error::InvalidExpression(format!("non-finite constant {value}")))
            }
            KernelExpr::Const { .. } => Ok(()),
            KernelExpr::Separable { factors } => {
                if factors.len() != arity {
                    return Err(Error::InvalidExpression(format!(
                        "separable kernel has {} factors but arity {arity}",
                        factors.len()
                    )));
                }
                factors.iter().try_for_each(WeightExpr::validate)
            }
            KernelExpr::DiffPow { minuend, subtrahend, exponent } => {
                if *minuend >= arity || *subtrahend >= arity || minuend == subtrahend {
                    return Err(Error::InvalidExpression(format!(
                        "difference of arguments {minuend} and {subtrahend} invalid for arity {arity}"
                    )));
                }
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::InvalidExpression(format!(
                        "difference exponent {exponent} must be finite and non-negative"
                    )));
                }
                if exponent.fract() != 0.0 && minuend > subtrahend {
                    return Err(Error::InvalidExpression(
                        "fractional powers need the later argument as minuend".into(),
                    ));
                }
                Ok(())
            }
            KernelExpr::Product { factors } => factors.iter().try_for_each(|k| k.validate(arity)),
            KernelExpr::Sum { terms } => terms.iter().try_for_each(|(c, k)| {
                if !c.is_finite() {
                    return Err(Error::InvalidExpression(format!("non-finite coefficient {c}")));
                }
                k.validate(arity)
            }),
        }
    }

    pub fn eval(&self, args: &[f64], interval: Interval) -> f64 {
        match self {
            KernelExpr::Const { value } => *value,
            KernelExpr::Separable { factors } => {
                factors.iter().zip(args).map(|(w, &x)| w.eval(x, interval)).product()
            }
            KernelExpr::DiffPow { minuend, subtrahend, exponent } => {
                let d = args[*minuend] - args[*subtrahend];
                if exponent.fract() == 0.0 {
                    power(d, *exponent)
                } else {
                    power(d.max(0.0), *exponent)
                }
            }
            KernelExpr::Product { factors } => factors.iter().map(|k| k.eval(args, interval)).product(),
            KernelExpr::Sum { terms } => terms.iter().map(|(c, k)| c * k.eval(args, interval)).sum(),
        }
    }

    /// Expansion into a finite sum of products of one-variable weights, when
    /// one exists. Integer powers of differences are expanded binomially.
    pub fn separable_terms(&self, arity: usize) -> Option<Vec<SeparableTerm>> {
        let unit = || vec![WeightExpr::one(); arity];
        match self {
            KernelExpr::Const { value } => Some(vec![(*value, unit())]),
            KernelExpr::Separable { factors } => Some(vec![(1.0, factors.clone())]),
            KernelExpr::DiffPow { minuend, subtrahend, exponent } => {
                if exponent.fract() != 0.0 || *exponent > 32.0 {
                    return None;
                }
                let n = *exponent as u32;
                let terms = (0..=n)
                    .map(|m| {
                        let sign = if (n - m).is_multiple_of(2) { 1.0 } else { -1.0 };
                        let mut factors = unit();
                        factors[*minuend] = WeightExpr::since_start(f64::from(m));
                        factors[*subtrahend] = WeightExpr::since_start(f64::from(n - m));
                        (sign * binomial(n, m), factors)
                    })
                    .collect();
                Some(terms)
            }
            KernelExpr::Product { factors } => {
                let mut acc = vec![(1.0, unit())];
                for k in factors {
                    let expanded = k.separable_terms(arity)?;
                    let mut next = Vec::with_capacity(acc.len() * expanded.len());
                    for (ca, fa) in &acc {
                        for (cb, fb) in &expanded {
                            let merged = fa.iter().zip(fb).map(|(a, b)| merge_product(a, b)).collect();
                            next.push((ca * cb, merged));
                        }
                    }
                    acc = next;
                }
                Some(acc)
            }
            KernelExpr::Sum { terms } => {
                let mut out = Vec::new();
                for (c, k) in terms {
                    for (ci, fi) in k.separable_terms(arity)? {
                        out.push((c * ci, fi));
                    }
                }
                Some(out)
            }
        }
    }

    /// Same kernel with the two arguments of a bivariate kernel exchanged.
    pub fn swap_args(&self) -> Result<Self> {
        let flip = |a: usize| -> Result<usize> {
            match a {
                0 => Ok(1),
                1 => Ok(0),
                _ => Err(Error::InvalidExpression("argument swap needs a bivariate kernel".into())),
            }
        };
        Ok(match self {
            KernelExpr::Const { value } => KernelExpr::Const { value: *value },
            KernelExpr::Separable { factors } => {
                if factors.len() != 2 {
                    return Err(Error::InvalidExpression("argument swap needs a bivariate kernel".into()));
                }
                KernelExpr::Separable { factors: vec![factors[1].clone(), factors[0].clone()] }
            }
            KernelExpr::DiffPow { minuend, subtrahend, exponent } => KernelExpr::DiffPow {
                minuend: flip(*minuend)?,
                subtrahend: flip(*subtrahend)?,
                exponent: *exponent,
            },
            KernelExpr::Product { factors } => {
                KernelExpr::Product { factors: factors.iter().map(Self::swap_args).collect::<Result<_>>()? }
            }
            KernelExpr::Sum { terms } => KernelExpr::Sum {
                terms: terms.iter().map(|(c, k)| Ok((*c, k.swap_args()?))).collect::<Result<_>>()?,
            },
        })
    }
}

fn merge_product(a: &WeightExpr, b: &WeightExpr) -> WeightExpr {
    match (a.is_unit(), b.is_unit()) {
        (true, _) => b.clone(),
        (_, true) => a.clone(),
        _ => WeightExpr::product(vec![a.clone(), b.clone()]),
    }
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelExpr::Const { value } => write!(f, "{value}"),
            KernelExpr::Separable { factors } => {
                for (i, w) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{w}@x{i}")?;
                }
                Ok(())
            }
            KernelExpr::DiffPow { minuend, subtrahend, exponent } => {
                write!(f, "(x{minuend}-x{subtrahend})^{exponent}")
            }
            KernelExpr::Product { factors } => {
                for (i, k) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{k}")?;
                }
                Ok(())
            }
            KernelExpr::Sum { terms } => {
                write!(f, "(")?;
                for (i, (c, k)) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{c}*{k}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Integrand of the innermost layer, evaluated at left endpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegrandKind {
    One,
    /// `f_s` for Wiener component `component`.
    WienerValue { component: usize },
    /// `f_s - f_t`; equals the value since paths start at zero.
    WienerIncrement { component: usize },
    /// `g(s) * f_s`.
    WeightedPath { weight: WeightExpr, component: usize },
    Deterministic { weight: WeightExpr },
    /// `M_s` for martingale driver `id`.
    MartingaleValue { id: usize },
    /// `g(s) * M_s`.
    WeightedMartingale { weight: WeightExpr, id: usize },
}

impl IntegrandKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            IntegrandKind::WienerValue { component }
            | IntegrandKind::WienerIncrement { component }
            | IntegrandKind::WeightedPath { component, .. }
                if *component == 0 =>
            {
                Err(Error::InvalidSpec("Wiener components are numbered from 1".into()))
            }
            IntegrandKind::WeightedPath { weight, .. }
            | IntegrandKind::Deterministic { weight }
            | IntegrandKind::WeightedMartingale { weight, .. } => weight.validate(),
            _ => Ok(()),
        }
    }

    /// Random drivers this integrand reads.
    pub fn driver(&self) -> Option<DriverKind> {
        match self {
            IntegrandKind::WienerValue { component }
            | IntegrandKind::WienerIncrement { component }
            | IntegrandKind::WeightedPath { component, .. } => Some(DriverKind::Wiener(*component)),
            IntegrandKind::MartingaleValue { id } | IntegrandKind::WeightedMartingale { id, .. } => {
                Some(DriverKind::Martingale(*id))
            }
            IntegrandKind::One | IntegrandKind::Deterministic { .. } => None,
        }
    }
}

impl fmt::Display for IntegrandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegrandKind::One => write!(f, "1"),
            IntegrandKind::WienerValue { component } => write!(f, "f{component}"),
            IntegrandKind::WienerIncrement { component } => write!(f, "(f{component}-f{component}(t))"),
            IntegrandKind::WeightedPath { weight, component } => write!(f, "{weight}*f{component}"),
            IntegrandKind::Deterministic { weight } => write!(f, "{weight}"),
            IntegrandKind::MartingaleValue { id } => write!(f, "M{id}"),
            IntegrandKind::WeightedMartingale { weight, id } => write!(f, "{weight}*M{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Orientation {
    /// Nested left-point sums, innermost layer summed first.
    Forward,
    /// Innermost layer outside, remaining layers collapsed into tails taken
    /// at the right endpoint of each cell.
    Reversed,
    /// As `Reversed`, with the tail multiplied by `factor(τ_{l+1})`.
    ReversedPostFactor { factor: WeightExpr },
}

impl Orientation {
    pub fn is_forward(&self) -> bool {
        matches!(self, Orientation::Forward)
    }
}

fn check_drivers(drivers: &[DriverKind]) -> Result<()> {
    if drivers.is_empty() {
        return Err(Error::InvalidSpec("at least one driver is required".into()));
    }
    if drivers.iter().any(|d| matches!(d, DriverKind::Wiener(0))) {
        return Err(Error::InvalidSpec("Wiener components are numbered from 1".into()));
    }
    Ok(())
}

/// Iterated integral `∫ψ_1 ∫ψ_2 … ∫φ dw^{(k+1)} … dw^{(2)} dw^{(1)}` with
/// `k = weights.len()`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralSpec {
    integrand: IntegrandKind,
    weights: Vec<WeightExpr>,
    drivers: Vec<DriverKind>,
    orientation: Orientation,
    interval: Interval,
}

impl IntegralSpec {
    pub fn new(
        integrand: IntegrandKind,
        weights: Vec<WeightExpr>,
        drivers: Vec<DriverKind>,
        orientation: Orientation,
        interval: Interval,
    ) -> Result<Self> {
        check_drivers(&drivers)?;
        if drivers.len() != weights.len() + 1 {
            return Err(Error::InvalidSpec(format!(
                "{} weights need {} drivers, got {}",
                weights.len(),
                weights.len() + 1,
                drivers.len()
            )));
        }
        integrand.validate()?;
        weights.iter().try_for_each(WeightExpr::validate)?;
        if let Orientation::ReversedPostFactor { factor } = &orientation {
            factor.validate()?;
        }
        Interval::new(interval.start, interval.end)?;
        Ok(Self { integrand, weights, drivers, orientation, interval })
    }

    pub fn forward(
        integrand: IntegrandKind,
        weights: Vec<WeightExpr>,
        drivers: Vec<DriverKind>,
        interval: Interval,
    ) -> Result<Self> {
        Self::new(integrand, weights, drivers, Orientation::Forward, interval)
    }

    /// Plain stochastic or Lebesgue integral of a deterministic weight.
    pub fn single(weight: WeightExpr, driver: DriverKind, interval: Interval) -> Result<Self> {
        Self::forward(IntegrandKind::Deterministic { weight }, vec![], vec![driver], interval)
    }

    /// The Itô-Wiener integral `J_{(l_1 … l_k)}`: bit 1 is `df^{(1)}`,
    /// bit 0 is `dt`, bit 0 of the index is the innermost layer.
    pub fn from_multi_index(index: &MultiIndex, interval: Interval) -> Result<Self> {
        let drivers = index
            .bits()
            .iter()
            .rev()
            .map(|b| if *b == 1 { DriverKind::Wiener(1) } else { DriverKind::Time })
            .collect::<Vec<_>>();
        let weights = vec![WeightExpr::one(); drivers.len() - 1];
        Self::forward(IntegrandKind::One, weights, drivers, interval)
    }

    pub fn with_orientation(&self, orientation: Orientation) -> Result<Self> {
        Self::new(
            self.integrand.clone(),
            self.weights.clone(),
            self.drivers.clone(),
            orientation,
            self.interval,
        )
    }

    pub fn integrand(&self) -> &IntegrandKind {
        &self.integrand
    }

    pub fn weights(&self) -> &[WeightExpr] {
        &self.weights
    }

    pub fn drivers(&self) -> &[DriverKind] {
        &self.drivers
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// Number of weights, one less than the multiplicity.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }
}

impl fmt::Display for IntegralSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.orientation.is_forward() { "J" } else { "Jrev" };
        write!(f, "{name}[{}; w=", self.integrand)?;
        for (i, w) in self.weights.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{w}")?;
        }
        write!(f, "; ")?;
        for (i, d) in self.drivers.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{d}")?;
        }
        if let Orientation::ReversedPostFactor { factor } = &self.orientation {
            write!(f, "; h={factor}")?;
        }
        write!(f, "]")
    }
}

/// Kernel integral. With an integrand the kernel takes one argument per
/// driver except the innermost; without one it takes an argument per driver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelIntegralSpec {
    kernel: KernelExpr,
    integrand: Option<IntegrandKind>,
    drivers: Vec<DriverKind>,
    orientation: Orientation,
    interval: Interval,
}

impl KernelIntegralSpec {
    pub fn new(
        kernel: KernelExpr,
        integrand: Option<IntegrandKind>,
        drivers: Vec<DriverKind>,
        orientation: Orientation,
        interval: Interval,
    ) -> Result<Self> {
        check_drivers(&drivers)?;
        if integrand.is_some() && drivers.len() < 2 {
            return Err(Error::InvalidSpec("a kernel with an integrand needs two or more drivers".into()));
        }
        if let Some(xi) = &integrand {
            xi.validate()?;
        }
        if matches!(orientation, Orientation::ReversedPostFactor { .. }) {
            return Err(Error::InvalidSpec("kernel integrals take no post factor".into()));
        }
        Interval::new(interval.start, interval.end)?;
        let spec = Self { kernel, integrand, drivers, orientation, interval };
        spec.kernel.validate(spec.arity())?;
        Ok(spec)
    }

    pub fn kernel(&self) -> &KernelExpr {
        &self.kernel
    }

    pub fn integrand(&self) -> Option<&IntegrandKind> {
        self.integrand.as_ref()
    }

    pub fn drivers(&self) -> &[DriverKind] {
        &self.drivers
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn arity(&self) -> usize {
        kernel_arity(self.integrand.is_some(), self.drivers.len())
    }

    pub fn with_orientation(&self, orientation: Orientation) -> Result<Self> {
        Self::new(self.kernel.clone(), self.integrand.clone(), self.drivers.clone(), orientation, self.interval)
    }
}

pub(crate) fn kernel_arity(has_integrand: bool, drivers: usize) -> usize {
    if has_integrand {
        drivers - 1
    } else {
        drivers
    }
}

impl fmt::Display for KernelIntegralSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.orientation.is_forward() { "K" } else { "Krev" };
        write!(f, "{name}[{}", self.kernel)?;
        if let Some(xi) = &self.integrand {
            write!(f, "; {xi}")?;
        }
        write!(f, ";")?;
        for d in &self.drivers {
            write!(f, " {d}")?;
        }
        write!(f, "]")
    }
}

/// Binary multi-index `(l_1, …, l_k)`, `l_1` innermost.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct MultiIndex {
    bits: Vec<u8>,
}

impl MultiIndex {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidArgument("multi-index must be non-empty".into()));
        }
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::InvalidArgument("multi-index entries must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    /// Parses a string such as `"1011"`, first character innermost.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::InvalidArgument(format!("bad multi-index character {c:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}
