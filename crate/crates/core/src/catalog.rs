//! Registry of almost-sure identities between iterated integrals.
//!
//! Each identity is data: two weighted lists of terms over a common interval.
//! Closed forms and sum identities compare integrals on a single grid. Order
//! replacement instances use the two-scale resolution, since on a shared grid
//! the forward and reversed sums coincide term by term.

use std::fmt;

use serde::Serialize;

use crate::domain::{
    Anchor, DriverKind, IntegralSpec, IntegrandKind, Interval, KernelExpr, KernelIntegralSpec, MultiIndex,
    Orientation, WeightExpr,
};
use crate::error::{Error, Result};
use crate::paths::MartingaleModel;

/// Fine cells per coarse cell for two-scale terms.
pub const DEFAULT_REFINE: usize = 8;

/// Octaves of the rough weight, enough to stay rough below the finest grid
/// used in sweeps.
pub const ROUGH_OCTAVES: u32 = 24;

/// Largest multiplicity accepted by [`expand_sum_family`].
pub const MAX_SUM_FAMILY_K: usize = 6;

/// Origin of an identity. The keys form the bibliography that citations
/// resolve against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    MotivatingProduct,
    ClosedForm,
    ClosedFormFamily,
    SumIdentity,
    SumFamily,
    RiemannReference,
    OrderReplacement,
    KernelOrderReplacement,
    KernelTail,
    WeightCommutation,
    NestedReplacement,
    MartingaleOrderReplacement,
    MartingaleKernelOrderReplacement,
    MartingaleWeightCommutation,
    MartingaleNestedReplacement,
}

impl Source {
    pub const ALL: [Source; 15] = [
        Source::MotivatingProduct,
        Source::ClosedForm,
        Source::ClosedFormFamily,
        Source::SumIdentity,
        Source::SumFamily,
        Source::RiemannReference,
        Source::OrderReplacement,
        Source::KernelOrderReplacement,
        Source::KernelTail,
        Source::WeightCommutation,
        Source::NestedReplacement,
        Source::MartingaleOrderReplacement,
        Source::MartingaleKernelOrderReplacement,
        Source::MartingaleWeightCommutation,
        Source::MartingaleNestedReplacement,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Source::MotivatingProduct => "motivating-product",
            Source::ClosedForm => "closed-form",
            Source::ClosedFormFamily => "closed-form-family",
            Source::SumIdentity => "sum-identity",
            Source::SumFamily => "sum-family",
            Source::RiemannReference => "riemann-reference",
            Source::OrderReplacement => "order-replacement",
            Source::KernelOrderReplacement => "kernel-order-replacement",
            Source::KernelTail => "kernel-tail",
            Source::WeightCommutation => "weight-commutation",
            Source::NestedReplacement => "nested-replacement",
            Source::MartingaleOrderReplacement => "martingale-order-replacement",
            Source::MartingaleKernelOrderReplacement => "martingale-kernel-order-replacement",
            Source::MartingaleWeightCommutation => "martingale-weight-commutation",
            Source::MartingaleNestedReplacement => "martingale-nested-replacement",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Source::MotivatingProduct => "product of a Wiener integral and a time integral split into two iterated integrals",
            Source::ClosedForm => "explicit reduction of a multi-index integral to lower multiplicity",
            Source::ClosedFormFamily => "multi-index reductions indexed by the multiplicity k",
            Source::SumIdentity => "sum over multi-indices with fixed weight equals a power of (T-t) times J_(1..1)",
            Source::SumFamily => "the sum identity for general k and number of ones m",
            Source::RiemannReference => "deterministic double integral, baseline for convergence rates",
            Source::OrderReplacement => "iterated Ito integral equals its order-reversed form",
            Source::KernelOrderReplacement => "kernel integral J[xi, Phi] equals its order-reversed form",
            Source::KernelTail => "kernel integral without integrand equals its reversed tail form",
            Source::WeightCommutation => "a nonrandom factor moves between the reversed tail and the integrand",
            Source::NestedReplacement => "nested order replacement with an inner integral as integrand",
            Source::MartingaleOrderReplacement => "order replacement with a square-integrable martingale driver",
            Source::MartingaleKernelOrderReplacement => "kernel order replacement with a martingale driver",
            Source::MartingaleWeightCommutation => "weight commutation with a martingale driver",
            Source::MartingaleNestedReplacement => "nested order replacement with a martingale driver",
        }
    }

    pub fn from_key(key: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|s| s.key() == key)
    }

    pub fn is_martingale(&self) -> bool {
        matches!(
            self,
            Source::MartingaleOrderReplacement
                | Source::MartingaleKernelOrderReplacement
                | Source::MartingaleWeightCommutation
                | Source::MartingaleNestedReplacement
        )
    }

    /// Sources whose entries are read off the explicit list of reductions
    /// and sum identities.
    pub fn is_listed_equality(&self) -> bool {
        matches!(self, Source::ClosedForm | Source::ClosedFormFamily | Source::SumIdentity | Source::SumFamily)
    }
}

/// Resolves `"<source-key>:<entry>"` against the bibliography.
pub fn resolve_citation(citation: &str) -> Option<Source> {
    let (key, entry) = citation.split_once(':')?;
    if entry.is_empty() {
        return None;
    }
    Source::from_key(key)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Iterated { spec: IntegralSpec },
    Kernel { spec: KernelIntegralSpec },
    Constant { value: f64 },
}

impl Term {
    fn interval(&self) -> Option<Interval> {
        match self {
            Term::Iterated { spec } => Some(spec.interval()),
            Term::Kernel { spec } => Some(spec.interval()),
            Term::Constant { .. } => None,
        }
    }

    fn drivers(&self) -> Vec<DriverKind> {
        match self {
            Term::Iterated { spec } => {
                let mut d = spec.drivers().to_vec();
                d.extend(spec.integrand().driver());
                d
            }
            Term::Kernel { spec } => {
                let mut d = spec.drivers().to_vec();
                d.extend(spec.integrand().and_then(IntegrandKind::driver));
                d
            }
            Term::Constant { .. } => vec![],
        }
    }

    pub fn multiplicity(&self) -> usize {
        match self {
            Term::Iterated { spec } => spec.drivers().len(),
            Term::Kernel { spec } => spec.drivers().len(),
            Term::Constant { .. } => 0,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iterated { spec } => write!(f, "{spec}"),
            Term::Kernel { spec } => write!(f, "{spec}"),
            Term::Constant { value } => write!(f, "{value}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    /// Every layer on the verification grid.
    Grid,
    /// Outer sum on the verification grid, nested part `refine` times finer.
    Split { refine: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedTerm {
    pub coefficient: f64,
    pub term: Term,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Requirements {
    /// Number of Wiener components.
    pub dims: usize,
    /// Martingale drivers, indexed by `DriverKind::Martingale(id)`.
    pub martingales: Vec<MartingaleModel>,
}

impl Requirements {
    pub fn has_jumps(&self) -> bool {
        self.martingales.iter().any(MartingaleModel::has_jumps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identity {
    id: String,
    source: Source,
    citation: String,
    lhs: Vec<WeightedTerm>,
    rhs: Vec<WeightedTerm>,
    requirements: Requirements,
    interval: Interval,
    refine: usize,
}

impl Identity {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        lhs: Vec<WeightedTerm>,
        rhs: Vec<WeightedTerm>,
        martingales: Vec<MartingaleModel>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidSpec("identity id must be non-empty".into()));
        }
        if lhs.is_empty() || rhs.is_empty() {
            return Err(Error::InvalidSpec(format!("{id}: both sides need a term")));
        }
        let all = || lhs.iter().chain(&rhs);
        let mut intervals = all().filter_map(|t| t.term.interval());
        let interval = intervals
            .next()
            .ok_or_else(|| Error::InvalidSpec(format!("{id}: no integral term fixes the interval")))?;
        if intervals.any(|iv| iv != interval) {
            return Err(Error::InvalidSpec(format!("{id}: terms live on different intervals")));
        }
        let mut refine = 1;
        for t in all() {
            if let Resolution::Split { refine: r } = t.resolution {
                if r < 2 || (refine != 1 && refine != r) {
                    return Err(Error::InvalidSpec(format!("{id}: inconsistent refinement factors")));
                }
                if let Term::Kernel { spec } = &t.term {
                    if spec.kernel().separable_terms(spec.arity()).is_none() {
                        return Err(Error::InvalidSpec(format!("{id}: two-scale terms need separable kernels")));
                    }
                }
                refine = r;
            }
            if !t.coefficient.is_finite() {
                return Err(Error::InvalidSpec(format!("{id}: non-finite coefficient")));
            }
        }
        let mut dims = 0;
        for d in all().flat_map(|t| t.term.drivers()) {
            match d {
                DriverKind::Wiener(i) => dims = dims.max(i),
                DriverKind::Martingale(m) if m >= martingales.len() => {
                    return Err(Error::InvalidSpec(format!("{id}: martingale driver {m} has no model")));
                }
                _ => {}
            }
        }
        martingales.iter().try_for_each(MartingaleModel::validate)?;
        if dims == 0 && martingales.is_empty() {
            dims = 1;
        }
        let citation = format!("{}:{id}", source.key());
        Ok(Self { id, source, citation, lhs, rhs, requirements: Requirements { dims, martingales }, interval, refine })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn citation(&self) -> &str {
        &self.citation
    }

    pub fn lhs(&self) -> &[WeightedTerm] {
        &self.lhs
    }

    pub fn rhs(&self) -> &[WeightedTerm] {
        &self.rhs
    }

    pub fn requirements(&self) -> &Requirements {
        &self.requirements
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// Fine cells per verification cell; 1 when every term is on the grid.
    pub fn refine(&self) -> usize {
        self.refine
    }

    /// Largest multiplicity among the terms.
    pub fn multiplicity(&self) -> usize {
        self.lhs.iter().chain(&self.rhs).map(|t| t.term.multiplicity()).max().unwrap_or(0)
    }

    /// Distinct drivers used on either side, in first-seen order.
    pub fn drivers(&self) -> Vec<DriverKind> {
        let mut out = Vec::new();
        for d in self.lhs.iter().chain(&self.rhs).flat_map(|t| t.term.drivers()) {
            if !out.contains(&d) {
                out.push(d);
            }
        }
        out
    }

    /// One-line rendering of both sides.
    pub fn structure(&self) -> String {
        let side = |ts: &[WeightedTerm]| {
            ts.iter()
                .map(|t| {
                    let tag = match t.resolution {
                        Resolution::Grid => String::new(),
                        Resolution::Split { refine } => format!("~{refine}"),
                    };
                    if t.coefficient == 1.0 {
                        format!("{}{tag}", t.term)
                    } else {
                        format!("{}*{}{tag}", t.coefficient, t.term)
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ")
        };
        format!("{} = {}", side(&self.lhs), side(&self.rhs))
    }
}

fn grid(coefficient: f64, term: Term) -> WeightedTerm {
    WeightedTerm { coefficient, term, resolution: Resolution::Grid }
}

fn split(coefficient: f64, term: Term) -> WeightedTerm {
    WeightedTerm { coefficient, term, resolution: Resolution::Split { refine: DEFAULT_REFINE } }
}

fn iterated(spec: IntegralSpec) -> Term {
    Term::Iterated { spec }
}

fn kernel_term(spec: KernelIntegralSpec) -> Term {
    Term::Kernel { spec }
}

const W: DriverKind = DriverKind::Wiener(1);
const DT: DriverKind = DriverKind::Time;
const M0: DriverKind = DriverKind::Martingale(0);

fn one() -> WeightExpr {
    WeightExpr::one()
}

fn since(a: f64) -> WeightExpr {
    WeightExpr::since_start(a)
}

fn until(a: f64) -> WeightExpr {
    WeightExpr::until_end(a)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

struct Builder {
    iv: Interval,
}

impl Builder {
    fn j(&self, bits: &str) -> Result<Term> {
        Ok(iterated(IntegralSpec::from_multi_index(&MultiIndex::parse(bits)?, self.iv)?))
    }

    fn ones(&self, m: usize) -> Result<Term> {
        self.j(&"1".repeat(m))
    }

    fn wiener_integral(&self, weight: WeightExpr) -> Result<Term> {
        Ok(iterated(IntegralSpec::single(weight, W, self.iv)?))
    }

    fn fwd(&self, integrand: IntegrandKind, weights: Vec<WeightExpr>, drivers: Vec<DriverKind>) -> Result<IntegralSpec> {
        IntegralSpec::forward(integrand, weights, drivers, self.iv)
    }

    fn kernel(&self, kernel: KernelExpr, drivers: Vec<DriverKind>) -> Result<Term> {
        Ok(kernel_term(KernelIntegralSpec::new(kernel, None, drivers, Orientation::Forward, self.iv)?))
    }

    fn reversal(&self, id: &str, source: Source, forward: IntegralSpec, models: Vec<MartingaleModel>) -> Result<Identity> {
        let reversed = forward.with_orientation(Orientation::Reversed)?;
        Identity::new(id, source, vec![split(1.0, iterated(forward))], vec![split(1.0, iterated(reversed))], models)
    }

    fn kernel_reversal(&self, id: &str, source: Source, forward: KernelIntegralSpec, models: Vec<MartingaleModel>) -> Result<Identity> {
        let reversed = forward.with_orientation(Orientation::Reversed)?;
        Identity::new(id, source, vec![split(1.0, kernel_term(forward))], vec![split(1.0, kernel_term(reversed))], models)
    }

    fn closed(&self, id: &str, lhs: Vec<WeightedTerm>, rhs: Vec<WeightedTerm>) -> Result<Identity> {
        Identity::new(id, Source::ClosedForm, lhs, rhs, vec![])
    }
}

/// `(s - T)^n` written through `(T - s)^n`.
fn power_from_end(n: u32) -> (f64, WeightExpr) {
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    (sign, until(f64::from(n)))
}

fn closed_forms(b: &Builder) -> Result<Vec<Identity>> {
    let cos_end = WeightExpr::Cos { anchor: Anchor::End };
    let sin_end = WeightExpr::Sin { anchor: Anchor::End };
    let time_outer = |w: WeightExpr| b.fwd(IntegrandKind::One, vec![w], vec![DT, W]).map(iterated);
    let alpha = 2.0;
    let (pow_sign, pow_lhs) = power_from_end(2);
    let (pow_rhs_sign, pow_rhs) = power_from_end(3);
    let mut out = vec![
        b.closed("J10", vec![grid(1.0, b.j("10")?)], vec![grid(1.0, b.wiener_integral(until(1.0))?)])?,
        b.closed(
            "cos",
            vec![grid(1.0, time_outer(cos_end.clone())?)],
            vec![grid(1.0, b.wiener_integral(WeightExpr::sum(vec![(-1.0, sin_end.clone())]))?)],
        )?,
        b.closed(
            "sin",
            vec![grid(1.0, time_outer(sin_end)?)],
            vec![grid(1.0, b.wiener_integral(WeightExpr::sum(vec![(1.0, cos_end), (-1.0, one())]))?)],
        )?,
        b.closed(
            "exp",
            vec![grid(1.0, time_outer(WeightExpr::exp(alpha, Anchor::End))?)],
            vec![grid(
                1.0 / alpha,
                b.wiener_integral(WeightExpr::sum(vec![(1.0, one()), (-1.0, WeightExpr::exp(alpha, Anchor::End))]))?,
            )],
        )?,
        b.closed(
            "pow",
            vec![grid(1.0, time_outer(WeightExpr::sum(vec![(pow_sign, pow_lhs)]))?)],
            vec![grid(-pow_rhs_sign / (alpha + 1.0), b.wiener_integral(pow_rhs)?)],
        )?,
        b.closed("J100", vec![grid(1.0, b.j("100")?)], vec![grid(0.5, b.wiener_integral(until(2.0))?)])?,
        b.closed(
            "J010",
            vec![grid(1.0, b.j("010")?)],
            vec![grid(1.0, b.wiener_integral(WeightExpr::product(vec![since(1.0), until(1.0)]))?)],
        )?,
        b.closed(
            "J110",
            vec![grid(1.0, b.j("110")?)],
            vec![grid(1.0, iterated(b.fwd(IntegrandKind::One, vec![until(1.0)], vec![W, W])?))],
        )?,
        b.closed("J101", vec![grid(1.0, b.j("101")?)], vec![grid(1.0, b.kernel(KernelExpr::diff_pow(0, 1, 1.0), vec![W, W])?)])?,
        b.closed(
            "J1011",
            vec![grid(1.0, b.j("1011")?)],
            vec![grid(1.0, b.kernel(KernelExpr::diff_pow(1, 2, 1.0), vec![W, W, W])?)],
        )?,
        b.closed(
            "J1101",
            vec![grid(1.0, b.j("1101")?)],
            vec![grid(1.0, b.kernel(KernelExpr::diff_pow(0, 1, 1.0), vec![W, W, W])?)],
        )?,
        b.closed(
            "J1110",
            vec![grid(1.0, b.j("1110")?)],
            vec![grid(1.0, iterated(b.fwd(IntegrandKind::One, vec![until(1.0), one()], vec![W, W, W])?))],
        )?,
        b.closed(
            "J1100",
            vec![grid(1.0, b.j("1100")?)],
            vec![grid(0.5, iterated(b.fwd(IntegrandKind::One, vec![until(2.0)], vec![W, W])?))],
        )?,
        b.closed("J1001", vec![grid(1.0, b.j("1001")?)], vec![grid(0.5, b.kernel(KernelExpr::diff_pow(0, 1, 2.0), vec![W, W])?)])?,
        b.closed(
            "J1010",
            vec![grid(1.0, b.j("1010")?)],
            vec![grid(
                1.0,
                b.kernel(
                    KernelExpr::product(vec![
                        KernelExpr::separable(vec![until(1.0), one()]),
                        KernelExpr::diff_pow(0, 1, 1.0),
                    ]),
                    vec![W, W],
                )?,
            )],
        )?,
        b.closed(
            "J0110",
            vec![grid(1.0, b.j("0110")?)],
            vec![grid(
                1.0,
                iterated(b.fwd(IntegrandKind::Deterministic { weight: since(1.0) }, vec![until(1.0)], vec![W, W])?),
            )],
        )?,
        b.closed(
            "J0101",
            vec![grid(1.0, b.j("0101")?)],
            vec![grid(
                1.0,
                b.kernel(
                    KernelExpr::product(vec![KernelExpr::diff_pow(0, 1, 1.0), KernelExpr::separable(vec![one(), since(1.0)])]),
                    vec![W, W],
                )?,
            )],
        )?,
        b.closed(
            "J0010",
            vec![grid(1.0, b.j("0010")?)],
            vec![grid(0.5, b.wiener_integral(WeightExpr::product(vec![until(1.0), since(2.0)]))?)],
        )?,
        b.closed(
            "J0100",
            vec![grid(1.0, b.j("0100")?)],
            vec![grid(0.5, b.wiener_integral(WeightExpr::product(vec![until(2.0), since(1.0)]))?)],
        )?,
        b.closed("J1000", vec![grid(1.0, b.j("1000")?)], vec![grid(1.0 / 6.0, b.wiener_integral(until(3.0))?)])?,
    ];

    let family = |id: String, lhs: Term, rhs: WeightedTerm| -> Result<Identity> {
        Identity::new(id, Source::ClosedFormFamily, vec![grid(1.0, lhs)], vec![rhs], vec![])
    };
    for k in 2..=5usize {
        let bits = format!("1{}", "0".repeat(k - 1));
        let rhs = grid(1.0 / factorial(k - 1), b.wiener_integral(until((k - 1) as f64))?);
        out.push(family(format!("family-10n-k{k}"), b.j(&bits)?, rhs)?);
    }
    for k in 3..=5usize {
        let bits = format!("11{}", "0".repeat(k - 2));
        let rhs = grid(
            1.0 / factorial(k - 2),
            iterated(b.fwd(IntegrandKind::One, vec![until((k - 2) as f64)], vec![W, W])?),
        );
        out.push(family(format!("family-110n-k{k}"), b.j(&bits)?, rhs)?);

        let bits = format!("{}0", "1".repeat(k - 1));
        let mut weights = vec![until(1.0)];
        weights.extend(std::iter::repeat_n(one(), k - 3));
        let rhs = grid(1.0, iterated(b.fwd(IntegrandKind::One, weights, vec![W; k - 1])?));
        out.push(family(format!("family-1n0-k{k}"), b.j(&bits)?, rhs)?);

        let bits = format!("1{}1", "0".repeat(k - 2));
        let rhs = grid(1.0 / factorial(k - 2), b.kernel(KernelExpr::diff_pow(0, 1, (k - 2) as f64), vec![W, W])?);
        out.push(family(format!("family-10n1-k{k}"), b.j(&bits)?, rhs)?);

        let bits = format!("10{}", "1".repeat(k - 2));
        let rhs = grid(1.0, b.kernel(KernelExpr::diff_pow(k - 3, k - 2, 1.0), vec![W; k - 1])?);
        out.push(family(format!("family-101n-k{k}"), b.j(&bits)?, rhs)?);

        let bits = format!("{}01", "1".repeat(k - 2));
        let rhs = grid(1.0, b.kernel(KernelExpr::diff_pow(0, 1, 1.0), vec![W; k - 1])?);
        out.push(family(format!("family-1n01-k{k}"), b.j(&bits)?, rhs)?);
    }
    Ok(out)
}

fn bit_strings(k: usize, m: usize) -> Vec<String> {
    (0u32..(1 << k))
        .filter(|mask| mask.count_ones() as usize == m)
        .map(|mask| (0..k).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect())
        .collect()
}

fn sum_identity(b: &Builder, id: String, source: Source, k: usize, m: usize) -> Result<Identity> {
    let lhs = bit_strings(k, m).iter().map(|bits| Ok(grid(1.0, b.j(bits)?))).collect::<Result<Vec<_>>>()?;
    let coef = b.iv.length().powi((k - m) as i32) / factorial(k - m);
    Identity::new(id, source, lhs, vec![grid(coef, b.ones(m)?)], vec![])
}

/// `Σ_{|l| = m} J_{(l_1 … l_k)} = (T-t)^{k-m} / (k-m)! · J_{(1 … 1)}` with
/// `m` ones on the right.
pub fn expand_sum_family(k: usize, m: usize, interval: Interval) -> Result<Identity> {
    if k == 0 || k > MAX_SUM_FAMILY_K {
        return Err(Error::InvalidArgument(format!("k must be in 1..={MAX_SUM_FAMILY_K}, got {k}")));
    }
    if m == 0 || m > k {
        return Err(Error::InvalidArgument(format!("m must be in 1..={k}, got {m}")));
    }
    sum_identity(&Builder { iv: interval }, format!("sum-k{k}-m{m}"), Source::SumFamily, k, m)
}

fn sum_identities(b: &Builder) -> Result<Vec<Identity>> {
    let mut out = Vec::new();
    for (id, k, m) in [("sum2", 2, 1), ("sum3-m2", 3, 2), ("sum3", 3, 1), ("sum4-m2", 4, 2), ("sum4", 4, 1), ("sum4-m3", 4, 3)] {
        out.push(sum_identity(b, id.to_string(), Source::SumIdentity, k, m)?);
    }
    for k in 2..=5 {
        out.push(sum_identity(b, format!("sum-one-k{k}"), Source::SumFamily, k, 1)?);
    }
    for k in 2..=5 {
        out.push(sum_identity(b, format!("sum-zero-k{k}"), Source::SumFamily, k, k - 1)?);
    }
    for k in 2..=5 {
        for m in 1..=k {
            out.push(expand_sum_family(k, m, b.iv)?);
        }
    }
    Ok(out)
}

fn reference_entries(b: &Builder) -> Result<Vec<Identity>> {
    let product = Identity::new(
        "rrr111",
        Source::MotivatingProduct,
        vec![grid(b.iv.length(), b.j("1")?)],
        vec![
            grid(1.0, b.wiener_integral(since(1.0))?),
            grid(1.0, iterated(b.fwd(IntegrandKind::WienerIncrement { component: 1 }, vec![], vec![DT])?)),
        ],
        vec![],
    )?;
    let riemann = Identity::new(
        "J00",
        Source::RiemannReference,
        vec![grid(1.0, b.j("00")?)],
        vec![grid(1.0, Term::Constant { value: 0.5 * b.iv.length().powi(2) })],
        vec![],
    )?;
    Ok(vec![product, riemann])
}

fn wiener_replacements(b: &Builder) -> Result<Vec<Identity>> {
    let f1 = || IntegrandKind::WienerValue { component: 1 };
    let cos_start = WeightExpr::Cos { anchor: Anchor::Start };
    let exp_start = WeightExpr::exp(1.0, Anchor::Start);
    let mut out = Vec::new();
    let k1 = |id: &str, outer: DriverKind, inner: DriverKind| -> Result<Identity> {
        b.reversal(id, Source::OrderReplacement, b.fwd(f1(), vec![cos_start.clone()], vec![outer, inner])?, vec![])
    };
    out.push(k1("thm1-case1", W, W)?);
    out.push(k1("thm1-case2", W, DT)?);
    out.push(k1("thm1-case3", DT, W)?);
    out.push(k1("thm1-case4", DT, DT)?);
    // A Hölder-1/2 outer weight makes the outer df layer as rough as a
    // Wiener path; with a smooth weight this case converges at order two.
    out.push(b.reversal(
        "thm1-case2-rough",
        Source::OrderReplacement,
        b.fwd(f1(), vec![WeightExpr::Lacunary { octaves: ROUGH_OCTAVES }], vec![W, DT])?,
        vec![],
    )?);
    out.push(b.reversal(
        "thm1-det",
        Source::OrderReplacement,
        b.fwd(IntegrandKind::Deterministic { weight: exp_start.clone() }, vec![until(1.0)], vec![DT, DT])?,
        vec![],
    )?);
    out.push(b.reversal("thm1-k2", Source::OrderReplacement, b.fwd(IntegrandKind::One, vec![until(1.0), one()], vec![DT, W, W])?, vec![])?);
    out.push(b.reversal(
        "thm1-k3",
        Source::OrderReplacement,
        b.fwd(f1(), vec![one(), cos_start.clone(), since(1.0)], vec![W, DT, W, W])?,
        vec![],
    )?);
    out.push(b.reversal(
        "thm1-mixed",
        Source::OrderReplacement,
        b.fwd(IntegrandKind::WienerValue { component: 2 }, vec![exp_start.clone()], vec![DriverKind::Wiener(2), W])?,
        vec![],
    )?);

    let kspec = |kernel: KernelExpr, xi: Option<IntegrandKind>, drivers: Vec<DriverKind>| {
        KernelIntegralSpec::new(kernel, xi, drivers, Orientation::Forward, b.iv)
    };
    out.push(b.kernel_reversal(
        "thm2-k2",
        Source::KernelOrderReplacement,
        kspec(KernelExpr::separable(vec![exp_start.clone()]), Some(f1()), vec![W, W])?,
        vec![],
    )?);
    out.push(b.kernel_reversal(
        "thm2-k3",
        Source::KernelOrderReplacement,
        kspec(KernelExpr::diff_pow(0, 1, 1.0), Some(IntegrandKind::One), vec![W, W, W])?,
        vec![],
    )?);
    out.push(b.kernel_reversal(
        "kernel-tail-k2",
        Source::KernelTail,
        kspec(KernelExpr::diff_pow(0, 1, 2.0), None, vec![W, W])?,
        vec![],
    )?);
    out.push(b.kernel_reversal(
        "kernel-tail-k3",
        Source::KernelTail,
        kspec(
            KernelExpr::product(vec![
                KernelExpr::diff_pow(0, 2, 1.0),
                KernelExpr::separable(vec![one(), cos_start.clone(), one()]),
            ]),
            None,
            vec![W, DT, W],
        )?,
        vec![],
    )?);

    let h = exp_start.clone();
    out.push(weight_commutation(b, "thm3-k1", Source::WeightCommutation, f1(), h.clone(), vec![one()], vec![W, W], vec![])?);
    out.push(weight_commutation(
        b,
        "thm3-k2",
        Source::WeightCommutation,
        IntegrandKind::One,
        WeightExpr::sum(vec![(1.0, until(1.0)), (1.0, one())]),
        vec![cos_start.clone(), one()],
        vec![DT, W, W],
        vec![],
    )?);
    out.push(nested(b, "thm4-k1", Source::NestedReplacement, W, h.clone(), vec![one()], vec![DT, W], vec![])?);
    out.push(nested(b, "thm4-k1-dt", Source::NestedReplacement, DT, h, vec![cos_start], vec![W, W], vec![])?);
    Ok(out)
}

/// `∫ φ dw h(τ) Î_{T,τ} = ∫ φ h dw Î_{T,τ}`, both on the grid.
#[allow(clippy::too_many_arguments)]
fn weight_commutation(
    b: &Builder,
    id: &str,
    source: Source,
    phi: IntegrandKind,
    h: WeightExpr,
    weights: Vec<WeightExpr>,
    drivers: Vec<DriverKind>,
    models: Vec<MartingaleModel>,
) -> Result<Identity> {
    let scaled = match &phi {
        IntegrandKind::One => IntegrandKind::Deterministic { weight: h.clone() },
        IntegrandKind::WienerValue { component } => IntegrandKind::WeightedPath { weight: h.clone(), component: *component },
        IntegrandKind::MartingaleValue { id } => IntegrandKind::WeightedMartingale { weight: h.clone(), id: *id },
        other => return Err(Error::Unsupported(format!("weight commutation for integrand {other}"))),
    };
    let lhs = IntegralSpec::new(phi, weights.clone(), drivers.clone(), Orientation::ReversedPostFactor { factor: h }, b.iv)?;
    let rhs = IntegralSpec::new(scaled, weights, drivers, Orientation::Reversed, b.iv)?;
    Identity::new(id, source, vec![grid(1.0, iterated(lhs))], vec![grid(1.0, iterated(rhs))], models)
}

/// `∫ h(t_1) ∫ 1 dw' dw_{t_1} Î_{T,t_1} = ∫ 1 dw' ∫_τ h dw Î` with `drivers`
/// ending in `dw` and `inner` playing `dw'`.
#[allow(clippy::too_many_arguments)]
fn nested(
    b: &Builder,
    id: &str,
    source: Source,
    inner: DriverKind,
    h: WeightExpr,
    weights: Vec<WeightExpr>,
    drivers: Vec<DriverKind>,
    models: Vec<MartingaleModel>,
) -> Result<Identity> {
    let rho = match inner {
        DriverKind::Time => IntegrandKind::Deterministic { weight: WeightExpr::product(vec![h.clone(), since(1.0)]) },
        DriverKind::Wiener(component) => IntegrandKind::WeightedPath { weight: h.clone(), component },
        DriverKind::Martingale(id) => IntegrandKind::WeightedMartingale { weight: h.clone(), id },
    };
    let lhs = IntegralSpec::new(rho, weights.clone(), drivers.clone(), Orientation::Reversed, b.iv)?;
    let mut w2 = weights;
    w2.push(h);
    let mut d2 = drivers;
    d2.push(inner);
    let rhs = IntegralSpec::new(IntegrandKind::One, w2, d2, Orientation::Reversed, b.iv)?;
    Identity::new(id, source, vec![split(1.0, iterated(lhs))], vec![split(1.0, iterated(rhs))], models)
}

fn martingale_replacements(b: &Builder) -> Result<Vec<Identity>> {
    let models = [
        ("wiener", MartingaleModel::ScaledWiener { sigma: 2.0 }),
        ("poisson", MartingaleModel::CompensatedPoisson { rate: 2.0 }),
    ];
    let m_value = || IntegrandKind::MartingaleValue { id: 0 };
    let cos_start = WeightExpr::Cos { anchor: Anchor::Start };
    let exp_start = WeightExpr::exp(1.0, Anchor::Start);
    let mut out = Vec::new();
    for (name, model) in models {
        let ms = || vec![model];
        out.push(b.reversal(
            &format!("thm5-{name}-k1"),
            Source::MartingaleOrderReplacement,
            b.fwd(m_value(), vec![one()], vec![M0, M0])?,
            ms(),
        )?);
        out.push(b.reversal(
            &format!("thm5-{name}-k2"),
            Source::MartingaleOrderReplacement,
            b.fwd(m_value(), vec![cos_start.clone(), one()], vec![DT, M0, M0])?,
            ms(),
        )?);
        out.push(Identity::new(
            format!("thm5-{name}-closed"),
            Source::MartingaleOrderReplacement,
            vec![grid(1.0, iterated(b.fwd(IntegrandKind::One, vec![one()], vec![DT, M0])?))],
            vec![grid(1.0, iterated(IntegralSpec::single(until(1.0), M0, b.iv)?))],
            ms(),
        )?);
        out.push(b.kernel_reversal(
            &format!("thm6-{name}-k2"),
            Source::MartingaleKernelOrderReplacement,
            KernelIntegralSpec::new(
                KernelExpr::separable(vec![exp_start.clone()]),
                Some(m_value()),
                vec![M0, M0],
                Orientation::Forward,
                b.iv,
            )?,
            ms(),
        )?);
        out.push(weight_commutation(
            b,
            &format!("thm7-{name}-k1"),
            Source::MartingaleWeightCommutation,
            m_value(),
            exp_start.clone(),
            vec![one()],
            vec![M0, M0],
            ms(),
        )?);
        out.push(nested(
            b,
            &format!("thm8-{name}-k1"),
            Source::MartingaleNestedReplacement,
            M0,
            exp_start.clone(),
            vec![one()],
            vec![DT, M0],
            ms(),
        )?);
    }
    Ok(out)
}

/// Every catalogued identity over `interval`.
pub fn catalog_for(interval: Interval) -> Result<Vec<Identity>> {
    let iv = Interval::new(interval.start, interval.end)?;
    let b = Builder { iv };
    let mut out = reference_entries(&b)?;
    out.extend(closed_forms(&b)?);
    out.extend(sum_identities(&b)?);
    out.extend(wiener_replacements(&b)?);
    out.extend(martingale_replacements(&b)?);
    Ok(out)
}

/// The catalog on `[0, 1]`.
pub fn catalog_all() -> Vec<Identity> {
    catalog_for(Interval::unit()).expect("catalog on the unit interval is well formed")
}

pub fn lookup(id: &str, interval: Interval) -> Result<Identity> {
    catalog_for(interval)?
        .into_iter()
        .find(|i| i.id() == id)
        .ok_or_else(|| Error::UnknownIdentity(id.to_string()))
}

/// Entries whose id matches a shell-style glob.
pub fn filter(pattern: &str, interval: Interval) -> Result<Vec<Identity>> {
    let glob = glob::Pattern::new(pattern).map_err(|e| Error::InvalidArgument(format!("bad pattern {pattern:?}: {e}")))?;
    let hits: Vec<_> = catalog_for(interval)?.into_iter().filter(|i| glob.matches(i.id())).collect();
    if hits.is_empty() {
        return Err(Error::UnknownIdentity(pattern.to_string()));
    }
    Ok(hits)
}

#[derive(Debug, Serialize)]
pub struct BibliographyEntry {
    pub key: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Serialize)]
pub struct CatalogExport<'a> {
    pub schema_version: u32,
    pub bibliography: Vec<BibliographyEntry>,
    pub identities: &'a [Identity],
}

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

pub fn export(identities: &[Identity]) -> CatalogExport<'_> {
    CatalogExport {
        schema_version: CATALOG_SCHEMA_VERSION,
        bibliography: Source::ALL.iter().map(|s| BibliographyEntry { key: s.key(), description: s.description() }).collect(),
        identities,
    }
}
