//! Acceptance harness: one pass/fail line per criterion, non-zero exit if
//! any criterion fails. Every tolerance is pinned in the constants below.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use ito_reorder::catalog::{catalog_for, expand_sum_family, lookup, Identity, Term, MAX_SUM_FAMILY_K};
use ito_reorder::domain::{
    DriverKind, IntegralSpec, IntegrandKind, Interval, KernelExpr, MultiIndex, Orientation, Partition, WeightExpr,
};
use ito_reorder::eval::{eval_forward, eval_kernel_forward, eval_kernel_reversed, eval_reversed, forward_sum, reversed_sum};
use ito_reorder::mc::{check_identity, convergence_sweep, covariance_experiment, EnvelopePolicy, Verdict};
use ito_reorder::paths::PathSampler;
use ito_reorder::report::{RunConfig, VerifyDocument};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{brute_iterated, brute_kernel, integrand_pool, pick, random_kernel, weight_pool, DRIVER_POOL};

const SEED: u64 = 20_241_016;

const SUITE_STEPS: usize = 1024;
const SUITE_PATHS: usize = 10_000;

const SWEEP_STEPS: [usize; 4] = [256, 512, 1024, 2048];
const SWEEP_PATHS: usize = 10_000;
const STOCHASTIC_BAND: (f64, f64) = (-1.3, -0.7);
const DETERMINISTIC_BAND: (f64, f64) = (-2.3, -1.7);
const MIN_SWEEP_IDENTITIES: usize = 5;

const MOMENT_PATHS: usize = 100_000;
const MOMENT_STEPS: usize = 2048;
const Z_LIMIT: f64 = 4.0;

const COVARIANCE_STEPS: usize = 512;
const COVARIANCE_PATHS: usize = 100_000;

const MARTINGALE_STEPS: usize = 2048;
const MARTINGALE_PATHS: usize = 10_000;

const EXCHANGE_TRIALS: usize = 1000;
const EXCHANGE_MAX_K: usize = 3;
const EXCHANGE_MAX_N: usize = 6;

const BRUTE_PATHS: usize = 100;
const BRUTE_MAX_N: usize = 64;
const BRUTE_MAX_K: usize = 3;
const BRUTE_REL_TOL: f64 = 1e-10;

const THREADS_A: usize = 4;
const THREADS_B: usize = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

fn unit() -> Interval {
    Interval::unit()
}

fn suite() -> Vec<Identity> {
    catalog_for(unit()).expect("catalog").into_iter().filter(|i| !i.source().is_martingale()).collect()
}

fn run_suite(threads: usize) -> (Vec<Verdict>, String) {
    let ids = suite();
    let policy = EnvelopePolicy::default();
    let verdicts = in_pool(threads, || {
        ids.iter().map(|id| check_identity(id, SUITE_STEPS, SUITE_PATHS, SEED, &policy).expect("verification runs")).collect::<Vec<_>>()
    });
    let config = RunConfig {
        command: "verify".into(),
        identity: "*".into(),
        t: 0.0,
        end: 1.0,
        steps: vec![SUITE_STEPS],
        paths: SUITE_PATHS,
        seed: SEED,
    };
    let json = VerifyDocument::new(config, verdicts.clone()).to_json();
    (verdicts, json)
}

fn failures(verdicts: &[Verdict]) -> Vec<String> {
    verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} (ms {:.3e}, envelope {:.3e}, scale bound {:.3e})", v.report.identity_id, v.report.ms_error, v.envelope, v.scale_bound))
        .collect()
}

fn criterion_suite(verdicts: &[Verdict]) -> Outcome {
    let failed = failures(verdicts);
    outcome(
        failed.is_empty() && !verdicts.is_empty(),
        format!(
            "{}/{} entries within the envelope at N={SUITE_STEPS} M={SUITE_PATHS} seed={SEED}{}",
            verdicts.len() - failed.len(),
            verdicts.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_convergence() -> Outcome {
    // Driver cases by (outer, inner) layer: df·df, df·dt, dt·df, dt·dt.
    let cases: [(&str, (f64, f64)); 6] = [
        ("thm1-case1", STOCHASTIC_BAND),
        ("thm1-case2-rough", STOCHASTIC_BAND),
        ("thm1-case3", STOCHASTIC_BAND),
        ("thm1-k2", STOCHASTIC_BAND),
        ("thm1-case4", DETERMINISTIC_BAND),
        ("J00", DETERMINISTIC_BAND),
    ];
    let mut parts = Vec::new();
    let mut pass = cases.len() >= MIN_SWEEP_IDENTITIES;
    for (id, (lo, hi)) in cases {
        let r = convergence_sweep(&lookup(id, unit()).expect("catalog entry"), &SWEEP_STEPS, SWEEP_PATHS, SEED).expect("sweep runs");
        let ok = r.slope.is_some_and(|s| (lo..=hi).contains(&s));
        pass &= ok;
        parts.push(format!("{id} {:.3} in [{lo}, {hi}] {}", r.slope.unwrap_or(f64::NAN), if ok { "ok" } else { "FAIL" }));
    }
    // Reported but not counted: a smooth outer weight in the df·dt case
    // converges at order two.
    let smooth = convergence_sweep(&lookup("thm1-case2", unit()).expect("catalog entry"), &SWEEP_STEPS, SWEEP_PATHS, SEED).expect("sweep runs");
    parts.push(format!("(not counted: thm1-case2 smooth weight {:.3})", smooth.slope.unwrap_or(f64::NAN)));
    outcome(pass, format!("M={SWEEP_PATHS}: {}", parts.join("; ")))
}

/// `∫_t^T g(s) ds` by composite Simpson.
fn simpson(g: impl Fn(f64) -> f64, iv: Interval) -> f64 {
    let n = 2000;
    let h = iv.length() / n as f64;
    let mut acc = g(iv.start) + g(iv.end);
    for i in 1..n {
        acc += g(iv.start + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn criterion_moments() -> Outcome {
    let iv = unit();
    let w = DriverKind::Wiener(1);
    let j1 = IntegralSpec::from_multi_index(&MultiIndex::parse("1").unwrap(), iv).unwrap();
    let j11 = IntegralSpec::from_multi_index(&MultiIndex::parse("11").unwrap(), iv).unwrap();
    let weighted = IntegralSpec::single(WeightExpr::sum(vec![(0.5, WeightExpr::until_end(2.0))]), w, iv).unwrap();
    // Itô isometry: E(∫φ df)^2 = ∫ E φ_s^2 ds, applied once per layer.
    let oracles = [
        ("J1", simpson(|_| 1.0, iv)),
        ("J11", simpson(|s| s - iv.start, iv)),
        ("half (T-s)^2 df", simpson(|s| 0.25 * (iv.end - s).powi(4), iv)),
    ];
    let sampler = PathSampler::new(Arc::new(Partition::uniform(iv.start, iv.end, MOMENT_STEPS).unwrap()), 1, vec![], SEED).unwrap();
    let squares: Vec<[f64; 3]> = (0..MOMENT_PATHS as u64)
        .into_par_iter()
        .map(|p| {
            let path = sampler.path(p);
            [eval_forward(&j1, &path).unwrap(), eval_forward(&j11, &path).unwrap(), eval_forward(&weighted, &path).unwrap()]
                .map(|x| x * x)
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, (name, target)) in oracles.iter().enumerate() {
        let xs: Vec<f64> = squares.iter().map(|s| s[c]).collect();
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() / m.sqrt();
        let z = (mean - target) / sd;
        pass &= z.abs() <= Z_LIMIT;
        parts.push(format!("{name} {mean:.5} vs {target:.5} (z {z:.2})"));
    }
    outcome(pass, format!("M={MOMENT_PATHS} N={MOMENT_STEPS}: {}", parts.join("; ")))
}

fn criterion_covariance() -> Outcome {
    let one = KernelExpr::constant(1.0);
    let same = covariance_experiment(&one, &one, 1, 1, COVARIANCE_STEPS, COVARIANCE_PATHS, SEED, unit()).unwrap();
    let cross = covariance_experiment(&one, &one, 1, 2, COVARIANCE_STEPS, COVARIANCE_PATHS, SEED, unit()).unwrap();
    let quad_ok = (same.quadrature - 0.5).abs() < 1e-9;
    let pass = same.pass && cross.pass && quad_ok && cross.target == 0.0;
    outcome(
        pass,
        format!(
            "N={COVARIANCE_STEPS} M={COVARIANCE_PATHS}: i1=i2 {:.5} vs {:.5} (z {:.2}); i1!=i2 {:.5} vs 0 (z {:.2})",
            same.estimate, same.target, same.z_score, cross.estimate, cross.z_score
        ),
    )
}

fn criterion_martingale() -> Outcome {
    let policy = EnvelopePolicy::default();
    let ids: Vec<Identity> = catalog_for(unit()).unwrap().into_iter().filter(|i| i.source().is_martingale()).collect();
    let jumps = ids.iter().filter(|i| i.requirements().has_jumps()).count();
    let verdicts: Vec<Verdict> = ids.iter().map(|id| check_identity(id, MARTINGALE_STEPS, MARTINGALE_PATHS, SEED, &policy).unwrap()).collect();
    let failed = failures(&verdicts);
    let pass = failed.is_empty() && jumps > 0 && jumps < ids.len();
    outcome(
        pass,
        format!(
            "{}/{} entries ({} with jumps, factor {}) at N={MARTINGALE_STEPS} M={MARTINGALE_PATHS}{}",
            verdicts.len() - failed.len(),
            verdicts.len(),
            jumps,
            policy.jump_factor,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

/// Both nestings of `Σ a_{j_1 … j_k}` over `j_1 > j_2 > … > j_k`: outer
/// index first, or innermost index first with the others running upwards.
fn tensor_exchange(a: &[i64], k: usize, n: usize) -> (i64, i64) {
    let flat = |idx: &[usize]| idx.iter().fold(0, |acc, &j| acc * n + j);
    fn down(a: &[i64], flat: &dyn Fn(&[usize]) -> usize, idx: &mut Vec<usize>, upper: usize, k: usize) -> i64 {
        if idx.len() == k {
            return a[flat(idx)];
        }
        let mut s = 0;
        for j in 0..upper {
            idx.push(j);
            s += down(a, flat, idx, j, k);
            idx.pop();
        }
        s
    }
    fn up(a: &[i64], flat: &dyn Fn(&[usize]) -> usize, idx: &mut Vec<usize>, lower: usize, k: usize, n: usize) -> i64 {
        if idx.len() == k {
            let ordered: Vec<usize> = idx.iter().rev().copied().collect();
            return a[flat(&ordered)];
        }
        let mut s = 0;
        for j in lower..n {
            idx.push(j);
            s += up(a, flat, idx, j + 1, k, n);
            idx.pop();
        }
        s
    }
    (down(a, &flat, &mut Vec::new(), n, k), up(a, &flat, &mut Vec::new(), 0, k, n))
}

fn binomial(n: usize, k: usize) -> usize {
    let mut row = vec![1usize];
    for _ in 0..n {
        let mut next = vec![1usize; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row[k]
}

fn criterion_combinatorics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut tensor_bad = 0;
    let mut array_bad = 0;
    for _ in 0..EXCHANGE_TRIALS {
        let k = rng.random_range(1..=EXCHANGE_MAX_K);
        let n = rng.random_range(1..=EXCHANGE_MAX_N);
        let a: Vec<i64> = (0..n.pow(k as u32)).map(|_| rng.random_range(-1000..=1000)).collect();
        let (x, y) = tensor_exchange(&a, k, n);
        tensor_bad += usize::from(x != y);

        let mut int_row = || (0..=n).map(|_| f64::from(rng.random_range(-9i32..=9))).collect::<Vec<f64>>();
        let phi = int_row();
        let weights: Vec<Vec<f64>> = (0..k - 1).map(|_| int_row()).collect();
        let rows: Vec<Vec<f64>> = (0..k).map(|_| int_row()[..n].to_vec()).collect();
        let incs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let f = forward_sum(&phi, &weights, &incs);
        let r = reversed_sum(&phi, &weights, &incs, None);
        array_bad += usize::from(f.to_bits() != r.to_bits());
    }
    let mut count_bad = Vec::new();
    for k in 1..=MAX_SUM_FAMILY_K {
        for m in 1..=k {
            let id = expand_sum_family(k, m, unit()).unwrap();
            let mut seen: Vec<Vec<DriverKind>> = Vec::new();
            for t in id.lhs() {
                if let Term::Iterated { spec } = &t.term {
                    let ones = spec.drivers().iter().filter(|d| **d == DriverKind::Wiener(1)).count();
                    if ones != m || spec.drivers().len() != k || seen.contains(&spec.drivers().to_vec()) {
                        count_bad.push(format!("k{k}m{m} bad term"));
                    }
                    seen.push(spec.drivers().to_vec());
                }
            }
            if seen.len() != binomial(k, m) || id.lhs().len() != binomial(k, m) {
                count_bad.push(format!("k{k}m{m}: {} terms, expected {}", id.lhs().len(), binomial(k, m)));
            }
        }
    }
    let pass = tensor_bad == 0 && array_bad == 0 && count_bad.is_empty();
    outcome(
        pass,
        format!(
            "{EXCHANGE_TRIALS} trials k<={EXCHANGE_MAX_K} N<={EXCHANGE_MAX_N}: {tensor_bad} tensor and {array_bad} evaluator mismatches; C(k,m) counts for k<={MAX_SUM_FAMILY_K}: {}",
            if count_bad.is_empty() { "all exact".to_string() } else { count_bad.join(", ") }
        ),
    )
}

fn criterion_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x5eed);
    let iv = common::interval();
    let weights = weight_pool();
    let integrands = integrand_pool();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for p in 0..BRUTE_PATHS {
        let n = rng.random_range(2..=BRUTE_MAX_N);
        let path = PathSampler::new(Arc::new(Partition::uniform(iv.start, iv.end, n).unwrap()), 2, vec![], SEED).unwrap().path(p as u64);
        // Iterated integral with k weights, three orientations.
        let k = rng.random_range(0..=BRUTE_MAX_K);
        let phi = pick(&mut rng, &integrands);
        let ws: Vec<WeightExpr> = (0..k).map(|_| pick(&mut rng, &weights)).collect();
        let ds: Vec<DriverKind> = (0..=k).map(|_| pick(&mut rng, &DRIVER_POOL)).collect();
        let post = pick(&mut rng, &weights);
        let spec = IntegralSpec::forward(phi.clone(), ws.clone(), ds.clone(), iv).unwrap();
        let plain = brute_iterated(&phi, &ws, &ds, None, &path);
        let with_post = brute_iterated(&phi, &ws, &ds, Some(&post), &path);
        let rev = spec.with_orientation(Orientation::Reversed).unwrap();
        let rev_post = spec.with_orientation(Orientation::ReversedPostFactor { factor: post }).unwrap();
        worst = worst
            .max(plain.rel_error(eval_forward(&spec, &path).unwrap()))
            .max(plain.rel_error(eval_reversed(&rev, &path).unwrap()))
            .max(with_post.rel_error(eval_reversed(&rev_post, &path).unwrap()));
        checks += 3;
        // Kernel integral with up to k layers, with and without integrand.
        let layers = rng.random_range(1..=BRUTE_MAX_K);
        let ds: Vec<DriverKind> = (0..layers).map(|_| pick(&mut rng, &DRIVER_POOL)).collect();
        let xi: Option<IntegrandKind> = if layers >= 2 && rng.random_bool(0.5) { Some(pick(&mut rng, &integrands)) } else { None };
        let arity = if xi.is_some() { layers - 1 } else { layers };
        let kernel = random_kernel(&mut rng, arity);
        let b = brute_kernel(&kernel, xi.as_ref(), &ds, &path);
        worst = worst
            .max(b.rel_error(eval_kernel_forward(&kernel, xi.as_ref(), &ds, &path).unwrap()))
            .max(b.rel_error(eval_kernel_reversed(&kernel, xi.as_ref(), &ds, &path).unwrap()));
        checks += 2;
    }
    outcome(
        worst <= BRUTE_REL_TOL,
        format!("{checks} evaluations on {BRUTE_PATHS} paths, N<={BRUTE_MAX_N}, k<={BRUTE_MAX_K}: worst relative error {worst:.2e} (limit {BRUTE_REL_TOL:.0e})"),
    )
}

fn criterion_determinism(first: &str) -> Outcome {
    let (_, second) = run_suite(THREADS_B);
    let same = first == second;
    outcome(
        same,
        format!("suite JSON with {THREADS_A} and {THREADS_B} threads: {} bytes, {}", first.len(), if same { "identical" } else { "different" }),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{name}]: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    let (verdicts, json) = run_suite(THREADS_A);
    report(1, "identity suite", criterion_suite(&verdicts));
    report(2, "convergence order", criterion_convergence());
    report(3, "moment oracles", criterion_moments());
    report(4, "covariance formula", criterion_covariance());
    report(5, "martingale drivers", criterion_martingale());
    report(6, "exact combinatorics", criterion_combinatorics());
    report(7, "brute-force equivalence", criterion_brute_force());
    report(8, "determinism", criterion_determinism(&json));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass in {:.0}s", results.len() - failed.len(), results.len(), started.elapsed().as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
