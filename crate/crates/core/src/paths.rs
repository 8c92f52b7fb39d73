//! Sampled Wiener and martingale increments on a partition.
//!
//! Random numbers come from a counter-based ChaCha stream: the key is derived
//! from the seed, the stream id is the path index and each driver component
//! reads from its own fixed word offset. A path therefore depends only on
//! `(seed, path_index)` and never on evaluation order or thread count.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::domain::{DriverKind, Partition};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Square-integrable martingale with deterministic quadratic-variation
/// density `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MartingaleModel {
    /// `sigma * W`, `rho = sigma^2`.
    ScaledWiener { sigma: f64 },
    /// `N_s - rate * s` for a Poisson process `N`, `rho = rate`.
    CompensatedPoisson { rate: f64 },
}

impl MartingaleModel {
    pub fn density(&self) -> f64 {
        match self {
            MartingaleModel::ScaledWiener { sigma } => sigma * sigma,
            MartingaleModel::CompensatedPoisson { rate } => *rate,
        }
    }

    pub fn has_jumps(&self) -> bool {
        matches!(self, MartingaleModel::CompensatedPoisson { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            MartingaleModel::ScaledWiener { sigma } => sigma.is_finite() && *sigma > 0.0,
            MartingaleModel::CompensatedPoisson { rate } => rate.is_finite() && *rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid martingale model {self:?}")))
        }
    }

    fn code(&self) -> (u8, f64) {
        match self {
            MartingaleModel::ScaledWiener { sigma } => (0, *sigma),
            MartingaleModel::CompensatedPoisson { rate } => (1, *rate),
        }
    }
}

/// One sampled path: increments of every driver over every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    partition: Arc<Partition>,
    wiener: Vec<Vec<f64>>,
    martingales: Vec<Vec<f64>>,
    models: Vec<MartingaleModel>,
    seed: u64,
    path_index: u64,
}

impl PathSet {
    /// Assembles a path from given increments, mainly for tests and dumps.
    pub fn from_increments(
        partition: Arc<Partition>,
        wiener: Vec<Vec<f64>>,
        martingales: Vec<(MartingaleModel, Vec<f64>)>,
        seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        let n = partition.steps();
        let (models, martingales): (Vec<_>, Vec<_>) = martingales.into_iter().unzip();
        if wiener.iter().chain(&martingales).any(|row| row.len() != n) {
            return Err(Error::PartitionMismatch(format!("increment rows must have {n} entries")));
        }
        Ok(Self { partition, wiener, martingales, models, seed, path_index })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn shared_partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn steps(&self) -> usize {
        self.partition.steps()
    }

    pub fn dims(&self) -> usize {
        self.wiener.len()
    }

    pub fn models(&self) -> &[MartingaleModel] {
        &self.models
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Increments of `driver` over each cell; cell lengths for `Time`.
    pub fn increments(&self, driver: DriverKind) -> Result<&[f64]> {
        match driver {
            DriverKind::Time => Ok(self.partition.deltas()),
            DriverKind::Wiener(i) => i
                .checked_sub(1)
                .and_then(|c| self.wiener.get(c))
                .map(Vec::as_slice)
                .ok_or_else(|| Error::MissingDriver(format!("Wiener component {i} of {}", self.dims()))),
            DriverKind::Martingale(id) => self
                .martingales
                .get(id)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::MissingDriver(format!("martingale {id} of {}", self.martingales.len()))),
        }
    }

    /// Values of `driver` at every node, starting from zero.
    pub fn values(&self, driver: DriverKind) -> Result<Vec<f64>> {
        let inc = self.increments(driver)?;
        let mut out = Vec::with_capacity(inc.len() + 1);
        let mut acc = CompensatedSum::new();
        out.push(0.0);
        for &d in inc {
            acc.add(d);
            out.push(acc.value());
        }
        Ok(out)
    }

    /// `f^{(i)}_{τ_j}`, or the martingale or elapsed time at node `j`.
    pub fn cumulative_value(&self, driver: DriverKind, node: usize) -> Result<f64> {
        let n = self.steps();
        if node > n {
            return Err(Error::IndexOutOfRange { index: node, max: n });
        }
        let inc = self.increments(driver)?;
        let mut acc = CompensatedSum::new();
        for &d in &inc[..node] {
            acc.add(d);
        }
        Ok(acc.value())
    }

    /// Same path on the partition that keeps every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let partition = Arc::new(self.partition.coarsen(factor)?);
        self.coarsen_onto(partition)
    }

    /// Aggregates increments onto `coarse`, which must keep every `factor`-th
    /// node of this path's partition. Sharing one coarse partition across
    /// paths lets its memoised weight values be reused.
    pub fn coarsen_onto(&self, coarse: Arc<Partition>) -> Result<Self> {
        let (nf, nc) = (self.steps(), coarse.steps());
        if nf % nc != 0 || coarse.times().iter().zip(self.partition.times().iter().step_by(nf / nc)).any(|(a, b)| a != b) {
            return Err(Error::PartitionMismatch(format!("{nc} steps do not coarsen this {nf}-step partition")));
        }
        let factor = nf / nc;
        let merge = |row: &Vec<f64>| -> Vec<f64> {
            row.chunks(factor)
                .map(|c| {
                    let mut acc = CompensatedSum::new();
                    c.iter().for_each(|&d| acc.add(d));
                    acc.value()
                })
                .collect()
        };
        Ok(Self {
            partition: coarse,
            wiener: self.wiener.iter().map(merge).collect(),
            martingales: self.martingales.iter().map(merge).collect(),
            models: self.models.clone(),
            seed: self.seed,
            path_index: self.path_index,
        })
    }

    /// Writes a little-endian dump with a versioned header.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        for v in [self.steps() as u64, self.dims() as u64, self.models.len() as u64, self.seed, self.path_index] {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &self.models {
            let (code, param) = m.code();
            w.write_all(&[code])?;
            w.write_all(&param.to_le_bytes())?;
        }
        let rows = self.wiener.iter().chain(&self.martingales);
        for x in self.partition.times().iter().chain(rows.flatten()) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::MalformedDump("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DUMP_VERSION {
            return Err(Error::MalformedDump(format!("unsupported version {version}")));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let steps = read_u64(&mut r)? as usize;
        let dims = read_u64(&mut r)? as usize;
        let n_models = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let path_index = read_u64(&mut r)?;
        let mut models = Vec::with_capacity(n_models);
        for _ in 0..n_models {
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let param = f64::from_bits(read_u64(&mut r)?);
            models.push(match code[0] {
                0 => MartingaleModel::ScaledWiener { sigma: param },
                1 => MartingaleModel::CompensatedPoisson { rate: param },
                c => return Err(Error::MalformedDump(format!("unknown model code {c}"))),
            });
        }
        let read_row = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            (0..len).map(|_| Ok(f64::from_bits(read_u64(r)?))).collect()
        };
        let times = read_row(&mut r, steps + 1)?;
        let partition = Arc::new(Partition::from_times(times)?);
        let wiener = (0..dims).map(|_| read_row(&mut r, steps)).collect::<Result<Vec<_>>>()?;
        let martingales = (0..n_models).map(|_| read_row(&mut r, steps)).collect::<Result<Vec<_>>>()?;
        Ok(Self { partition, wiener, martingales, models, seed, path_index })
    }
}

const DUMP_MAGIC: &[u8; 8] = b"ITOPATH\0";
const DUMP_VERSION: u32 = 1;

/// Word offset reserved for each driver component inside a path's stream.
const COMPONENT_SHIFT: u32 = 48;

/// Deterministic generator of independent paths on a fixed partition.
#[derive(Debug, Clone)]
pub struct PathSampler {
    partition: Arc<Partition>,
    sqrt_deltas: Vec<f64>,
    dims: usize,
    models: Vec<MartingaleModel>,
    seed: u64,
}

impl PathSampler {
    pub fn new(partition: Arc<Partition>, dims: usize, models: Vec<MartingaleModel>, seed: u64) -> Result<Self> {
        if dims == 0 && models.is_empty() {
            return Err(Error::InvalidArgument("need at least one Wiener component or martingale".into()));
        }
        models.iter().try_for_each(MartingaleModel::validate)?;
        let sqrt_deltas = partition.deltas().iter().map(|d| d.sqrt()).collect();
        Ok(Self { partition, sqrt_deltas, dims, models, seed })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    fn stream(&self, path_index: u64, component: usize) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(path_index);
        rng.set_word_pos((component as u128) << COMPONENT_SHIFT);
        rng
    }

    fn gaussian_row(&self, rng: &mut ChaCha12Rng, scale: f64) -> Vec<f64> {
        self.sqrt_deltas
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(rng);
                scale * s * z
            })
            .collect()
    }

    /// Exact simulation: Poisson total count, uniform jump times, binned.
    fn poisson_row(&self, rng: &mut ChaCha12Rng, rate: f64) -> Vec<f64> {
        let times = self.partition.times();
        let iv = self.partition.interval();
        let mean = rate * iv.length();
        let count = Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0);
        let mut counts = vec![0u32; self.partition.steps()];
        for _ in 0..count {
            let u: f64 = rng.random();
            let s = iv.start + u * iv.length();
            let cell = times.partition_point(|&x| x <= s).clamp(1, counts.len()) - 1;
            counts[cell] += 1;
        }
        counts
            .iter()
            .zip(self.partition.deltas())
            .map(|(&c, &d)| f64::from(c) - rate * d)
            .collect()
    }

    pub fn path(&self, path_index: u64) -> PathSet {
        let wiener = (0..self.dims)
            .map(|c| self.gaussian_row(&mut self.stream(path_index, c), 1.0))
            .collect();
        let martingales = self
            .models
            .iter()
            .enumerate()
            .map(|(id, m)| {
                let mut rng = self.stream(path_index, self.dims + id);
                match m {
                    MartingaleModel::ScaledWiener { sigma } => self.gaussian_row(&mut rng, *sigma),
                    MartingaleModel::CompensatedPoisson { rate } => self.poisson_row(&mut rng, *rate),
                }
            })
            .collect();
        PathSet {
            partition: Arc::clone(&self.partition),
            wiener,
            martingales,
            models: self.models.clone(),
            seed: self.seed,
            path_index,
        }
    }
}

/// Lazily yields paths `0..count`.
pub fn sample_paths(
    partition: Arc<Partition>,
    dims: usize,
    models: Vec<MartingaleModel>,
    seed: u64,
    count: u64,
) -> Result<impl Iterator<Item = PathSet>> {
    let sampler = PathSampler::new(partition, dims, models, seed)?;
    Ok((0..count).map(move |i| sampler.path(i)))
}
