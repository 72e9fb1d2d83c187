//! Sample generation and the on-disk dataset container.
//!
//! A sample is one noisy trajectory of one sampled system instance: the
//! trajectory is solved on a uniform grid over `[0, t_end]`, noise is added
//! to the whole grid, the first `n_input` points form the data input and
//! the remaining points are the labels. The symbol input is the corrupted
//! equation, the symbol target is the true one.
//!
//! Randomness is derived from `(split seed, index)` only, so the bytes of a
//! split do not depend on how many threads generate it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::integrate::{linspace, solve, SolverConfig, Trajectory};
use crate::ode_dict::{family, family_index, sample_initial_condition, sample_parameters, OdeFamily, SamplingConfig};
use crate::symbolic::{corrupt, to_polish, CorruptionConfig, SymbolicError, TokenSeq, Vocabulary};

pub const DATASET_MAGIC: [u8; 8] = *b"PROSEDS\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trajectory has zero norm; noise level is undefined")]
    ZeroSignal,
    #[error("dimension {dim} exceeds padding dimension {d_max}")]
    DimensionTooLarge { dim: usize, d_max: usize },
    #[error("sample {index}: no admissible trajectory after {attempts} attempts")]
    GenerationExhausted { index: u64, attempts: usize },
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt record {index}")]
    CorruptRecord { index: u64 },
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Symbolic input settings of the four experiment types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolMode {
    Known,
    Skeleton,
    Unknown3d,
    UnknownMultiD,
}

impl SymbolMode {
    pub fn corruption(self) -> CorruptionConfig {
        match self {
            SymbolMode::Known => CorruptionConfig::NONE,
            SymbolMode::Skeleton => CorruptionConfig::SKELETON,
            SymbolMode::Unknown3d | SymbolMode::UnknownMultiD => CorruptionConfig::UNKNOWN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub instances: usize,
    pub ics_per_instance: usize,
}

impl SplitSizes {
    pub fn samples(&self) -> usize {
        self.instances * self.ics_per_instance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub t_end: f64,
    /// Points of the full uniform grid on `[0, t_end]`.
    pub n_points: usize,
    /// Leading grid points that make up the input window.
    pub n_input: usize,
    /// Points actually fed to the model, evenly strided over the window.
    pub input_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_end: 6.0,
            n_points: 192,
            n_input: 64,
            input_points: 64,
        }
    }
}

impl GridConfig {
    pub fn times(&self) -> Vec<f64> {
        linspace(0.0, self.t_end, self.n_points)
    }

    pub fn n_labels(&self) -> usize {
        self.n_points - self.n_input
    }

    fn input_stride(&self) -> usize {
        self.n_input / self.input_points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub families: Vec<String>,
    pub train: SplitSizes,
    pub val: SplitSizes,
    pub test: SplitSizes,
    pub sampling: SamplingConfig,
    /// Target `sigma |eta| / |u|`; 0 disables noise.
    pub snr: f64,
    pub grid: GridConfig,
    pub corruption: CorruptionConfig,
    /// Data arrays are zero-padded to this many coordinates.
    pub d_max: usize,
    pub mantissa_len: u32,
    pub solver: SolverConfig,
    /// Initial conditions tried per sample before giving up.
    pub max_attempts: usize,
}

impl DatasetConfig {
    /// Three 3D families; 600/60/60 instances with 4 initial conditions each.
    pub fn desk() -> Self {
        Self {
            families: vec!["thomas".into(), "lorenz3d".into(), "halvorsen".into()],
            train: SplitSizes {
                instances: 600,
                ics_per_instance: 4,
            },
            val: SplitSizes {
                instances: 60,
                ics_per_instance: 4,
            },
            test: SplitSizes {
                instances: 60,
                ics_per_instance: 4,
            },
            sampling: SamplingConfig::default(),
            snr: 0.02,
            grid: GridConfig::default(),
            corruption: SymbolMode::Unknown3d.corruption(),
            d_max: 3,
            mantissa_len: 3,
            solver: SolverConfig::default(),
            max_attempts: 20,
        }
    }

    /// Full-size splits: 25,600 train instances with 20 initial conditions
    /// (512K samples), 6,400 val and 25,600 test instances with 4 each.
    pub fn full_scale(mode: SymbolMode) -> Self {
        let multi = mode == SymbolMode::UnknownMultiD;
        let families = crate::ode_dict::catalog()
            .iter()
            .filter(|f| multi || f.dim == 3)
            .map(|f| f.name.to_string())
            .collect();
        Self {
            families,
            train: SplitSizes {
                instances: 25_600,
                ics_per_instance: 20,
            },
            val: SplitSizes {
                instances: 6_400,
                ics_per_instance: 4,
            },
            test: SplitSizes {
                instances: 25_600,
                ics_per_instance: 4,
            },
            corruption: mode.corruption(),
            d_max: if multi { 5 } else { 3 },
            ..Self::desk()
        }
    }

    pub fn split(&self, split: Split) -> SplitSizes {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn resolve_families(&self) -> Result<Vec<&'static OdeFamily>, DatasetError> {
        self.families
            .iter()
            .map(|n| family(n).ok_or_else(|| DatasetError::UnknownFamily(n.clone())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.into()));
        let fams = self.resolve_families()?;
        if fams.is_empty() {
            return bad("no families selected");
        }
        if let Some(f) = fams.iter().find(|f| f.dim > self.d_max) {
            return Err(DatasetError::DimensionTooLarge {
                dim: f.dim,
                d_max: self.d_max,
            });
        }
        let g = &self.grid;
        if !(g.t_end > 0.0) || g.n_input == 0 || g.n_input >= g.n_points {
            return bad("grid needs 0 < n_input < n_points and t_end > 0");
        }
        if g.input_points == 0 || !g.n_input.is_multiple_of(g.input_points) {
            return bad("input_points must divide n_input");
        }
        if !(self.snr >= 0.0) {
            return bad("snr must be non-negative");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        if !(1..=4).contains(&self.mantissa_len) {
            return bad("mantissa_len must be in 1..=4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: u64,
    /// Position of the family in the catalog.
    pub family: u16,
    pub dim: u8,
    /// Seed of the per-sample generator.
    pub seed: u64,
    pub params: Vec<f64>,
    pub initial_condition: Vec<f64>,
    pub noise_sigma: f64,
    pub input_times: Vec<f64>,
    /// `input_times.len() x width`, row-major, noisy.
    pub input_values: Vec<f64>,
    pub query_times: Vec<f64>,
    /// `query_times.len() x width`, row-major, noisy.
    pub labels: Vec<f64>,
    /// 1 for true coordinates, 0 for padding; its length is the width.
    pub mask: Vec<u8>,
    /// Last grid time of the input window and the noise-free state there.
    pub anchor_time: f64,
    pub anchor_state: Vec<f64>,
    pub symbol_input: TokenSeq,
    pub symbol_target: TokenSeq,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.mask.len()
    }

    pub fn family_name(&self) -> &'static str {
        crate::ode_dict::catalog()[self.family as usize].name
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.input_values[i * w..(i + 1) * w]
    }

    pub fn label_row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.labels[i * w..(i + 1) * w]
    }
}

/// sha256 of the JSON form of any configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> [u8; 32] {
    let bytes = serde_json::to_vec(cfg).expect("configs serialize");
    Sha256::digest(&bytes).into()
}

/// Independent generator for `(seed, domain, index)`.
pub fn child_rng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn split_seed(master: u64, split: Split) -> u64 {
    child_rng(master, split.name(), 0).random()
}

/// `u + sigma * eta` with `sigma` set so that `sigma |eta| / |u| = snr`
/// over the whole trajectory. Returns the noisy trajectory and `sigma`.
pub fn add_noise<R: Rng + ?Sized>(traj: &Trajectory, snr: f64, rng: &mut R) -> Result<(Trajectory, f64), DatasetError> {
    if snr == 0.0 {
        return Ok((traj.clone(), 0.0));
    }
    let norm_u = traj.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_u == 0.0 {
        return Err(DatasetError::ZeroSignal);
    }
    let eta: Vec<f64> = (0..traj.values.len()).map(|_| rng.sample(StandardNormal)).collect();
    let norm_eta = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sigma = snr * norm_u / norm_eta;
    let mut out = traj.clone();
    for (v, e) in out.values.iter_mut().zip(&eta) {
        *v += sigma * e;
    }
    Ok((out, sigma))
}

/// Zero-pad the data arrays of a sample to `d_max` coordinates.
pub fn pad_to_dim(sample: &Sample, d_max: usize) -> Result<Sample, DatasetError> {
    let w = sample.width();
    if (sample.dim as usize) > d_max {
        return Err(DatasetError::DimensionTooLarge {
            dim: sample.dim as usize,
            d_max,
        });
    }
    let repad = |vals: &[f64]| -> Vec<f64> {
        let rows = vals.len() / w.max(1);
        let mut out = vec![0.0; rows * d_max];
        for r in 0..rows {
            let keep = w.min(d_max);
            out[r * d_max..r * d_max + keep].copy_from_slice(&vals[r * w..r * w + keep]);
        }
        out
    };
    let mut s = sample.clone();
    s.input_values = repad(&sample.input_values);
    s.labels = repad(&sample.labels);
    s.mask = (0..d_max).map(|j| u8::from(j < sample.dim as usize)).collect();
    Ok(s)
}

/// Sample `index` of a split with the given split seed.
pub fn make_sample(cfg: &DatasetConfig, sizes: SplitSizes, seed: u64, index: u64) -> Result<Sample, DatasetError> {
    let fams = cfg.resolve_families()?;
    let instance = index / sizes.ics_per_instance.max(1) as u64;
    let fam = fams[(instance % fams.len() as u64) as usize];
    let params = sample_parameters(fam, cfg.sampling.lambda, &mut child_rng(seed, "instance", instance));
    let mut rng = child_rng(seed, "sample", index);
    let sample_seed = rng.random();
    build_sample(cfg, fam, &params, &mut rng, index, sample_seed)
}

fn build_sample(
    cfg: &DatasetConfig,
    fam: &OdeFamily,
    params: &[f64],
    rng: &mut ChaCha8Rng,
    index: u64,
    seed: u64,
) -> Result<Sample, DatasetError> {
    let sys = fam.system(params);
    let grid = cfg.grid.times();
    let (u0, clean) = (0..cfg.max_attempts)
        .find_map(|_| {
            let u0 = sample_initial_condition(fam.dim, cfg.sampling.ic_half_width, rng);
            solve(&sys, &u0, &grid, &cfg.solver).ok().map(|t| (u0, t))
        })
        .ok_or(DatasetError::GenerationExhausted {
            index,
            attempts: cfg.max_attempts,
        })?;
    let (noisy, sigma) = add_noise(&clean, cfg.snr, rng)?;

    let corruption = if fam.additive {
        cfg.corruption
    } else {
        cfg.corruption.without_term_edits()
    };
    let guess = corrupt(&sys, &corruption, rng)?;
    let vocab = Vocabulary::new(cfg.mantissa_len);

    let d = fam.dim;
    let n_in = cfg.grid.n_input;
    let stride = cfg.grid.input_stride();
    let rows_in: Vec<usize> = (0..n_in).step_by(stride).collect();
    let sample = Sample {
        index,
        family: family_index(fam.name).expect("catalog family") as u16,
        dim: d as u8,
        seed,
        params: params.to_vec(),
        initial_condition: u0,
        noise_sigma: sigma,
        input_times: rows_in.iter().map(|&i| grid[i]).collect(),
        input_values: rows_in.iter().flat_map(|&i| noisy.row(i).to_vec()).collect(),
        query_times: grid[n_in..].to_vec(),
        labels: noisy.values[n_in * d..].to_vec(),
        mask: vec![1; d],
        anchor_time: grid[n_in - 1],
        anchor_state: clean.row(n_in - 1).to_vec(),
        symbol_input: to_polish(&guess, &vocab)?,
        symbol_target: to_polish(&sys, &vocab)?,
    };
    pad_to_dim(&sample, cfg.d_max)
}

/// All samples of one split, generated in parallel and returned in index
/// order.
pub fn generate_split(cfg: &DatasetConfig, split: Split, master_seed: u64) -> Result<Vec<Sample>, DatasetError> {
    generate(cfg, cfg.split(split), split_seed(master_seed, split))
}

pub fn generate(cfg: &DatasetConfig, sizes: SplitSizes, seed: u64) -> Result<Vec<Sample>, DatasetError> {
    cfg.validate()?;
    (0..sizes.samples() as u64)
        .into_par_iter()
        .map(|i| make_sample(cfg, sizes, seed, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub count: u64,
}

pub fn write_dataset(path: &Path, config_hash: [u8; 32], samples: &[Sample]) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(path, config_hash, samples.len() as u64)?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Sample>), DatasetError> {
    let r = DatasetReader::open(path)?;
    let header = r.header();
    let samples = r.collect::<Result<Vec<_>, _>>()?;
    Ok((header, samples))
}

pub struct DatasetWriter {
    out: BufWriter<File>,
    expected: u64,
    written: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, config_hash: [u8; 32], count: u64) -> Result<Self, DatasetError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&config_hash)?;
        out.write_all(&count.to_le_bytes())?;
        Ok(Self {
            out,
            expected: count,
            written: 0,
        })
    }

    pub fn write(&mut self, s: &Sample) -> Result<(), DatasetError> {
        let rec = encode_record(s);
        self.out.write_all(&(rec.len() as u32).to_le_bytes())?;
        self.out.write_all(&rec)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), DatasetError> {
        if self.written != self.expected {
            return Err(DatasetError::InvalidConfig(format!(
                "header announces {} records, {} written",
                self.expected, self.written
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

pub struct DatasetReader {
    input: BufReader<File>,
    header: DatasetHeader,
    next: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut head = [0u8; 8 + 4 + 32 + 8];
        input
            .read_exact(&mut head)
            .map_err(|_| DatasetError::SchemaMismatch("file shorter than header".into()))?;
        if head[..8] != DATASET_MAGIC {
            return Err(DatasetError::SchemaMismatch("not a dataset file".into()));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(DatasetError::SchemaMismatch(format!(
                "version {version}, expected {DATASET_VERSION}"
            )));
        }
        let header = DatasetHeader {
            version,
            config_hash: head[12..44].try_into().unwrap(),
            count: u64::from_le_bytes(head[44..52].try_into().unwrap()),
        };
        Ok(Self { input, header, next: 0 })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    fn read_record(&mut self) -> Result<Sample, DatasetError> {
        let corrupt = DatasetError::CorruptRecord { index: self.next };
        let mut len = [0u8; 4];
        if self.input.read_exact(&mut len).is_err() {
            return Err(corrupt);
        }
        let mut rec = vec![0u8; u32::from_le_bytes(len) as usize];
        if self.input.read_exact(&mut rec).is_err() {
            return Err(corrupt);
        }
        decode_record(&rec).ok_or(corrupt)
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.count {
            return None;
        }
        let r = self.read_record();
        self.next += 1;
        if r.is_err() {
            // Nothing after a broken record can be located reliably.
            self.next = self.header.count;
        }
        Some(r)
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend((v.len() as u32).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

fn put_u32s(out: &mut Vec<u8>, v: &[u32]) {
    out.extend((v.len() as u32).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

fn encode_record(s: &Sample) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(s.index.to_le_bytes());
    out.extend(s.family.to_le_bytes());
    out.push(s.dim);
    out.extend(s.seed.to_le_bytes());
    out.extend(s.noise_sigma.to_le_bytes());
    out.extend(s.anchor_time.to_le_bytes());
    out.extend((s.mask.len() as u32).to_le_bytes());
    out.extend(&s.mask);
    put_f64s(&mut out, &s.params);
    put_f64s(&mut out, &s.initial_condition);
    put_f64s(&mut out, &s.input_times);
    put_f64s(&mut out, &s.input_values);
    put_f64s(&mut out, &s.query_times);
    put_f64s(&mut out, &s.labels);
    put_f64s(&mut out, &s.anchor_state);
    put_u32s(&mut out, s.symbol_input.ids());
    put_u32s(&mut out, s.symbol_target.ids());
    out
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let (head, rest) = self.0.split_at_checked(N)?;
        self.0 = rest;
        head.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }

    fn bytes(&mut self, n: usize) -> Option<Vec<u8>> {
        let (head, rest) = self.0.split_at_checked(n)?;
        self.0 = rest;
        Some(head.to_vec())
    }

    fn f64s(&mut self) -> Option<Vec<f64>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }

    fn u32s(&mut self) -> Option<Vec<u32>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.u32()).collect()
    }
}

fn decode_record(rec: &[u8]) -> Option<Sample> {
    let mut c = Cursor(rec);
    let index = c.u64()?;
    let family = u16::from_le_bytes(c.take()?);
    let dim = c.take::<1>()?[0];
    let seed = c.u64()?;
    let noise_sigma = c.f64()?;
    let anchor_time = c.f64()?;
    let width = c.u32()? as usize;
    let mask = c.bytes(width)?;
    let s = Sample {
        index,
        family,
        dim,
        seed,
        noise_sigma,
        anchor_time,
        mask,
        params: c.f64s()?,
        initial_condition: c.f64s()?,
        input_times: c.f64s()?,
        input_values: c.f64s()?,
        query_times: c.f64s()?,
        labels: c.f64s()?,
        anchor_state: c.f64s()?,
        symbol_input: TokenSeq(c.u32s()?),
        symbol_target: TokenSeq(c.u32s()?),
    };
    let consistent = c.0.is_empty()
        && (family as usize) < crate::ode_dict::catalog().len()
        && s.input_values.len() == s.input_times.len() * width
        && s.labels.len() == s.query_times.len() * width;
    consistent.then_some(s)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::from_polish;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            train: SplitSizes {
                instances: 6,
                ics_per_instance: 2,
            },
            ..DatasetConfig::desk()
        }
    }

    fn ratio(clean: &[f64], noisy: &[f64]) -> f64 {
        let n: f64 = clean
            .iter()
            .zip(noisy)
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            .sqrt();
        n / clean.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn noise_is_calibrated_exactly() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            dim: 2,
            values: vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0],
        };
        for seed in 0..20 {
            let (noisy, sigma) = add_noise(&traj, 0.02, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(sigma > 0.0);
            assert!((ratio(&traj.values, &noisy.values) - 0.02).abs() < 1e-12);
        }
        let (same, sigma) = add_noise(&traj, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((same, sigma), (traj.clone(), 0.0));
        let zero = Trajectory {
            values: vec![0.0; 6],
            ..traj
        };
        assert!(matches!(
            add_noise(&zero, 0.02, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(DatasetError::ZeroSignal)
        ));
    }

    #[test]
    fn sample_layout() {
        let cfg = tiny();
        let s = make_sample(&cfg, cfg.train, 5, 3).unwrap();
        assert_eq!(s.input_times.len(), 64);
        assert_eq!(s.query_times.len(), 128);
        assert_eq!(s.labels.len(), 128 * 3);
        assert_eq!(s.input_times[0], 0.0);
        assert_eq!(*s.query_times.last().unwrap(), 6.0);
        assert!(s.query_times[0] > 2.0 && s.anchor_time < 2.0);
        assert_eq!(s.anchor_time, s.input_times[63]);
        assert!(from_polish(s.symbol_target.ids(), &Vocabulary::default()).is_ok());
    }

    #[test]
    fn instances_share_coefficients() {
        let cfg = tiny();
        let a = make_sample(&cfg, cfg.train, 9, 0).unwrap();
        let b = make_sample(&cfg, cfg.train, 9, 1).unwrap();
        let c = make_sample(&cfg, cfg.train, 9, 2).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.family, b.family);
        assert_ne!(a.initial_condition, b.initial_condition);
        // Families alternate between instances.
        assert_ne!(a.family, c.family);
    }

    #[test]
    fn known_mode_copies_target() {
        let cfg = DatasetConfig {
            corruption: SymbolMode::Known.corruption(),
            ..tiny()
        };
        for i in 0..6 {
            let s = make_sample(&cfg, cfg.train, 1, i).unwrap();
            assert_eq!(s.symbol_input, s.symbol_target);
        }
    }

    #[test]
    fn skeleton_mode_masks_every_coefficient() {
        let cfg = DatasetConfig {
            corruption: SymbolMode::Skeleton.corruption(),
            ..tiny()
        };
        let vocab = Vocabulary::default();
        for i in 0..6 {
            let s = make_sample(&cfg, cfg.train, 1, i).unwrap();
            let guess = from_polish(s.symbol_input.ids(), &vocab).unwrap();
            assert!(guess.coefficients().is_empty());
            assert!(guess.has_placeholder());
            let target = from_polish(s.symbol_target.ids(), &vocab).unwrap();
            for (g, t) in guess.components().iter().zip(target.components()) {
                assert_eq!(g.node_count(), t.node_count());
            }
        }
    }

    #[test]
    fn multi_d_pads_three_dimensional_families() {
        let cfg = DatasetConfig {
            families: vec!["thomas".into(), "double_pendulum".into(), "lorenz96_5".into()],
            d_max: 5,
            corruption: SymbolMode::UnknownMultiD.corruption(),
            ..tiny()
        };
        let s = make_sample(&cfg, cfg.train, 2, 0).unwrap();
        assert_eq!(s.family_name(), "thomas");
        assert_eq!(s.mask, vec![1, 1, 1, 0, 0]);
        for i in 0..s.input_times.len() {
            assert_eq!(&s.input_row(i)[3..], &[0.0, 0.0]);
        }
        // The non-additive family only gets its coefficients masked.
        let p = make_sample(&cfg, cfg.train, 2, 2).unwrap();
        assert_eq!(p.family_name(), "double_pendulum");
        assert_eq!(p.mask, vec![1, 1, 1, 1, 0]);
    }

    #[test]
    fn padding_contract() {
        let cfg = tiny();
        let s = make_sample(&cfg, cfg.train, 4, 0).unwrap();
        assert_eq!(pad_to_dim(&s, 3).unwrap(), s);
        let p = pad_to_dim(&s, 5).unwrap();
        assert_eq!(p.mask, vec![1, 1, 1, 0, 0]);
        for i in 0..s.query_times.len() {
            assert_eq!(&p.label_row(i)[..3], s.label_row(i));
            assert_eq!(&p.label_row(i)[3..], &[0.0, 0.0]);
        }
        assert!(matches!(pad_to_dim(&s, 2), Err(DatasetError::DimensionTooLarge { .. })));
    }

    #[test]
    fn input_subsampling() {
        let mut cfg = tiny();
        cfg.grid.input_points = 16;
        let s = make_sample(&cfg, cfg.train, 4, 0).unwrap();
        let full = make_sample(&tiny(), cfg.train, 4, 0).unwrap();
        assert_eq!(s.input_times.len(), 16);
        assert_eq!(s.input_times[1], full.input_times[4]);
        assert_eq!(s.input_row(1), full.input_row(4));
        assert_eq!(s.labels, full.labels);
        cfg.grid.input_points = 20;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_and_ordered() {
        let cfg = tiny();
        let a = generate_split(&cfg, Split::Train, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| generate_split(&cfg, Split::Train, 3).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, s)| s.index == i as u64));
        let c = generate_split(&cfg, Split::Val, 3).unwrap();
        assert_ne!(a[0].initial_condition, c[0].initial_condition);
    }

    #[test]
    fn unknown_family_is_rejected() {
        let cfg = DatasetConfig {
            families: vec!["nope".into()],
            ..tiny()
        };
        assert!(matches!(cfg.validate(), Err(DatasetError::UnknownFamily(_))));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = DatasetConfig::desk();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.snr = 0.03;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
