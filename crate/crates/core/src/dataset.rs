//! Labeled feature tensors for the interference classifier.
//!
//! One sample is one PRACH occasion's demapped subcarriers: every antenna's
//! `n_zc` complex bins are split into a real and an imaginary channel,
//! zero-padded to `H * W` and laid out row-major as `[H][W][C]`, then
//! standardized per channel. With the default numerology that is
//! `[24, 35, 4]`.
//!
//! # File format
//!
//! ```text
//! "PRDS" | u32 LE version | u64 LE header length | UTF-8 JSON header | f32 LE tensors
//! ```
//!
//! The JSON header carries [`DatasetMeta`] and one record per sample with the
//! byte offset of its tensor inside the trailing block.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::receiver::front_end;
use crate::scenario::ScenarioConfig;
use crate::seed::{derive, mix64};

pub const DATASET_MAGIC: &[u8; 4] = b"PRDS";
pub const DATASET_VERSION: u32 = 1;
pub const FEATURE_WIDTH: usize = 35;
const STD_FLOOR: f64 = 1e-12;

/// SNR levels swept by the experiments, dB.
pub const DEFAULT_SNR_GRID: [f64; 5] = [-18.0, -15.0, -12.0, -9.0, -6.0];
/// Interference levels relative to the signal, dB.
pub const DEFAULT_INTERF_GRID: [f64; 7] = [-30.0, -27.0, -21.0, -15.0, -12.0, -9.0, -6.0];

/// Class index convention: 0 = clean, 1 = interfered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Interfered,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Clean => 0,
            Label::Interfered => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Clean
        } else {
            Label::Interfered
        }
    }
}

/// `[height, width, channels]`.
pub type FeatureShape = [usize; 3];

pub fn feature_shape(scenario: &ScenarioConfig) -> FeatureShape {
    let n = scenario.numerology.n_zc;
    [n.div_ceil(FEATURE_WIDTH), FEATURE_WIDTH, 2 * scenario.channel.n_rx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(skip)]
    pub features: Vec<f32>,
    pub label: Label,
    pub snr_db: f64,
    pub interf_power_db: Option<f64>,
    pub seq_idx_signal: usize,
    pub seq_idx_interf: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub snr_grid: Vec<f64>,
    pub interf_grid: Vec<f64>,
    /// Interfered samples per (snr, interference) cell.
    pub n_per_cell: usize,
    /// Target fraction of interfered samples.
    pub balance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            snr_grid: DEFAULT_SNR_GRID.to_vec(),
            interf_grid: DEFAULT_INTERF_GRID.to_vec(),
            n_per_cell: 10,
            balance: 0.5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_cell == 0 {
            return invalid("n_per_cell must be >= 1");
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return invalid(format!("balance {} outside (0, 1)", self.balance));
        }
        if self.snr_grid.is_empty() || self.interf_grid.is_empty() {
            return invalid("grids must be non-empty");
        }
        if self.snr_grid.iter().chain(&self.interf_grid).any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(())
    }

    /// Clean samples generated for each SNR level, in grid order.
    pub fn clean_per_snr(&self) -> Vec<usize> {
        let interfered = self.snr_grid.len() * self.interf_grid.len() * self.n_per_cell;
        let clean = (interfered as f64 * (1.0 - self.balance) / self.balance).round() as usize;
        let s = self.snr_grid.len();
        (0..s).map(|i| clean / s + usize::from(i < clean % s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_samples: usize,
    /// Fraction of interfered samples actually present.
    pub class_balance: f64,
    pub snr_grid: Vec<f64>,
    pub interf_grid: Vec<f64>,
    pub n_per_cell: usize,
    pub master_seed: u64,
    pub feature_shape: FeatureShape,
    /// Generating scenario; absent for datasets assembled from external tensors.
    pub scenario: Option<ScenarioConfig>,
    /// Resolved experiment configuration echoed by the CLI.
    #[serde(default)]
    pub experiment: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<LabeledSample>,
}

fn interfered_fraction(samples: &[LabeledSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.label == Label::Interfered).count() as f64 / samples.len() as f64
}

impl Dataset {
    /// Wraps tensors that carry no generating scenario.
    pub fn from_samples(samples: Vec<LabeledSample>, feature_shape: FeatureShape) -> Self {
        let meta = DatasetMeta {
            format_version: DATASET_VERSION,
            n_samples: samples.len(),
            class_balance: interfered_fraction(&samples),
            snr_grid: Vec::new(),
            interf_grid: Vec::new(),
            n_per_cell: 0,
            master_seed: 0,
            feature_shape,
            scenario: None,
            experiment: None,
        };
        Self { meta, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<LabeledSample>) -> Dataset {
        let mut meta = self.meta.clone();
        meta.n_samples = samples.len();
        meta.class_balance = interfered_fraction(&samples);
        Dataset { meta, samples }
    }

    pub fn validate(&self) -> Result<()> {
        let elems: usize = self.meta.feature_shape.iter().product();
        if self.meta.n_samples != self.samples.len() {
            return Err(Error::CorruptHeader(format!(
                "meta counts {} samples, found {}",
                self.meta.n_samples,
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != elems {
                return Err(Error::CorruptHeader(format!("sample {i}: tensor size mismatch")));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptHeader(format!("sample {i}: non-finite feature")));
            }
            if (s.label == Label::Interfered) != s.interf_power_db.is_some() {
                return Err(Error::CorruptHeader(format!(
                    "sample {i}: label disagrees with interference power"
                )));
            }
        }
        Ok(())
    }
}

/// Runs the full chain for one occasion and converts it to a standardized tensor.
pub fn make_sample(
    label: Label,
    snr_db: f64,
    interf_db: Option<f64>,
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<LabeledSample> {
    if (label == Label::Interfered) != interf_db.is_some() {
        return invalid("interference power must be given exactly for interfered samples");
    }
    let obs = scenario.observe(snr_db, interf_db, seed)?;
    let freq = front_end(&obs.per_antenna, &scenario.numerology, 0.0, 1)?;
    let shape = feature_shape(scenario);
    let [h, w, c] = shape;
    let mut features = vec![0f32; h * w * c];
    for (a, bins) in freq.bins.iter().enumerate() {
        let re: Vec<f64> = bins.iter().map(|z| z.re).collect();
        let im: Vec<f64> = bins.iter().map(|z| z.im).collect();
        for (ch, values) in [(2 * a, re), (2 * a + 1, im)] {
            write_standardized(&mut features, &values, h * w, c, ch);
        }
    }
    Ok(LabeledSample {
        features,
        label,
        snr_db,
        interf_power_db: interf_db,
        seq_idx_signal: scenario.signal.root_u,
        seq_idx_interf: interf_db.map(|_| scenario.interferer.root_u),
        seed,
    })
}

/// Zero-pads `values` to `positions`, standardizes, and scatters into channel `ch`.
fn write_standardized(out: &mut [f32], values: &[f64], positions: usize, channels: usize, ch: usize) {
    let n = positions as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        + (positions - values.len()) as f64 * mean * mean / n;
    let std = var.sqrt().max(STD_FLOOR);
    for p in 0..positions {
        let v = values.get(p).copied().unwrap_or(0.0);
        out[p * channels + ch] = ((v - mean) / std) as f32;
    }
}

struct Job {
    label: Label,
    snr_db: f64,
    interf_db: Option<f64>,
}

/// Sweeps the grid, generating `n_per_cell` interfered samples per cell plus
/// clean samples per SNR level to reach the requested balance.
///
/// Sample `i` (in sweep order) uses seed `derive(master_seed, i)`; the result
/// is shuffled by the master seed, so the output does not depend on how
/// generation was scheduled across threads.
pub fn generate_dataset(grid: &GridSpec, scenario: &ScenarioConfig, master_seed: u64) -> Result<Dataset> {
    grid.validate()?;
    scenario.validate()?;

    let mut jobs = Vec::new();
    for &snr_db in &grid.snr_grid {
        for &interf in &grid.interf_grid {
            for _ in 0..grid.n_per_cell {
                jobs.push(Job {
                    label: Label::Interfered,
                    snr_db,
                    interf_db: Some(interf),
                });
            }
        }
    }
    for (&snr_db, n) in grid.snr_grid.iter().zip(grid.clean_per_snr()) {
        for _ in 0..n {
            jobs.push(Job {
                label: Label::Clean,
                snr_db,
                interf_db: None,
            });
        }
    }

    let mut samples = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            make_sample(
                job.label,
                job.snr_db,
                job.interf_db,
                scenario,
                derive(master_seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(master_seed ^ 0x5348_5546)));

    let meta = DatasetMeta {
        format_version: DATASET_VERSION,
        n_samples: samples.len(),
        class_balance: interfered_fraction(&samples),
        snr_grid: grid.snr_grid.clone(),
        interf_grid: grid.interf_grid.clone(),
        n_per_cell: grid.n_per_cell,
        master_seed,
        feature_shape: feature_shape(scenario),
        scenario: Some(scenario.clone()),
        experiment: None,
    };
    Ok(Dataset { meta, samples })
}

/// Per-class index lists in dataset order, each shuffled by `seed`.
fn shuffled_classes(ds: &Dataset, seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = [Vec::new(), Vec::new()];
    for (i, s) in ds.samples.iter().enumerate() {
        classes[s.label.index()].push(i);
    }
    for c in &mut classes {
        c.shuffle(&mut rng);
    }
    classes
}

fn gather(ds: &Dataset, mut idx: Vec<usize>) -> Dataset {
    idx.sort_unstable();
    ds.with_samples(idx.into_iter().map(|i| ds.samples[i].clone()).collect())
}

/// Stratified train/validation split. Both parts keep both classes.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return invalid(format!("train_frac {train_frac} outside (0, 1)"));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, idx) in shuffled_classes(ds, seed).into_iter().enumerate() {
        let n_train = (idx.len() as f64 * train_frac).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return invalid(format!(
                "split leaves class {:?} empty in one part ({} samples, train_frac {train_frac})",
                Label::from_index(class),
                idx.len()
            ));
        }
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    Ok((gather(ds, train), gather(ds, val)))
}

/// Stratified subsample of `n` samples keeping the class proportions.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return invalid(format!("cannot take {n} of {} samples", ds.len()));
    }
    let classes = shuffled_classes(ds, seed);
    let n_interf = (classes[1].len() as f64 * n as f64 / ds.len() as f64).round() as usize;
    let n_clean = n - n_interf;
    if n_clean > classes[0].len() || n_interf > classes[1].len() {
        return invalid("subsample exceeds a class");
    }
    let mut idx = classes[0][..n_clean].to_vec();
    idx.extend_from_slice(&classes[1][..n_interf]);
    Ok(gather(ds, idx))
}

#[derive(Serialize, Deserialize)]
struct Record {
    label: Label,
    snr_db: f64,
    interf_power_db: Option<f64>,
    seq_idx_signal: usize,
    seq_idx_interf: Option<usize>,
    seed: u64,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: DatasetMeta,
    records: Vec<Record>,
}

/// Serializes to the byte layout described in the module docs.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let elems: usize = ds.meta.feature_shape.iter().product();
    let records = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| Record {
            label: s.label,
            snr_db: s.snr_db,
            interf_power_db: s.interf_power_db,
            seq_idx_signal: s.seq_idx_signal,
            seq_idx_interf: s.seq_idx_interf,
            seed: s.seed,
            offset: (i * elems * 4) as u64,
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        meta: ds.meta.clone(),
        records,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + ds.len() * elems * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&ds.meta.format_version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for s in &ds.samples {
        if s.features.len() != elems {
            return invalid("sample tensor does not match the feature shape");
        }
        for v in &s.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: "PRDS" });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if header_len > body.len() as u64 {
        return Err(Error::CorruptHeader(format!(
            "header length {header_len} exceeds file size"
        )));
    }
    let (header, tensors) = body.split_at(header_len as usize);
    let header: Header =
        serde_json::from_slice(header).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if header.meta.format_version != version {
        return Err(Error::CorruptHeader("meta version disagrees with file version".into()));
    }

    let elems: usize = header.meta.feature_shape.iter().product();
    let stride = elems * 4;
    let expected = header.records.len() * stride;
    if tensors.len() < expected {
        return Err(Error::TruncatedTensor {
            expected,
            found: tensors.len(),
        });
    }
    if tensors.len() > expected {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after tensor block",
            tensors.len() - expected
        )));
    }

    let samples = header
        .records
        .into_iter()
        .map(|r| {
            let start = r.offset as usize;
            if r.offset % 4 != 0 || start + stride > tensors.len() {
                return Err(Error::CorruptHeader(format!("bad tensor offset {}", r.offset)));
            }
            let features = tensors[start..start + stride]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Ok(LabeledSample {
                features,
                label: r.label,
                snr_db: r.snr_db,
                interf_power_db: r.interf_power_db,
                seq_idx_signal: r.seq_idx_signal,
                seq_idx_interf: r.seq_idx_interf,
                seed: r.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        meta: header.meta,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_grid() -> GridSpec {
        GridSpec {
            snr_grid: vec![-6.0, -12.0],
            interf_grid: vec![-6.0, -21.0, -30.0],
            n_per_cell: 2,
            balance: 0.5,
        }
    }

    fn channel_stats(s: &LabeledSample, ch: usize) -> (f64, f64) {
        let vals: Vec<f64> = s.features.iter().skip(ch).step_by(4).map(|&v| v as f64).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn sample_is_standardized_and_deterministic() {
        let sc = ScenarioConfig::default();
        let s = make_sample(Label::Clean, -6.0, None, &sc, 11).unwrap();
        assert_eq!(s.label, Label::Clean);
        assert_eq!(s.features.len(), 24 * 35 * 4);
        assert_eq!(feature_shape(&sc), [24, 35, 4]);
        for ch in 0..4 {
            let (m, sd) = channel_stats(&s, ch);
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((sd - 1.0).abs() < 1e-6, "std {sd}");
        }
        let again = make_sample(Label::Clean, -6.0, None, &sc, 11).unwrap();
        assert_eq!(
            s.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn label_and_interference_must_agree() {
        let sc = ScenarioConfig::default();
        assert!(make_sample(Label::Interfered, -6.0, None, &sc, 1).is_err());
        assert!(make_sample(Label::Clean, -6.0, Some(-6.0), &sc, 1).is_err());
        let s = make_sample(Label::Interfered, -6.0, Some(-9.0), &sc, 1).unwrap();
        assert_eq!(s.seq_idx_interf, Some(22));
    }

    #[test]
    fn constant_channel_does_not_divide_by_zero() {
        let mut out = vec![0f32; 8];
        write_standardized(&mut out, &[0.0; 3], 4, 2, 1);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_grid_counts() {
        let g = GridSpec::default();
        assert_eq!(g.clean_per_snr(), vec![70; 5]);
        assert_eq!(g.clean_per_snr().iter().sum::<usize>(), 350);
        let g = GridSpec {
            balance: 0.25,
            ..GridSpec::default()
        };
        assert_eq!(g.clean_per_snr().iter().sum::<usize>(), 1050);
    }

    #[test]
    fn generation_is_reproducible_with_unique_seeds() {
        let sc = ScenarioConfig::default();
        let a = generate_dataset(&small_grid(), &sc, 5).unwrap();
        assert_eq!(a.len(), 24);
        assert_eq!(a.meta.class_balance, 0.5);
        let seeds: HashSet<u64> = a.samples.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), a.len());
        let b = generate_dataset(&small_grid(), &sc, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_grid(), &sc, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_grid() {
        let sc = ScenarioConfig::default();
        let mut g = small_grid();
        g.n_per_cell = 0;
        assert!(generate_dataset(&g, &sc, 0).is_err());
        let mut g = small_grid();
        g.balance = 1.0;
        assert!(generate_dataset(&g, &sc, 0).is_err());
    }

    #[test]
    fn round_trip_and_load_errors() {
        let sc = ScenarioConfig::default();
        let ds = generate_dataset(&small_grid(), &sc, 1).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);

        let truncated = &bytes[..bytes.len() - 10];
        assert!(matches!(decode_dataset(truncated), Err(Error::TruncatedTensor { .. })));

        let mut wrong_version = bytes.clone();
        wrong_version[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(
            decode_dataset(&wrong_version),
            Err(Error::VersionMismatch { found: 999, .. })
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_dataset(&bad_magic), Err(Error::BadMagic { .. })));

        let mut bad_json = bytes.clone();
        bad_json[16] = b'#';
        assert!(matches!(decode_dataset(&bad_json), Err(Error::CorruptHeader(_))));

        assert!(matches!(decode_dataset(&bytes[..30]), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic() {
        let sc = ScenarioConfig::default();
        let ds = generate_dataset(&small_grid(), &sc, 2).unwrap();
        let (tr, va) = split(&ds, 0.75, 9).unwrap();
        assert_eq!((tr.len(), va.len()), (18, 6));
        assert_eq!(tr.meta.class_balance, 0.5);
        let a: HashSet<u64> = tr.samples.iter().map(|s| s.seed).collect();
        let b: HashSet<u64> = va.samples.iter().map(|s| s.seed).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(split(&ds, 0.75, 9).unwrap(), (tr, va));
        assert!(split(&ds, 0.01, 9).is_err());
        assert!(split(&ds, 1.0, 9).is_err());
    }

    #[test]
    fn subsample_keeps_balance() {
        let sc = ScenarioConfig::default();
        let ds = generate_dataset(&small_grid(), &sc, 2).unwrap();
        let sub = subsample(&ds, 10, 4).unwrap();
        assert_eq!(sub.len(), 10);
        assert_eq!(sub.meta.class_balance, 0.5);
        assert!(subsample(&ds, 25, 4).is_err());
    }
}
