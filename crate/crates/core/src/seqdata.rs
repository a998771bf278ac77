//! Annotated repetitive sequences: synthetic generation, dataset files,
//! and train/val/test splitting.
//!
//! A dataset directory holds `annotations.jsonl` (one header line, then
//! one record per sequence) and a `frames/<id>.bin` blob of little-endian
//! f64 frame features per sequence. Externally extracted per-frame
//! features can be ingested by writing the same layout.

use crate::array::Array;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

pub const DEFAULT_MAX_LEN: usize = 50_000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Pulse,
    Sine,
    Sawtooth,
}

impl Waveform {
    pub const ALL: [Waveform; 3] = [Waveform::Pulse, Waveform::Sine, Waveform::Sawtooth];

    pub fn as_str(&self) -> &'static str {
        match self {
            Waveform::Pulse => "pulse",
            Waveform::Sine => "sine",
            Waveform::Sawtooth => "sawtooth",
        }
    }

    /// Waveform value at phase in [0, 1).
    pub fn eval(&self, phase: f64) -> f64 {
        match self {
            Waveform::Pulse => {
                let z = (phase - 0.5) / 0.1;
                (-0.5 * z * z).exp()
            }
            Waveform::Sine => (2.0 * std::f64::consts::PI * phase).sin(),
            Waveform::Sawtooth => 2.0 * phase - 1.0,
        }
    }
}

impl fmt::Display for Waveform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Waveform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pulse" => Ok(Waveform::Pulse),
            "sine" => Ok(Waveform::Sine),
            "sawtooth" => Ok(Waveform::Sawtooth),
            other => Err(Error::InvalidArgument(format!("unknown waveform {other}"))),
        }
    }
}

/// A feature time series with its first-cycle bound and ground-truth count.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub id: String,
    /// `[L, D_in]` per-frame feature vectors.
    pub frames: Array,
    /// N: frames `0..N` are the first action cycle.
    pub first_cycle_end: usize,
    pub count: u32,
    /// Action type tag; the waveform doubles as the class for disjoint splits.
    pub kind: Waveform,
}

impl RawSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.row_size()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if self.first_cycle_end < 1 || self.first_cycle_end > l {
            return Err(Error::Data(format!(
                "{}: first_cycle_end {} outside 1..={}",
                self.id, self.first_cycle_end, l
            )));
        }
        if self.count < 1 {
            return Err(Error::Data(format!("{}: count must be >= 1", self.id)));
        }
        Ok(())
    }
}

/// Recipe for one synthetic repetitive sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub base_period: usize,
    pub count: u32,
    /// Multiplicative per-cycle period factor; > 1 slows down over time.
    pub speed_drift: f64,
    pub noise_std: f64,
    pub waveform: Waveform,
    pub channels: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_period < 4 {
            return Err(Error::InvalidArgument("base_period must be >= 4".into()));
        }
        if !(0.5..=2.0).contains(&self.speed_drift) {
            return Err(Error::InvalidArgument("speed_drift must be in [0.5, 2.0]".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        if self.count < 1 {
            return Err(Error::InvalidArgument("count must be >= 1".into()));
        }
        if self.channels < 1 {
            return Err(Error::InvalidArgument("channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cycle lengths under the drift schedule: cycle c spans
/// `round(base_period * drift^c)` frames, at least 2.
pub fn cycle_lengths(spec: &SynthSpec) -> Vec<usize> {
    (0..spec.count)
        .map(|c| {
            let p = spec.base_period as f64 * spec.speed_drift.powi(c as i32);
            ((p + 0.5).floor() as usize).max(2)
        })
        .collect()
}

pub fn generate(id: &str, spec: &SynthSpec) -> Result<RawSequence> {
    generate_with_max(id, spec, DEFAULT_MAX_LEN)
}

/// Deterministic synthesis: cycle c is cycle 0 time-rescaled by
/// `speed_drift^c`, each channel an amplitude/phase-shifted copy of the
/// waveform, plus optional Gaussian noise.
pub fn generate_with_max(id: &str, spec: &SynthSpec, max_len: usize) -> Result<RawSequence> {
    spec.validate()?;
    let lengths = cycle_lengths(spec);
    let total: usize = lengths.iter().sum();
    if total > max_len {
        return Err(Error::Generation(format!(
            "sequence length {total} exceeds maximum {max_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amps: Vec<f64> = (0..spec.channels).map(|_| rng.gen_range(0.5..1.5)).collect();
    let shifts: Vec<f64> = (0..spec.channels).map(|_| rng.gen_range(0.0..1.0)).collect();
    let noise = rand_distr::Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).unwrap();

    let mut frames = Array::zeros(&[total, spec.channels]);
    let mut t = 0;
    for &period in &lengths {
        for i in 0..period {
            let phase = i as f64 / period as f64;
            for ch in 0..spec.channels {
                let mut v = amps[ch] * spec.waveform.eval((phase + shifts[ch]).fract());
                if spec.noise_std > 0.0 {
                    v += rng.sample(noise);
                }
                frames.set2(t, ch, v);
            }
            t += 1;
        }
    }
    let seq = RawSequence {
        id: id.to_string(),
        frames,
        first_cycle_end: lengths[0],
        count: spec.count,
        kind: spec.waveform,
    };
    seq.validate()?;
    Ok(seq)
}

/// Sampling ranges for building whole datasets of synthetic sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenRanges {
    pub base_period: (usize, usize),
    pub count: (u32, u32),
    pub drift: (f64, f64),
    pub noise_std: f64,
    pub waveforms: Vec<Waveform>,
    pub channels: usize,
}

impl Default for GenRanges {
    fn default() -> Self {
        GenRanges {
            base_period: (8, 20),
            count: (2, 15),
            drift: (0.9, 1.15),
            noise_std: 0.05,
            waveforms: Waveform::ALL.to_vec(),
            channels: 8,
        }
    }
}

impl GenRanges {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> SynthSpec {
        SynthSpec {
            base_period: rng.gen_range(self.base_period.0..=self.base_period.1),
            count: rng.gen_range(self.count.0..=self.count.1),
            speed_drift: rng.gen_range(self.drift.0..=self.drift.1),
            noise_std: self.noise_std,
            waveform: self.waveforms[rng.gen_range(0..self.waveforms.len())],
            channels: self.channels,
            seed: rng.gen(),
        }
    }
}

pub fn generate_dataset(ranges: &GenRanges, n: usize, seed: u64, prefix: &str) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let spec = ranges.sample(&mut rng);
        sequences.push(generate(&format!("{prefix}{i:04}"), &spec)?);
    }
    Ok(Dataset { sequences })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<RawSequence>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Annotation {
    id: String,
    length: usize,
    first_cycle_end: usize,
    count: u32,
    #[serde(rename = "type")]
    kind: Waveform,
    channels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RawSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn subset(&self, ids: &[String]) -> Dataset {
        Dataset {
            sequences: ids
                .iter()
                .filter_map(|id| self.get(id))
                .cloned()
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("frames"))?;
        let mut meta = std::fs::File::create(dir.join("annotations.jsonl"))?;
        let header = DatasetHeader { format: "fcarac-dataset".into(), version: 1 };
        writeln!(meta, "{}", serde_json::to_string(&header)?)?;
        for seq in &self.sequences {
            seq.validate()?;
            let ann = Annotation {
                id: seq.id.clone(),
                length: seq.len(),
                first_cycle_end: seq.first_cycle_end,
                count: seq.count,
                kind: seq.kind,
                channels: seq.channels(),
            };
            writeln!(meta, "{}", serde_json::to_string(&ann)?)?;
            let mut blob = Vec::with_capacity(seq.frames.len() * 8);
            for v in seq.frames.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(dir.join("frames").join(format!("{}.bin", seq.id)), blob)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta = std::fs::File::open(dir.join("annotations.jsonl"))?;
        let mut lines = std::io::BufReader::new(meta).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Record { index: 0, msg: "missing header line".into() })??;
        let header: DatasetHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Record { index: 0, msg: format!("bad header: {e}") })?;
        if header.format != "fcarac-dataset" {
            return Err(Error::Record {
                index: 0,
                msg: format!("unexpected format {}", header.format),
            });
        }
        let mut sequences = Vec::new();
        for (index, line) in lines.enumerate() {
            let index = index + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ann: Annotation = serde_json::from_str(&line)
                .map_err(|e| Error::Record { index, msg: e.to_string() })?;
            let blob = std::fs::read(dir.join("frames").join(format!("{}.bin", ann.id)))
                .map_err(|e| Error::Record { index, msg: format!("frames blob: {e}") })?;
            let expected = ann.length * ann.channels * 8;
            if blob.len() != expected {
                return Err(Error::Record {
                    index,
                    msg: format!("frames blob has {} bytes, expected {expected}", blob.len()),
                });
            }
            let data: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let seq = RawSequence {
                id: ann.id,
                frames: Array::from_vec(&[ann.length, ann.channels], data)?,
                first_cycle_end: ann.first_cycle_end,
                count: ann.count,
                kind: ann.kind,
            };
            seq.validate()
                .map_err(|e| Error::Record { index, msg: e.to_string() })?;
            sequences.push(seq);
        }
        Ok(Dataset { sequences })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SplitMode {
    Regular,
    DisjointTypes,
}

/// Train/val/test id lists; `disjoint` marks the unseen-type setting.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub disjoint: bool,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Data(format!("id {id} appears in more than one split")));
            }
        }
        Ok(())
    }
}

/// Regular mode: 70/10/20 by seeded id hash. Disjoint mode: whole waveform
/// types assigned to splits so no test type appears in train.
pub fn resplit(dataset: &Dataset, mode: SplitMode, seed: u64) -> Result<DatasetSplit> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("resplit: empty dataset".into()));
    }
    let split = match mode {
        SplitMode::Regular => {
            let mut split = DatasetSplit::default();
            for seq in &dataset.sequences {
                let x = fnv1a64(seed, seq.id.as_bytes()) as f64 / u64::MAX as f64;
                if x < 0.7 {
                    split.train.push(seq.id.clone());
                } else if x < 0.8 {
                    split.val.push(seq.id.clone());
                } else {
                    split.test.push(seq.id.clone());
                }
            }
            split
        }
        SplitMode::DisjointTypes => {
            let mut kinds: Vec<Waveform> = Vec::new();
            for seq in &dataset.sequences {
                if !kinds.contains(&seq.kind) {
                    kinds.push(seq.kind);
                }
            }
            if kinds.len() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "disjoint resplit needs >= 3 types, found {}",
                    kinds.len()
                )));
            }
            kinds.sort_by_key(|k| k.as_str());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Fisher-Yates over type groups.
            for i in (1..kinds.len()).rev() {
                kinds.swap(i, rng.gen_range(0..=i));
            }
            let t = kinds.len();
            let n_test = ((t as f64 * 0.2).round() as usize).max(1);
            let n_val = ((t as f64 * 0.1).round() as usize).max(1);
            let test_kinds = &kinds[..n_test];
            let val_kinds = &kinds[n_test..n_test + n_val];
            let mut split = DatasetSplit { disjoint: true, ..Default::default() };
            for seq in &dataset.sequences {
                if test_kinds.contains(&seq.kind) {
                    split.test.push(seq.id.clone());
                } else if val_kinds.contains(&seq.kind) {
                    split.val.push(seq.id.clone());
                } else {
                    split.train.push(seq.id.clone());
                }
            }
            split
        }
    };
    split.validate()?;
    Ok(split)
}

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
