//! Adaptive first-cycle resampling and sliding-window clip extraction.
//!
//! Every sequence is resampled at rate R = k/N so its annotated first
//! cycle spans exactly k frames, normalizing action speed across inputs.

use crate::array::Array;
use crate::seqdata::RawSequence;
use crate::{Error, Result};

/// A speed-normalized sequence: `[F, D_in]` frames whose first k frames
/// are the resampled first cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    pub frames: Array,
    pub k: usize,
    /// Sampling rate R = k / N.
    pub rate: f64,
    pub source_id: String,
    /// True for real frames, false for batch padding.
    pub pad_mask: Vec<bool>,
}

impl SampledSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Resample `seq` so its first cycle spans k frames. Output frame i reads
/// source index `round(i/R)` clamped into the sequence (and into the first
/// cycle for i < k); `F = max(k, round(R * L))`.
pub fn sample(seq: &RawSequence, k: usize) -> Result<SampledSequence> {
    let l = seq.len();
    if l == 0 {
        return Err(Error::InvalidArgument(format!("sample: {} has no frames", seq.id)));
    }
    if k < 2 {
        return Err(Error::InvalidArgument("sample: k must be >= 2".into()));
    }
    let n = seq.first_cycle_end;
    let rate = k as f64 / n as f64;
    let f = round_half_up(rate * l as f64).max(k);
    let d = seq.channels();
    let mut frames = Array::zeros(&[f, d]);
    for i in 0..f {
        let mut src = round_half_up(i as f64 / rate).min(l - 1);
        if i < k {
            src = src.min(n - 1);
        }
        for c in 0..d {
            frames.set2(i, c, seq.frames.at2(src, c));
        }
    }
    Ok(SampledSequence {
        frames,
        k,
        rate,
        source_id: seq.id.clone(),
        pad_mask: vec![true; f],
    })
}

/// Window start indices for width-k clips at stride k/2; the last partial
/// window is dropped.
pub fn window_starts(f: usize, k: usize) -> Result<Vec<usize>> {
    if k % 2 != 0 {
        return Err(Error::InvalidArgument(format!("windows: k = {k} must be even")));
    }
    if f < k {
        return Err(Error::InvalidArgument(format!("windows: F = {f} shorter than k = {k}")));
    }
    let stride = k / 2;
    Ok((0..=(f - k) / stride).map(|w| w * stride).collect())
}

/// Materialized width-k clips of a sampled sequence.
pub fn windows(seq: &SampledSequence, k: usize) -> Result<Vec<Array>> {
    let starts = window_starts(seq.len(), k)?;
    let d = seq.frames.row_size();
    starts
        .into_iter()
        .map(|s| {
            Array::from_vec(&[k, d], seq.frames.data()[s * d..(s + k) * d].to_vec())
        })
        .collect()
}

/// Zero-pad a batch to the longest sequence; padded frames get a false mask.
pub fn pad_batch(batch: &[SampledSequence]) -> Result<Vec<SampledSequence>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("pad_batch: empty batch".into()));
    }
    let max_f = batch.iter().map(|s| s.len()).max().unwrap();
    Ok(batch
        .iter()
        .map(|s| {
            let d = s.frames.row_size();
            let mut frames = Array::zeros(&[max_f, d]);
            frames.data_mut()[..s.frames.len()].copy_from_slice(s.frames.data());
            let mut pad_mask = s.pad_mask.clone();
            pad_mask.resize(max_f, false);
            SampledSequence {
                frames,
                k: s.k,
                rate: s.rate,
                source_id: s.source_id.clone(),
                pad_mask,
            }
        })
        .collect())
}
