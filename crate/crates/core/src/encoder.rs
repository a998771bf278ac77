//! Per-clip temporal feature encoder.
//!
//! Each width-k window (stride k/2) passes through a two-layer temporal
//! convolution emitting k/2 feature frames; window outputs are
//! concatenated and right-padded by repeating the final feature frame,
//! yielding `X` of shape `[F, D]`. The interface is pluggable: any map
//! from a sampled sequence to `[F, D]` features can stand in, including
//! features extracted offline by a real video backbone and ingested via
//! the dataset path.

use crate::array::Array;
use crate::param::ParamStore;
use crate::sampling::{window_starts, SampledSequence};
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};
use rand::Rng;

/// Encoder output `X = [x_1 .. x_F]` with the padding mask of its input.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub x: Array,
    pub pad_mask: Vec<bool>,
}

/// First-cycle feature rows `X' = X[0..k]`, used as a correlation kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleKernel {
    pub xp: Array,
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub feat_dim: usize,
    pub k: usize,
    /// When false the encoder parameters are excluded from updates.
    pub trainable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { in_channels: 8, hidden: 32, feat_dim: 32, k: 4, trainable: true }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        Encoder { cfg }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let c = &self.cfg;
        let std1 = (2.0 / (3.0 * c.in_channels as f64)).sqrt();
        let std2 = (2.0 / (2.0 * c.hidden as f64)).sqrt();
        store.insert("enc.w1", Array::randn(&[3, c.in_channels, c.hidden], std1, rng));
        store.insert("enc.b1", Array::zeros(&[c.hidden]));
        store.insert("enc.w2", Array::randn(&[2, c.hidden, c.feat_dim], std2, rng));
        store.insert("enc.b2", Array::zeros(&[c.feat_dim]));
    }

    /// Encode a sampled sequence into an `[F, feat_dim]` feature node.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sampled: &SampledSequence,
    ) -> Result<NodeId> {
        let k = self.cfg.k;
        let f = sampled.len();
        if f < k {
            return Err(Error::InvalidArgument(format!(
                "encode: F = {f} shorter than k = {k}"
            )));
        }
        let starts = window_starts(f, k)?;
        let x = tape.constant(sampled.frames.clone());
        let w1 = tape.param(store, "enc.w1")?;
        let b1 = tape.param(store, "enc.b1")?;
        let w2 = tape.param(store, "enc.w2")?;
        let b2 = tape.param(store, "enc.b2")?;

        let mut parts = Vec::with_capacity(starts.len() + 2);
        for s in starts {
            let clip = tape.slice_rows(x, s, s + k)?;
            let h = tape.conv1d(clip, w1, b1, 1, 1)?;
            let h = tape.relu(h);
            // Width-2 stride-2 pair reduction: k frames -> k/2 feature frames.
            let y = tape.conv1d(h, w2, b2, 2, 0)?;
            parts.push(y);
        }
        let body = tape.concat_rows(&parts)?;
        let produced = tape.value(body).rows();
        if produced < f {
            let last = tape.slice_rows(body, produced - 1, produced)?;
            let mut padded = vec![body];
            padded.extend(std::iter::repeat(last).take(f - produced));
            tape.concat_rows(&padded)
        } else {
            Ok(body)
        }
    }

    /// Encode off-tape, returning the feature values directly.
    pub fn encode_values(&self, store: &ParamStore, sampled: &SampledSequence) -> Result<FeatureMap> {
        let mut tape = Tape::new();
        let id = self.encode(&mut tape, store, sampled)?;
        Ok(FeatureMap { x: tape.value(id).clone(), pad_mask: sampled.pad_mask.clone() })
    }
}

/// Rows `0..k` of a feature map.
pub fn first_cycle(fm: &FeatureMap, k: usize) -> Result<CycleKernel> {
    if fm.x.rows() < k {
        return Err(Error::InvalidArgument(format!(
            "first_cycle: feature map has {} rows, need {k}",
            fm.x.rows()
        )));
    }
    let d = fm.x.row_size();
    Ok(CycleKernel {
        xp: Array::from_vec(&[k, d], fm.x.data()[..k * d].to_vec())?,
    })
}
