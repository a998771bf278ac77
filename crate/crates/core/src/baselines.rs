//! Comparison baselines sharing the encoder, prediction head, losses and
//! test-time adaptation: first-cycle-to-video cross-attention (FC-V) and
//! video self-similarity (V-V).

use crate::array::Array;
use crate::param::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::Result;
use rand::Rng;

/// Channel count of the 3x3 convolution over the similarity matrix.
pub const VV_CHANNELS: usize = 32;
/// Adaptive-average-pool output size along the frame axis.
pub const VV_BINS: usize = 16;

/// Context feature width V-V feeds into the prediction head.
pub fn vv_context_dim() -> usize {
    VV_CHANNELS * VV_BINS
}

pub fn init_fcv_params<R: Rng>(store: &mut ParamStore, feat_dim: usize, dk: usize, rng: &mut R) {
    let std = (1.0 / feat_dim as f64).sqrt();
    store.insert("fcv.wq", Array::randn(&[feat_dim, dk], std, rng));
    store.insert("fcv.wk", Array::randn(&[feat_dim, dk], std, rng));
    store.insert("fcv.wv", Array::randn(&[feat_dim, dk], std, rng));
}

/// Cross-attention with the first cycle as query: `C = softmax(QK^T/sqrt(dk))V`
/// over all frames, then the k query outputs are distributed back over the
/// F frames through the transposed attention map.
pub fn fcv_forward(
    tape: &mut Tape,
    store: &ParamStore,
    fm: NodeId,
    k: usize,
    dk: usize,
) -> Result<NodeId> {
    let wq = tape.param(store, "fcv.wq")?;
    let wk = tape.param(store, "fcv.wk")?;
    let wv = tape.param(store, "fcv.wv")?;
    let first = tape.slice_rows(fm, 0, k)?;
    let q = tape.matmul(first, wq)?;
    let keys = tape.matmul(fm, wk)?;
    let values = tape.matmul(fm, wv)?;
    let logits = tape.matmul_nt(q, keys)?;
    let logits = tape.scale(logits, 1.0 / (dk as f64).sqrt());
    let attn = tape.softmax_rows(logits)?;
    let context = tape.matmul(attn, values)?;
    // [k,F]^T x [k,dk] -> [F,dk]: align the k attended rows to F frames.
    tape.matmul_tn(attn, context)
}

pub fn init_vv_params<R: Rng>(store: &mut ParamStore, feat_dim: usize, dk: usize, rng: &mut R) {
    let std = (1.0 / feat_dim as f64).sqrt();
    store.insert("vv.wq", Array::randn(&[feat_dim, dk], std, rng));
    store.insert("vv.wk", Array::randn(&[feat_dim, dk], std, rng));
    store.insert("vv.conv_w", Array::randn(&[VV_CHANNELS, 3, 3], (2.0 / 9.0f64).sqrt(), rng));
    store.insert("vv.conv_b", Array::zeros(&[VV_CHANNELS]));
}

/// Self-similarity context: `S = QK^T`, a 3x3 convolution lifts S to
/// `[32,F,F]`, and adaptive average pooling collapses the last axis to 16,
/// giving an `[F, 32*16]` feature.
pub fn vv_forward(tape: &mut Tape, store: &ParamStore, fm: NodeId, _dk: usize) -> Result<NodeId> {
    let wq = tape.param(store, "vv.wq")?;
    let wk = tape.param(store, "vv.wk")?;
    let cw = tape.param(store, "vv.conv_w")?;
    let cb = tape.param(store, "vv.conv_b")?;
    let q = tape.matmul(fm, wq)?;
    let keys = tape.matmul(fm, wk)?;
    let sim = tape.matmul_nt(q, keys)?;
    let ctx = tape.conv2d_same3(sim, cw, cb)?;
    tape.pool_last_axis(ctx, VV_BINS)
}
