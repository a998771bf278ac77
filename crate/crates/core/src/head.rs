//! Density prediction head, loss terms, and the assembled model.
//!
//! The head maps a per-frame context feature `[F, C]` to a density value
//! per frame through three width-3 temporal convolutions with a tanh
//! output. The loss combines a dense first-cycle MSE with a relative
//! count error over the whole map.

use crate::array::Array;
use crate::baselines;
use crate::config::{Config, Variant};
use crate::densitymap::{gaussian_cycle_density, gt_density_for_sequence, DensityMap};
use crate::encoder::{Encoder, EncoderConfig};
use crate::mtgc::mtgc;
use crate::param::ParamStore;
use crate::sampling::sample;
use crate::seqdata::RawSequence;
use crate::tape::{NodeId, Tape};
use crate::tka::{attention_pool, augment, init_fusion_params, EmbeddingStore};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const HEAD_H1: usize = 16;
const HEAD_H2: usize = 8;

pub fn init_head_params<R: Rng>(store: &mut ParamStore, in_channels: usize, rng: &mut R) {
    let std1 = (2.0 / (3.0 * in_channels as f64)).sqrt();
    let std2 = (2.0 / (3.0 * HEAD_H1 as f64)).sqrt();
    store.insert("head.w1", Array::randn(&[3, in_channels, HEAD_H1], std1, rng));
    store.insert("head.b1", Array::zeros(&[HEAD_H1]));
    store.insert("head.w2", Array::randn(&[3, HEAD_H1, HEAD_H2], std2, rng));
    store.insert("head.b2", Array::zeros(&[HEAD_H2]));
    // Small final layer so an untrained model predicts near-zero density.
    store.insert("head.w3", Array::randn(&[3, HEAD_H2, 1], 0.01, rng));
    store.insert("head.b3", Array::zeros(&[1]));
}

/// Per-frame density from a `[F, C]` context node; padded frames are
/// forced to exactly zero. Values lie in (-1, 1) from the tanh output.
pub fn head_forward(
    tape: &mut Tape,
    store: &ParamStore,
    context: NodeId,
    pad_mask: &[bool],
) -> Result<NodeId> {
    let f = tape.value(context).rows();
    if pad_mask.len() != f {
        return Err(Error::Shape(format!(
            "head_forward: mask of {} for {f} frames",
            pad_mask.len()
        )));
    }
    let w1 = tape.param(store, "head.w1")?;
    let b1 = tape.param(store, "head.b1")?;
    let w2 = tape.param(store, "head.w2")?;
    let b2 = tape.param(store, "head.b2")?;
    let w3 = tape.param(store, "head.w3")?;
    let b3 = tape.param(store, "head.b3")?;
    let h = tape.conv1d(context, w1, b1, 1, 1)?;
    let h = tape.relu(h);
    let h = tape.conv1d(h, w2, b2, 1, 1)?;
    let h = tape.relu(h);
    let h = tape.conv1d(h, w3, b3, 1, 1)?;
    let h = tape.tanh(h);
    let flat = tape.reshape(h, &[f])?;
    let mask = tape.constant(Array::from_vec(
        &[f],
        pad_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?);
    tape.mul(flat, mask)
}

/// Scalar loss values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub l_mse: f64,
    pub l_mae: f64,
    pub total: f64,
    pub alpha: f64,
}

/// Loss nodes: `total = alpha * mse + mae` where `mse` averages the
/// squared dense error over the k first-cycle frames and `mae` is the
/// relative count error `|sum(density) - G| / G`.
pub struct LossTerms {
    pub total: NodeId,
    pub mse: NodeId,
    pub report: LossReport,
}

pub fn loss_terms(
    tape: &mut Tape,
    density: NodeId,
    cycle: &Array,
    gt_count: f64,
    alpha: f64,
) -> Result<LossTerms> {
    if gt_count <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "loss_terms: ground-truth count {gt_count} must be positive"
        )));
    }
    let k = cycle.len();
    let first = tape.slice_rows(density, 0, k)?;
    let target = tape.constant(cycle.clone());
    let diff = tape.sub(first, target)?;
    let sq = tape.mul(diff, diff)?;
    let sq_sum = tape.sum(sq);
    let mse = tape.scale(sq_sum, 1.0 / k as f64);

    let pred_count = tape.sum(density);
    let gt = tape.constant(Array::scalar(gt_count));
    let err = tape.sub(pred_count, gt)?;
    let abs_err = tape.abs(err);
    let mae = tape.scale(abs_err, 1.0 / gt_count);

    let weighted = tape.scale(mse, alpha);
    let total = tape.add(weighted, mae)?;
    let report = LossReport {
        l_mse: tape.value(mse).value(),
        l_mae: tape.value(mae).value(),
        total: tape.value(total).value(),
        alpha,
    };
    Ok(LossTerms { total, mse, report })
}

/// One full forward pass: density prediction plus loss nodes.
pub struct Forward {
    pub density: DensityMap,
    pub terms: LossTerms,
}

/// Before/after first-cycle MSE of a test-time adaptation run.
#[derive(Clone, Copy, Debug)]
pub struct TtaReport {
    pub mse_before: f64,
    pub mse_after: f64,
    pub steps: usize,
}

/// Encoder, context module, and head with their shared parameter store.
#[derive(Clone)]
pub struct Model {
    pub cfg: Config,
    pub encoder: Encoder,
    pub params: ParamStore,
}

/// Context feature width the head consumes for a given configuration.
pub fn context_dim(cfg: &Config) -> usize {
    match cfg.baseline {
        Variant::Mtgc => cfg.scales.len(),
        Variant::Fcv => cfg.attn_dim,
        Variant::Vv => baselines::vv_context_dim(),
    }
}

impl Model {
    pub fn init(cfg: Config) -> Result<Model> {
        cfg.validate()?;
        let encoder = Encoder::new(EncoderConfig {
            in_channels: cfg.channels,
            hidden: cfg.enc_hidden,
            feat_dim: cfg.feat_dim,
            k: cfg.k,
            trainable: true,
        });
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        encoder.init_params(&mut params, &mut rng);
        init_head_params(&mut params, context_dim(&cfg), &mut rng);
        match cfg.baseline {
            Variant::Mtgc => init_fusion_params(&mut params, cfg.topk, &mut rng),
            Variant::Fcv => {
                baselines::init_fcv_params(&mut params, cfg.feat_dim, cfg.attn_dim, &mut rng)
            }
            Variant::Vv => {
                baselines::init_vv_params(&mut params, cfg.feat_dim, cfg.attn_dim, &mut rng)
            }
        }
        Ok(Model { cfg, encoder, params })
    }

    /// Forward pass; `retrieval` supplies the embedding bank and K for the
    /// knowledge-augmented path, `None` runs the plain first-cycle path.
    pub fn forward(
        &self,
        tape: &mut Tape,
        seq: &RawSequence,
        retrieval: Option<(&EmbeddingStore, usize)>,
    ) -> Result<Forward> {
        let k = self.cfg.k;
        let sampled = sample(seq, k)?;
        let fm = self.encoder.encode(tape, &self.params, &sampled)?;
        let context = match self.cfg.baseline {
            Variant::Mtgc => {
                let own = tape.slice_rows(fm, 0, k)?;
                match retrieval {
                    None => mtgc(tape, fm, own, &self.cfg.scales, self.cfg.normalize_mtgc)?,
                    Some((store, kk)) => {
                        let neighbors: Vec<Array> = if kk == 0 {
                            Vec::new()
                        } else {
                            let exclude =
                                if self.cfg.exclude_self { Some(seq.id.as_str()) } else { None };
                            store
                                .topk(tape.value(own), kk, exclude)?
                                .into_iter()
                                .map(|e| e.embedding.clone())
                                .collect()
                        };
                        let slots = augment(
                            tape,
                            fm,
                            own,
                            &neighbors,
                            &self.cfg.scales,
                            self.cfg.normalize_mtgc,
                        )?;
                        attention_pool(
                            tape,
                            &self.params,
                            &slots,
                            self.cfg.fusion,
                            self.cfg.sigma_rule,
                        )?
                    }
                }
            }
            Variant::Fcv => {
                if retrieval.is_some() {
                    return Err(Error::InvalidArgument(
                        "forward: retrieval is only supported by the main model".into(),
                    ));
                }
                baselines::fcv_forward(tape, &self.params, fm, k, self.cfg.attn_dim)?
            }
            Variant::Vv => {
                if retrieval.is_some() {
                    return Err(Error::InvalidArgument(
                        "forward: retrieval is only supported by the main model".into(),
                    ));
                }
                baselines::vv_forward(tape, &self.params, fm, self.cfg.attn_dim)?
            }
        };
        let density_node = head_forward(tape, &self.params, context, &sampled.pad_mask)?;
        let cycle = gaussian_cycle_density(k)?;
        let terms = loss_terms(tape, density_node, &cycle, seq.count as f64, self.cfg.alpha)?;
        // Also validates the sequence/sample pairing.
        let _ = gt_density_for_sequence(seq, &sampled)?;
        let density = DensityMap::new(tape.value(density_node).clone(), sampled.pad_mask.clone())?;
        Ok(Forward { density, terms })
    }

    /// Predicted density map for one sequence.
    pub fn predict(
        &self,
        seq: &RawSequence,
        retrieval: Option<(&EmbeddingStore, usize)>,
    ) -> Result<DensityMap> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, seq, retrieval)?.density)
    }

    /// Test-time adaptation: plain gradient steps on the first-cycle MSE,
    /// updating head parameters only.
    pub fn tta_adapt(&mut self, seq: &RawSequence, steps: usize, lr: f64) -> Result<TtaReport> {
        let mse_at = |model: &Model| -> Result<f64> {
            let mut tape = Tape::new();
            Ok(model.forward(&mut tape, seq, None)?.terms.report.l_mse)
        };
        let mse_before = mse_at(self)?;
        for _ in 0..steps {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, seq, None)?;
            let grads = tape.backward(fwd.terms.mse)?;
            grads.apply_to(&tape, &mut self.params)?;
            self.params.sgd_step(lr, |name| name.starts_with("head."))?;
        }
        let mse_after = if steps == 0 { mse_before } else { mse_at(self)? };
        Ok(TtaReport { mse_before, mse_after, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(cfg: Config, path: &Path) -> Result<Model> {
        cfg.validate()?;
        let encoder = Encoder::new(EncoderConfig {
            in_channels: cfg.channels,
            hidden: cfg.enc_hidden,
            feat_dim: cfg.feat_dim,
            k: cfg.k,
            trainable: true,
        });
        let params = ParamStore::load(path)?;
        Ok(Model { cfg, encoder, params })
    }
}
