//! Training-knowledge augmentation: a bank of training-set first-cycle
//! embeddings, exhaustive top-K Euclidean retrieval, neighbor-kernel
//! correlation, and slot fusion (average / attention / max pooling).

use crate::array::Array;
use crate::config::{Fusion, SigmaRule};
use crate::encoder::Encoder;
use crate::mtgc::mtgc;
use crate::param::{read_named_arrays, write_named_arrays, ParamStore};
use crate::sampling::sample;
use crate::seqdata::RawSequence;
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};
use rand::Rng;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct StoreEntry {
    pub id: String,
    /// `[k, D]` first-cycle embedding.
    pub embedding: Array,
}

/// One embedding per training sequence, refreshed each epoch so entries
/// track the current encoder parameters.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingStore {
    pub entries: Vec<StoreEntry>,
    pub refreshed_at: u64,
}

/// Encode just the annotated first cycle of `seq` into a `[k, D]` embedding.
pub fn encode_first_cycle(
    encoder: &Encoder,
    params: &ParamStore,
    seq: &RawSequence,
    k: usize,
) -> Result<Array> {
    let n = seq.first_cycle_end;
    let d = seq.channels();
    let cycle = RawSequence {
        id: seq.id.clone(),
        frames: Array::from_vec(&[n, d], seq.frames.data()[..n * d].to_vec())?,
        first_cycle_end: n,
        count: 1,
        kind: seq.kind,
    };
    let sampled = sample(&cycle, k)?;
    let fm = encoder.encode_values(params, &sampled)?;
    Ok(fm.x)
}

impl EmbeddingStore {
    /// Build the bank from every sequence of the training set.
    pub fn build(
        encoder: &Encoder,
        params: &ParamStore,
        train_set: &[RawSequence],
        k: usize,
    ) -> Result<EmbeddingStore> {
        if train_set.is_empty() {
            return Err(Error::InvalidArgument("build_store: empty train set".into()));
        }
        let entries = train_set
            .iter()
            .map(|seq| {
                Ok(StoreEntry {
                    id: seq.id.clone(),
                    embedding: encode_first_cycle(encoder, params, seq, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingStore { entries, refreshed_at: 0 })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-encode every entry with the current encoder parameters.
    pub fn refresh(
        &mut self,
        encoder: &Encoder,
        params: &ParamStore,
        train_set: &[RawSequence],
        k: usize,
    ) -> Result<()> {
        for entry in &mut self.entries {
            let seq = train_set
                .iter()
                .find(|s| s.id == entry.id)
                .ok_or_else(|| Error::Data(format!("refresh: sequence {} missing", entry.id)))?;
            entry.embedding = encode_first_cycle(encoder, params, seq, k)?;
        }
        self.refreshed_at += 1;
        Ok(())
    }

    /// The K entries closest to `query` in flattened Euclidean distance,
    /// ascending; ties broken by ascending id. `exclude` drops the query's
    /// own entry when it is present in the bank.
    pub fn topk(&self, query: &Array, k: usize, exclude: Option<&str>) -> Result<Vec<&StoreEntry>> {
        let candidates: Vec<&StoreEntry> = self
            .entries
            .iter()
            .filter(|e| exclude != Some(e.id.as_str()))
            .collect();
        if k < 1 || k > candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "topk: K = {k} outside 1..={}",
                candidates.len()
            )));
        }
        let mut scored: Vec<(f64, &StoreEntry)> = candidates
            .into_iter()
            .map(|e| {
                if e.embedding.shape() != query.shape() {
                    return Err(Error::Shape(format!(
                        "topk: entry {} shape {:?} vs query {:?}",
                        e.id,
                        e.embedding.shape(),
                        query.shape()
                    )));
                }
                let dist = e
                    .embedding
                    .data()
                    .iter()
                    .zip(query.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Ok((dist, e))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|(da, ea), (db, eb)| {
            da.partial_cmp(db).unwrap().then_with(|| ea.id.cmp(&eb.id))
        });
        Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Array)> = self
            .entries
            .iter()
            .map(|e| (e.id.clone(), e.embedding.clone()))
            .collect();
        write_named_arrays(path, &entries)
    }

    pub fn load(path: &Path) -> Result<EmbeddingStore> {
        let entries = read_named_arrays(path)?
            .into_iter()
            .map(|(id, embedding)| StoreEntry { id, embedding })
            .collect();
        Ok(EmbeddingStore { entries, refreshed_at: 0 })
    }
}

/// Correlate the input's own kernel plus each neighbor kernel across the
/// feature map; slot 0 is the input's own response.
pub fn augment(
    tape: &mut Tape,
    fm: NodeId,
    own_kernel: NodeId,
    neighbors: &[Array],
    scales: &[usize],
    normalize: bool,
) -> Result<Vec<NodeId>> {
    let mut slots = Vec::with_capacity(neighbors.len() + 1);
    slots.push(mtgc(tape, fm, own_kernel, scales, normalize)?);
    for nb in neighbors {
        let kn = tape.constant(nb.clone());
        slots.push(mtgc(tape, fm, kn, scales, normalize)?);
    }
    Ok(slots)
}

/// Fuse K+1 `[F, S]` slot responses into one `[F, S]` feature.
///
/// Attention pooling learns a per-slot affine map shared across frames
/// and scales: `W = sigma(w * G' + b)`, `G'' = sum_i W_i . G'_i`.
pub fn attention_pool(
    tape: &mut Tape,
    params: &ParamStore,
    slots: &[NodeId],
    fusion: Fusion,
    sigma: SigmaRule,
) -> Result<NodeId> {
    if slots.is_empty() {
        return Err(Error::InvalidArgument("attention_pool: no slots".into()));
    }
    let shape = tape.value(slots[0]).shape().to_vec();
    let n = shape.iter().product::<usize>();
    let k1 = slots.len();
    match fusion {
        Fusion::Max => Ok(slots[k1.min(2) - 1]),
        Fusion::Average => {
            let mut acc = slots[0];
            for &s in &slots[1..] {
                acc = tape.add(acc, s)?;
            }
            Ok(tape.scale(acc, 1.0 / k1 as f64))
        }
        Fusion::Attention => {
            // Flatten slots into the columns of an [F*S, K+1] matrix.
            let flat: Vec<NodeId> = slots
                .iter()
                .map(|&s| tape.reshape(s, &[n]))
                .collect::<Result<_>>()?;
            let m = tape.stack_cols(&flat)?;
            let w = tape.param(params, "fuse.w")?;
            let b = tape.param(params, "fuse.b")?;
            if tape.value(w).shape() != [k1, k1] || tape.value(b).shape() != [1, k1] {
                return Err(Error::Shape(format!(
                    "attention_pool: fuse params sized for {:?}, need K+1 = {k1}",
                    tape.value(w).shape()
                )));
            }
            let logits = tape.matmul_nt(m, w)?;
            let ones = tape.constant(Array::filled(&[n, 1], 1.0));
            let bias = tape.matmul(ones, b)?;
            let logits = tape.add(logits, bias)?;
            let weights = match sigma {
                SigmaRule::Sigmoid => tape.sigmoid(logits),
                SigmaRule::Softmax => tape.softmax_rows(logits)?,
            };
            let weighted = tape.mul(weights, m)?;
            let col_ones = tape.constant(Array::filled(&[k1, 1], 1.0));
            let fused = tape.matmul(weighted, col_ones)?;
            tape.reshape(fused, &shape)
        }
    }
}

/// Insert (or resize) the attention-pool parameters for K neighbors.
pub fn init_fusion_params<R: Rng>(store: &mut ParamStore, k_neighbors: usize, _rng: &mut R) {
    let k1 = k_neighbors + 1;
    let needs = match store.get("fuse.w") {
        Some(p) => p.value.shape() != [k1, k1],
        None => true,
    };
    if needs {
        // Zero init: every slot weight starts at sigmoid(0) = 0.5.
        store.insert("fuse.w", Array::zeros(&[k1, k1]));
        store.insert("fuse.b", Array::zeros(&[1, k1]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::mtgc::scales_default;
    use crate::seqdata::{generate_dataset, GenRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_encoder() -> (Encoder, ParamStore) {
        let enc = Encoder::new(EncoderConfig {
            in_channels: 8,
            hidden: 4,
            feat_dim: 3,
            ..Default::default()
        });
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        enc.init_params(&mut params, &mut rng);
        (enc, params)
    }

    #[test]
    fn store_has_one_entry_per_training_sequence() {
        let (enc, params) = tiny_encoder();
        for n in [1usize, 5, 12] {
            let ds = generate_dataset(&GenRanges::default(), n, 3, "t").unwrap();
            let store = EmbeddingStore::build(&enc, &params, &ds.sequences, 4).unwrap();
            assert_eq!(store.len(), n);
            assert_eq!(store.entries[0].embedding.shape(), &[4, 3]);
        }
        assert!(EmbeddingStore::build(&enc, &params, &[], 4).is_err());
    }

    #[test]
    fn rebuild_with_unchanged_encoder_is_identical() {
        let (enc, params) = tiny_encoder();
        let ds = generate_dataset(&GenRanges::default(), 4, 3, "t").unwrap();
        let a = EmbeddingStore::build(&enc, &params, &ds.sequences, 4).unwrap();
        let b = EmbeddingStore::build(&enc, &params, &ds.sequences, 4).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn refresh_tracks_parameter_updates() {
        let (enc, mut params) = tiny_encoder();
        let ds = generate_dataset(&GenRanges::default(), 4, 3, "t").unwrap();
        let mut store = EmbeddingStore::build(&enc, &params, &ds.sequences, 4).unwrap();
        let before = store.entries.clone();
        // Frozen encoder: refresh is a no-op on the embeddings.
        store.refresh(&enc, &params, &ds.sequences, 4).unwrap();
        assert_eq!(store.entries, before);
        assert_eq!(store.refreshed_at, 1);
        // Perturb a weight: at least one entry must change.
        params.get_mut("enc.w1").unwrap().value.data_mut()[0] += 0.5;
        store.refresh(&enc, &params, &ds.sequences, 4).unwrap();
        assert_ne!(store.entries, before);
        assert_eq!(store.len(), before.len());
    }

    #[test]
    fn topk_exact_match_comes_first() {
        let mk = |id: &str, v: f64| StoreEntry {
            id: id.into(),
            embedding: Array::filled(&[2, 2], v),
        };
        let store = EmbeddingStore {
            entries: vec![mk("a", 1.0), mk("b", 3.0), mk("c", 2.0)],
            refreshed_at: 0,
        };
        let hits = store.topk(&Array::filled(&[2, 2], 3.0), 2, None).unwrap();
        assert_eq!(hits[0].id, "b");
        assert_eq!(hits[1].id, "c");
        assert!(store.topk(&Array::filled(&[2, 2], 0.0), 4, None).is_err());
    }

    #[test]
    fn topk_ties_break_by_id_and_order_is_stable() {
        let mk = |id: &str, v: f64| StoreEntry {
            id: id.into(),
            embedding: Array::filled(&[1], v),
        };
        let mut store = EmbeddingStore {
            entries: vec![mk("z", 1.0), mk("a", 1.0), mk("m", 0.0)],
            refreshed_at: 0,
        };
        let q = Array::filled(&[1], 1.0);
        let hits = store.topk(&q, 3, None).unwrap();
        let ids: Vec<_> = hits.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids, vec!["a", "z", "m"]);
        // Permuting entry order does not change the result.
        store.entries.reverse();
        let hits2 = store.topk(&q, 3, None).unwrap();
        let ids2: Vec<_> = hits2.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn topk_matches_exhaustive_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let entries: Vec<StoreEntry> = (0..50)
            .map(|i| StoreEntry {
                id: format!("e{i:03}"),
                embedding: Array::randn(&[3, 2], 1.0, &mut rng),
            })
            .collect();
        let store = EmbeddingStore { entries: entries.clone(), refreshed_at: 0 };
        let query = Array::randn(&[3, 2], 1.0, &mut rng);
        let hits = store.topk(&query, 10, None).unwrap();
        // Independent oracle: full sort of (distance, id) pairs.
        let mut oracle: Vec<(f64, String)> = entries
            .iter()
            .map(|e| {
                let d: f64 = e
                    .embedding
                    .data()
                    .iter()
                    .zip(query.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (d, e.id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        for (hit, (_, id)) in hits.iter().zip(&oracle) {
            assert_eq!(&hit.id, id);
        }
    }

    #[test]
    fn augment_slots_match_standalone_mtgc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fm_arr = Array::randn(&[12, 3], 1.0, &mut rng);
        let own_arr = Array::randn(&[4, 3], 1.0, &mut rng);
        let n1 = Array::randn(&[4, 3], 1.0, &mut rng);
        let n2 = Array::randn(&[4, 3], 1.0, &mut rng);
        let scales = scales_default();
        let mut tape = Tape::new();
        let fm = tape.constant(fm_arr.clone());
        let own = tape.constant(own_arr.clone());
        let slots = augment(&mut tape, fm, own, &[n1.clone(), n2.clone()], &scales, true).unwrap();
        assert_eq!(slots.len(), 3);
        for (slot, kernel) in slots.iter().zip([&own_arr, &n1, &n2]) {
            let mut solo = Tape::new();
            let f = solo.constant(fm_arr.clone());
            let k = solo.constant(kernel.clone());
            let g = mtgc(&mut solo, f, k, &scales, true).unwrap();
            assert_eq!(tape.value(*slot).data(), solo.value(g).data());
        }
        // A neighbor identical to the own kernel reproduces slot 0.
        let mut tape2 = Tape::new();
        let fm2 = tape2.constant(fm_arr.clone());
        let own2 = tape2.constant(own_arr.clone());
        let slots2 = augment(&mut tape2, fm2, own2, &[own_arr.clone()], &scales, true).unwrap();
        assert_eq!(tape2.value(slots2[0]).data(), tape2.value(slots2[1]).data());
    }

    #[test]
    fn zero_affine_params_give_half_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let slots_arr: Vec<Array> = (0..3).map(|_| Array::randn(&[5, 3], 1.0, &mut rng)).collect();
        let mut params = ParamStore::new();
        init_fusion_params(&mut params, 2, &mut rng);
        let mut tape = Tape::new();
        let slots: Vec<NodeId> = slots_arr.iter().map(|a| tape.constant(a.clone())).collect();
        let fused =
            attention_pool(&mut tape, &params, &slots, Fusion::Attention, SigmaRule::Sigmoid)
                .unwrap();
        for i in 0..15 {
            let expect: f64 = 0.5 * slots_arr.iter().map(|a| a.data()[i]).sum::<f64>();
            assert!((tape.value(fused).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_pool_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k1 = 4;
        let slots_arr: Vec<Array> = (0..k1).map(|_| Array::randn(&[6, 3], 1.0, &mut rng)).collect();
        let mut params = ParamStore::new();
        params.insert("fuse.w", Array::randn(&[k1, k1], 0.5, &mut rng));
        params.insert("fuse.b", Array::randn(&[1, k1], 0.5, &mut rng));
        let mut tape = Tape::new();
        let slots: Vec<NodeId> = slots_arr.iter().map(|a| tape.constant(a.clone())).collect();
        let fused =
            attention_pool(&mut tape, &params, &slots, Fusion::Attention, SigmaRule::Sigmoid)
                .unwrap();
        let w = &params.get("fuse.w").unwrap().value;
        let b = &params.get("fuse.b").unwrap().value;
        for e in 0..18 {
            // Independent weighted-sum loop.
            let mut expect = 0.0;
            for i in 0..k1 {
                let mut logit = b.data()[i];
                for j in 0..k1 {
                    logit += w.at2(i, j) * slots_arr[j].data()[e];
                }
                expect += crate::kernels::sigmoid(logit) * slots_arr[i].data()[e];
            }
            assert!((tape.value(fused).data()[e] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn single_slot_attention_is_gated_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let slot = Array::randn(&[4, 2], 1.0, &mut rng);
        let mut params = ParamStore::new();
        init_fusion_params(&mut params, 0, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(slot.clone());
        let fused = attention_pool(&mut tape, &params, &[s], Fusion::Attention, SigmaRule::Sigmoid)
            .unwrap();
        for i in 0..8 {
            assert!((tape.value(fused).data()[i] - 0.5 * slot.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_fusion_selects_nearest_neighbor_slot() {
        let mut tape = Tape::new();
        let params = ParamStore::new();
        let a = tape.constant(Array::filled(&[2, 2], 1.0));
        let b = tape.constant(Array::filled(&[2, 2], 2.0));
        let c = tape.constant(Array::filled(&[2, 2], 3.0));
        let fused =
            attention_pool(&mut tape, &params, &[a, b, c], Fusion::Max, SigmaRule::Sigmoid)
                .unwrap();
        assert_eq!(tape.value(fused).data(), tape.value(b).data());
        // With no neighbors, max falls back to the own slot.
        let own_only =
            attention_pool(&mut tape, &params, &[a], Fusion::Max, SigmaRule::Sigmoid).unwrap();
        assert_eq!(own_only, a);
    }

    #[test]
    fn store_persistence_round_trip() {
        let (enc, params) = tiny_encoder();
        let ds = generate_dataset(&GenRanges::default(), 3, 3, "t").unwrap();
        let store = EmbeddingStore::build(&enc, &params, &ds.sequences, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(loaded.entries, store.entries);
    }
}
