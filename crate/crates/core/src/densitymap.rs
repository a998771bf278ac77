//! Density-map ground truth and count extraction.
//!
//! The first cycle's dense target comes from a Gaussian whose mu +/- 3*sigma
//! interval spans the cycle's frame centers; each frame integrates the
//! density over its unit bin. Summing a density map yields the count.

use crate::array::Array;
use crate::sampling::SampledSequence;
use crate::seqdata::RawSequence;
use crate::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Per-frame density with its padding mask; masked entries are exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    values: Array,
    pub pad_mask: Vec<bool>,
}

impl DensityMap {
    pub fn new(mut values: Array, pad_mask: Vec<bool>) -> Result<Self> {
        if values.shape().len() != 1 || values.len() != pad_mask.len() {
            return Err(Error::Shape(format!(
                "density map {:?} vs mask of {}",
                values.shape(),
                pad_mask.len()
            )));
        }
        for (v, &keep) in values.data_mut().iter_mut().zip(&pad_mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(DensityMap { values, pad_mask })
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Predicted count: sum over unmasked frames.
    pub fn count(&self) -> f64 {
        count_from_density(self)
    }
}

pub fn count_from_density(map: &DensityMap) -> f64 {
    map.values
        .data()
        .iter()
        .zip(&map.pad_mask)
        .filter(|(_, &keep)| keep)
        .map(|(v, _)| v)
        .sum()
}

/// Unit-bin integrals of a Gaussian over a k-frame cycle: mu = (1+k)/2,
/// sigma = (k-1)/6, d_i = Phi(i+0.5) - Phi(i-0.5) for i in 1..=k.
pub fn gaussian_cycle_density(k: usize) -> Result<Array> {
    if k < 1 {
        return Err(Error::InvalidArgument("gaussian_cycle_density: k < 1".into()));
    }
    if k == 1 {
        return Ok(Array::from_vec(&[1], vec![1.0])?);
    }
    let mu = (1.0 + k as f64) / 2.0;
    let sigma = (k as f64 - 1.0) / 6.0;
    let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let data = (1..=k)
        .map(|i| normal.cdf(i as f64 + 0.5) - normal.cdf(i as f64 - 0.5))
        .collect();
    Ok(Array::from_vec(&[k], data)?)
}

/// Dense target for a sampled sequence: the first k frames carry the
/// Gaussian cycle density, the remaining frames have no dense target
/// (supervision there is count-level only).
pub fn gt_density_for_sequence(seq: &RawSequence, sampled: &SampledSequence) -> Result<DensityMap> {
    if seq.id != sampled.source_id {
        return Err(Error::InvalidArgument(format!(
            "gt_density_for_sequence: sequence {} vs sampled {}",
            seq.id, sampled.source_id
        )));
    }
    let k = sampled.k;
    let f = sampled.len();
    let cycle = gaussian_cycle_density(k)?;
    let mut values = Array::zeros(&[f]);
    values.data_mut()[..k].copy_from_slice(cycle.data());
    DensityMap::new(values, sampled.pad_mask.clone())
}

/// Export a density map as `frame_index,value` CSV.
pub fn export_csv(map: &DensityMap, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "frame_index,value")?;
    for (i, v) in map.values.data().iter().enumerate() {
        writeln!(w, "{i},{v:.12}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample;
    use crate::seqdata::{generate, SynthSpec, Waveform};

    #[test]
    fn degenerate_single_frame_cycle() {
        assert_eq!(gaussian_cycle_density(1).unwrap().data(), &[1.0]);
    }

    #[test]
    fn k4_density_shape_and_mass() {
        let d = gaussian_cycle_density(4).unwrap();
        let v = d.data();
        assert!((v[1] - v[2]).abs() < 1e-12);
        assert!((v[0] - v[3]).abs() < 1e-12);
        assert!(v[1] > v[0]);
        // Bins span mu +/- 4*sigma, so nearly all mass is captured.
        let sum: f64 = v.iter().sum();
        assert!((0.999..=1.0).contains(&sum), "sum = {sum}");
    }

    #[test]
    fn mass_within_confidence_band_for_all_k() {
        for k in 2..=64 {
            let d = gaussian_cycle_density(k).unwrap();
            let sum: f64 = d.data().iter().sum();
            assert!((0.99..=1.0).contains(&sum), "k = {k}, sum = {sum}");
            // Symmetric, strictly positive, unimodal.
            for i in 0..k {
                assert!(d.data()[i] > 0.0);
                assert!((d.data()[i] - d.data()[k - 1 - i]).abs() < 1e-12);
            }
            for i in 0..k / 2 {
                assert!(d.data()[i + 1] >= d.data()[i] - 1e-12);
            }
        }
    }

    #[test]
    fn count_ignores_masked_frames() {
        let values = Array::from_vec(&[4], vec![0.5, 0.5, 0.3, 0.3]).unwrap();
        let map = DensityMap::new(values, vec![true, true, false, false]).unwrap();
        assert_eq!(map.count(), 1.0);
        // Masked entries are zeroed on construction.
        assert_eq!(map.values().data()[2], 0.0);
    }

    #[test]
    fn zero_map_counts_zero() {
        let map = DensityMap::new(Array::zeros(&[5]), vec![true; 5]).unwrap();
        assert_eq!(map.count(), 0.0);
    }

    #[test]
    fn tiled_cycles_count_near_truth() {
        // Tile the per-cycle density across 5 annotated cycles.
        let k = 4;
        let cycle = gaussian_cycle_density(k).unwrap();
        let mut values = Array::zeros(&[5 * k]);
        for c in 0..5 {
            values.data_mut()[c * k..(c + 1) * k].copy_from_slice(cycle.data());
        }
        let map = DensityMap::new(values, vec![true; 5 * k]).unwrap();
        assert!((map.count() - 5.0).abs() < 0.05);
    }

    #[test]
    fn count_is_linear_in_scale() {
        let values = Array::from_vec(&[3], vec![0.2, 0.5, 0.1]).unwrap();
        let map = DensityMap::new(values.clone(), vec![true; 3]).unwrap();
        let scaled = DensityMap::new(values.map(|v| v * 3.0), vec![true; 3]).unwrap();
        assert!((scaled.count() - 3.0 * map.count()).abs() < 1e-12);
    }

    #[test]
    fn gt_density_covers_first_cycle_only() {
        let spec = SynthSpec {
            base_period: 10,
            count: 3,
            speed_drift: 1.0,
            noise_std: 0.0,
            waveform: Waveform::Sine,
            channels: 2,
            seed: 1,
        };
        let seq = generate("s", &spec).unwrap();
        let sampled = sample(&seq, 4).unwrap();
        let gt = gt_density_for_sequence(&seq, &sampled).unwrap();
        let cycle = gaussian_cycle_density(4).unwrap();
        assert_eq!(&gt.values().data()[..4], cycle.data());
        assert!(gt.values().data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gt_density_rejects_id_mismatch() {
        let spec = SynthSpec {
            base_period: 10,
            count: 2,
            speed_drift: 1.0,
            noise_std: 0.0,
            waveform: Waveform::Sine,
            channels: 1,
            seed: 1,
        };
        let seq = generate("a", &spec).unwrap();
        let other = generate("b", &spec).unwrap();
        let sampled = sample(&other, 4).unwrap();
        assert!(gt_density_for_sequence(&seq, &sampled).is_err());
    }
}
