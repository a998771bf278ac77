//! Multi-temporal-granularity convolution: a first-cycle kernel is
//! resampled to several temporal scales and each copy is correlated
//! across the whole feature map at stride 1; the per-scale columns are
//! concatenated into `G` of shape `[F, S]`.

use crate::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Default kernel scales; 3-5 around the k=4 cycle length.
pub fn scales_default() -> Vec<usize> {
    vec![3, 4, 5]
}

/// Correlate `kernel` (a `[k, D]` node) against `fm` (`[F, D]`) at every
/// scale; column j holds the scale-j response. When `normalize` is set
/// each column is divided by `scale * D` so responses are comparable
/// across scales.
pub fn mtgc(
    tape: &mut Tape,
    fm: NodeId,
    kernel: NodeId,
    scales: &[usize],
    normalize: bool,
) -> Result<NodeId> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("mtgc: no scales".into()));
    }
    let f = tape.value(fm).rows();
    let d = tape.value(fm).row_size();
    if tape.value(kernel).row_size() != d {
        return Err(Error::Shape(format!(
            "mtgc: kernel channels {} vs feature channels {d}",
            tape.value(kernel).row_size()
        )));
    }
    let mut cols = Vec::with_capacity(scales.len());
    for &s in scales {
        if s < 1 || s > f {
            return Err(Error::InvalidArgument(format!(
                "mtgc: scale {s} outside 1..={f}"
            )));
        }
        let resampled = tape.interp_rows(kernel, s)?;
        let mut col = tape.correlate1d(fm, resampled)?;
        if normalize {
            col = tape.scale(col, 1.0 / (s as f64 * d as f64));
        }
        cols.push(col);
    }
    tape.stack_cols(&cols)
}
