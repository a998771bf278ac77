//! Plain (untaped) numerical kernels. The tape records these for its
//! forward values, so taped and untaped execution share one code path.

use crate::array::Array;
use crate::{Error, Result};

/// `[m,k] x [k,n] -> [m,n]`
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    let (m, ka) = dims2(a)?;
    let (kb, n) = dims2(b)?;
    if ka != kb {
        return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Array::zeros(&[m, n]);
    for i in 0..m {
        for l in 0..ka {
            let av = a.at2(i, l);
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                let v = out.at2(i, j) + av * b.at2(l, j);
                out.set2(i, j, v);
            }
        }
    }
    Ok(out)
}

/// `[m,k] x [n,k]^T -> [m,n]`
pub fn matmul_nt(a: &Array, b: &Array) -> Result<Array> {
    let (m, ka) = dims2(a)?;
    let (n, kb) = dims2(b)?;
    if ka != kb {
        return Err(Error::Shape(format!("matmul_nt {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Array::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..ka {
                s += a.at2(i, l) * b.at2(j, l);
            }
            out.set2(i, j, s);
        }
    }
    Ok(out)
}

/// `[k,m]^T x [k,n] -> [m,n]`
pub fn matmul_tn(a: &Array, b: &Array) -> Result<Array> {
    let (ka, m) = dims2(a)?;
    let (kb, n) = dims2(b)?;
    if ka != kb {
        return Err(Error::Shape(format!("matmul_tn {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Array::zeros(&[m, n]);
    for l in 0..ka {
        for i in 0..m {
            let av = a.at2(l, i);
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                let v = out.at2(i, j) + av * b.at2(l, j);
                out.set2(i, j, v);
            }
        }
    }
    Ok(out)
}

/// Temporal cross-correlation of a `[s,D]` kernel against a `[F,D]` signal,
/// stride 1, zero padding, length-F output centred at `floor(s/2)`:
/// `out[t] = sum_{j,c} signal[t + j - floor(s/2), c] * kernel[j, c]`.
pub fn correlate1d(signal: &Array, kernel: &Array) -> Result<Array> {
    let (f, d) = dims2(signal)?;
    let (s, dk) = dims2(kernel)?;
    if d != dk {
        return Err(Error::Shape(format!(
            "correlate1d channels: signal {:?} vs kernel {:?}",
            signal.shape(),
            kernel.shape()
        )));
    }
    if s < 1 {
        return Err(Error::InvalidArgument("correlate1d: empty kernel".into()));
    }
    let off = (s / 2) as isize;
    let mut out = Array::zeros(&[f]);
    for t in 0..f as isize {
        let mut acc = 0.0;
        for j in 0..s as isize {
            let src = t + j - off;
            if src < 0 || src >= f as isize {
                continue;
            }
            for c in 0..d {
                acc += signal.at2(src as usize, c) * kernel.at2(j as usize, c);
            }
        }
        out.data_mut()[t as usize] = acc;
    }
    Ok(out)
}

/// Per-channel piecewise-linear resampling of `[k,D]` onto `target_len`
/// equally spaced positions spanning the same endpoints. A single target
/// sample takes the temporal midpoint.
pub fn interp_linear(x: &Array, target_len: usize) -> Result<Array> {
    let (k, d) = dims2(x)?;
    if target_len < 1 {
        return Err(Error::InvalidArgument("interp_linear: target_len < 1".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("interp_linear: empty input".into()));
    }
    let mut out = Array::zeros(&[target_len, d]);
    for (i, (lo, hi, w)) in interp_positions(k, target_len).into_iter().enumerate() {
        for c in 0..d {
            let v = (1.0 - w) * x.at2(lo, c) + w * x.at2(hi, c);
            out.set2(i, c, v);
        }
    }
    Ok(out)
}

/// Source positions for `interp_linear`: (low index, high index, blend weight).
pub fn interp_positions(k: usize, target_len: usize) -> Vec<(usize, usize, f64)> {
    (0..target_len)
        .map(|i| {
            let p = if target_len == 1 {
                (k - 1) as f64 / 2.0
            } else {
                i as f64 * (k - 1) as f64 / (target_len - 1) as f64
            };
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(k - 1);
            let w = if hi == lo { 0.0 } else { p - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

/// 1-D convolution over `[F,Cin]` with filters `[kw,Cin,Cout]` and bias
/// `[Cout]`; zero padding `pad` on both ends, output length
/// `(F + 2*pad - kw)/stride + 1`.
pub fn conv1d(x: &Array, w: &Array, b: &Array, stride: usize, pad: usize) -> Result<Array> {
    let (f, cin) = dims2(x)?;
    if w.shape().len() != 3 || w.shape()[1] != cin {
        return Err(Error::Shape(format!(
            "conv1d filters {:?} for input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    let (kw, cout) = (w.shape()[0], w.shape()[2]);
    if b.shape() != [cout] {
        return Err(Error::Shape(format!("conv1d bias {:?}, expected [{}]", b.shape(), cout)));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv1d: stride 0".into()));
    }
    let span = f + 2 * pad;
    if span < kw {
        return Err(Error::Shape(format!("conv1d: input {} shorter than kernel {}", f, kw)));
    }
    let fo = (span - kw) / stride + 1;
    let mut out = Array::zeros(&[fo, cout]);
    for t in 0..fo {
        for co in 0..cout {
            let mut acc = b.data()[co];
            for j in 0..kw {
                let src = (t * stride + j) as isize - pad as isize;
                if src < 0 || src >= f as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += x.at2(src as usize, ci) * w.data()[(j * cin + ci) * cout + co];
                }
            }
            out.set2(t, co, acc);
        }
    }
    Ok(out)
}

/// 3x3 same-padded convolution of a single-channel `[H,W]` map into
/// `[Cout,H,W]`, filters `[Cout,3,3]`, bias `[Cout]`.
pub fn conv2d_same3(x: &Array, w: &Array, b: &Array) -> Result<Array> {
    let (h, wd) = dims2(x)?;
    if w.shape().len() != 3 || w.shape()[1] != 3 || w.shape()[2] != 3 {
        return Err(Error::Shape(format!("conv2d filters {:?}, expected [C,3,3]", w.shape())));
    }
    let cout = w.shape()[0];
    if b.shape() != [cout] {
        return Err(Error::Shape(format!("conv2d bias {:?}", b.shape())));
    }
    let mut out = Array::zeros(&[cout, h, wd]);
    let plane = h * wd;
    for c in 0..cout {
        for i in 0..h as isize {
            for j in 0..wd as isize {
                let mut acc = b.data()[c];
                for di in 0..3isize {
                    for dj in 0..3isize {
                        let si = i + di - 1;
                        let sj = j + dj - 1;
                        if si < 0 || si >= h as isize || sj < 0 || sj >= wd as isize {
                            continue;
                        }
                        acc += x.at2(si as usize, sj as usize)
                            * w.data()[c * 9 + (di * 3 + dj) as usize];
                    }
                }
                out.data_mut()[c * plane + (i as usize) * wd + j as usize] = acc;
            }
        }
    }
    Ok(out)
}

/// Bin boundaries for adaptive average pooling of a length-`n` axis into
/// `bins` outputs: bin i covers `[floor(i*n/bins), ceil((i+1)*n/bins))`.
pub fn adaptive_bins(n: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| {
            let start = i * n / bins;
            let end = ((i + 1) * n).div_ceil(bins);
            (start, end.max(start + 1).min(n.max(1)))
        })
        .collect()
}

/// Adaptive average pooling of the last axis of `[C,H,W]` into `bins`
/// outputs, flattened to `[H, C*bins]`.
pub fn pool_last_axis(x: &Array, bins: usize) -> Result<Array> {
    if x.shape().len() != 3 {
        return Err(Error::Shape(format!("pool_last_axis expects [C,H,W], got {:?}", x.shape())));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let spans = adaptive_bins(w, bins);
    let mut out = Array::zeros(&[h, c * bins]);
    for ch in 0..c {
        for i in 0..h {
            for (m, &(s, e)) in spans.iter().enumerate() {
                let mut acc = 0.0;
                for j in s..e {
                    acc += x.data()[ch * h * w + i * w + j];
                }
                out.set2(i, ch * bins + m, acc / (e - s) as f64);
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax of a 2-D array.
pub fn softmax_rows(x: &Array) -> Result<Array> {
    let (r, c) = dims2(x)?;
    let mut out = Array::zeros(&[r, c]);
    for i in 0..r {
        let row_max = (0..c).map(|j| x.at2(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..c {
            let e = (x.at2(i, j) - row_max).exp();
            out.set2(i, j, e);
            z += e;
        }
        for j in 0..c {
            let v = out.at2(i, j) / z;
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dims2(a: &Array) -> Result<(usize, usize)> {
    match a.shape() {
        [r] => Ok((*r, 1)),
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Shape(format!("expected 1-D or 2-D array, got {:?}", other))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlate_zero_signal() {
        let sig = Array::zeros(&[6, 2]);
        let ker = Array::from_vec(&[3, 2], vec![1.0; 6]).unwrap();
        let out = correlate1d(&sig, &ker).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn correlate_identity_kernel() {
        let sig = Array::from_vec(&[5, 1], vec![3., 1., 4., 1., 5.]).unwrap();
        let ker = Array::from_vec(&[1, 1], vec![1.0]).unwrap();
        let out = correlate1d(&sig, &ker).unwrap();
        assert_eq!(out.data(), sig.data());
    }

    #[test]
    fn correlate_matches_brute_force() {
        // F=6, D=1, kernel [1,0,-1]; independent nested-loop oracle.
        let sig = Array::from_vec(&[6, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let ker = Array::from_vec(&[3, 1], vec![1., 0., -1.]).unwrap();
        let out = correlate1d(&sig, &ker).unwrap();
        let mut expect = vec![0.0; 6];
        for t in 0..6i64 {
            let mut acc = 0.0;
            for j in 0..3i64 {
                let src = t + j - 1;
                if (0..6).contains(&src) {
                    acc += sig.data()[src as usize] * ker.data()[j as usize];
                }
            }
            expect[t as usize] = acc;
        }
        assert_eq!(out.data(), &expect[..]);
    }

    #[test]
    fn correlate_rejects_channel_mismatch() {
        let sig = Array::zeros(&[6, 2]);
        let ker = Array::zeros(&[3, 3]);
        assert!(correlate1d(&sig, &ker).is_err());
    }

    #[test]
    fn interp_identity() {
        let x = Array::from_vec(&[4, 1], vec![0., 1., 2., 3.]).unwrap();
        let out = interp_linear(&x, 4).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn interp_midpoint() {
        let x = Array::from_vec(&[4, 1], vec![0., 1., 2., 3.]).unwrap();
        let out = interp_linear(&x, 3).unwrap();
        assert_eq!(out.data(), &[0.0, 1.5, 3.0]);
    }

    #[test]
    fn interp_matches_dense_grid_oracle() {
        // Oversample onto a fine grid, then pick the nearest grid point.
        let vals = vec![0.3, -1.2, 2.5, 0.9];
        let x = Array::from_vec(&[4, 1], vals.clone()).unwrap();
        let out = interp_linear(&x, 5).unwrap();
        let dense = 4000usize;
        let grid: Vec<f64> = (0..=dense)
            .map(|g| {
                let p = g as f64 * 3.0 / dense as f64;
                let lo = (p.floor() as usize).min(3);
                let hi = (lo + 1).min(3);
                let w = p - lo as f64;
                (1.0 - w) * vals[lo] + w * vals[hi]
            })
            .collect();
        for i in 0..5 {
            let p = i as f64 * 3.0 / 4.0;
            let g = (p / 3.0 * dense as f64).round() as usize;
            assert!((out.data()[i] - grid[g]).abs() < 1e-9);
        }
    }

    #[test]
    fn interp_rejects_zero_target() {
        let x = Array::zeros(&[4, 1]);
        assert!(interp_linear(&x, 0).is_err());
    }

    #[test]
    fn interp_preserves_endpoints() {
        let x = Array::from_vec(&[5, 2], (0..10).map(|v| v as f64).collect()).unwrap();
        for t in 2..12 {
            let out = interp_linear(&x, t).unwrap();
            assert_eq!(out.at2(0, 0), x.at2(0, 0));
            assert_eq!(out.at2(0, 1), x.at2(0, 1));
            assert_eq!(out.at2(t - 1, 0), x.at2(4, 0));
            assert_eq!(out.at2(t - 1, 1), x.at2(4, 1));
        }
    }

    #[test]
    fn matmul_small() {
        let a = Array::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Array::from_vec(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19., 22., 43., 50.]);
        let cnt = matmul_nt(&a, &b).unwrap();
        assert_eq!(cnt.data(), &[17., 23., 39., 53.]);
        let ctn = matmul_tn(&a, &b).unwrap();
        assert_eq!(ctn.data(), &[26., 30., 38., 44.]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Array::from_vec(&[2, 3], vec![0.1, 2.0, -1.0, 5.0, 5.0, 5.0]).unwrap();
        let s = softmax_rows(&x).unwrap();
        for i in 0..2 {
            let sum: f64 = (0..3).map(|j| s.at2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!((s.at2(1, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_bins_halving() {
        // 32 -> 16: each output averages exactly 2 inputs.
        for (i, (s, e)) in adaptive_bins(32, 16).into_iter().enumerate() {
            assert_eq!((s, e), (2 * i, 2 * i + 2));
        }
    }

    #[test]
    fn conv1d_shapes() {
        let x = Array::zeros(&[8, 3]);
        let w = Array::zeros(&[3, 3, 5]);
        let b = Array::zeros(&[5]);
        let y = conv1d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[8, 5]);
        let w2 = Array::zeros(&[2, 3, 5]);
        let y2 = conv1d(&x, &w2, &b, 2, 0).unwrap();
        assert_eq!(y2.shape(), &[4, 5]);
    }
}
