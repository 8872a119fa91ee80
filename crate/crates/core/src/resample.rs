//! Linear resampling and smoothing operators expressed as [`SparseMap`]s over
//! row-major `H x W x C` buffers, so they can run inside the autodiff graph.

use crate::error::{Error, Result};
use crate::graph::SparseMap;

fn idx(y: usize, x: usize, c: usize, w: usize, ch: usize) -> u32 {
    ((y * w + x) * ch + c) as u32
}

/// Adaptive average pooling with the usual `[floor(i*in/out), ceil((i+1)*in/out))` bins.
pub fn adaptive_avg_pool(
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    channels: usize,
) -> SparseMap {
    let (ih, iw) = in_hw;
    let (oh, ow) = out_hw;
    let bins = |o: usize, i_len: usize, o_len: usize| {
        let start = o * i_len / o_len;
        let end = ((o + 1) * i_len).div_ceil(o_len);
        start..end
    };
    let mut entries = Vec::new();
    for oy in 0..oh {
        let ys = bins(oy, ih, oh);
        for ox in 0..ow {
            let xs = bins(ox, iw, ow);
            let wgt = 1.0 / (ys.len() * xs.len()) as f64;
            for c in 0..channels {
                for y in ys.clone() {
                    for x in xs.clone() {
                        entries.push((
                            idx(oy, ox, c, ow, channels),
                            idx(y, x, c, iw, channels),
                            wgt,
                        ));
                    }
                }
            }
        }
    }
    SparseMap::new(ih * iw * channels, oh * ow * channels, entries)
}

/// Bilinear interpolation with half-pixel centres (`align_corners = false`);
/// source coordinates below zero clamp to the first sample.
pub fn bilinear(in_hw: (usize, usize), out_hw: (usize, usize), channels: usize) -> SparseMap {
    let (ih, iw) = in_hw;
    let (oh, ow) = out_hw;
    let taps = |o: usize, i_len: usize, o_len: usize| {
        let src = ((o as f64 + 0.5) * i_len as f64 / o_len as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(i_len - 1);
        let i1 = (i0 + 1).min(i_len - 1);
        let frac = src - i0 as f64;
        [(i0, 1.0 - frac), (i1, frac)]
    };
    let mut entries = Vec::new();
    for oy in 0..oh {
        let ty = taps(oy, ih, oh);
        for ox in 0..ow {
            let tx = taps(ox, iw, ow);
            for c in 0..channels {
                for &(y, wy) in &ty {
                    for &(x, wx) in &tx {
                        if wy * wx != 0.0 {
                            entries.push((
                                idx(oy, ox, c, ow, channels),
                                idx(y, x, c, iw, channels),
                                wy * wx,
                            ));
                        }
                    }
                }
            }
        }
    }
    SparseMap::new(ih * iw * channels, oh * ow * channels, entries)
}

/// Nearest-neighbour resampling from `in_hw x 1` to `out_hw x channels`
/// (the single input channel is copied into every output channel).
pub fn nearest_broadcast(
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    channels: usize,
) -> SparseMap {
    let (ih, iw) = in_hw;
    let (oh, ow) = out_hw;
    let mut entries = Vec::with_capacity(oh * ow * channels);
    for oy in 0..oh {
        let y = oy * ih / oh;
        for ox in 0..ow {
            let x = ox * iw / ow;
            for c in 0..channels {
                entries.push((idx(oy, ox, c, ow, channels), idx(y, x, 0, iw, 1), 1.0));
            }
        }
    }
    SparseMap::new(ih * iw, oh * ow * channels, entries)
}

/// Mean over channels: `H x W x C -> H x W x 1`.
pub fn channel_mean(hw: (usize, usize), channels: usize) -> SparseMap {
    let (h, w) = hw;
    let mut entries = Vec::with_capacity(h * w * channels);
    for p in 0..h * w {
        for c in 0..channels {
            entries.push((p as u32, (p * channels + c) as u32, 1.0 / channels as f64));
        }
    }
    SparseMap::new(h * w * channels, h * w, entries)
}

/// Normalised 1-D Gaussian taps truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
pub fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding, applied per channel.
pub fn gaussian_blur(hw: (usize, usize), channels: usize, sigma: f64) -> Result<SparseMap> {
    let (h, w) = hw;
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as i64;
    let mut entries = Vec::with_capacity(h * w * channels * k.len() * k.len());
    for y in 0..h {
        for x in 0..w {
            // Accumulate duplicate taps that reflect onto the same pixel.
            let mut acc: Vec<(usize, f64)> = Vec::with_capacity(k.len() * k.len());
            for (dy, ky) in k.iter().enumerate() {
                let sy = reflect(y as i64 + dy as i64 - r, h);
                for (dx, kx) in k.iter().enumerate() {
                    let sx = reflect(x as i64 + dx as i64 - r, w);
                    acc.push((sy * w + sx, ky * kx));
                }
            }
            acc.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
            for (p, v) in acc {
                match merged.last_mut() {
                    Some(last) if last.0 == p => last.1 += v,
                    _ => merged.push((p, v)),
                }
            }
            for c in 0..channels {
                for &(p, v) in &merged {
                    entries.push((
                        ((y * w + x) * channels + c) as u32,
                        (p * channels + c) as u32,
                        v,
                    ));
                }
            }
        }
    }
    Ok(SparseMap::new(h * w * channels, h * w * channels, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(map: &SparseMap, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; map.out_len()];
        map.apply_slice(input, &mut out);
        out
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn bilinear_two_by_two_upsample() {
        let map = bilinear((2, 2), (4, 4), 1);
        let out = apply(&map, &[0.0, 1.0, 0.0, 1.0]);
        let row: Vec<f64> = out[..4].to_vec();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in row.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn pooling_preserves_mean() {
        let input: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = apply(&adaptive_avg_pool((8, 8), (4, 4), 1), &input);
        let m_in = input.iter().sum::<f64>() / 64.0;
        let m_out = out.iter().sum::<f64>() / 16.0;
        assert!((m_in - m_out).abs() < 1e-12);
        // Uneven bins overlap but still average.
        let out = apply(&adaptive_avg_pool((8, 8), (3, 3), 1), &vec![2.0; 64]);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn blur_of_constant_is_exact() {
        let map = gaussian_blur((5, 7), 2, 1.5).unwrap();
        let out = apply(&map, &vec![0.3; 70]);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-14));
    }
}
