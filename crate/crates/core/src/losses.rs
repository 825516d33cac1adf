//! Training objectives as plain evaluable functions: SSIM + L1 photometric
//! error, edge-aware smoothness, rectified horizontal warping.

use crate::error::{Error, Result};
use crate::sparsity::SparseMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the SSIM term against L1.
    pub alpha: f32,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Weight of the L1 depth term in the indoor (NYU) supervised loss.
pub const NYU_L1_WEIGHT: f64 = 0.1;

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Per-pixel, per-channel SSIM from 3x3 mean statistics with reflected borders.
pub fn ssim_map(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_pair(a, b)?;
    let (h, w, c) = a.dims();
    let mut out = Tensor::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
                for dy in -1isize..=1 {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect(x as isize + dx, w);
                        let va = a.get(yy, xx, ch) as f64;
                        let vb = b.get(yy, xx, ch) as f64;
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (ma, mb) = (sa / 9.0, sb / 9.0);
                let va = saa / 9.0 - ma * ma;
                let vb = sbb / 9.0 - mb * mb;
                let cov = sab / 9.0 - ma * mb;
                let num = (2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2);
                let den = (ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2);
                out.set(y, x, ch, (num / den) as f32);
            }
        }
    }
    Ok(out)
}

/// `alpha * (1 - SSIM) / 2 + (1 - alpha) * |a - b|`, averaged over channels.
pub fn photometric_error(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} not in [0, 1]", cfg.alpha)));
    }
    let ssim = ssim_map(a, b, cfg)?;
    let (h, w, c) = a.dims();
    let alpha = cfg.alpha;
    let mut out = Tensor::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for ch in 0..c {
                let s = ssim.get(y, x, ch);
                let l1 = (a.get(y, x, ch) - b.get(y, x, ch)).abs();
                acc += alpha * (1.0 - s) * 0.5 + (1.0 - alpha) * l1;
            }
            out.set(y, x, 0, acc / c as f32);
        }
    }
    Ok(out)
}

/// Edge-aware smoothness of mean-normalised disparity:
/// `mean|dx d*| e^{-|dx I|} + mean|dy d*| e^{-|dy I|}` with forward
/// differences; image gradients are averaged over channels.
pub fn smoothness_loss(disp: &Tensor, image: &Tensor) -> Result<f64> {
    if disp.channels() != 1 || disp.height() != image.height() || disp.width() != image.width() {
        return Err(Error::DimensionMismatch(format!(
            "disparity {:?} vs image {:?}",
            disp.dims(),
            image.dims()
        )));
    }
    let mean = disp.mean();
    if !(mean > 0.0) {
        return Err(Error::ZeroMeanDisparity);
    }
    let (h, w, c) = image.dims();
    let d = |y: usize, x: usize| disp[(y, x)] as f64 / mean;
    let grad = |y0: usize, x0: usize, y1: usize, x1: usize| {
        let mut g = 0.0f64;
        for ch in 0..c {
            g += (image.get(y0, x0, ch) as f64 - image.get(y1, x1, ch) as f64).abs();
        }
        g / c as f64
    };
    let (mut sx, mut nx) = (0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            sx += (d(y, x) - d(y, x + 1)).abs() * (-grad(y, x, y, x + 1)).exp();
            nx += 1;
        }
    }
    let (mut sy, mut ny) = (0.0f64, 0usize);
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            sy += (d(y, x) - d(y + 1, x)).abs() * (-grad(y, x, y + 1, x)).exp();
            ny += 1;
        }
    }
    let term = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(term(sx, nx) + term(sy, ny))
}

/// Horizontal shift direction for [`warp_stereo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Sample at `x + d`.
    Right,
    /// Sample at `x - d`.
    Left,
}

/// `warped[y, x] = src` linearly interpolated at `(y, x ± disparity[y, x])`.
/// Samples that fall outside `[0, W - 1]` are zero and flagged invalid.
pub fn warp_stereo(src: &Tensor, disparity: &Tensor, direction: Direction) -> Result<(Tensor, SparseMask)> {
    if disparity.channels() != 1 || disparity.height() != src.height() || disparity.width() != src.width() {
        return Err(Error::DimensionMismatch(format!(
            "source {:?} vs disparity {:?}",
            src.dims(),
            disparity.dims()
        )));
    }
    let (h, w, c) = src.dims();
    let sign = match direction {
        Direction::Right => 1.0f32,
        Direction::Left => -1.0,
    };
    let mut out = Tensor::zeros(h, w, c);
    let mut valid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let xs = x as f32 + sign * disparity[(y, x)];
            let ok = xs >= 0.0 && xs <= (w - 1) as f32;
            valid.push(ok);
            if !ok {
                continue;
            }
            let x0 = xs.floor() as usize;
            let f = xs - x0 as f32;
            for ch in 0..c {
                let a = src.get(y, x0, ch);
                let v = if f == 0.0 {
                    a
                } else {
                    (1.0 - f) * a + f * src.get(y, x0 + 1, ch)
                };
                out.set(y, x, ch, v);
            }
        }
    }
    Ok((out, SparseMask::from_bits(h, w, valid)?))
}

/// Supervised indoor depth loss: `0.1 * mean |pred - gt|`.
pub fn nyu_depth_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let l1 = pred
        .data()
        .iter()
        .zip(gt.data())
        .fold(0.0f64, |acc, (&p, &g)| acc + (p as f64 - g as f64).abs());
    Ok(NYU_L1_WEIGHT * l1 / pred.len() as f64)
}
