//! Activity masks, per-scale thresholds and coefficient thresholding.

use crate::error::{Error, Result};
use crate::haar::{CoefficientPyramid, WaveletLevel};
use crate::tensor::Tensor;

/// Per-pixel activity grid; `true` marks a pixel that gets computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl SparseMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {height}x{width} with {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn matches(&self, t: &Tensor) -> bool {
        self.height == t.height() && self.width == t.width()
    }

    /// Nearest-neighbour x2: every active pixel activates a 2x2 block.
    pub fn upsample2(&self) -> SparseMask {
        let (h, w) = (2 * self.height, 2 * self.width);
        let mut bits = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = &self.bits[(y / 2) * self.width..(y / 2 + 1) * self.width];
            for x in 0..w {
                bits.push(row[x / 2]);
            }
        }
        SparseMask {
            height: h,
            width: w,
            bits,
        }
    }

    /// Pixels within the 3x3 neighbourhood of an active pixel.
    pub fn dilate3x3(&self) -> SparseMask {
        let (h, w) = (self.height, self.width);
        let mut bits = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        bits[ny * w + nx] = true;
                    }
                }
            }
        }
        SparseMask {
            height: h,
            width: w,
            bits,
        }
    }

    /// Zero every inactive pixel of `t` (all channels).
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        if !self.matches(t) {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs tensor {:?}",
                self.height,
                self.width,
                t.dims()
            )));
        }
        let c = t.channels();
        let mut out = t.clone();
        for (p, chunk) in out.data_mut().chunks_exact_mut(c).enumerate() {
            if !self.bits[p] {
                chunk.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// `eta * (max(ll) - min(ll))`, the absolute threshold for one scale.
pub fn scale_threshold(ll: &Tensor, eta: f32) -> Result<f32> {
    if ll.is_empty() {
        return Err(Error::InvalidArgument("empty low-pass band".into()));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta {eta} must be >= 0")));
    }
    let t = eta * (ll.max() - ll.min());
    // Collapse -0.0 and keep the result usable as a strict bound.
    Ok(if t == 0.0 { 0.0 } else { t })
}

/// Coarse-resolution mask: `max(|lh|, |hl|, |hh|) > eta_s` over all channels.
pub fn coefficient_mask(level: &WaveletLevel, eta_s: f32) -> Result<SparseMask> {
    let (h, w, c) = level.dims();
    if !level.hl.same_shape(&level.lh) || !level.hh.same_shape(&level.lh) {
        return Err(Error::DimensionMismatch("detail band shapes differ".into()));
    }
    let eta_s = if eta_s == 0.0 { 0.0 } else { eta_s };
    let mut bits = Vec::with_capacity(h * w);
    for p in 0..h * w {
        let mut m = 0.0f32;
        for band in level.bands() {
            for &v in &band.data()[p * c..(p + 1) * c] {
                m = m.max(v.abs());
            }
        }
        bits.push(m > eta_s);
    }
    SparseMask::from_bits(h, w, bits)
}

/// Mask gating the next finer scale: threshold test, then x2 upsampling.
pub fn get_sparse_mask(level: &WaveletLevel, eta_s: f32) -> Result<SparseMask> {
    Ok(coefficient_mask(level, eta_s)?.upsample2())
}

/// Fraction of active pixels.
pub fn sparsity_level(mask: &SparseMask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.active_count() as f64 / mask.bits.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdPolicy {
    /// Absolute threshold per detail level, coarsest first. A coefficient
    /// survives when `|c| > eta_s`.
    PerLevel(Vec<f32>),
    /// Keep the `round(rho * N)` largest-magnitude detail coefficients across
    /// the whole pyramid.
    KeepTopFraction(f64),
}

/// Zero the detail coefficients that fail `policy`; `ll` is untouched.
///
/// Ties in the top-fraction mode are broken by position: level (coarsest
/// first), then band (lh, hl, hh), then row-major offset, earlier wins.
pub fn threshold_pyramid(
    pyr: &CoefficientPyramid,
    policy: &ThresholdPolicy,
) -> Result<CoefficientPyramid> {
    pyr.validate()?;
    let mut out = pyr.clone();
    match policy {
        ThresholdPolicy::PerLevel(etas) => {
            if etas.len() != pyr.depth() {
                return Err(Error::InvalidArgument(format!(
                    "{} thresholds for {} levels",
                    etas.len(),
                    pyr.depth()
                )));
            }
            for (level, &eta_s) in out.levels.iter_mut().zip(etas) {
                if !(eta_s >= 0.0) {
                    return Err(Error::InvalidArgument(format!("threshold {eta_s}")));
                }
                for band in level.bands_mut() {
                    for v in band.data_mut() {
                        if !(v.abs() > eta_s) {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        ThresholdPolicy::KeepTopFraction(rho) => {
            let rho = *rho;
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!("keep fraction {rho} not in [0, 1]")));
            }
            let total = pyr.detail_count();
            let keep = ((rho * total as f64).round() as usize).min(total);
            if keep == total {
                return Ok(out);
            }
            let mut ranked: Vec<(f32, usize)> = Vec::with_capacity(total);
            for level in &pyr.levels {
                for band in level.bands() {
                    for &v in band.data() {
                        ranked.push((v.abs(), ranked.len()));
                    }
                }
            }
            let order = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            let mut survive = vec![false; total];
            if keep > 0 {
                ranked.select_nth_unstable_by(keep - 1, order);
                for &(_, idx) in &ranked[..keep] {
                    survive[idx] = true;
                }
            }
            let mut idx = 0;
            for level in out.levels.iter_mut() {
                for band in level.bands_mut() {
                    for v in band.data_mut() {
                        if !survive[idx] {
                            *v = 0.0;
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fraction of positions at each level (coarsest first) that still carry a
/// non-zero detail coefficient.
pub fn nonzero_fraction_per_level(pyr: &CoefficientPyramid) -> Vec<f64> {
    pyr.levels
        .iter()
        .map(|l| sparsity_level(&coefficient_mask(l, 0.0).expect("validated level")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{dwt_pyramid, idwt_pyramid};
    use crate::rng::SplitMix64;

    fn level_with(h: usize, w: usize, at: (usize, usize), vals: [f32; 3]) -> WaveletLevel {
        let mut l = WaveletLevel::zeros(h, w, 1);
        for (band, v) in l.bands_mut().into_iter().zip(vals) {
            band.set(at.0, at.1, 0, v);
        }
        l
    }

    #[test]
    fn threshold_from_range() {
        let ll = Tensor::new(1, 3, 1, vec![2.0, 6.0, 3.0]).unwrap();
        assert_eq!(scale_threshold(&ll, 0.05).unwrap(), 0.2);
        assert_eq!(scale_threshold(&ll, 0.0).unwrap(), 0.0);
        assert_eq!(scale_threshold(&Tensor::filled(2, 2, 1, 4.0), 0.3).unwrap(), 0.0);
        assert!(scale_threshold(&ll, -0.1).is_err());
    }

    #[test]
    fn single_active_pixel_upsamples() {
        let l = level_with(2, 2, (0, 1), [0.2, 0.0, 0.0]);
        let m = get_sparse_mask(&l, 0.1).unwrap();
        assert_eq!((m.height(), m.width()), (4, 4));
        let active: Vec<(usize, usize)> = (0..4)
            .flat_map(|y| (0..4).map(move |x| (y, x)))
            .filter(|&(y, x)| m.get(y, x))
            .collect();
        assert_eq!(active, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
    }

    #[test]
    fn strict_inequality() {
        let l = WaveletLevel::zeros(3, 3, 1);
        assert_eq!(get_sparse_mask(&l, 0.0).unwrap().active_count(), 0);
        assert_eq!(get_sparse_mask(&l, -0.0).unwrap().active_count(), 0);
        let l = level_with(1, 1, (0, 0), [0.0, -0.1, 0.0]);
        assert_eq!(coefficient_mask(&l, 0.1).unwrap().active_count(), 0);
        assert_eq!(coefficient_mask(&l, -0.0).unwrap().active_count(), 1);
    }

    #[test]
    fn psi_counts() {
        assert_eq!(sparsity_level(&SparseMask::ones(4, 4)), 1.0);
        assert_eq!(sparsity_level(&SparseMask::zeros(4, 4)), 0.0);
        assert_eq!(sparsity_level(&SparseMask::zeros(0, 0)), 0.0);
        let mut bits = vec![false; 16];
        for i in [0, 5, 10, 15] {
            bits[i] = true;
        }
        assert_eq!(sparsity_level(&SparseMask::from_bits(4, 4, bits).unwrap()), 0.25);
    }

    #[test]
    fn dilation_at_border() {
        let mut bits = vec![false; 9];
        bits[0] = true;
        let m = SparseMask::from_bits(3, 3, bits).unwrap().dilate3x3();
        assert_eq!(m.active_count(), 4);
        assert!(m.get(1, 1) && !m.get(2, 2));
    }

    fn random_pyramid(seed: u64) -> CoefficientPyramid {
        let mut g = SplitMix64::new(seed);
        let x = Tensor::from_fn(16, 16, |_, _| g.next_signed());
        dwt_pyramid(&x, 2).unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let p = random_pyramid(4);
        let t = threshold_pyramid(&p, &ThresholdPolicy::KeepTopFraction(1.0)).unwrap();
        assert_eq!(t, p);
    }

    #[test]
    fn keep_top_exact_count() {
        // 8x8 input, 2 levels: 3*(4 + 16) = 60 detail coefficients.
        let mut g = SplitMix64::new(8);
        let x = Tensor::from_fn(8, 8, |_, _| g.next_signed());
        let p = dwt_pyramid(&x, 2).unwrap();
        assert_eq!(p.detail_count(), 60);
        let t = threshold_pyramid(&p, &ThresholdPolicy::KeepTopFraction(0.1)).unwrap();
        let nz: usize = t
            .levels
            .iter()
            .flat_map(|l| l.bands())
            .map(|b| b.data().iter().filter(|v| **v != 0.0).count())
            .sum();
        assert_eq!(nz, 6);
        assert_eq!(t.ll, p.ll);
    }

    #[test]
    fn keep_top_breaks_ties_by_position() {
        let mut p = CoefficientPyramid::new(
            Tensor::zeros(1, 1, 1),
            vec![WaveletLevel::zeros(1, 1, 1), WaveletLevel::zeros(2, 2, 1)],
        )
        .unwrap();
        // 15 coefficients: make three of them tie at 1.0.
        p.levels[1].hh.set(1, 1, 0, 1.0);
        p.levels[1].lh.set(0, 0, 0, -1.0);
        p.levels[0].hl.set(0, 0, 0, 1.0);
        // round(2/15 * 15) = 2 survivors: the coarse hl and fine lh.
        let t = threshold_pyramid(&p, &ThresholdPolicy::KeepTopFraction(2.0 / 15.0)).unwrap();
        assert_eq!(t.levels[0].hl[(0, 0)], 1.0);
        assert_eq!(t.levels[1].lh[(0, 0)], -1.0);
        assert_eq!(t.levels[1].hh[(1, 1)], 0.0);
    }

    #[test]
    fn invalid_policies() {
        let p = random_pyramid(1);
        assert!(threshold_pyramid(&p, &ThresholdPolicy::KeepTopFraction(1.5)).is_err());
        assert!(threshold_pyramid(&p, &ThresholdPolicy::KeepTopFraction(f64::NAN)).is_err());
        assert!(threshold_pyramid(&p, &ThresholdPolicy::PerLevel(vec![0.1])).is_err());
    }

    #[test]
    fn per_level_threshold_drops_small() {
        let p = random_pyramid(2);
        let t = threshold_pyramid(&p, &ThresholdPolicy::PerLevel(vec![0.5, 0.25])).unwrap();
        for (lt, lp) in t.levels.iter().zip(&p.levels) {
            for (bt, bp) in lt.bands().iter().zip(lp.bands()) {
                for (&a, &b) in bt.data().iter().zip(bp.data()) {
                    assert!(a == 0.0 || a == b);
                }
            }
        }
        assert!(t.levels[1].bands().iter().all(|b| b.data().iter().all(|v| *v == 0.0 || v.abs() > 0.25)));
        // Energy of the error equals the dropped energy.
        let err = idwt_pyramid(&t)
            .unwrap()
            .zip_map(&idwt_pyramid(&p).unwrap(), |a, b| a - b)
            .unwrap()
            .sum_squares();
        let dropped = p.sum_squares() - t.sum_squares();
        assert!((err - dropped).abs() <= 1e-4 * dropped.max(1e-12));
    }
}
