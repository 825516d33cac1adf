//! Seeded synthetic depth scenes.
//!
//! [`ramp_scene`] paints a tilted ground plane and a stack of rectangles, some
//! flat and some planar. [`quadtree_scene`] builds integer-valued scenes on a
//! dyadic quadtree, which makes the Haar support of every level countable
//! from the tree alone.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampSceneConfig {
    pub rectangles: usize,
    /// Depth range of the background plane, top row to bottom row.
    pub far: f32,
    pub near: f32,
    /// Fraction of rectangles that carry their own planar ramp.
    pub ramp_fraction: f32,
}

impl Default for RampSceneConfig {
    fn default() -> Self {
        Self {
            rectangles: 12,
            far: 40.0,
            near: 4.0,
            ramp_fraction: 0.5,
        }
    }
}

/// Piecewise-constant-plus-ramp depth scene in metres, strictly positive.
pub fn ramp_scene(seed: u64, height: usize, width: usize, cfg: &RampSceneConfig) -> Result<Tensor> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!("scene {height}x{width} too small")));
    }
    if !(cfg.near > 0.0 && cfg.far > cfg.near) {
        return Err(Error::InvalidArgument(format!(
            "depth range near {} far {}",
            cfg.near, cfg.far
        )));
    }
    let mut g = SplitMix64::new(seed);
    let tilt = g.uniform(-0.2, 0.2) * (cfg.far - cfg.near) / width as f32;
    let (hf, wf) = ((height - 1) as f32, (width - 1) as f32);
    let mut depth = Tensor::from_fn(height, width, |y, x| {
        let t = y as f32 / hf;
        cfg.far + (cfg.near - cfg.far) * t + tilt * (x as f32 - wf / 2.0)
    });
    for _ in 0..cfg.rectangles {
        let rh = g.range(height / 10 + 1, height / 2 + 2);
        let rw = g.range(width / 10 + 1, width / 2 + 2);
        let top = g.range(0, height - rh.min(height - 1));
        let left = g.range(0, width - rw.min(width - 1));
        let base = g.uniform(cfg.near, 0.8 * cfg.far);
        let (gy, gx) = if g.next_unit() < cfg.ramp_fraction {
            (g.uniform(-0.02, 0.02), g.uniform(-0.02, 0.02))
        } else {
            (0.0, 0.0)
        };
        for y in top..(top + rh).min(height) {
            for x in left..(left + rw).min(width) {
                let v = base + gy * (y - top) as f32 + gx * (x - left) as f32;
                depth.set(y, x, 0, v);
            }
        }
    }
    let floor = 0.5 * cfg.near;
    Ok(depth.map(|v| v.max(floor)))
}

/// Integer-valued piecewise-constant scene on a dyadic quadtree, together
/// with the number of split nodes of each block size.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadtreeScene {
    pub depth: Tensor,
    /// Leaf id per pixel, row-major.
    pub labels: Vec<u32>,
    /// `split_counts[j - 1]` is the number of split blocks of side `2^j`,
    /// for `j = 1..=levels`; index 0 is the finest.
    pub split_counts: Vec<usize>,
    pub levels: u32,
}

impl QuadtreeScene {
    /// Fraction of level-`j` positions whose block was split, coarsest first,
    /// matching the layout of a coefficient pyramid.
    pub fn split_fractions(&self) -> Vec<f64> {
        let (h, w) = (self.depth.height(), self.depth.width());
        (1..=self.levels)
            .rev()
            .map(|j| {
                let positions = (h >> j) * (w >> j);
                self.split_counts[j as usize - 1] as f64 / positions as f64
            })
            .collect()
    }

    /// Whether the block of side `2^j` at block coordinates `(by, bx)` holds
    /// more than one leaf.
    pub fn is_split(&self, j: u32, by: usize, bx: usize) -> bool {
        let side = 1usize << j;
        let w = self.depth.width();
        let first = self.labels[by * side * w + bx * side];
        (0..side).any(|dy| {
            let row = (by * side + dy) * w + bx * side;
            self.labels[row..row + side].iter().any(|&l| l != first)
        })
    }
}

struct Builder<'a> {
    g: &'a mut SplitMix64,
    width: usize,
    depth: Vec<f32>,
    labels: Vec<u32>,
    next_label: u32,
    split_counts: Vec<usize>,
    split_prob: f32,
    min_log2: u32,
}

impl Builder<'_> {
    /// Fills the block and returns the sum of its depth values.
    fn fill(&mut self, top: usize, left: usize, log2: u32) -> f64 {
        let side = 1usize << log2;
        let split = log2 > self.min_log2 && self.g.next_unit() < self.split_prob;
        if !split {
            let v = self.g.range(1, 256) as f32;
            self.paint(top, left, side, v);
            return v as f64 * (side * side) as f64;
        }
        self.split_counts[log2 as usize - 1] += 1;
        let half = side / 2;
        let corners = [(top, left), (top, left + half), (top + half, left), (top + half, left + half)];
        let mut sums = [0.0f64; 4];
        for (s, &(t, l)) in sums.iter_mut().zip(&corners) {
            *s = self.fill(t, l, log2 - 1);
        }
        // Keep the children distinguishable so the split leaves a non-zero
        // detail coefficient behind.
        if sums.iter().all(|&s| s == sums[0]) {
            let (t, l) = corners[3];
            let bump = 1.0f32;
            for y in t..t + half {
                for x in l..l + half {
                    self.depth[y * self.width + x] += bump;
                }
            }
            sums[3] += bump as f64 * (half * half) as f64;
        }
        sums.iter().sum()
    }

    fn paint(&mut self, top: usize, left: usize, side: usize, v: f32) {
        let label = self.next_label;
        self.next_label += 1;
        for y in top..top + side {
            let row = y * self.width;
            self.depth[row + left..row + left + side].fill(v);
            self.labels[row + left..row + left + side].fill(label);
        }
    }
}

/// Quadtree scene: the image is tiled with `2^levels` blocks, each split
/// recursively with probability `split_prob` down to blocks of side
/// `2^min_log2`. Leaves carry integer depths in `[1, 255]`, with a bump of
/// one where four sibling subtrees would otherwise average to the same value.
pub fn quadtree_scene(
    seed: u64,
    height: usize,
    width: usize,
    levels: u32,
    min_log2: u32,
    split_prob: f32,
) -> Result<QuadtreeScene> {
    if levels == 0 || min_log2 > levels {
        return Err(Error::InvalidArgument(format!(
            "levels {levels} with minimum leaf 2^{min_log2}"
        )));
    }
    let root = 1usize << levels;
    if height == 0 || width == 0 || height % root != 0 || width % root != 0 {
        return Err(Error::TooSmall {
            height,
            width,
            levels,
        });
    }
    let mut g = SplitMix64::new(seed);
    let mut b = Builder {
        g: &mut g,
        width,
        depth: vec![0.0; height * width],
        labels: vec![0; height * width],
        next_label: 0,
        split_counts: vec![0; levels as usize],
        split_prob,
        min_log2,
    };
    for top in (0..height).step_by(root) {
        for left in (0..width).step_by(root) {
            b.fill(top, left, levels);
        }
    }
    let Builder {
        depth,
        labels,
        split_counts,
        ..
    } = b;
    Ok(QuadtreeScene {
        depth: Tensor::new(height, width, 1, depth)?,
        labels,
        split_counts,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{dwt_pyramid, idwt_pyramid};
    use crate::sparsity::nonzero_fraction_per_level;

    #[test]
    fn ramp_scene_is_seeded_and_positive() {
        let cfg = RampSceneConfig::default();
        let a = ramp_scene(3, 48, 64, &cfg).unwrap();
        assert_eq!(a, ramp_scene(3, 48, 64, &cfg).unwrap());
        assert_ne!(a, ramp_scene(4, 48, 64, &cfg).unwrap());
        assert!(a.min() > 0.0 && a.all_finite());
    }

    #[test]
    fn quadtree_counts_match_labels() {
        let s = quadtree_scene(9, 64, 96, 4, 0, 0.6).unwrap();
        for j in 1..=4u32 {
            let side = 1usize << j;
            let mut n = 0;
            for by in 0..64 / side {
                for bx in 0..96 / side {
                    n += s.is_split(j, by, bx) as usize;
                }
            }
            assert_eq!(n, s.split_counts[j as usize - 1], "level {j}");
        }
        assert!(s.depth.data().iter().all(|v| v.fract() == 0.0 && *v >= 1.0));
    }

    #[test]
    fn quadtree_support_equals_split_nodes() {
        for seed in 0..5 {
            let s = quadtree_scene(seed, 64, 64, 4, 1, 0.5).unwrap();
            let pyr = dwt_pyramid(&s.depth, 4).unwrap();
            assert_eq!(nonzero_fraction_per_level(&pyr), s.split_fractions());
            let back = idwt_pyramid(&pyr).unwrap();
            assert_eq!(back, s.depth);
        }
    }

    #[test]
    fn quadtree_rejects_bad_dims() {
        assert!(quadtree_scene(0, 40, 64, 4, 0, 0.5).is_err());
        assert!(quadtree_scene(0, 64, 64, 2, 3, 0.5).is_err());
    }
}
