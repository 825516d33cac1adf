//! Dense row-major float tensor, channel-minor.
//!
//! Index `(y, x, c)` lives at `(y * width + x) * channels + c`. Reductions
//! accumulate sequentially in `f64` in storage order so repeated calls on the
//! same data are bitwise identical.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width}x{channels}")))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Single-channel tensor from a closure over `(y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.offset(y, x, c);
        self.data[i] = v;
    }

    /// Values of one pixel across channels.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.offset(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Tensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn scale(&self, k: f32) -> Tensor {
        self.map(|v| v * k)
    }

    /// Copy of channel `c` as a single-channel tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        assert!(c < self.channels, "channel {c} out of range");
        Tensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Interleave single-channel tensors of equal size into one tensor.
    pub fn stack_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels to stack".into()))?;
        let (h, w) = (first.height, first.width);
        for p in parts {
            if p.height != h || p.width != w || p.channels != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "cannot stack {:?} with {h}x{w}x1",
                    p.dims()
                )));
            }
        }
        let c = parts.len();
        let mut data = vec![0.0; h * w * c];
        for (k, p) in parts.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * c + k] = v;
            }
        }
        Tensor::new(h, w, c, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, &v| acc + v as f64)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |acc, &v| acc + (v as f64) * (v as f64))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rectangular sub-window, all channels.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let start = self.offset(y, left, 0);
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Tensor::new(height, width, c, data)
    }
}

impl std::ops::Index<(usize, usize)> for Tensor {
    type Output = f32;

    fn index(&self, (y, x): (usize, usize)) -> &f32 {
        &self.data[self.offset(y, x, 0)]
    }
}

/// Center-crop so both spatial dimensions are multiples of `2^levels`.
pub fn crop_to_dyadic(t: &Tensor, levels: u32) -> Result<Tensor> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let block = 1usize
        .checked_shl(levels)
        .filter(|b| *b > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("levels {levels} too large")))?;
    if t.height() < block || t.width() < block {
        return Err(Error::TooSmall {
            height: t.height(),
            width: t.width(),
            levels,
        });
    }
    let h = t.height() / block * block;
    let w = t.width() / block * block;
    if h == t.height() && w == t.width() {
        return Ok(t.clone());
    }
    t.crop((t.height() - h) / 2, (t.width() - w) / 2, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            Tensor::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn layout_is_channel_minor() {
        let t = Tensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 1, 0), 3.0);
        assert_eq!(t.channel(1).data(), &[2.0, 4.0]);
        let back = Tensor::stack_channels(&[&t.channel(0), &t.channel(1)]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn crop_already_dyadic_is_noop() {
        let t = Tensor::zeros(480, 640, 1);
        assert_eq!(crop_to_dyadic(&t, 4).unwrap().dims(), (480, 640, 1));
    }

    #[test]
    fn crop_centers_odd_sizes() {
        let t = Tensor::from_fn(481, 641, |y, x| (y * 1000 + x) as f32);
        let c = crop_to_dyadic(&t, 4).unwrap();
        assert_eq!(c.dims(), (480, 640, 1));
        // One surplus row and column: floor(1/2) = 0 offset.
        assert_eq!(c[(0, 0)], 0.0);
        let t = Tensor::from_fn(35, 36, |y, x| (y * 1000 + x) as f32);
        let c = crop_to_dyadic(&t, 4).unwrap();
        assert_eq!(c.dims(), (32, 32, 1));
        assert_eq!(c[(0, 0)], 1002.0);
    }

    #[test]
    fn crop_too_small() {
        let t = Tensor::zeros(10, 10, 1);
        assert!(matches!(crop_to_dyadic(&t, 4), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn reductions_are_repeatable() {
        let t = Tensor::from_fn(37, 53, |y, x| ((y * 31 + x * 17) % 101) as f32 * 0.013);
        assert_eq!(t.sum().to_bits(), t.sum().to_bits());
        assert_eq!(t.min(), 0.0);
        assert_eq!(t.max(), 100.0 * 0.013);
    }
}
