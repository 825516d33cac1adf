//! Same-padded 2D convolution, dense and mask-gated, plus the wavelet
//! prediction heads built from them.
//!
//! Both paths evaluate a pixel through [`conv_pixel`], so a gated pixel is
//! bitwise equal to its dense counterpart. Inactive pixels come out as exact
//! zeros with no activation applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::WaveletLevel;
use crate::par;
use crate::sparsity::SparseMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Sigmoid,
    LeakyRelu(f32),
    /// ELU with alpha = 1.
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Linear => v,
            Activation::Sigmoid => sigmoid(v),
            Activation::LeakyRelu(slope) => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Elu => {
                if v >= 0.0 {
                    v
                } else {
                    v.exp_m1()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// One convolution layer. Weights are laid out `[c_out][c_in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            c_in,
            c_out,
            k,
            weights,
            bias,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize, activation: Activation) -> Self {
        Self {
            c_in,
            c_out,
            k,
            weights: vec![0.0; c_out * c_in * k * k],
            bias: vec![0.0; c_out],
            activation,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, bias uniform in `±0.1`.
    pub fn random(
        c_in: usize,
        c_out: usize,
        k: usize,
        activation: Activation,
        rng: &mut crate::rng::SplitMix64,
    ) -> Self {
        let bound = 1.0 / ((c_in * k * k).max(1) as f32).sqrt();
        let weights = (0..c_out * c_in * k * k)
            .map(|_| rng.next_signed() * bound)
            .collect();
        let bias = (0..c_out).map(|_| rng.next_signed() * 0.1).collect();
        Self {
            c_in,
            c_out,
            k,
            weights,
            bias,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("kernel size {} must be odd", self.k)));
        }
        let want = self.c_out * self.c_in * self.k * self.k;
        if self.weights.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "weights: {} values for {}x{}x{}x{}",
                self.weights.len(),
                self.c_out,
                self.c_in,
                self.k,
                self.k
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::ShapeMismatch(format!(
                "bias: {} values for {} outputs",
                self.bias.len(),
                self.c_out
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((co * self.c_in + ci) * self.k + ky) * self.k + kx]
    }

    pub fn set_weight(&mut self, co: usize, ci: usize, ky: usize, kx: usize, v: f32) {
        let i = ((co * self.c_in + ci) * self.k + ky) * self.k + kx;
        self.weights[i] = v;
    }

    /// Multiply-adds per output pixel: `(c_in * k^2 + 1) * c_out`.
    pub fn macs_per_pixel(&self) -> u128 {
        (self.c_in as u128 * (self.k * self.k) as u128 + 1) * self.c_out as u128
    }
}

/// Result of one convolution: the output map and how many pixels were computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    pub tensor: Tensor,
    pub active: usize,
}

impl ConvOutput {
    /// Multiply-adds spent, `active * (c_in * k^2 + 1) * c_out`.
    pub fn macs(&self, spec: &ConvSpec) -> u128 {
        self.active as u128 * spec.macs_per_pixel()
    }
}

/// Pre-activation outputs at `(y, x)`, written into `out[..c_out]`.
///
/// Accumulation order is fixed: for each output channel, taps row by row,
/// input channels innermost, bias last. Out-of-image taps are skipped (zero
/// padding).
#[inline]
fn conv_pixel(x: &Tensor, spec: &ConvSpec, y: usize, xx: usize, out: &mut [f32]) {
    let (h, w, c) = x.dims();
    let r = (spec.k / 2) as isize;
    let k = spec.k;
    let data = x.data();
    for (co, slot) in out.iter_mut().enumerate().take(spec.c_out) {
        let mut acc = 0.0f32;
        for ky in 0..k {
            let sy = y as isize + ky as isize - r;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for kx in 0..k {
                let sx = xx as isize + kx as isize - r;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let base = (sy as usize * w + sx as usize) * c;
                let px = &data[base..base + c];
                let wbase = co * c * k * k + ky * k + kx;
                for (ci, &v) in px.iter().enumerate() {
                    acc += spec.weights[wbase + ci * k * k] * v;
                }
            }
        }
        *slot = acc + spec.bias[co];
    }
}

fn check_input(x: &Tensor, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if x.channels() != spec.c_in {
        return Err(Error::ChannelMismatch {
            expected: spec.c_in,
            found: x.channels(),
        });
    }
    Ok(())
}

fn run(x: &Tensor, spec: &ConvSpec, mask: Option<&SparseMask>) -> Result<ConvOutput> {
    check_input(x, spec)?;
    let (h, w, _) = x.dims();
    let co = spec.c_out;
    let mut out = vec![0.0f32; h * w * co];
    if co > 0 {
        par::for_each_row(&mut out, w * co, |y, row| {
            for xx in 0..w {
                if let Some(m) = mask {
                    if !m.get(y, xx) {
                        continue;
                    }
                }
                let px = &mut row[xx * co..(xx + 1) * co];
                conv_pixel(x, spec, y, xx, px);
                for v in px.iter_mut() {
                    *v = spec.activation.apply(*v);
                }
            }
        });
    }
    let active = mask.map_or(h * w, SparseMask::active_count);
    Ok(ConvOutput {
        tensor: Tensor::new(h, w, co, out)?,
        active,
    })
}

/// Full-grid convolution, bias and activation.
pub fn conv2d_dense(x: &Tensor, spec: &ConvSpec) -> Result<ConvOutput> {
    run(x, spec, None)
}

/// Convolution evaluated only where `mask` is active; zeros elsewhere.
pub fn conv2d_sparse(x: &Tensor, spec: &ConvSpec, mask: &SparseMask) -> Result<ConvOutput> {
    check_input(x, spec)?;
    if !mask.matches(x) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs input {:?}",
            mask.height(),
            mask.width(),
            x.dims()
        )));
    }
    run(x, spec, Some(mask))
}

/// Evaluates a layer chain so that the last layer is exact on `mask`.
///
/// Earlier layers run on the mask dilated by the receptive-field radius of
/// everything after them, which is the smallest region that keeps the gated
/// outputs identical to a dense evaluation. Returns the final output and the
/// per-layer outputs' active counts.
pub fn run_chain(x: &Tensor, chain: &[ConvSpec], mask: &SparseMask) -> Result<(Tensor, Vec<usize>)> {
    let mut regions = vec![mask.clone(); chain.len()];
    for i in (0..chain.len().saturating_sub(1)).rev() {
        let mut r = regions[i + 1].clone();
        for _ in 0..chain[i + 1].k / 2 {
            r = r.dilate3x3();
        }
        regions[i] = r;
    }
    let mut cur = x.clone();
    let mut active = Vec::with_capacity(chain.len());
    for (spec, region) in chain.iter().zip(&regions) {
        let out = conv2d_sparse(&cur, spec, region)?;
        active.push(out.active);
        cur = out.tensor;
    }
    Ok((cur, active))
}

/// Dense evaluation of a chain.
pub fn run_chain_dense(x: &Tensor, chain: &[ConvSpec]) -> Result<Tensor> {
    let mut cur = x.clone();
    for spec in chain {
        cur = conv2d_dense(&cur, spec)?.tensor;
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `sigmoid(plus(f)) - sigmoid(minus(f))`, bounded to (-1, 1).
    TwoSigmoidDifference,
    /// A single unbounded branch.
    Linear,
}

/// Wavelet-coefficient head producing (lh, hl, hh) as three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveHeadSpec {
    pub kind: HeadKind,
    pub plus: Vec<ConvSpec>,
    /// Present only for [`HeadKind::TwoSigmoidDifference`].
    pub minus: Option<Vec<ConvSpec>>,
}

fn check_chain(chain: &[ConvSpec], c_in: usize, what: &str) -> Result<()> {
    let mut c = c_in;
    for (i, spec) in chain.iter().enumerate() {
        spec.validate()?;
        if spec.c_in != c {
            return Err(Error::ShapeMismatch(format!(
                "{what} layer {i}: c_in {} but previous layer gives {c}",
                spec.c_in
            )));
        }
        c = spec.c_out;
    }
    if chain.is_empty() {
        return Err(Error::ShapeMismatch(format!("{what}: empty layer chain")));
    }
    Ok(())
}

impl WaveHeadSpec {
    pub fn c_in(&self) -> usize {
        self.plus.first().map_or(0, |s| s.c_in)
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvSpec> {
        self.plus.iter().chain(self.minus.iter().flatten())
    }

    pub fn validate(&self) -> Result<()> {
        let c_in = self.c_in();
        check_chain(&self.plus, c_in, "plus branch")?;
        let last = self.plus.last().expect("checked non-empty");
        if last.c_out != 3 {
            return Err(Error::ShapeMismatch(format!(
                "wave head must output 3 channels, got {}",
                last.c_out
            )));
        }
        match (self.kind, &self.minus) {
            (HeadKind::TwoSigmoidDifference, Some(minus)) => {
                check_chain(minus, c_in, "minus branch")?;
                let mlast = minus.last().expect("checked non-empty");
                if mlast.c_out != 3 {
                    return Err(Error::ShapeMismatch("minus branch must output 3 channels".into()));
                }
                if last.activation != Activation::Sigmoid || mlast.activation != Activation::Sigmoid {
                    return Err(Error::ShapeMismatch(
                        "two-sigmoid head branches must end in a sigmoid".into(),
                    ));
                }
                Ok(())
            }
            (HeadKind::TwoSigmoidDifference, None) => {
                Err(Error::ShapeMismatch("two-sigmoid head needs a minus branch".into()))
            }
            (HeadKind::Linear, None) => Ok(()),
            (HeadKind::Linear, Some(_)) => {
                Err(Error::ShapeMismatch("linear head takes a single branch".into()))
            }
        }
    }
}

/// Head output plus the active-pixel count of every layer evaluated, in
/// `plus` then `minus` order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub level: WaveletLevel,
    pub active: Vec<usize>,
}

/// Largest `f32` below one. Saturated sigmoids would otherwise let the
/// difference reach exactly +-1.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

#[inline]
fn sigmoid_difference(a: f32, b: f32) -> f32 {
    (a - b).clamp(-BELOW_ONE, BELOW_ONE)
}

fn split_bands(t: &Tensor) -> Result<WaveletLevel> {
    WaveletLevel::new(t.channel(0), t.channel(1), t.channel(2))
}

pub fn wave_head(features: &Tensor, spec: &WaveHeadSpec, mask: &SparseMask) -> Result<HeadOutput> {
    spec.validate()?;
    if features.channels() != spec.c_in() {
        return Err(Error::ChannelMismatch {
            expected: spec.c_in(),
            found: features.channels(),
        });
    }
    if !mask.matches(features) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs features {:?}",
            mask.height(),
            mask.width(),
            features.dims()
        )));
    }
    let (plus, mut active) = run_chain(features, &spec.plus, mask)?;
    let out = match &spec.minus {
        None => plus,
        Some(minus_chain) => {
            let (minus, minus_active) = run_chain(features, minus_chain, mask)?;
            active.extend(minus_active);
            // Both branches already hold sigmoid outputs at active pixels and
            // exact zeros elsewhere; keep inactive pixels at zero explicitly.
            let mut diff = plus.zip_map(&minus, sigmoid_difference)?;
            let c = diff.channels();
            for (p, px) in diff.data_mut().chunks_exact_mut(c).enumerate() {
                if !mask.bits()[p] {
                    px.fill(0.0);
                }
            }
            diff
        }
    };
    Ok(HeadOutput {
        level: split_bands(&out)?,
        active,
    })
}

/// Reference head evaluation: every layer dense, then the mask applied.
pub fn wave_head_dense(features: &Tensor, spec: &WaveHeadSpec) -> Result<WaveletLevel> {
    spec.validate()?;
    let plus = run_chain_dense(features, &spec.plus)?;
    let out = match &spec.minus {
        None => plus,
        Some(m) => plus.zip_map(&run_chain_dense(features, m)?, sigmoid_difference)?,
    };
    split_bands(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_tensor(h: usize, w: usize, c: usize, g: &mut SplitMix64) -> Tensor {
        Tensor::new(h, w, c, (0..h * w * c).map(|_| g.next_signed()).collect()).unwrap()
    }

    fn random_mask(h: usize, w: usize, g: &mut SplitMix64) -> SparseMask {
        SparseMask::from_bits(h, w, (0..h * w).map(|_| g.next_unit() < 0.4).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut g = SplitMix64::new(1);
        let x = random_tensor(5, 7, 2, &mut g);
        let mut spec = ConvSpec::zeros(2, 2, 3, Activation::Linear);
        spec.set_weight(0, 0, 1, 1, 1.0);
        spec.set_weight(1, 1, 1, 1, 1.0);
        assert_eq!(conv2d_dense(&x, &spec).unwrap().tensor, x);
    }

    #[test]
    fn single_pixel_all_ones_kernel() {
        let x = Tensor::filled(1, 1, 1, 2.5);
        let spec = ConvSpec::new(1, 1, 3, vec![1.0; 9], vec![0.0], Activation::Linear).unwrap();
        assert_eq!(conv2d_dense(&x, &spec).unwrap().tensor.data(), &[2.5]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut spec = ConvSpec::zeros(3, 2, 3, Activation::Linear);
        spec.bias = vec![0.7, -1.5];
        let x = random_tensor(4, 4, 3, &mut SplitMix64::new(2));
        let out = conv2d_dense(&x, &spec).unwrap();
        assert!(out.tensor.channel(0).data().iter().all(|&v| v == 0.7));
        assert!(out.tensor.channel(1).data().iter().all(|&v| v == -1.5));
        assert_eq!(out.active, 16);
    }

    #[test]
    fn sparse_matches_dense_at_active_pixels() {
        let mut g = SplitMix64::new(3);
        for trial in 0..20 {
            let act = [Activation::Linear, Activation::Sigmoid, Activation::LeakyRelu(0.1), Activation::Elu][trial % 4];
            let x = random_tensor(16, 16, 4, &mut g);
            let spec = ConvSpec::random(4, 5, 3, act, &mut g);
            let mask = random_mask(16, 16, &mut g);
            let dense = conv2d_dense(&x, &spec).unwrap().tensor;
            let sparse = conv2d_sparse(&x, &spec, &mask).unwrap();
            assert_eq!(sparse.macs(&spec), mask.active_count() as u128 * (4 * 9 + 1) * 5);
            for y in 0..16 {
                for xx in 0..16 {
                    for c in 0..5 {
                        let s = sparse.tensor.get(y, xx, c);
                        if mask.get(y, xx) {
                            assert_eq!(s.to_bits(), dense.get(y, xx, c).to_bits());
                        } else {
                            assert_eq!(s.to_bits(), 0.0f32.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn all_ones_and_empty_masks() {
        let mut g = SplitMix64::new(4);
        let x = random_tensor(6, 9, 2, &mut g);
        let spec = ConvSpec::random(2, 3, 3, Activation::Sigmoid, &mut g);
        let dense = conv2d_dense(&x, &spec).unwrap();
        assert_eq!(conv2d_sparse(&x, &spec, &SparseMask::ones(6, 9)).unwrap(), dense);
        let empty = conv2d_sparse(&x, &spec, &SparseMask::zeros(6, 9)).unwrap();
        assert_eq!(empty.active, 0);
        assert_eq!(empty.macs(&spec), 0);
        assert!(empty.tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatches() {
        let spec = ConvSpec::zeros(2, 1, 3, Activation::Linear);
        assert!(matches!(
            conv2d_dense(&Tensor::zeros(3, 3, 3), &spec),
            Err(Error::ChannelMismatch { expected: 2, found: 3 })
        ));
        assert!(conv2d_sparse(&Tensor::zeros(3, 3, 2), &spec, &SparseMask::ones(3, 4)).is_err());
        assert!(ConvSpec::new(2, 1, 3, vec![0.0; 17], vec![0.0], Activation::Linear).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::LeakyRelu(0.1).apply(-2.0), -0.2);
        assert_eq!(Activation::Elu.apply(3.0), 3.0);
        assert!((Activation::Elu.apply(-1.0) - (-0.632_120_6)).abs() < 1e-6);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    fn two_sigmoid_head(c: usize, g: &mut SplitMix64) -> WaveHeadSpec {
        let branch = |g: &mut SplitMix64| {
            vec![
                ConvSpec::random(c, c, 1, Activation::LeakyRelu(0.1), g),
                ConvSpec::random(c, 3, 3, Activation::Sigmoid, g),
            ]
        };
        WaveHeadSpec {
            kind: HeadKind::TwoSigmoidDifference,
            plus: branch(g),
            minus: Some(branch(g)),
        }
    }

    #[test]
    fn identical_branches_cancel() {
        let mut g = SplitMix64::new(5);
        let mut spec = two_sigmoid_head(4, &mut g);
        spec.minus = Some(spec.plus.clone());
        let f = random_tensor(8, 8, 4, &mut g);
        let out = wave_head(&f, &spec, &SparseMask::ones(8, 8)).unwrap();
        assert!(out.level.bands().iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn two_sigmoid_saturates_towards_one() {
        let mut plus_last = ConvSpec::zeros(1, 3, 3, Activation::Sigmoid);
        plus_last.bias = vec![30.0; 3];
        let mut minus_last = plus_last.clone();
        minus_last.bias = vec![-30.0; 3];
        let first = ConvSpec::new(1, 1, 1, vec![1.0], vec![0.0], Activation::Linear).unwrap();
        let spec = WaveHeadSpec {
            kind: HeadKind::TwoSigmoidDifference,
            plus: vec![first.clone(), plus_last],
            minus: Some(vec![first, minus_last]),
        };
        let out = wave_head(&Tensor::zeros(2, 2, 1), &spec, &SparseMask::ones(2, 2)).unwrap();
        for b in out.level.bands() {
            for &v in b.data() {
                assert!(v > 0.999 && v < 1.0);
            }
        }
    }

    #[test]
    fn gated_head_equals_masked_dense_head() {
        let mut g = SplitMix64::new(6);
        for _ in 0..5 {
            let spec = two_sigmoid_head(5, &mut g);
            let f = random_tensor(12, 10, 5, &mut g);
            let mask = random_mask(12, 10, &mut g);
            let sparse = wave_head(&f, &spec, &mask).unwrap();
            let dense = wave_head_dense(&f, &spec).unwrap();
            for (s, d) in sparse.level.bands().iter().zip(dense.bands()) {
                assert_eq!(*s, &mask.apply(d).unwrap());
                assert!(s.data().iter().all(|v| v.abs() < 1.0));
            }
            // 1x1 layers run on the dilated mask, 3x3 layers on the mask.
            let dilated = mask.dilate3x3().active_count();
            assert_eq!(sparse.active, vec![dilated, mask.active_count(), dilated, mask.active_count()]);
        }
    }

    #[test]
    fn linear_head_selects_channels() {
        let mut g = SplitMix64::new(7);
        let f = random_tensor(6, 6, 4, &mut g);
        let mut pick = ConvSpec::zeros(4, 3, 3, Activation::Linear);
        for (co, ci) in [(0, 2), (1, 0), (2, 3)] {
            pick.set_weight(co, ci, 1, 1, 1.0);
        }
        let mut id = ConvSpec::zeros(4, 4, 1, Activation::Linear);
        for c in 0..4 {
            id.set_weight(c, c, 0, 0, 1.0);
        }
        let spec = WaveHeadSpec {
            kind: HeadKind::Linear,
            plus: vec![id.clone(), pick.clone()],
            minus: None,
        };
        let out = wave_head(&f, &spec, &SparseMask::ones(6, 6)).unwrap();
        let oracle = conv2d_dense(&conv2d_dense(&f, &id).unwrap().tensor, &pick).unwrap().tensor;
        assert_eq!(out.level.lh, oracle.channel(0));
        assert_eq!(out.level.lh, f.channel(2));
        assert_eq!(out.level.hl, f.channel(0));
        assert_eq!(out.level.hh, f.channel(3));
    }

    #[test]
    fn head_validation() {
        let mut g = SplitMix64::new(8);
        let mut spec = two_sigmoid_head(3, &mut g);
        spec.minus = None;
        assert!(spec.validate().is_err());
        let mut spec = two_sigmoid_head(3, &mut g);
        spec.plus[1].activation = Activation::Linear;
        assert!(spec.validate().is_err());
        let mut spec = two_sigmoid_head(3, &mut g);
        spec.plus[1] = ConvSpec::random(4, 3, 3, Activation::Sigmoid, &mut g);
        assert!(matches!(spec.validate(), Err(Error::ShapeMismatch(_))));
    }
}
