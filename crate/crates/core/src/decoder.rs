//! Coarse-to-fine wavelet decoder.
//!
//! A dense head predicts the coarsest low-pass map from the deepest features.
//! At every scale a wavelet head predicts the three detail bands on the
//! pixels selected by the current mask, an inverse Haar step doubles the
//! resolution, and the new mask keeps only the children of coefficients
//! larger than a fraction of the reconstructed map's dynamic range.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conv::{run_chain, wave_head, wave_head_dense, Activation, ConvSpec, HeadKind, WaveHeadSpec};
use crate::error::{Error, Result};
use crate::flops::{ConvShape, LayerEntry, MacReport};
use crate::haar::{dwt_pyramid, idwt_level, WaveletLevel};
use crate::io::{read_tensor, write_tensor};
use crate::rng::SplitMix64;
use crate::sparsity::{get_sparse_mask, scale_threshold, sparsity_level, SparseMask};
use crate::tensor::Tensor;

/// Number of wavelet scales; the coarsest map sits at 1/16 of the output.
pub const SCALES: usize = 4;

/// Default feature channels of F4, F3, F2, F1.
pub const DEFAULT_CHANNELS: [usize; SCALES] = [256, 128, 64, 32];

pub const DEFAULT_DISP_RANGE: (f32, f32) = (0.01, 10.0);

/// Features ordered F4, F3, F2, F1, each doubling the previous resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != SCALES {
            return Err(Error::ShapeMismatch(format!(
                "feature pyramid needs {SCALES} levels, got {}",
                levels.len()
            )));
        }
        for pair in levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.height() != 2 * a.height() || b.width() != 2 * a.width() {
                return Err(Error::DimensionMismatch(format!(
                    "feature level {}x{} does not double {}x{}",
                    b.height(),
                    b.width(),
                    a.height(),
                    a.width()
                )));
            }
        }
        if levels[0].is_empty() {
            return Err(Error::DimensionMismatch("empty coarsest feature map".into()));
        }
        Ok(Self { levels })
    }

    /// Features consumed at scale `s` (3 = coarsest), i.e. F_{s+1}.
    pub fn for_scale(&self, s: usize) -> &Tensor {
        &self.levels[SCALES - 1 - s]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn channels(&self) -> [usize; SCALES] {
        std::array::from_fn(|i| self.levels[i].channels())
    }

    /// Resolution of the decoded map.
    pub fn output_dims(&self) -> (usize, usize) {
        let f1 = &self.levels[SCALES - 1];
        (2 * f1.height(), 2 * f1.width())
    }

    /// Writes `f4.wmdt` .. `f1.wmdt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, t) in self.levels.iter().enumerate() {
            write_tensor(t, dir.join(format!("f{}.wmdt", SCALES - i)))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut levels = Vec::with_capacity(SCALES);
        for i in 0..SCALES {
            let path = dir.join(format!("f{}.wmdt", SCALES - i));
            if !path.exists() {
                return Err(Error::MissingBlob(path));
            }
            levels.push(read_tensor(&path)?);
        }
        Self::new(levels)
    }
}

/// Deterministic features uniform in [-1, 1) for an output of `dims`, which
/// must be a multiple of 16 in both directions. Each level draws from its
/// own stream forked off `seed`.
pub fn synth_features(seed: u64, dims: (usize, usize), channels: [usize; SCALES]) -> Result<FeaturePyramid> {
    let (h, w) = dims;
    let root = 1usize << SCALES;
    if h == 0 || w == 0 || h % root != 0 || w % root != 0 {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            levels: SCALES as u32,
        });
    }
    let mut g = SplitMix64::new(seed);
    let levels = (0..SCALES)
        .map(|i| {
            let mut stream = g.fork();
            let div = root >> i;
            let (lh, lw, c) = (h / div, w / div, channels[i]);
            Tensor::new(lh, lw, c, (0..lh * lw * c).map(|_| stream.next_signed()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    FeaturePyramid::new(levels)
}

/// `d_min + raw * (d_max - d_min)`.
pub fn sigmoid_to_disparity(raw: &Tensor, d_min: f32, d_max: f32) -> Result<Tensor> {
    if !(d_min < d_max) {
        return Err(Error::RangeInverted(d_min, d_max));
    }
    let span = d_max - d_min;
    Ok(raw.map(|r| d_min + r * span))
}

/// Every learned layer of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    /// Chain from F4 to a single sigmoid channel.
    pub disp_head: Vec<ConvSpec>,
    /// Heads for scales 3, 2, 1, 0 in that order.
    pub wave_heads: Vec<WaveHeadSpec>,
    pub disp_range: (f32, f32),
}

fn wave_branch(c: usize, last: Activation, g: &mut SplitMix64) -> Vec<ConvSpec> {
    vec![
        ConvSpec::random(c, c, 1, Activation::LeakyRelu(0.1), g),
        ConvSpec::random(c, 3, 3, last, g),
    ]
}

impl LayerStack {
    /// Randomly initialised stack with the published layer plan: the
    /// disparity head is a 1x1 reduction to `c/4` channels followed by a
    /// 3x3 sigmoid, and each wavelet head is a 1x1 layer then a 3x3 layer
    /// to three bands.
    pub fn random(seed: u64, channels: [usize; SCALES], kind: HeadKind) -> Self {
        let mut g = SplitMix64::new(seed);
        let c4 = channels[0];
        let mid = (c4 / 4).max(1);
        let disp_head = vec![
            ConvSpec::random(c4, mid, 1, Activation::LeakyRelu(0.1), &mut g),
            ConvSpec::random(mid, 1, 3, Activation::Sigmoid, &mut g),
        ];
        let wave_heads = (0..SCALES)
            .map(|i| {
                let c = channels[i];
                match kind {
                    HeadKind::TwoSigmoidDifference => WaveHeadSpec {
                        kind,
                        plus: wave_branch(c, Activation::Sigmoid, &mut g),
                        minus: Some(wave_branch(c, Activation::Sigmoid, &mut g)),
                    },
                    HeadKind::Linear => WaveHeadSpec {
                        kind,
                        plus: wave_branch(c, Activation::Linear, &mut g),
                        minus: None,
                    },
                }
            })
            .collect();
        Self {
            disp_head,
            wave_heads,
            disp_range: DEFAULT_DISP_RANGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.disp_range.0 < self.disp_range.1) {
            return Err(Error::RangeInverted(self.disp_range.0, self.disp_range.1));
        }
        let first = self
            .disp_head
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty disparity head".into()))?;
        let mut c = first.c_in;
        for (i, spec) in self.disp_head.iter().enumerate() {
            spec.validate()?;
            if spec.c_in != c {
                return Err(Error::ShapeMismatch(format!(
                    "disparity head layer {i}: c_in {} but previous layer gives {c}",
                    spec.c_in
                )));
            }
            c = spec.c_out;
        }
        let last = self.disp_head.last().expect("non-empty");
        if last.c_out != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::ShapeMismatch(
                "disparity head must end in a single sigmoid channel".into(),
            ));
        }
        if self.wave_heads.len() != SCALES {
            return Err(Error::ShapeMismatch(format!(
                "{} wavelet heads for {SCALES} scales",
                self.wave_heads.len()
            )));
        }
        for head in &self.wave_heads {
            head.validate()?;
        }
        Ok(())
    }

    /// Head applied at scale `s` (3 = coarsest).
    pub fn head(&self, s: usize) -> &WaveHeadSpec {
        &self.wave_heads[SCALES - 1 - s]
    }

    pub fn check_features(&self, features: &FeaturePyramid) -> Result<()> {
        self.validate()?;
        let ch = features.channels();
        if self.disp_head[0].c_in != ch[0] {
            return Err(Error::ShapeMismatch(format!(
                "disparity head takes {} channels, F4 has {}",
                self.disp_head[0].c_in, ch[0]
            )));
        }
        for s in 0..SCALES {
            let want = self.head(s).c_in();
            let have = features.for_scale(s).channels();
            if want != have {
                return Err(Error::ShapeMismatch(format!(
                    "wavelet head for scale {s} takes {want} channels, F{} has {have}",
                    s + 1
                )));
            }
        }
        Ok(())
    }
}

/// Result of one decoder pass. Scale-indexed vectors run coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderRun {
    /// Maps at 1/16, 1/8, 1/4, 1/2 and full resolution.
    pub maps: Vec<Tensor>,
    /// Masks used at scales 3, 2, 1, 0.
    pub masks: Vec<SparseMask>,
    /// Active fraction of each mask.
    pub psi: Vec<f64>,
    /// Predicted detail bands at scales 3, 2, 1, 0.
    pub coefficients: Vec<WaveletLevel>,
    /// Threshold derived after each scale's reconstruction.
    pub thresholds: Vec<f32>,
    pub macs: MacReport,
}

impl DecoderRun {
    pub fn output(&self) -> &Tensor {
        self.maps.last().expect("five maps")
    }
}

fn head_layer_names(s: usize, head: &WaveHeadSpec) -> Vec<String> {
    let mut names: Vec<String> = (1..=head.plus.len()).map(|i| format!("wave{}_{i}p", s + 1)).collect();
    if let Some(m) = &head.minus {
        names.extend((1..=m.len()).map(|i| format!("wave{}_{i}m", s + 1)));
    }
    names
}

#[derive(Clone, Copy, PartialEq)]
enum Gating {
    Sparse,
    /// Heads evaluated everywhere and then masked.
    DenseThenMask,
    /// Every mask forced to all ones.
    Ungated,
}

fn decode(features: &FeaturePyramid, stack: &LayerStack, eta: f32, gating: Gating) -> Result<DecoderRun> {
    stack.check_features(features)?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta {eta} must be non-negative")));
    }
    let f4 = features.for_scale(SCALES - 1);
    let (h4, w4) = (f4.height(), f4.width());
    let mut macs = MacReport::default();

    let full = SparseMask::ones(h4, w4);
    let (raw, active) = run_chain(f4, &stack.disp_head, &full)?;
    for (i, (spec, a)) in stack.disp_head.iter().zip(&active).enumerate() {
        let mut e = LayerEntry::measured(format!("disp4_{}", i + 1), SCALES as u32 - 1, h4, w4, ConvShape::from(spec), *a);
        e.maskable = false;
        macs.push(e);
    }
    let mut ll = sigmoid_to_disparity(&raw, stack.disp_range.0, stack.disp_range.1)?;

    let mut maps = vec![ll.clone()];
    let mut masks = Vec::with_capacity(SCALES);
    let mut psi = Vec::with_capacity(SCALES);
    let mut coefficients = Vec::with_capacity(SCALES);
    let mut thresholds = Vec::with_capacity(SCALES);
    let mut mask = full;

    for s in (0..SCALES).rev() {
        let f = features.for_scale(s);
        let head = stack.head(s);
        if f.height() != ll.height() || f.width() != ll.width() {
            return Err(Error::DimensionMismatch(format!(
                "scale {s}: features {:?} vs low-pass map {:?}",
                f.dims(),
                ll.dims()
            )));
        }
        let (level, active) = match gating {
            Gating::Sparse => {
                let out = wave_head(f, head, &mask)?;
                (out.level, out.active)
            }
            Gating::DenseThenMask => {
                let dense = wave_head_dense(f, head)?;
                let [lh, hl, hh] = dense.bands();
                let level = WaveletLevel::new(mask.apply(lh)?, mask.apply(hl)?, mask.apply(hh)?)?;
                let n = f.height() * f.width();
                (level, vec![n; head.layers().count()])
            }
            Gating::Ungated => {
                let out = wave_head(f, head, &SparseMask::ones(f.height(), f.width()))?;
                (out.level, out.active)
            }
        };
        for ((spec, a), name) in head.layers().zip(&active).zip(head_layer_names(s, head)) {
            let mut e = LayerEntry::measured(name, s as u32, f.height(), f.width(), ConvShape::from(spec), *a);
            e.maskable = s + 1 < SCALES;
            macs.push(e);
        }
        psi.push(sparsity_level(&mask));
        masks.push(mask);

        ll = idwt_level(&ll, &level)?;
        let eta_s = scale_threshold(&ll, eta)?;
        mask = match gating {
            Gating::Ungated => SparseMask::ones(ll.height(), ll.width()),
            _ => get_sparse_mask(&level, eta_s)?,
        };
        thresholds.push(eta_s);
        coefficients.push(level);
        maps.push(ll.clone());
    }

    Ok(DecoderRun {
        maps,
        masks,
        psi,
        coefficients,
        thresholds,
        macs,
    })
}

/// Runs the decoder with wavelet heads evaluated only on active pixels.
pub fn run_decoder(features: &FeaturePyramid, stack: &LayerStack, eta: f32) -> Result<DecoderRun> {
    decode(features, stack, eta, Gating::Sparse)
}

/// Reference pass: heads run densely and their outputs are then masked.
/// Values match [`run_decoder`] bit for bit; only the cost accounting differs.
pub fn run_decoder_masked_dense(features: &FeaturePyramid, stack: &LayerStack, eta: f32) -> Result<DecoderRun> {
    decode(features, stack, eta, Gating::DenseThenMask)
}

/// Pass with every mask forced to all ones.
pub fn run_decoder_dense(features: &FeaturePyramid, stack: &LayerStack) -> Result<DecoderRun> {
    decode(features, stack, 0.0, Gating::Ungated)
}

/// Features and a stack that reproduce `target` exactly up to float
/// rounding: F_{s+1} carries the true Haar bands of `target` at scale `s`,
/// the wavelet heads pass them through unchanged and the disparity head
/// inverts its own sigmoid. Stands in for a perfectly trained decoder when
/// measuring how sparse the masks of a given scene become.
pub fn haar_oracle(target: &Tensor) -> Result<(FeaturePyramid, LayerStack)> {
    if target.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: target.channels(),
        });
    }
    let pyr = dwt_pyramid(target, SCALES as u32)?;
    let (lo, hi) = (pyr.ll.min(), pyr.ll.max());
    let pad = 0.25 * (hi - lo) + 1e-3 * hi.abs().max(1.0);
    let (d_min, d_max) = (lo - pad, hi + pad);
    let logit = pyr.ll.map(|v| {
        let u = (v - d_min) / (d_max - d_min);
        (u / (1.0 - u)).ln()
    });

    let mut levels = Vec::with_capacity(SCALES);
    for (i, level) in pyr.levels.iter().enumerate() {
        let [lh, hl, hh] = level.bands();
        let t = if i == 0 {
            Tensor::stack_channels(&[lh, hl, hh, &logit])?
        } else {
            Tensor::stack_channels(&[lh, hl, hh])?
        };
        levels.push(t);
    }
    let features = FeaturePyramid::new(levels)?;

    let select = |c_in: usize, from: &[usize], k: usize, act: Activation| {
        let mut spec = ConvSpec::zeros(c_in, from.len(), k, act);
        for (co, &ci) in from.iter().enumerate() {
            spec.set_weight(co, ci, k / 2, k / 2, 1.0);
        }
        spec
    };
    let disp_head = vec![
        select(4, &[3], 1, Activation::Linear),
        select(1, &[0], 3, Activation::Sigmoid),
    ];
    let wave_heads = (0..SCALES)
        .map(|i| {
            let c = if i == 0 { 4 } else { 3 };
            WaveHeadSpec {
                kind: HeadKind::Linear,
                plus: vec![
                    select(c, &[0, 1, 2], 1, Activation::Linear),
                    select(3, &[0, 1, 2], 3, Activation::Linear),
                ],
                minus: None,
            }
        })
        .collect();
    let stack = LayerStack {
        disp_head,
        wave_heads,
        disp_range: (d_min, d_max),
    };
    stack.validate()?;
    Ok((features, stack))
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    activation: Activation,
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct HeadRecord {
    scale: u32,
    kind: HeadKind,
    plus: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minus: Option<Vec<LayerRecord>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    scales: u32,
    disp_range: [f32; 2],
    disp_head: Vec<LayerRecord>,
    heads: Vec<HeadRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn save_layer(spec: &ConvSpec, name: String, dir: &Path) -> Result<LayerRecord> {
    let weights = format!("{name}.weights.wmdt");
    let bias = format!("{name}.bias.wmdt");
    let per_out = spec.c_in * spec.k * spec.k;
    write_tensor(&Tensor::new(spec.c_out, per_out, 1, spec.weights.clone())?, dir.join(&weights))?;
    write_tensor(&Tensor::new(1, spec.c_out, 1, spec.bias.clone())?, dir.join(&bias))?;
    Ok(LayerRecord {
        name,
        c_in: spec.c_in,
        c_out: spec.c_out,
        k: spec.k,
        activation: spec.activation,
        weights,
        bias,
    })
}

fn load_layer(rec: &LayerRecord, dir: &Path) -> Result<ConvSpec> {
    let blob = |file: &str| {
        let path = dir.join(file);
        if path.exists() {
            read_tensor(&path)
        } else {
            Err(Error::MissingBlob(path))
        }
    };
    let w = blob(&rec.weights)?;
    let b = blob(&rec.bias)?;
    let per_out = rec.c_in * rec.k * rec.k;
    if w.dims() != (rec.c_out, per_out, 1) {
        return Err(Error::ShapeMismatch(format!(
            "{}: weights blob is {:?}, manifest declares {}x{}",
            rec.name,
            w.dims(),
            rec.c_out,
            per_out
        )));
    }
    if b.dims() != (1, rec.c_out, 1) {
        return Err(Error::ShapeMismatch(format!(
            "{}: bias blob is {:?}, manifest declares {}",
            rec.name,
            b.dims(),
            rec.c_out
        )));
    }
    ConvSpec::new(rec.c_in, rec.c_out, rec.k, w.into_data(), b.into_data(), rec.activation)
}

/// Writes the manifest and one weight and one bias blob per layer into `dir`.
pub fn save_stack(stack: &LayerStack, dir: impl AsRef<Path>) -> Result<()> {
    stack.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let disp_head = stack
        .disp_head
        .iter()
        .enumerate()
        .map(|(i, spec)| save_layer(spec, format!("disp4_{}", i + 1), dir))
        .collect::<Result<Vec<_>>>()?;
    let mut heads = Vec::with_capacity(SCALES);
    for s in (0..SCALES).rev() {
        let head = stack.head(s);
        let plus = head
            .plus
            .iter()
            .enumerate()
            .map(|(i, spec)| save_layer(spec, format!("wave{}_{}p", s + 1, i + 1), dir))
            .collect::<Result<Vec<_>>>()?;
        let minus = match &head.minus {
            Some(m) => Some(
                m.iter()
                    .enumerate()
                    .map(|(i, spec)| save_layer(spec, format!("wave{}_{}m", s + 1, i + 1), dir))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        heads.push(HeadRecord {
            scale: s as u32,
            kind: head.kind,
            plus,
            minus,
        });
    }
    let manifest = Manifest {
        scales: SCALES as u32,
        disp_range: [stack.disp_range.0, stack.disp_range.1],
        disp_head,
        heads,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads a stack from a manifest file; blobs are resolved next to it.
pub fn load_stack(manifest: impl AsRef<Path>) -> Result<LayerStack> {
    let path = manifest.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if m.scales as usize != SCALES || m.heads.len() != SCALES {
        return Err(Error::ShapeMismatch(format!(
            "manifest declares {} scales with {} heads",
            m.scales,
            m.heads.len()
        )));
    }
    let disp_head = m
        .disp_head
        .iter()
        .map(|r| load_layer(r, dir))
        .collect::<Result<Vec<_>>>()?;
    let mut heads: Vec<Option<WaveHeadSpec>> = vec![None; SCALES];
    for rec in &m.heads {
        let s = rec.scale as usize;
        if s >= SCALES || heads[SCALES - 1 - s].is_some() {
            return Err(Error::ShapeMismatch(format!("bad or repeated head scale {s}")));
        }
        let plus = rec.plus.iter().map(|r| load_layer(r, dir)).collect::<Result<Vec<_>>>()?;
        let minus = match &rec.minus {
            Some(list) => Some(list.iter().map(|r| load_layer(r, dir)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        heads[SCALES - 1 - s] = Some(WaveHeadSpec {
            kind: rec.kind,
            plus,
            minus,
        });
    }
    let stack = LayerStack {
        disp_head,
        wave_heads: heads.into_iter().map(|h| h.expect("all scales present")).collect(),
        disp_range: (m.disp_range[0], m.disp_range[1]),
    };
    stack.validate()?;
    Ok(stack)
}
