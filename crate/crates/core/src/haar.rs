//! Orthonormal 2D Haar analysis and synthesis.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2    a = (ll + lh + hl + hh) / 2
//! lh = (a + b - c - d) / 2    b = (ll + lh - hl - hh) / 2
//! hl = (a - b + c - d) / 2    c = (ll - lh + hl - hh) / 2
//! hh = (a - b - c + d) / 2    d = (ll - lh - hl + hh) / 2
//! ```
//!
//! `lh` responds to horizontal edges, `hl` to vertical ones. Channels are
//! transformed independently.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::par;
use crate::tensor::Tensor;

/// The three detail bands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletLevel {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl WaveletLevel {
    pub fn new(lh: Tensor, hl: Tensor, hh: Tensor) -> Result<Self> {
        if !lh.same_shape(&hl) || !lh.same_shape(&hh) {
            return Err(Error::DimensionMismatch(format!(
                "detail bands {:?}, {:?}, {:?}",
                lh.dims(),
                hl.dims(),
                hh.dims()
            )));
        }
        Ok(Self { lh, hl, hh })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        let z = Tensor::zeros(height, width, channels);
        Self {
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.lh.dims()
    }

    pub fn bands(&self) -> [&Tensor; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn bands_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.lh, &mut self.hl, &mut self.hh]
    }

    pub fn coefficient_count(&self) -> usize {
        3 * self.lh.len()
    }

    pub fn sum_squares(&self) -> f64 {
        self.bands().iter().map(|b| b.sum_squares()).sum()
    }
}

/// Coarsest low-pass band plus detail levels ordered coarsest to finest.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPyramid {
    pub ll: Tensor,
    pub levels: Vec<WaveletLevel>,
}

impl CoefficientPyramid {
    pub fn new(ll: Tensor, levels: Vec<WaveletLevel>) -> Result<Self> {
        let p = Self { ll, levels };
        p.validate()?;
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Full-resolution `(height, width)`.
    pub fn full_dims(&self) -> (usize, usize) {
        let k = self.levels.len() as u32;
        (self.ll.height() << k, self.ll.width() << k)
    }

    pub fn detail_count(&self) -> usize {
        self.levels.iter().map(WaveletLevel::coefficient_count).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.ll.sum_squares() + self.levels.iter().map(|l| l.sum_squares()).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let (mut h, mut w, c) = self.ll.dims();
        for (i, level) in self.levels.iter().enumerate() {
            let expect = (h, w, c);
            for band in level.bands() {
                if band.dims() != expect {
                    return Err(Error::DimensionMismatch(format!(
                        "pyramid level {i}: band {:?}, expected {expect:?}",
                        band.dims()
                    )));
                }
            }
            h *= 2;
            w *= 2;
        }
        Ok(())
    }
}

pub fn dwt_level(x: &Tensor) -> Result<(Tensor, WaveletLevel)> {
    let (h, w, c) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimension {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let band = ow * c;
    // Row r holds [ll | lh | hl | hh] for output row r.
    let mut packed = vec![0.0f32; oh * 4 * band];
    let src = x.data();
    par::for_each_row(&mut packed, 4 * band, |r, row| {
        let top = 2 * r * w * c;
        let bot = top + w * c;
        let (ll, rest) = row.split_at_mut(band);
        let (lh, rest) = rest.split_at_mut(band);
        let (hl, hh) = rest.split_at_mut(band);
        for j in 0..ow {
            for k in 0..c {
                let a = src[top + 2 * j * c + k];
                let b = src[top + (2 * j + 1) * c + k];
                let cc = src[bot + 2 * j * c + k];
                let d = src[bot + (2 * j + 1) * c + k];
                let i = j * c + k;
                ll[i] = ((a + b) + (cc + d)) * 0.5;
                lh[i] = ((a + b) - (cc + d)) * 0.5;
                hl[i] = ((a - b) + (cc - d)) * 0.5;
                hh[i] = ((a - b) - (cc - d)) * 0.5;
            }
        }
    });
    let mut bands: [Vec<f32>; 4] = Default::default();
    for b in bands.iter_mut() {
        b.reserve(oh * band);
    }
    for row in packed.chunks_exact(4 * band) {
        for (k, b) in bands.iter_mut().enumerate() {
            b.extend_from_slice(&row[k * band..(k + 1) * band]);
        }
    }
    let [ll, lh, hl, hh] = bands;
    Ok((
        Tensor::new(oh, ow, c, ll)?,
        WaveletLevel {
            lh: Tensor::new(oh, ow, c, lh)?,
            hl: Tensor::new(oh, ow, c, hl)?,
            hh: Tensor::new(oh, ow, c, hh)?,
        },
    ))
}

pub fn idwt_level(ll: &Tensor, detail: &WaveletLevel) -> Result<Tensor> {
    if detail.bands().iter().any(|b| !b.same_shape(ll)) {
        return Err(Error::DimensionMismatch(format!(
            "ll {:?} vs details {:?}/{:?}/{:?}",
            ll.dims(),
            detail.lh.dims(),
            detail.hl.dims(),
            detail.hh.dims()
        )));
    }
    let (h, w, c) = ll.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; oh * ow * c];
    let (s, lh, hl, hh) = (ll.data(), detail.lh.data(), detail.hl.data(), detail.hh.data());
    // Each coarse row produces a pair of output rows.
    par::for_each_row(&mut out, 2 * ow * c, |r, rows| {
        let (top, bot) = rows.split_at_mut(ow * c);
        for j in 0..w {
            for k in 0..c {
                let i = (r * w + j) * c + k;
                let (l, v, g, d) = (s[i], lh[i], hl[i], hh[i]);
                top[2 * j * c + k] = ((l + v) + (g + d)) * 0.5;
                top[(2 * j + 1) * c + k] = ((l + v) - (g + d)) * 0.5;
                bot[2 * j * c + k] = ((l - v) + (g - d)) * 0.5;
                bot[(2 * j + 1) * c + k] = ((l - v) - (g - d)) * 0.5;
            }
        }
    });
    Tensor::new(oh, ow, c, out)
}

/// `levels` recursive analysis steps on the low-pass band.
pub fn dwt_pyramid(x: &Tensor, levels: u32) -> Result<CoefficientPyramid> {
    let block = 1usize << levels;
    if x.height() % block != 0 || x.width() % block != 0 || x.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}x{} not divisible by 2^{levels}",
            x.height(),
            x.width()
        )));
    }
    let mut ll = x.clone();
    let mut details = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let (next, level) = dwt_level(&ll)?;
        details.push(level);
        ll = next;
    }
    details.reverse();
    Ok(CoefficientPyramid { ll, levels: details })
}

pub fn idwt_pyramid(pyr: &CoefficientPyramid) -> Result<Tensor> {
    pyr.validate()?;
    let mut ll = pyr.ll.clone();
    for level in &pyr.levels {
        ll = idwt_level(&ll, level)?;
    }
    Ok(ll)
}

#[derive(Debug, Serialize, Deserialize)]
struct PyramidManifest {
    format: String,
    levels: usize,
    ll: [usize; 3],
    /// Band dims per level; `level1` is the finest.
    bands: Vec<BandEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BandEntry {
    level: usize,
    dims: [usize; 3],
}

fn band_file(level: usize, band: &str) -> String {
    format!("level{level}_{band}.wmdt")
}

const BAND_NAMES: [&str; 3] = ["lh", "hl", "hh"];

/// Writes `ll.wmdt`, `level{j}_{lh,hl,hh}.wmdt` (j = 1 is the finest level)
/// and `manifest.json` into `dir`.
pub fn save_pyramid(pyr: &CoefficientPyramid, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = pyr.depth();
    let (h, w, c) = pyr.ll.dims();
    write_tensor(&pyr.ll, dir.join("ll.wmdt"))?;
    let mut bands = Vec::with_capacity(n);
    for (i, level) in pyr.levels.iter().enumerate() {
        let j = n - i;
        for (name, band) in BAND_NAMES.iter().zip(level.bands()) {
            write_tensor(band, dir.join(band_file(j, name)))?;
        }
        let (bh, bw, bc) = level.dims();
        bands.push(BandEntry {
            level: j,
            dims: [bh, bw, bc],
        });
    }
    let manifest = PyramidManifest {
        format: "haar-orthonormal".into(),
        levels: n,
        ll: [h, w, c],
        bands,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_pyramid(dir: impl AsRef<Path>) -> Result<CoefficientPyramid> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PyramidManifest = serde_json::from_str(&text)?;
    let ll = read_tensor(dir.join("ll.wmdt"))?;
    if ll.dims() != manifest.ll.into() {
        return Err(Error::ShapeMismatch(format!(
            "ll.wmdt is {:?}, manifest says {:?}",
            ll.dims(),
            manifest.ll
        )));
    }
    let mut levels = Vec::with_capacity(manifest.levels);
    for j in (1..=manifest.levels).rev() {
        let mut bands = Vec::with_capacity(3);
        for name in BAND_NAMES {
            let p = dir.join(band_file(j, name));
            if !p.exists() {
                return Err(Error::MissingBlob(p));
            }
            bands.push(read_tensor(p)?);
        }
        let hh = bands.pop().unwrap();
        let hl = bands.pop().unwrap();
        let lh = bands.pop().unwrap();
        levels.push(WaveletLevel::new(lh, hl, hh)?);
    }
    CoefficientPyramid::new(ll, levels)
}
