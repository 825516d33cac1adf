//! Multiply-accumulate accounting for dense and masked convolutions.
//!
//! A `k x k` convolution with bias over an `h x w` map costs
//! `h * w * (c_in * k^2 + 1) * c_out` multiply-adds; gating it with a mask of
//! sparsity `psi` scales that by `psi`. Counts are exact: measured masks give
//! integers, fractional `psi` values are carried as exact rationals.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};

pub type Mac = Ratio<u128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn per_pixel(&self) -> u128 {
        (self.c_in as u128 * (self.k * self.k) as u128 + 1) * self.c_out as u128
    }
}

impl From<&ConvSpec> for ConvShape {
    fn from(s: &ConvSpec) -> Self {
        ConvShape {
            c_in: s.c_in,
            c_out: s.c_out,
            k: s.k,
        }
    }
}

pub fn mac_dense(shape: ConvShape, h: usize, w: usize) -> u128 {
    h as u128 * w as u128 * shape.per_pixel()
}

/// Sparse cost from a sparsity level; the active pixel count is
/// `round(psi * h * w)`.
pub fn mac_sparse(shape: ConvShape, h: usize, w: usize, psi: f64) -> Result<u128> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::InvalidArgument(format!("psi {psi} not in [0, 1]")));
    }
    let active = (psi * (h as f64) * (w as f64)).round() as u128;
    Ok(active * shape.per_pixel())
}

/// Sparse cost from a measured mask.
pub fn mac_sparse_active(shape: ConvShape, active: usize) -> u128 {
    active as u128 * shape.per_pixel()
}

/// One decoder layer in an architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchLayer {
    pub name: String,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// Whether the layer is gated by the mask of `scale`.
    pub maskable: bool,
    /// Wavelet level whose mask gates this layer (3 = coarsest).
    pub scale: u32,
}

impl ArchLayer {
    pub fn shape(&self) -> ConvShape {
        ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            k: self.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntry {
    pub name: String,
    pub scale: u32,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub maskable: bool,
    pub psi: Ratio<u128>,
    pub mac_dense: u128,
    pub mac_sparse: Mac,
}

impl LayerEntry {
    /// Entry for a layer that was actually evaluated on `active` pixels.
    pub fn measured(
        name: impl Into<String>,
        scale: u32,
        h: usize,
        w: usize,
        shape: ConvShape,
        active: usize,
    ) -> Self {
        let hw = (h * w).max(1) as u128;
        LayerEntry {
            name: name.into(),
            scale,
            h,
            w,
            c_in: shape.c_in,
            c_out: shape.c_out,
            k: shape.k,
            maskable: true,
            psi: Ratio::new(active as u128, hw),
            mac_dense: mac_dense(shape, h, w),
            mac_sparse: Ratio::from_integer(mac_sparse_active(shape, active)),
        }
    }

    pub fn active_pixels(&self) -> Ratio<u128> {
        self.psi * Ratio::from_integer((self.h * self.w) as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MacReport {
    pub entries: Vec<LayerEntry>,
}

impl MacReport {
    pub fn new(entries: Vec<LayerEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, e: LayerEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: MacReport) {
        self.entries.extend(other.entries);
    }

    pub fn total_dense(&self) -> u128 {
        self.entries.iter().map(|e| e.mac_dense).sum()
    }

    pub fn total_sparse(&self) -> Mac {
        self.entries
            .iter()
            .fold(Ratio::from_integer(0), |acc, e| acc + e.mac_sparse)
    }

    /// Exact `total_sparse / total_dense`; 1 for an empty report.
    pub fn ratio(&self) -> Ratio<u128> {
        let dense = self.total_dense();
        if dense == 0 {
            return Ratio::from_integer(1);
        }
        self.total_sparse() / Ratio::from_integer(dense)
    }

    /// Same ratio restricted to maskable layers.
    pub fn maskable_ratio(&self) -> Ratio<u128> {
        MacReport::new(self.entries.iter().filter(|e| e.maskable).cloned().collect()).ratio()
    }

    /// Per-scale totals `(scale, dense, sparse)` in descending scale order.
    pub fn per_scale(&self) -> Vec<(u32, u128, Mac)> {
        let mut scales: Vec<u32> = self.entries.iter().map(|e| e.scale).collect();
        scales.sort_unstable_by(|a, b| b.cmp(a));
        scales.dedup();
        scales
            .into_iter()
            .map(|s| {
                let mut dense = 0;
                let mut sparse = Ratio::from_integer(0);
                for e in self.entries.iter().filter(|e| e.scale == s) {
                    dense += e.mac_dense;
                    sparse += e.mac_sparse;
                }
                (s, dense, sparse)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,scale,h,w,c_in,c_out,k,maskable,psi,mac_dense,mac_sparse,flops_dense,flops_sparse\n",
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.name,
                e.scale,
                e.h,
                e.w,
                e.c_in,
                e.c_out,
                e.k,
                e.maskable,
                fmt_f64(ratio_f64(e.psi)),
                e.mac_dense,
                fmt_mac(e.mac_sparse),
                2 * e.mac_dense,
                fmt_mac(e.mac_sparse * Ratio::from_integer(2)),
            );
        }
        let _ = writeln!(
            s,
            "total,,,,,,,,{},{},{},{},{}",
            fmt_f64(ratio_f64(self.ratio())),
            self.total_dense(),
            fmt_mac(self.total_sparse()),
            2 * self.total_dense(),
            fmt_mac(self.total_sparse() * Ratio::from_integer(2)),
        );
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>5} {:>11} {:>9} {:>7} {:>3} {:>8} {:>16} {:>16}",
            "layer", "scale", "h x w", "c_in", "c_out", "k", "psi", "MAC dense", "MAC sparse"
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<14} {:>5} {:>11} {:>9} {:>7} {:>3} {:>8.4} {:>16} {:>16.0}",
                e.name,
                e.scale,
                format!("{}x{}", e.h, e.w),
                e.c_in,
                e.c_out,
                e.k,
                ratio_f64(e.psi),
                e.mac_dense,
                ratio_f64(e.mac_sparse),
            );
        }
        let dense = self.total_dense() as f64;
        let sparse = ratio_f64(self.total_sparse());
        let _ = writeln!(
            s,
            "total: dense {:.4} GMAC ({:.4} GFLOP), sparse {:.4} GMAC ({:.4} GFLOP), ratio {:.4} ({:.2}x fewer)",
            dense / 1e9,
            2.0 * dense / 1e9,
            sparse / 1e9,
            2.0 * sparse / 1e9,
            ratio_f64(self.ratio()),
            if sparse > 0.0 { dense / sparse } else { f64::INFINITY },
        );
        s
    }
}

pub fn ratio_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.9}")
}

/// Integers print as integers, fractional counts with six decimals.
pub fn fmt_mac(m: Mac) -> String {
    if m.is_integer() {
        m.to_integer().to_string()
    } else {
        format!("{:.6}", ratio_f64(m))
    }
}

/// Exact rational from a decimal string such as `"0.333333"` or `"1/3"`.
pub fn parse_psi(s: &str) -> Result<Ratio<u128>> {
    let bad = || Error::InvalidArgument(format!("bad psi {s:?}"));
    let s = s.trim();
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: u128 = n.trim().parse().map_err(|_| bad())?;
        let d: u128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 30 || (int.is_empty() && frac.is_empty()) {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        if !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let n: u128 = digits.parse().map_err(|_| bad())?;
        Ratio::new(n, 10u128.pow(frac.len() as u32))
    };
    if r > Ratio::from_integer(1) {
        return Err(Error::InvalidArgument(format!("psi {s} exceeds 1")));
    }
    Ok(r)
}

/// Per-scale sparsity levels; scales without an entry are dense.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalePsi(pub Vec<(u32, Ratio<u128>)>);

impl ScalePsi {
    pub fn uniform(psi: Ratio<u128>, scales: &[u32]) -> Self {
        ScalePsi(scales.iter().map(|&s| (s, psi)).collect())
    }

    pub fn get(&self, scale: u32) -> Ratio<u128> {
        self.0
            .iter()
            .find(|(s, _)| *s == scale)
            .map_or(Ratio::from_integer(1), |(_, p)| *p)
    }
}

/// Dense vs sparse report for a described architecture. Maskable layers use
/// the sparsity of their scale; the others count as dense.
pub fn arch_report(layers: &[ArchLayer], psi: &ScalePsi) -> Result<MacReport> {
    let mut report = MacReport::default();
    for l in layers {
        if l.k % 2 == 0 || l.h == 0 || l.w == 0 {
            return Err(Error::InvalidArgument(format!("malformed layer {:?}", l.name)));
        }
        let p = if l.maskable {
            psi.get(l.scale)
        } else {
            Ratio::from_integer(1)
        };
        if p > Ratio::from_integer(1) {
            return Err(Error::InvalidArgument(format!("psi for scale {} exceeds 1", l.scale)));
        }
        let dense = mac_dense(l.shape(), l.h, l.w);
        report.push(LayerEntry {
            name: l.name.clone(),
            scale: l.scale,
            h: l.h,
            w: l.w,
            c_in: l.c_in,
            c_out: l.c_out,
            k: l.k,
            maskable: l.maskable,
            psi: p,
            mac_dense: dense,
            mac_sparse: p * Ratio::from_integer(dense),
        });
    }
    Ok(report)
}

pub fn parse_arch(json: &str) -> Result<Vec<ArchLayer>> {
    let layers: Vec<ArchLayer> = serde_json::from_str(json)?;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("architecture has no layers".into()));
    }
    Ok(layers)
}

/// ResNet-18 encoder channels at strides 2, 4, 8, 16, 32.
pub const RESNET18_ENCODER: [usize; 5] = [64, 64, 128, 256, 512];

/// The wavelet decoder used for the stereo-trained models: up/integration
/// convolutions of the base decoder, the coarse disparity head and one
/// two-branch wavelet head per level. The last full-resolution level of the
/// base decoder is absent.
pub fn wavelet_decoder_arch(height: usize, width: usize) -> Result<Vec<ArchLayer>> {
    if height % 32 != 0 || width % 32 != 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "{height}x{width} must be a non-zero multiple of 32"
        )));
    }
    let enc = RESNET18_ENCODER;
    let dec = [16usize, 32, 64, 128, 256];
    let at = |stride: usize| (height / stride, width / stride);
    let mut layers = Vec::new();
    let mut push = |name: String, stride: usize, c_in, c_out, k, maskable, scale| {
        let (h, w) = at(stride);
        layers.push(ArchLayer {
            name,
            h,
            w,
            c_in,
            c_out,
            k,
            maskable,
            scale,
        });
    };
    push("upconv5".into(), 32, enc[4], dec[4], 3, false, 3);
    push("iconv4".into(), 16, dec[4] + enc[3], dec[4], 3, false, 3);
    push("disp4_1".into(), 16, dec[4], dec[4] / 4, 1, false, 3);
    push("disp4_2".into(), 16, dec[4] / 4, 1, 3, false, 3);
    // Wave head for level J runs on iconv(J+1) at stride 2^(J+1).
    let wave = |push: &mut dyn FnMut(String, usize, usize, usize, usize, bool, u32), level: u32, c: usize, maskable: bool| {
        let stride = 2usize << level;
        for sign in ["p", "m"] {
            push(format!("wave{}_1{sign}", level + 1), stride, c, c, 1, maskable, level);
            push(format!("wave{}_2{sign}", level + 1), stride, c, 3, 3, maskable, level);
        }
    };
    wave(&mut push, 3, dec[4], false);
    // upconv{s} runs at the coarser stride but only feeds the level below it.
    push("upconv4".into(), 16, dec[4], dec[3], 3, true, 2);
    push("iconv3".into(), 8, dec[3] + enc[2], dec[3], 3, true, 2);
    wave(&mut push, 2, dec[3], true);
    push("upconv3".into(), 8, dec[3], dec[2], 3, true, 1);
    push("iconv2".into(), 4, dec[2] + enc[1], dec[2], 3, true, 1);
    wave(&mut push, 1, dec[2], true);
    push("upconv2".into(), 4, dec[2], dec[1], 3, true, 0);
    push("iconv1".into(), 2, dec[1] + enc[0], dec[1], 3, true, 0);
    wave(&mut push, 0, dec[1], true);
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX: ConvShape = ConvShape {
        c_in: 2,
        c_out: 4,
        k: 3,
    };

    #[test]
    fn dense_hand_value() {
        assert_eq!(mac_dense(EX, 8, 8), 4864);
        assert_eq!(mac_dense(ConvShape { c_out: 0, ..EX }, 8, 8), 0);
        let one = ConvShape {
            c_in: 1,
            c_out: 5,
            k: 1,
        };
        assert_eq!(mac_dense(one, 7, 3), 7 * 3 * 2 * 5);
    }

    #[test]
    fn sparse_hand_value() {
        assert_eq!(mac_sparse(EX, 8, 8, 0.25).unwrap(), 1216);
        assert_eq!(mac_sparse(EX, 8, 8, 1.0).unwrap(), 4864);
        assert_eq!(mac_sparse(EX, 8, 8, 0.0).unwrap(), 0);
        assert!(mac_sparse(EX, 8, 8, 1.5).is_err());
        assert!(mac_sparse(EX, 8, 8, -0.1).is_err());
        assert_eq!(mac_sparse_active(EX, 16), 1216);
    }

    #[test]
    fn no_overflow_on_large_layers() {
        let big = ConvShape {
            c_in: 1 << 20,
            c_out: 1 << 20,
            k: 7,
        };
        assert_eq!(mac_dense(big, 1 << 16, 1 << 16), (1u128 << 32) * ((49u128 << 20) + 1) * (1 << 20));
    }

    #[test]
    fn psi_parsing() {
        assert_eq!(parse_psi("0.25").unwrap(), Ratio::new(1, 4));
        assert_eq!(parse_psi("1/3").unwrap(), Ratio::new(1, 3));
        assert_eq!(parse_psi("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_psi("0.333333").unwrap(), Ratio::new(333333, 1_000_000));
        assert!(parse_psi("1.5").is_err());
        assert!(parse_psi("-0.1").is_err());
        assert!(parse_psi("abc").is_err());
    }

    #[test]
    fn uniform_psi_ratio() {
        let arch = wavelet_decoder_arch(320, 1024).unwrap();
        let all = ScalePsi::uniform(Ratio::from_integer(1), &[0, 1, 2, 3]);
        assert_eq!(arch_report(&arch, &all).unwrap().ratio(), Ratio::from_integer(1));
        let third = ScalePsi::uniform(Ratio::new(1, 3), &[0, 1, 2, 3]);
        let r = arch_report(&arch, &third).unwrap();
        assert_eq!(r.maskable_ratio(), Ratio::new(1, 3));
        assert!(r.ratio() > Ratio::new(1, 3));
        let sum: u128 = r.entries.iter().map(|e| e.mac_dense).sum();
        assert_eq!(r.total_dense(), sum);
    }

    #[test]
    fn arch_shapes() {
        let arch = wavelet_decoder_arch(320, 1024).unwrap();
        let find = |n: &str| arch.iter().find(|l| l.name == n).unwrap();
        assert_eq!((find("iconv4").h, find("iconv4").w, find("iconv4").c_in), (20, 64, 512));
        assert_eq!((find("wave1_2p").h, find("wave1_2p").c_in, find("wave1_2p").c_out), (160, 32, 3));
        assert_eq!(find("iconv1").c_in, 96);
        assert_eq!(arch.len(), 4 + 4 * 4 + 2 * 3);
        assert!(wavelet_decoder_arch(100, 64).is_err());
        let json = serde_json::to_string(&arch).unwrap();
        assert_eq!(parse_arch(&json).unwrap(), arch);
        assert!(parse_arch("[]").is_err());
        assert!(parse_arch("{").is_err());
    }

    #[test]
    fn csv_has_totals() {
        let arch = wavelet_decoder_arch(64, 64).unwrap();
        let r = arch_report(&arch, &ScalePsi::uniform(Ratio::new(1, 2), &[0, 1, 2])).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), arch.len() + 2);
        assert!(csv.lines().last().unwrap().starts_with("total,"));
    }
}
