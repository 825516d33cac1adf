//! Standard single-image depth metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const NAMES: [&'static str; 8] = [
        "abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "delta1", "delta2", "delta3",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Cap at 80 m, floor 1e-3 m; seven-column table layout.
    Kitti,
    /// Clamp to [0.4, 10] m; six-column table layout.
    Nyu,
}

impl Preset {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Preset::Kitti => &["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"],
            Preset::Nyu => &["abs_rel", "rmse", "log10", "delta1", "delta2", "delta3"],
        }
    }

    pub fn config(self) -> EvalConfig {
        match self {
            Preset::Kitti => EvalConfig {
                clamp_min: 1e-3,
                clamp_max: 80.0,
                crop: None,
                median_scaling: false,
            },
            Preset::Nyu => EvalConfig {
                clamp_min: 0.4,
                clamp_max: 10.0,
                crop: None,
                median_scaling: false,
            },
        }
    }

    pub fn csv_header(self) -> String {
        self.columns().join(",")
    }

    pub fn csv_row(self, m: &DepthMetrics) -> String {
        self.columns()
            .iter()
            .map(|c| format!("{:.9}", m.get(c).expect("known column")))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(Preset::Kitti),
            "nyu" => Ok(Preset::Nyu),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub crop: Option<Crop>,
    pub median_scaling: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Preset::Kitti.config()
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_min > 0.0 && self.clamp_min < self.clamp_max) {
            return Err(Error::InvalidArgument(format!(
                "clamp range [{}, {}] must satisfy 0 < min < max",
                self.clamp_min, self.clamp_max
            )));
        }
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics over pixels with `gt > 0`, after optional crop, optional median
/// scaling of the prediction, and clamping of both maps to the configured range.
pub fn depth_metrics(pred: &Tensor, gt: &Tensor, cfg: &EvalConfig) -> Result<DepthMetrics> {
    cfg.validate()?;
    if !pred.same_shape(gt) || pred.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let (pred, gt) = match cfg.crop {
        Some(c) => (
            pred.crop(c.top, c.left, c.height, c.width)?,
            gt.crop(c.top, c.left, c.height, c.width)?,
        ),
        None => (pred.clone(), gt.clone()),
    };
    let mut pairs: Vec<(f64, f64)> = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(_, &g)| g > 0.0 && g.is_finite())
        .map(|(&p, &g)| (p as f64, g as f64))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoValidPixels);
    }
    if cfg.median_scaling {
        let mp = median(pairs.iter().map(|p| p.0).collect());
        let mg = median(pairs.iter().map(|p| p.1).collect());
        if mp > 0.0 {
            let k = mg / mp;
            for p in pairs.iter_mut() {
                p.0 *= k;
            }
        }
    }
    let clamp = |v: f64| v.clamp(cfg.clamp_min, cfg.clamp_max);
    let n = pairs.len() as f64;
    let mut acc = [0.0f64; 8];
    for &(p, g) in &pairs {
        let (p, g) = (clamp(p), clamp(g));
        let d = p - g;
        acc[0] += d.abs() / g;
        acc[1] += d * d / g;
        acc[2] += d * d;
        let dl = p.ln() - g.ln();
        acc[3] += dl * dl;
        acc[4] += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        acc[5] += (ratio < 1.25) as u8 as f64;
        acc[6] += (ratio < 1.25 * 1.25) as u8 as f64;
        acc[7] += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
    }
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        log10: acc[4] / n,
        delta1: acc[5] / n,
        delta2: acc[6] / n,
        delta3: acc[7] / n,
    })
}

/// Percent change per metric, `100 * (m - base) / base`. `None` where the
/// baseline is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeChange(pub [Option<f64>; 8]);

impl RelativeChange {
    pub fn get(&self, name: &str) -> Option<f64> {
        DepthMetrics::NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.0[i])
    }
}

pub fn relative_change(m: &DepthMetrics, baseline: &DepthMetrics) -> RelativeChange {
    let mut out = [None; 8];
    for (slot, (v, b)) in out.iter_mut().zip(m.values().into_iter().zip(baseline.values())) {
        if b != 0.0 {
            *slot = Some(100.0 * (v - b) / b);
        }
    }
    RelativeChange(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt() -> Tensor {
        Tensor::from_fn(4, 5, |y, x| [5.0, 10.0, 2.5, 1.25][(y + x) % 4])
    }

    #[test]
    fn identity() {
        let m = depth_metrics(&gt(), &gt(), &EvalConfig::default()).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.rmse_log, 0.0);
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_ratio_1_2() {
        // 1.2 * g is exact for these depths.
        let m = depth_metrics(&gt().scale(1.2), &gt(), &EvalConfig::default()).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-9);
        assert!((m.rmse_log - 1.2f64.ln()).abs() < 1e-9);
        assert!((m.log10 - 1.2f64.log10()).abs() < 1e-9);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn uniform_ratio_2() {
        let m = depth_metrics(&gt().scale(2.0), &gt(), &EvalConfig::default()).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        // Thresholds are symmetric in pred/gt.
        let r = depth_metrics(&gt(), &gt().scale(2.0), &EvalConfig::default()).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let mut g = gt();
        g.set(0, 0, 0, 0.0);
        let mut p = gt();
        p.set(0, 0, 0, 1000.0);
        let m = depth_metrics(&p, &g, &EvalConfig::default()).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        let z = Tensor::zeros(2, 2, 1);
        assert!(matches!(
            depth_metrics(&z, &z, &EvalConfig::default()),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn nyu_clamps() {
        let g = Tensor::filled(2, 2, 1, 5.0);
        let p = Tensor::filled(2, 2, 1, 30.0);
        let m = depth_metrics(&p, &g, &Preset::Nyu.config()).unwrap();
        // 30 clamps to 10.
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        // 0.1 clamps up to 0.4 against a 0.5 ground truth.
        let low = depth_metrics(&Tensor::filled(2, 2, 1, 0.1), &Tensor::filled(2, 2, 1, 0.5), &Preset::Nyu.config()).unwrap();
        assert!((low.abs_rel - 0.2).abs() < 1e-12);
    }

    #[test]
    fn median_scaling_removes_scale() {
        let cfg = EvalConfig {
            median_scaling: true,
            ..EvalConfig::default()
        };
        let m = depth_metrics(&gt().scale(3.0), &gt(), &cfg).unwrap();
        assert!(m.abs_rel < 1e-7);
    }

    #[test]
    fn crop_restricts() {
        let mut p = gt();
        p.set(3, 4, 0, 50.0);
        let cfg = EvalConfig {
            crop: Some(Crop {
                top: 0,
                left: 0,
                height: 3,
                width: 5,
            }),
            ..EvalConfig::default()
        };
        assert_eq!(depth_metrics(&p, &gt(), &cfg).unwrap().abs_rel, 0.0);
    }

    #[test]
    fn relative_changes() {
        let base = depth_metrics(&gt().scale(1.2), &gt(), &EvalConfig::default()).unwrap();
        let same = relative_change(&base, &base);
        assert!(same.0.iter().all(|v| *v == Some(0.0)));
        let mut a = base;
        a.abs_rel = 0.101;
        let mut b = base;
        b.abs_rel = 0.100;
        let rc = relative_change(&a, &b);
        assert!((rc.get("abs_rel").unwrap() - 1.0).abs() < 1e-9);
        let zero = depth_metrics(&gt(), &gt(), &EvalConfig::default()).unwrap();
        assert_eq!(relative_change(&base, &zero).get("rmse"), None);
    }

    #[test]
    fn csv_layouts() {
        assert_eq!(Preset::Kitti.csv_header(), "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3");
        assert_eq!(Preset::Nyu.csv_header(), "abs_rel,rmse,log10,delta1,delta2,delta3");
        let m = depth_metrics(&gt(), &gt(), &EvalConfig::default()).unwrap();
        assert_eq!(Preset::Nyu.csv_row(&m).split(',').count(), 6);
        assert!("NYU".parse::<Preset>().is_ok());
        assert!("foo".parse::<Preset>().is_err());
    }
}
