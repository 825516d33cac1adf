//! Command-line front end. Every command writes its outputs through a staging
//! path that is renamed into place only after everything succeeded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;

use crate::conv::HeadKind;
use crate::decoder::{self, FeaturePyramid, LayerStack, DEFAULT_CHANNELS, SCALES};
use crate::error::{Error, Result};
use crate::flops::{self, ArchLayer, MacReport, ScalePsi};
use crate::haar::{dwt_level, dwt_pyramid, idwt_pyramid, save_pyramid};
use crate::io::{read_mask, read_pfm, write_mask, write_pfm};
use crate::metrics::{depth_metrics, relative_change, DepthMetrics, Preset, RelativeChange};
use crate::par;
use crate::scene::{quadtree_scene, ramp_scene, RampSceneConfig};
use crate::sparsity::{coefficient_mask, scale_threshold, threshold_pyramid, ThresholdPolicy};
use crate::tensor::{crop_to_dyadic, Tensor};

pub const THREADS_ENV: &str = "WAVEDEPTH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wavedepth", version, about = "Wavelet depth decoding, sparsity sweeps and cost reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep thresholds or keep-fractions over the Haar pyramid of a depth map.
    Analyze(AnalyzeArgs),
    /// Run the sparse decoder on a feature pyramid.
    Decode(DecodeArgs),
    /// Dense and sparse multiply-accumulate report for a decoder architecture.
    Flops(FlopsArgs),
    /// Depth metrics of a prediction against ground truth.
    Eval(EvalArgs),
    /// Write a seeded synthetic depth scene.
    Scene(SceneArgs),
    /// Write the Haar pyramid of a map as a directory of tensors.
    Pyramid(PyramidArgs),
    /// Write a randomly initialised decoder stack.
    InitStack(InitStackArgs),
    /// Write the default decoder architecture description.
    Arch(ArchArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth; defaults to the input itself.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub levels: u32,
    #[arg(long = "eta")]
    pub etas: Vec<f32>,
    #[arg(long = "rho")]
    pub rhos: Vec<f64>,
    #[arg(long, default_value = "kitti")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Directory holding f4.wmdt .. f1.wmdt.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    pub features: Option<PathBuf>,
    /// Seed for synthetic features shaped after the stack.
    #[arg(long)]
    pub synth: Option<u64>,
    /// Output size for synthetic features.
    #[arg(long, default_value = "320x1024", value_parser = parse_dims)]
    pub dims: (usize, usize),
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Architecture JSON; defaults to the built-in decoder at --dims.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, default_value = "320x1024", value_parser = parse_dims)]
    pub dims: (usize, usize),
    /// One value for every maskable scale, or three for scales 2, 1, 0.
    /// Decimals or fractions such as 1/3.
    #[arg(long, value_delimiter = ',', conflicts_with = "run", required_unless_present = "run")]
    pub psi: Vec<String>,
    /// Decoder run directory; sparsity is read from its masks.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "kitti")]
    pub preset: Preset,
    #[arg(long)]
    pub median_scaling: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Ramp,
    Quadtree,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "480x640", value_parser = parse_dims)]
    pub dims: (usize, usize),
    #[arg(long, value_enum, default_value_t = SceneKind::Ramp)]
    pub kind: SceneKind,
    /// Quadtree depth.
    #[arg(long, default_value_t = 4)]
    pub levels: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PyramidArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub levels: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadChoice {
    TwoSigmoid,
    Linear,
}

#[derive(Debug, Args)]
pub struct InitStackArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CHANNELS)]
    pub channels: Vec<usize>,
    #[arg(long, value_enum, default_value_t = HeadChoice::TwoSigmoid)]
    pub head: HeadChoice,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub disp_range: Option<Vec<f32>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long, default_value = "320x1024", value_parser = parse_dims)]
    pub dims: (usize, usize),
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

/// Output that lives at a hidden sibling path until committed. Dropping an
/// uncommitted output deletes whatever was written.
struct Staged {
    target: PathBuf,
    tmp: PathBuf,
    dir: bool,
    done: bool,
}

impl Staged {
    fn new(target: &Path, dir: bool) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", target.display())))?;
        let tmp = target.with_file_name(format!(".{}.partial", name.to_string_lossy()));
        if dir {
            if target.is_dir() && fs::read_dir(target).map_err(|e| Error::io(target, e))?.next().is_some() {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} is not empty",
                    target.display()
                )));
            }
            if tmp.exists() {
                fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
            }
            fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        } else if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(Self {
            target: target.to_path_buf(),
            tmp,
            dir,
            done: false,
        })
    }

    fn path(&self) -> &Path {
        &self.tmp
    }

    fn commit(mut self) -> Result<()> {
        if self.dir && self.target.is_dir() {
            fs::remove_dir(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.done = true;
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.done {
            let _ = if self.dir {
                fs::remove_dir_all(&self.tmp)
            } else {
                fs::remove_file(&self.tmp)
            };
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_file_output(target: &Path, text: &str) -> Result<()> {
    let staged = Staged::new(target, false)?;
    write_text(staged.path(), text)?;
    staged.commit()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn single_channel(t: Tensor, path: &Path) -> Result<Tensor> {
    if t.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} has {} channels, expected a single-channel map",
            path.display(),
            t.channels()
        )));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPoint {
    /// Per-level threshold `eta * range` of the map each level reconstructs.
    Eta(f32),
    /// Keep the largest fraction of detail coefficients.
    Rho(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    /// Surviving share of all detail coefficients.
    pub kept_fraction: f64,
    /// Share of positions with a surviving coefficient, coarsest level first.
    pub psi: Vec<f64>,
    pub metrics: DepthMetrics,
    /// Percent change of each metric against the unthresholded reconstruction.
    pub relative: RelativeChange,
    /// `100 * abs_rel` of the thresholded against the unthresholded reconstruction.
    pub drift_abs_rel: f64,
    /// Sparse over dense decoder MACs with masks taken from this sweep point.
    pub mac_ratio: Option<f64>,
}

/// Sweep over `points`. `depth` and `gt` must share dims; both are center
/// cropped to a multiple of `2^levels`.
pub fn analyze_depth(
    depth: &Tensor,
    gt: &Tensor,
    levels: u32,
    points: &[SweepPoint],
    preset: Preset,
) -> Result<Vec<SweepRow>> {
    if !depth.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "input {:?} vs ground truth {:?}",
            depth.dims(),
            gt.dims()
        )));
    }
    let x = crop_to_dyadic(depth, levels)?;
    let gt = crop_to_dyadic(gt, levels)?;
    let cfg = preset.config();
    let pyr = dwt_pyramid(&x, levels)?;
    let dense = idwt_pyramid(&pyr)?;
    let base = depth_metrics(&dense, &gt, &cfg)?;

    // Low-pass maps from full resolution down; detail level j rebuilds lows[j-1].
    let mut lows = vec![x.clone()];
    for _ in 0..levels {
        let (ll, _) = dwt_level(lows.last().expect("non-empty"))?;
        lows.push(ll);
    }
    let (h, w) = (x.height(), x.width());
    let arch = flops::wavelet_decoder_arch(h, w).ok();
    let total = pyr.detail_count();

    let rows = par::map(points, |&point| -> Result<SweepRow> {
        let policy = match point {
            SweepPoint::Eta(eta) => {
                let etas = (0..levels as usize)
                    .map(|i| scale_threshold(&lows[levels as usize - 1 - i], eta))
                    .collect::<Result<Vec<_>>>()?;
                ThresholdPolicy::PerLevel(etas)
            }
            SweepPoint::Rho(rho) => ThresholdPolicy::KeepTopFraction(rho),
        };
        let kept = threshold_pyramid(&pyr, &policy)?;
        let recon = idwt_pyramid(&kept)?;
        let metrics = depth_metrics(&recon, &gt, &cfg)?;
        let drift = depth_metrics(&recon, &dense, &cfg)?.abs_rel * 100.0;
        let survivors: usize = kept
            .levels
            .iter()
            .flat_map(|l| l.bands())
            .map(|b| b.data().iter().filter(|v| **v != 0.0).count())
            .sum();
        let mut active = Vec::with_capacity(kept.levels.len());
        for level in &kept.levels {
            let m = coefficient_mask(level, 0.0)?;
            active.push((m.active_count(), m.height() * m.width()));
        }
        let psi = active.iter().map(|&(a, n)| a as f64 / n as f64).collect();
        let mac_ratio = match &arch {
            Some(layers) => Some(flops::ratio_f64(
                flops::arch_report(layers, &gating_psi(&active))?.ratio(),
            )),
            None => None,
        };
        Ok(SweepRow {
            point,
            kept_fraction: survivors as f64 / total as f64,
            psi,
            metrics,
            relative: relative_change(&metrics, &base),
            drift_abs_rel: drift,
            mac_ratio,
        })
    });
    rows.into_iter().collect()
}

/// Decoder scale `s` runs on the mask grown from the coefficients of scale
/// `s + 1`, which is pyramid level `s + 2` counted from the finest.
fn gating_psi(active: &[(usize, usize)]) -> ScalePsi {
    let depth = active.len();
    let mut out = Vec::new();
    for s in 0..SCALES as u32 - 1 {
        let j = s as usize + 2;
        if j <= depth {
            let (a, n) = active[depth - j];
            out.push((s, Ratio::new(a as u128, n as u128)));
        }
    }
    ScalePsi(out)
}

pub fn sweep_csv(rows: &[SweepRow], levels: u32) -> String {
    let mut s = String::from("mode,value,kept_fraction");
    for j in (1..=levels).rev() {
        let _ = write!(s, ",psi_level{j}");
    }
    s.push_str(",abs_rel,sq_rel,rmse,rmse_log,delta1,rel_abs_rel,rel_rmse,rel_delta1,drift_abs_rel,mac_ratio\n");
    for r in rows {
        let (mode, value) = match r.point {
            SweepPoint::Eta(e) => ("eta", e.to_string()),
            SweepPoint::Rho(p) => ("rho", p.to_string()),
        };
        let _ = write!(s, "{mode},{value},{}", r.kept_fraction);
        for p in &r.psi {
            let _ = write!(s, ",{p}");
        }
        let m = &r.metrics;
        let _ = writeln!(
            s,
            ",{},{},{},{},{},{},{},{},{},{}",
            m.abs_rel,
            m.sq_rel,
            m.rmse,
            m.rmse_log,
            m.delta1,
            fmt_opt(r.relative.get("abs_rel")),
            fmt_opt(r.relative.get("rmse")),
            fmt_opt(r.relative.get("delta1")),
            r.drift_abs_rel,
            fmt_opt(r.mac_ratio),
        );
    }
    s
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut points: Vec<SweepPoint> = a.etas.iter().map(|&e| SweepPoint::Eta(e)).collect();
    points.extend(a.rhos.iter().map(|&r| SweepPoint::Rho(r)));
    if points.is_empty() {
        return Err(Error::InvalidArgument("give at least one --eta or --rho".into()));
    }
    let staged = Staged::new(&a.out, false)?;
    let depth = single_channel(read_pfm(&a.input)?, &a.input)?;
    let gt = match &a.gt {
        Some(p) => single_channel(read_pfm(p)?, p)?,
        None => depth.clone(),
    };
    let rows = analyze_depth(&depth, &gt, a.levels, &points, a.preset)?;
    write_text(staged.path(), &sweep_csv(&rows, a.levels))?;
    staged.commit()
}

fn stack_channels(stack: &LayerStack) -> [usize; SCALES] {
    let mut ch = [0; SCALES];
    ch[0] = stack.disp_head[0].c_in;
    for (i, head) in stack.wave_heads.iter().enumerate().skip(1) {
        ch[i] = head.c_in();
    }
    ch
}

/// Per-scale summary of a decoder run.
pub fn psi_csv(run: &decoder::DecoderRun) -> String {
    let mut s = String::from("scale,height,width,active,psi,threshold\n");
    for (i, (mask, psi)) in run.masks.iter().zip(&run.psi).enumerate() {
        let scale = SCALES - 1 - i;
        let _ = writeln!(
            s,
            "{scale},{},{},{},{psi},{}",
            mask.height(),
            mask.width(),
            mask.active_count(),
            run.thresholds[i]
        );
    }
    s
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let staged = Staged::new(&a.out, true)?;
    let stack = decoder::load_stack(&a.manifest)?;
    let features: FeaturePyramid = match (&a.features, a.synth) {
        (Some(dir), _) => FeaturePyramid::load(dir)?,
        (None, Some(seed)) => decoder::synth_features(seed, a.dims, stack_channels(&stack))?,
        (None, None) => return Err(Error::InvalidArgument("give --features or --synth".into())),
    };
    let run = decoder::run_decoder(&features, &stack, a.eta)?;
    let dir = staged.path();
    let names = ["depth_s3", "depth_s2", "depth_s1", "depth_s0", "depth_full"];
    for (map, name) in run.maps.iter().zip(names) {
        write_pfm(map, dir.join(format!("{name}.pfm")))?;
    }
    for (i, mask) in run.masks.iter().enumerate() {
        write_mask(mask, dir.join(format!("mask_s{}.pgm", SCALES - 1 - i)))?;
    }
    write_text(&dir.join("macs.csv"), &run.macs.to_csv())?;
    write_text(&dir.join("psi.csv"), &psi_csv(&run))?;
    staged.commit()
}

/// Sparsity per scale read back from a run directory's masks.
pub fn run_psi(dir: &Path) -> Result<ScalePsi> {
    let mut out = Vec::new();
    for s in 0..SCALES as u32 {
        let path = dir.join(format!("mask_s{s}.pgm"));
        if !path.exists() {
            return Err(Error::MissingBlob(path));
        }
        let m = read_mask(&path)?;
        out.push((s, Ratio::new(m.active_count() as u128, (m.height() * m.width()) as u128)));
    }
    Ok(ScalePsi(out))
}

fn parse_scale_psi(values: &[String]) -> Result<ScalePsi> {
    let parsed = values
        .iter()
        .map(|v| flops::parse_psi(v))
        .collect::<Result<Vec<_>>>()?;
    match parsed.as_slice() {
        [p] => Ok(ScalePsi::uniform(*p, &[0, 1, 2, 3])),
        [p2, p1, p0] => Ok(ScalePsi(vec![(2, *p2), (1, *p1), (0, *p0)])),
        _ => Err(Error::InvalidArgument(format!(
            "--psi takes 1 or 3 values, got {}",
            parsed.len()
        ))),
    }
}

pub fn flops_report(a: &FlopsArgs) -> Result<MacReport> {
    let layers: Vec<ArchLayer> = match &a.arch {
        Some(p) => flops::parse_arch(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => flops::wavelet_decoder_arch(a.dims.0, a.dims.1)?,
    };
    let psi = match &a.run {
        Some(dir) => run_psi(dir)?,
        None => parse_scale_psi(&a.psi)?,
    };
    flops::arch_report(&layers, &psi)
}

pub fn cmd_flops(a: &FlopsArgs) -> Result<()> {
    let staged = Staged::new(&a.out, false)?;
    let report = flops_report(a)?;
    write_text(staged.path(), &report.to_csv())?;
    staged.commit()?;
    print!("{}", report.to_table());
    println!(
        "maskable layers: sparse/dense {:.6}",
        flops::ratio_f64(report.maskable_ratio())
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let staged = Staged::new(&a.out, false)?;
    let pred = single_channel(read_pfm(&a.pred)?, &a.pred)?;
    let gt = single_channel(read_pfm(&a.gt)?, &a.gt)?;
    let mut cfg = a.preset.config();
    cfg.median_scaling = a.median_scaling;
    let m = depth_metrics(&pred, &gt, &cfg)?;
    let text = format!("{}\n{}\n", a.preset.csv_header(), a.preset.csv_row(&m));
    write_text(staged.path(), &text)?;
    staged.commit()?;
    print!("{text}");
    Ok(())
}

pub fn cmd_scene(a: &SceneArgs) -> Result<()> {
    let staged = Staged::new(&a.out, false)?;
    let (h, w) = a.dims;
    let depth = match a.kind {
        SceneKind::Ramp => ramp_scene(a.seed, h, w, &RampSceneConfig::default())?,
        SceneKind::Quadtree => quadtree_scene(a.seed, h, w, a.levels, 0, 0.5)?.depth,
    };
    write_pfm(&depth, staged.path())?;
    staged.commit()
}

pub fn cmd_pyramid(a: &PyramidArgs) -> Result<()> {
    let staged = Staged::new(&a.out, true)?;
    let x = read_pfm(&a.input)?;
    let pyr = dwt_pyramid(&crop_to_dyadic(&x, a.levels)?, a.levels)?;
    save_pyramid(&pyr, staged.path())?;
    staged.commit()
}

pub fn cmd_init_stack(a: &InitStackArgs) -> Result<()> {
    let channels: [usize; SCALES] = a.channels.as_slice().try_into().map_err(|_| {
        Error::InvalidArgument(format!("--channels needs {SCALES} values, got {}", a.channels.len()))
    })?;
    if channels.contains(&0) {
        return Err(Error::InvalidArgument("channel counts must be positive".into()));
    }
    let staged = Staged::new(&a.out, true)?;
    let kind = match a.head {
        HeadChoice::TwoSigmoid => HeadKind::TwoSigmoidDifference,
        HeadChoice::Linear => HeadKind::Linear,
    };
    let mut stack = LayerStack::random(a.seed, channels, kind);
    if let Some(r) = &a.disp_range {
        stack.disp_range = (r[0], r[1]);
    }
    decoder::save_stack(&stack, staged.path())?;
    staged.commit()
}

pub fn cmd_arch(a: &ArchArgs) -> Result<()> {
    let layers = flops::wavelet_decoder_arch(a.dims.0, a.dims.1)?;
    write_file_output(&a.out, &(serde_json::to_string_pretty(&layers)? + "\n"))
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Scene(a) => cmd_scene(a),
        Command::Pyramid(a) => cmd_pyramid(a),
        Command::InitStack(a) => cmd_init_stack(a),
        Command::Arch(a) => cmd_arch(a),
    }
}

/// Thread cap from the environment; `None` means the default pool.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        _ => Ok(None),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    execute(&cli)
}

/// Runs a parsed command inside a pool capped by the thread variable.
pub fn execute(cli: &Cli) -> Result<()> {
    match threads_from_env()? {
        Some(n) => par::with_threads(n, || dispatch(cli)),
        None => dispatch(cli),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("320x1024"), Ok((320, 1024)));
        assert!(parse_dims("320").is_err());
    }

    #[test]
    fn psi_lists() {
        let p = parse_scale_psi(&["1/3".into()]).unwrap();
        assert_eq!(p.get(0), Ratio::new(1, 3));
        let p = parse_scale_psi(&["0.5".into(), "0.25".into(), "0.125".into()]).unwrap();
        assert_eq!(p.get(0), Ratio::new(1, 8));
        assert_eq!(p.get(3), Ratio::from_integer(1));
        assert!(parse_scale_psi(&["0.5".into(), "0.5".into()]).is_err());
    }

    #[test]
    fn gating_shift() {
        let active = [(1, 4), (2, 16), (3, 64), (4, 256)];
        let p = gating_psi(&active);
        assert_eq!(p.get(2), Ratio::new(1, 4));
        assert_eq!(p.get(1), Ratio::new(2, 16));
        assert_eq!(p.get(0), Ratio::new(3, 64));
    }

    #[test]
    fn sweep_rows() {
        let depth = ramp_scene(1, 64, 64, &RampSceneConfig::default()).unwrap();
        let pts = [SweepPoint::Eta(0.0), SweepPoint::Eta(0.05), SweepPoint::Rho(1.0), SweepPoint::Rho(0.1)];
        let rows = analyze_depth(&depth, &depth, 4, &pts, Preset::Kitti).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].drift_abs_rel, 0.0);
        assert_eq!(rows[2].kept_fraction, rows[0].kept_fraction);
        for (a, b) in rows[0].psi.iter().zip(&rows[1].psi) {
            assert!(b <= a);
        }
        assert!((rows[3].kept_fraction - 0.1).abs() < 1e-3);
        let csv = sweep_csv(&rows, 4);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("mode,value,kept_fraction,psi_level4,psi_level3,psi_level2,psi_level1,"));
    }

    #[test]
    fn staged_file_removed_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let missing = dir.path().join("missing.pfm");
        let err = run(["wavedepth", "analyze", "--input", missing.to_str().unwrap(), "--eta", "0.1", "--out", out.to_str().unwrap()]);
        assert!(err.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
