//! Command-line front end for the fisheye geometry toolkit.
//!
//! Five subcommands cover the whole workflow: `synth` renders fisheye
//! datasets from a perspective corpus, `rectify` undoes a known model,
//! `calibrate` estimates one from annotated lines, `eval` scores predicted
//! datasets against ground truth, and `gradcheck` audits the analytic
//! projection Jacobians. Every command is deterministic given its flags;
//! randomness always flows from an explicit seed.
//!
//! Exit codes separate failure causes: 1 for usage, 2 for unreadable or
//! inconsistent data, 3 for models that cannot do what was asked. Every
//! nonzero exit is accompanied by exactly one diagnostic on stderr.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fisheye_geom::calibrate::{
    estimate_multiscale, estimate_params, CalibrateError, SolverConfig,
};
use fisheye_geom::camera::{ModelError, ProjectionError, PARAM_COUNT, PARAM_NAMES};
use fisheye_geom::lines::LineError;
use fisheye_geom::metrics::{line_pr, psnr, rpe, ssim, MetricConfig, MetricError};
use fisheye_geom::raster::RasterError;
use fisheye_geom::synth::{
    default_pinhole, generate_dataset, sample_params, sample_rng, Manifest, ManifestRecord,
    SamplerConfig, SynthError,
};
use fisheye_geom::warp::{rectify_image, WarpError};
use fisheye_geom::{
    DistortionParams, FisheyeModel, ImageBuffer, LineHeatmap, LineSet, PinholeSpec, ValidityMask,
};
use rand::Rng;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "fisheye", version, about = "Fisheye camera toolkit: synthesize, rectify, calibrate, evaluate.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic fisheye dataset from a perspective corpus.
    Synth(SynthArgs),
    /// Resample a fisheye image into a perspective view.
    Rectify(RectifyArgs),
    /// Estimate distortion parameters from annotated line chains.
    Calibrate(CalibrateArgs),
    /// Score a predicted dataset against a ground-truth dataset.
    Eval(EvalArgs),
    /// Check analytic projection Jacobians against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of paired `<stem>.png` images and `<stem>.json` line files.
    #[arg(long)]
    corpus: PathBuf,
    /// Output dataset directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Sampler seed; identical flags reproduce the dataset byte for byte.
    #[arg(long)]
    seed: u64,
    /// Distortion draws per corpus source.
    #[arg(long, default_value_t = 1)]
    per_image: u32,
    /// Perspective camera JSON; defaults to a centered spec sized from the
    /// first corpus image.
    #[arg(long)]
    pinhole: Option<PathBuf>,
}

#[derive(Args)]
struct RectifyArgs {
    /// Fisheye PNG to rectify.
    #[arg(long)]
    image: PathBuf,
    /// Distortion parameter JSON.
    #[arg(long)]
    params: PathBuf,
    /// Output PNG for the perspective view.
    #[arg(long)]
    out: PathBuf,
    /// Perspective camera JSON; defaults to a centered spec sized from the
    /// input image.
    #[arg(long)]
    pinhole: Option<PathBuf>,
    /// Output PNG for the validity mask; defaults to `<out>.mask.png`.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Line chain JSON observed in the fisheye image.
    #[arg(long)]
    lines: PathBuf,
    /// Perspective camera JSON defining the rectified frame.
    #[arg(long)]
    pinhole: PathBuf,
    /// Output JSON for the calibration result.
    #[arg(long)]
    out: PathBuf,
    /// Initial parameter JSON; defaults to the equidistant model with the
    /// pinhole's focal length and center. Frozen components (k1 and the
    /// pixel scales) keep the values given here.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Also fit the center region and four quadrants, then fuse.
    #[arg(long)]
    multiscale: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted dataset directory (same layout as `synth` output).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth dataset directory.
    #[arg(long)]
    gt: PathBuf,
    /// Output CSV with per-sample and mean PSNR/SSIM/RPE/F rows.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    /// Flips the sign of one analytic term so the check must fail; exists
    /// for exercising the failure path.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure causes, keyed to the process exit code.
#[derive(Debug, Error)]
enum CliError {
    /// Missing, unreadable, or internally inconsistent inputs.
    #[error("{0}")]
    Data(String),
    /// A camera model that cannot cover what the command needs.
    #[error("{0}")]
    Model(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Model(_) => 3,
        }
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        match e {
            CalibrateError::DegenerateInput(_) => CliError::Data(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<WarpError> for CliError {
    fn from(e: WarpError) -> Self {
        match e {
            WarpError::Raster(_) => CliError::Data(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::InvalidModel(_) => CliError::Model(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Model(_) | SynthError::Projection(_) => CliError::Model(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LineError> for CliError {
    fn from(e: LineError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version print to stdout and exit 0; everything else is
        // a usage error on stderr.
        Err(err) => {
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Rectify(args) => run_rectify(args),
        Command::Calibrate(args) => run_calibrate(args),
        Command::Eval(args) => run_eval(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(file)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(file, value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Centered pinhole spec sized from a PNG on disk.
fn pinhole_from_image(path: &Path) -> Result<PinholeSpec, CliError> {
    let img = ImageBuffer::load_png(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(default_pinhole(img.width(), img.height()))
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let pin = match &args.pinhole {
        Some(path) => read_json(path)?,
        None => {
            // Sources are processed in stem order; size the camera from
            // the first one so repeat runs agree.
            let mut pngs: Vec<PathBuf> = std::fs::read_dir(&args.corpus)
                .map_err(|e| CliError::Data(format!("{}: {e}", args.corpus.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
                .collect();
            pngs.sort();
            let first = pngs.first().ok_or_else(|| {
                CliError::Data(format!("no PNG sources in {}", args.corpus.display()))
            })?;
            pinhole_from_image(first)?
        }
    };
    let mut cfg = SamplerConfig::for_pinhole(&pin, args.seed);
    cfg.per_image = args.per_image;
    let manifest = generate_dataset(&args.corpus, &pin, &cfg, &args.out)?;
    println!(
        "wrote {} samples to {}",
        manifest.records.len(),
        args.out.join("manifest.jsonl").display()
    );
    if !manifest.errors.is_empty() {
        println!(
            "skipped {} corrupt sources, see {}",
            manifest.errors.len(),
            args.out.join("errors.jsonl").display()
        );
    }
    Ok(())
}

fn run_rectify(args: RectifyArgs) -> Result<(), CliError> {
    let image = ImageBuffer::load_png(&args.image)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.image.display())))?;
    let params: DistortionParams = read_json(&args.params)?;
    let pin = match &args.pinhole {
        Some(path) => read_json(path)?,
        None => default_pinhole(image.width(), image.height()),
    };
    let (rect, mask) = rectify_image(&image, &params, &pin)?;
    let mask_out = args
        .mask_out
        .unwrap_or_else(|| args.out.with_extension("mask.png"));
    rect.save_png(&args.out)?;
    mask.save_png(&mask_out)?;
    println!("wrote {} and {}", args.out.display(), mask_out.display());
    Ok(())
}

fn run_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let lines = LineSet::load_json(&args.lines)?;
    let pin: PinholeSpec = read_json(&args.pinhole)?;
    let init = match &args.init {
        Some(path) => read_json(path)?,
        None => DistortionParams::equidistant(pin.f, pin.cx, pin.cy),
    };
    let cfg = SolverConfig::default();
    let result = if args.multiscale {
        estimate_multiscale(&lines, &pin, (pin.width, pin.height), &init, &cfg)?
    } else {
        estimate_params(&lines, &pin, &init, &cfg)?
    };
    write_json(&args.out, &result)?;
    println!(
        "rms residual {:.6} px after {} iterations, converged: {}",
        result.rms_residual, result.iterations, result.converged
    );
    Ok(())
}

/// One scored sample; also used for the aggregate row.
struct EvalRow {
    id: String,
    psnr_db: f64,
    ssim: f64,
    rpe_px: f64,
    f_measure: f64,
}

fn score_sample(
    pred_dir: &Path,
    gt_dir: &Path,
    pred: &ManifestRecord,
    gt: &ManifestRecord,
) -> Result<EvalRow, CliError> {
    let load = |dir: &Path, rel: &str| -> Result<ImageBuffer, CliError> {
        let path = dir.join(rel);
        ImageBuffer::load_png(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    };
    let pred_img = load(pred_dir, &pred.gt_image)?;
    let gt_img = load(gt_dir, &gt.gt_image)?;
    let mask = ValidityMask::new(gt_img.width(), gt_img.height(), true);
    let psnr_db = psnr(&pred_img, &gt_img, &mask)?;
    let ssim_val = ssim(&pred_img, &gt_img, &mask)?;

    let fisheye = load(gt_dir, &gt.fisheye)?;
    let rpe_px = rpe(
        &pred.params,
        &gt.params,
        &gt.pinhole,
        (fisheye.width(), fisheye.height()),
    )?
    .mean;

    let load_hm = |dir: &Path, rel: &str| -> Result<LineHeatmap, CliError> {
        let path = dir.join(rel);
        LineHeatmap::load_png16(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    };
    let pred_hm = load_hm(pred_dir, &pred.heatmap_straight)?;
    let gt_hm = load_hm(gt_dir, &gt.heatmap_straight)?;
    let f_measure = line_pr(&pred_hm, &gt_hm, &MetricConfig::default())?.f_max;

    Ok(EvalRow { id: pred.id.clone(), psnr_db, ssim: ssim_val, rpe_px, f_measure })
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let pred = Manifest::load(&args.pred)?;
    let gt = Manifest::load(&args.gt)?;
    let gt_by_id: HashMap<&str, &ManifestRecord> =
        gt.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let pred_ids: HashSet<&str> = pred.records.iter().map(|r| r.id.as_str()).collect();
    for record in &gt.records {
        if !pred_ids.contains(record.id.as_str()) {
            return Err(CliError::Data(format!(
                "sample {} missing from predictions",
                record.id
            )));
        }
    }

    // Rows are keyed and ordered by id, so shuffled manifests score to
    // identical reports.
    let mut pred_sorted: Vec<&ManifestRecord> = pred.records.iter().collect();
    pred_sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rows = Vec::with_capacity(pred_sorted.len());
    for record in pred_sorted {
        let gt_record = gt_by_id.get(record.id.as_str()).ok_or_else(|| {
            CliError::Data(format!("sample {} missing from ground truth", record.id))
        })?;
        rows.push(score_sample(&args.pred, &args.gt, record, gt_record)?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("no samples to evaluate".into()));
    }

    let n = rows.len() as f64;
    let mean = EvalRow {
        id: "mean".into(),
        psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rpe_px: rows.iter().map(|r| r.rpe_px).sum::<f64>() / n,
        f_measure: rows.iter().map(|r| r.f_measure).sum::<f64>() / n,
    };

    let mut writer = csv::Writer::from_path(&args.report)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.report.display())))?;
    let emit = |writer: &mut csv::Writer<File>, row: &EvalRow| {
        writer.write_record([
            row.id.as_str(),
            &format!("{:.6}", row.psnr_db),
            &format!("{:.6}", row.ssim),
            &format!("{:.6}", row.rpe_px),
            &format!("{:.6}", row.f_measure),
        ])
    };
    writer
        .write_record(["id", "psnr_db", "ssim", "rpe_px", "f_measure"])
        .and_then(|()| rows.iter().try_for_each(|row| emit(&mut writer, row)))
        .and_then(|()| emit(&mut writer, &mean))
        .and_then(|()| writer.flush().map_err(Into::into))
        .map_err(|e| CliError::Data(format!("{}: {e}", args.report.display())))?;

    println!(
        "wrote {} ({} samples); mean psnr {:.2} dB, ssim {:.4}, rpe {:.4} px, f {:.4}",
        args.report.display(),
        rows.len(),
        mean.psnr_db,
        mean.ssim,
        mean.rpe_px,
        mean.f_measure
    );
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let pin = default_pinhole(320, 320);
    let cfg = SamplerConfig::for_pinhole(&pin, args.seed);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    let mut worst_at = String::from("nothing evaluated");
    for trial in 0..args.trials {
        let mut rng = sample_rng(args.seed, trial, 0);
        let params = sample_params(&cfg, &mut rng)?;
        let model = FisheyeModel::new(params, cfg.theta_max)?;
        let theta: f64 = rng.random_range(0.05..1.05);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let p_r = pin.pixel_from_ray(fisheye_geom::camera::RayDirection { theta, phi });
        let mut jac = model.distortion_jacobian(p_r, &pin)?;
        if args.inject_fault {
            jac[0][0] = -jac[0][0];
        }
        for j in 0..PARAM_COUNT {
            let mut lo = params.to_array();
            let mut hi = params.to_array();
            lo[j] -= h;
            hi[j] += h;
            let f_lo = FisheyeModel::new(DistortionParams::from_array(lo), cfg.theta_max)?
                .distort_point(p_r, &pin)?;
            let f_hi = FisheyeModel::new(DistortionParams::from_array(hi), cfg.theta_max)?
                .distort_point(p_r, &pin)?;
            for row in 0..2 {
                let fd = (f_hi[row] - f_lo[row]) / (2.0 * h);
                let an = jac[row][j];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                if rel > worst {
                    worst = rel;
                    worst_at = format!(
                        "d{}/d{} at pixel ({:.3}, {:.3}), params {:?}",
                        ["u", "v"][row],
                        PARAM_NAMES[j],
                        p_r[0],
                        p_r[1],
                        params.to_array()
                    );
                }
            }
        }
    }
    println!(
        "max relative error {worst:.3e} over {} configurations",
        args.trials
    );
    if worst <= 1e-4 {
        Ok(())
    } else {
        Err(CliError::Model(format!(
            "Jacobian mismatch: relative error {worst:.3e} for {worst_at}"
        )))
    }
}
