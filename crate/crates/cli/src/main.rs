//! `hkgm`: phantom generation, masking, prior training, reconstruction,
//! evaluation and ablation sweeps.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hkgm_core::hankel::{extract_patches, lift};
use hkgm_core::io::{load_kspace, load_mask, load_png, save_kspace, save_mask, save_png};
use hkgm_core::mask::{apply_mask, make_mask, MaskPattern};
use hkgm_core::metrics::{psnr, reports_to_csv, ssim, MetricReport, REPORT_HEADER};
use hkgm_core::phantom::{make_phantom, PhantomSpec, DEFAULT_EXTENT};
use hkgm_core::recon::{
    reconstruct_hkgm, reconstruct_sake, reconstruct_zero_fill, HkgmConfig, SAKE_DEFAULT_ITERS,
};
use hkgm_core::score::{
    load_model, save_model, train, Architecture, Conditioning, NoiseSchedule, TrainConfig,
};
use hkgm_core::sweep::{
    run_sweep, SweepAxis, SweepSetup, SweepStage, RECON_WINDOWS, THRESHOLDS, TRAIN_WINDOWS,
};
use hkgm_core::{ifft2c, sos, KSpaceVolume, RealImage, ThresholdPolicy};

#[derive(Parser)]
#[command(
    name = "hkgm",
    version,
    about = "Hankel k-space generative-prior MRI reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the k-space of a synthetic multi-coil head phantom.
    Phantom(PhantomArgs),
    /// Write an undersampling mask.
    Mask(MaskArgs),
    /// Train a score prior on Hankel patches of a k-space file.
    Train(TrainArgs),
    /// Reconstruct an image from undersampled k-space.
    Recon(ReconArgs),
    /// Compare a reconstruction against a reference and append a report row.
    Eval(EvalArgs),
    /// Run an ablation grid and write one report row per cell.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 256)]
    nx: usize,
    #[arg(long, default_value_t = 256)]
    ny: usize,
    #[arg(long, default_value_t = 8)]
    nc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of the field of view covered by the head.
    #[arg(long, default_value_t = DEFAULT_EXTENT)]
    extent: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the SOS image.
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Poisson,
    Random2d,
    Partial,
}

impl From<PatternArg> for MaskPattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Poisson => MaskPattern::Poisson,
            PatternArg::Random2d => MaskPattern::Random2d,
            PatternArg::Partial => MaskPattern::PartialFourier,
        }
    }
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long, value_enum)]
    pattern: PatternArg,
    #[arg(long = "R", default_value_t = 4.0)]
    accel: f64,
    /// Side of the fully sampled central block.
    #[arg(long, default_value_t = 0)]
    acs: usize,
    #[arg(long, default_value_t = 256)]
    nx: usize,
    #[arg(long, default_value_t = 256)]
    ny: usize,
    /// Take the grid size from this k-space file instead of `--nx/--ny`.
    #[arg(long)]
    like: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.01)]
    sigma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_max: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditioningArg {
    /// `net(x) / σ`
    Output,
    /// `net(x / σ) / σ`
    InputOutput,
}

impl From<ConditioningArg> for Conditioning {
    fn from(c: ConditioningArg) -> Self {
        match c {
            ConditioningArg::Output => Conditioning::Output,
            ConditioningArg::InputOutput => Conditioning::InputOutput,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    /// Scale every training patch to unit maximum magnitude.
    Patch,
    /// Scale the whole k-space to unit maximum magnitude before lifting,
    /// as reconstruction does with the measured data.
    Volume,
    None,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    kspace: PathBuf,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 256)]
    patch: usize,
    #[arg(long, default_value_t = 484)]
    npatch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// How the noise level enters the network.
    #[arg(long, value_enum, default_value = "output")]
    conditioning: ConditioningArg,
    #[arg(long, value_enum, default_value = "patch")]
    normalize: NormalizeArg,
    /// Number of noise levels recorded in the model.
    #[arg(long, default_value_t = 1000)]
    levels: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Hkgm,
    Sake,
    Zerofill,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    kspace: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Outer iterations (noise levels).
    #[arg(long = "N", default_value_t = 1000)]
    steps: usize,
    /// Corrector steps per outer iteration.
    #[arg(long = "M", default_value_t = 1)]
    inner: usize,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 0.8)]
    thresh: f64,
    /// Fixed rank for SAKE instead of the `--thresh` cut.
    #[arg(long)]
    rank: Option<usize>,
    /// SAKE iterations.
    #[arg(long, default_value_t = SAKE_DEFAULT_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = 0.075)]
    snr: f64,
    /// Data-consistency weight, `inf` for hard replacement.
    #[arg(long, default_value = "inf")]
    lambda: f64,
    /// Skip the projection after the corrector when `--M 1`.
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fully sampled k-space for PSNR/SSIM in the trace.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_kspace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reconstruction: PNG or k-space file.
    #[arg(long)]
    recon: PathBuf,
    /// Reference: PNG or k-space file.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    method: String,
    #[arg(long, default_value = "unknown")]
    pattern: String,
    #[arg(long = "R", default_value_t = 0.0)]
    accel: f64,
    #[arg(long, default_value_t = 0)]
    window: usize,
    #[arg(long, default_value_t = 0.0)]
    thresh: f64,
    #[arg(long, default_value_t = 0)]
    npatch: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Window,
    Thresh,
    Npatch,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Train,
    Recon,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated values; window and threshold axes default to the
    /// standard grids.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Stage varied by a window sweep.
    #[arg(long, value_enum, default_value = "train")]
    stage: StageArg,
    /// Fully sampled k-space; a phantom is generated when omitted.
    #[arg(long)]
    kspace: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    nx: usize,
    #[arg(long, default_value_t = 64)]
    ny: usize,
    #[arg(long, default_value_t = 4)]
    nc: usize,
    #[arg(long, value_enum, default_value = "poisson")]
    pattern: PatternArg,
    #[arg(long = "R", default_value_t = 4.0)]
    accel: f64,
    #[arg(long = "N", default_value_t = 1000)]
    steps: usize,
    #[arg(long = "M", default_value_t = 1)]
    inner: usize,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 0.8)]
    thresh: f64,
    #[arg(long, default_value_t = 256)]
    patch: usize,
    #[arg(long, default_value_t = 484)]
    npatch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

fn schedule(args: &ScheduleArgs, n: usize) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::geometric(args.sigma_min, args.sigma_max, n)?)
}

fn run_phantom(a: PhantomArgs) -> Result<()> {
    let mut spec = PhantomSpec::new(a.nx, a.ny, a.nc, a.seed);
    spec.extent = a.extent;
    let (img, k) = make_phantom(&spec)?;
    save_kspace(&k, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = a.png {
        save_png(&sos(&img), &p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn read_kspace(path: &Path) -> Result<KSpaceVolume> {
    load_kspace(path).with_context(|| format!("reading k-space {}", path.display()))
}

fn run_mask(a: MaskArgs) -> Result<()> {
    let (nx, ny) = match &a.like {
        Some(p) => {
            let k = read_kspace(p)?;
            (k.nx(), k.ny())
        }
        None => (a.nx, a.ny),
    };
    let mask = make_mask(a.pattern.into(), nx, ny, a.accel, a.acs, a.seed)?;
    log::info!("{}", mask.descriptor());
    save_mask(&mask, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut k = read_kspace(&a.kspace)?;
    if matches!(a.normalize, NormalizeArg::Volume) && k.max_abs() > 0.0 {
        k = k.scaled(1.0 / k.max_abs());
    }
    let h = lift(&k, a.window)?;
    let patches = extract_patches(&h, a.patch, a.npatch, a.seed)?;
    let cfg = TrainConfig {
        normalize: matches!(a.normalize, NormalizeArg::Patch),
        batch: a.batch,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        architecture: Architecture::reference().with_conditioning(a.conditioning.into()),
        ..TrainConfig::default()
    };
    let model = train(&patches, &cfg, &schedule(&a.schedule, a.levels)?)?;
    if let Some(last) = model.meta.smoothed_losses.last() {
        log::info!(
            "initial loss {:.4}, final smoothed loss {last:.4}",
            model.meta.initial_loss
        );
    }
    save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn run_recon(a: ReconArgs) -> Result<()> {
    let k = read_kspace(&a.kspace)?;
    let mask = load_mask(&a.mask).with_context(|| format!("reading mask {}", a.mask.display()))?;
    let y = apply_mask(&k, &mask)?;
    let reference = match &a.reference {
        Some(p) => Some(sos(&ifft2c(&read_kspace(p)?))),
        None => None,
    };
    let tracing = a.trace.is_some();
    let (out, trace) = match a.method {
        Method::Zerofill => (y, None),
        Method::Sake => {
            let (k, t) = reconstruct_sake(
                &y,
                &mask,
                a.window,
                a.rank.map_or(
                    ThresholdPolicy::Absolute(a.thresh),
                    ThresholdPolicy::FixedRank,
                ),
                a.iters,
                reference.as_ref(),
                tracing,
            )?;
            (k, Some(t))
        }
        Method::Hkgm => {
            let Some(model_path) = &a.model else {
                bail!("--method hkgm needs --model");
            };
            let model = load_model(model_path)
                .with_context(|| format!("reading model {}", model_path.display()))?;
            let cfg = HkgmConfig {
                schedule: schedule(&a.schedule, a.steps)?,
                inner: a.inner,
                window: a.window,
                policy: ThresholdPolicy::Absolute(a.thresh),
                snr: a.snr,
                lambda: a.lambda,
                seed: a.seed,
                fast: a.fast,
                trace: tracing,
            };
            let (k, t) = reconstruct_hkgm(&y, &mask, &model, &cfg, reference.as_ref())?;
            (k, Some(t))
        }
    };
    if let Some(p) = &a.trace {
        let csv = trace
            .map(|t| t.to_csv())
            .unwrap_or_else(|| format!("{}\n", hkgm_core::recon::TRACE_HEADER));
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.out_kspace {
        save_kspace(&out, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.out {
        save_png(&reconstruct_zero_fill(&out), p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// SOS image of a k-space file, or the pixels of a PNG.
fn read_image(path: &Path) -> Result<RealImage> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        load_png(path).with_context(|| format!("reading image {}", path.display()))
    } else {
        Ok(reconstruct_zero_fill(&read_kspace(path)?))
    }
}

fn append_rows(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut text = if fresh {
        reports_to_csv(rows)
    } else {
        String::new()
    };
    if !fresh {
        for r in rows {
            text.push_str(&r.csv_row());
            text.push('\n');
        }
    }
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let x = read_image(&a.recon)?;
    let r = read_image(&a.reference)?;
    let row = MetricReport {
        method: a.method,
        pattern: a.pattern,
        acceleration: a.accel,
        window: a.window,
        threshold: a.thresh,
        npatch: a.npatch,
        psnr: psnr(&x, &r)?,
        ssim: ssim(&x, &r)?,
    };
    match &a.report {
        Some(p) => append_rows(p, std::slice::from_ref(&row))?,
        None => println!("{REPORT_HEADER}\n{}", row.csv_row()),
    }
    Ok(())
}

fn run_sweep_cmd(a: SweepArgs) -> Result<()> {
    let (axis, stage) = match (a.axis, a.stage) {
        (AxisArg::Window, StageArg::Train) => (SweepAxis::Window, SweepStage::Train),
        (AxisArg::Window, StageArg::Recon) => (SweepAxis::Window, SweepStage::Recon),
        (AxisArg::Thresh, _) => (SweepAxis::Threshold, SweepStage::Recon),
        (AxisArg::Npatch, _) => (SweepAxis::Npatch, SweepStage::Train),
    };
    let values = if !a.values.is_empty() {
        a.values.clone()
    } else {
        match (axis, stage) {
            (SweepAxis::Window, SweepStage::Train) => {
                TRAIN_WINDOWS.iter().map(|&w| w as f64).collect()
            }
            (SweepAxis::Window, SweepStage::Recon) => {
                RECON_WINDOWS.iter().map(|&w| w as f64).collect()
            }
            (SweepAxis::Threshold, _) => THRESHOLDS.to_vec(),
            (SweepAxis::Npatch, _) => bail!("--axis npatch needs --values"),
        }
    };
    let kspace = match &a.kspace {
        Some(p) => read_kspace(p)?,
        None => make_phantom(&PhantomSpec::new(a.nx, a.ny, a.nc, a.seed))?.1,
    };
    let mask = make_mask(
        a.pattern.into(),
        kspace.nx(),
        kspace.ny(),
        a.accel,
        0,
        a.seed,
    )?;
    let setup = SweepSetup {
        recon: HkgmConfig {
            schedule: schedule(&a.schedule, a.steps)?,
            inner: a.inner,
            window: a.window,
            policy: ThresholdPolicy::Absolute(a.thresh),
            seed: a.seed,
            fast: a.fast,
            ..HkgmConfig::default()
        },
        train: TrainConfig {
            epochs: a.epochs,
            learning_rate: a.lr,
            seed: a.seed,
            ..TrainConfig::default()
        },
        kspace,
        mask,
        train_window: a.window,
        patch: a.patch,
        npatch: a.npatch,
        patch_seed: a.seed,
    };
    let rows = run_sweep(&setup, axis, &values, stage)?;
    fs::write(&a.report, reports_to_csv(&rows))
        .with_context(|| format!("writing {}", a.report.display()))?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HKGM_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("HKGM_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("HKGM_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Phantom(a) => run_phantom(a),
        Command::Mask(a) => run_mask(a),
        Command::Train(a) => run_train(a),
        Command::Recon(a) => run_recon(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
