//! Command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{run_bench, write_bench_csv};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::covariance::CovKind;
use crate::error::{Error, EXIT_OK};
use crate::gradcheck::{run_gradcheck, GradcheckOptions, GROUP_NAMES};
use crate::imaging::{gen_zone_plate, load_png, save_png, ImageBuffer};
use crate::primitive::{analytic_spectrum, Vec2, WaveletKernel2D};
use crate::projection::ProjectionMode;
use crate::raster::{AccumMode, RasterConfig};
use crate::scene::{load_camera, load_scene, render_scene};
use crate::trainer::{LearningRates, LossKind, TrainConfig, TrainError, Trainer, DEFAULT_FREQ_INIT_STD};

pub const RENDER_FILE: &str = "render.png";
pub const CHECKPOINT_FILE: &str = "checkpoint.wips";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.wips";
pub const METRICS_CSV_HEADER: &str = "step,loss,psnr,ssim,wall_ms";
pub const SPECTRUM_GRID: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "wipes", version, about = "Wavelet-modulated Gaussian splatting on the CPU")]
pub struct Cli {
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, global = true, env = "WIPES_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit primitives to a PNG image.
    Fit(FitArgs),
    /// Render a 3D scene through a camera.
    Render3d(Render3dArgs),
    /// Sweep primitive counts and seeds, wavelet against Gaussian baseline.
    Bench(BenchArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump the analytic spectrum of one primitive from a checkpoint.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Accumulation mode [default: sum]. When resuming, must match the checkpoint.
    #[arg(long, value_enum)]
    pub mode: Option<AccumMode>,
    #[arg(long, value_enum, default_value_t = CovKind::Cholesky)]
    pub cov: CovKind,
    #[arg(long, default_value_t = LearningRates::default().mu)]
    pub mu_lr: f64,
    #[arg(long, default_value_t = LearningRates::default().mu_final)]
    pub mu_lr_final: f64,
    #[arg(long, default_value_t = LearningRates::default().cov)]
    pub cov_lr: f64,
    #[arg(long, default_value_t = LearningRates::default().freq)]
    pub freq_lr: f64,
    #[arg(long, default_value_t = LearningRates::default().color)]
    pub color_lr: f64,
    #[arg(long, default_value_t = LearningRates::default().opacity)]
    pub opacity_lr: f64,
    /// Standard deviation of the initial frequencies, rad/px.
    #[arg(long, default_value_t = DEFAULT_FREQ_INIT_STD)]
    pub freq_init_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight of the (1 − SSIM) term; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub ssim_weight: f64,
    /// Performance mode: unordered gradient merge and real wall-clock
    /// timings. Outputs are no longer byte-reproducible.
    #[arg(long)]
    pub perf: bool,
}

impl TrainArgs {
    fn config(&self, num_primitives: usize, eval_every: usize) -> TrainConfig {
        TrainConfig {
            num_primitives,
            steps: self.steps,
            mode: self.mode.unwrap_or_default(),
            cov: self.cov,
            family: Default::default(),
            lr: LearningRates {
                mu: self.mu_lr,
                mu_final: self.mu_lr_final,
                cov: self.cov_lr,
                freq: self.freq_lr,
                color: self.color_lr,
                opacity: self.opacity_lr,
            },
            freq_init_std: self.freq_init_std,
            seed: self.seed,
            eval_every,
            loss: if self.ssim_weight > 0.0 { LossKind::L2Ssim { weight: self.ssim_weight } } else { LossKind::L2 },
            deterministic: !self.perf,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Number of primitives.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    /// Gaussian primitives: zero frequency, frozen.
    #[arg(long)]
    pub baseline_gaussian: bool,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many optimizer steps have been taken in total.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Render3dArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long, value_enum, default_value_t = ProjectionMode::Exact)]
    pub proj: ProjectionMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    Zoneplate,
    Image,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Pattern::Zoneplate)]
    pub pattern: Pattern,
    /// Target for `--pattern image`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Zone plate side length.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Zone plate chirp strength.
    #[arg(long, default_value_t = 40.0)]
    pub strength: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Restrict to one mode; both by default.
    #[arg(long, value_enum)]
    pub mode: Option<AccumMode>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_BAD_ARGS } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::BadArgs("--threads must be at least 1".into()));
        }
        // A pool can only be installed once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Render3d(a) => cmd_render3d(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Spectrum(a) => cmd_spectrum(&a),
    }
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fit_trainer(a: &FitArgs, target: ImageBuffer) -> Result<Trainer, Error> {
    let Some(resume) = &a.resume else {
        let mut config = a.train.config(a.n, a.eval_every);
        if a.baseline_gaussian {
            config = config.gaussian_baseline();
        }
        return Ok(Trainer::new(target, config)?);
    };
    let ck = load_checkpoint(resume)?;
    if let Some(mode) = a.train.mode {
        ck.expect_mode(mode)?;
    }
    if ck.width != target.width || ck.height != target.height {
        return Err(Error::BadArgs(format!(
            "checkpoint was fitted to a {}x{} image, input is {}x{}",
            ck.width, ck.height, target.width, target.height
        )));
    }
    Ok(Trainer::from_state(target, ck.config, ck.primitives, ck.adam)?)
}

fn snapshot(trainer: &Trainer) -> Checkpoint {
    let t = trainer.target();
    Checkpoint {
        config: trainer.config.clone(),
        primitives: trainer.primitives.clone(),
        adam: trainer.adam.clone(),
        width: t.width,
        height: t.height,
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), Error> {
    let target = load_png(&a.input)?;
    let mut trainer = fit_trainer(a, target)?;
    create_dir(&a.out)?;
    let start = trainer.step_count() as usize;
    let end = a.stop_after.unwrap_or(trainer.config.steps).min(trainer.config.steps).max(start);
    let every = trainer.config.eval_every;
    let timed = !trainer.config.deterministic;
    let clock = Instant::now();

    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    let record = |trainer: &Trainer, step: usize, csv: &mut String| {
        let loss = trainer.loss();
        let m = trainer.evaluate();
        let wall_ms = if timed { clock.elapsed().as_millis() } else { 0 };
        log::info!("step {step}: loss {loss:.6e} psnr {:.3} dB", m.psnr);
        let _ = writeln!(csv, "{step},{loss},{},{},{wall_ms}", m.psnr, m.ssim);
    };
    for s in start..end {
        if s % every == 0 {
            record(&trainer, s, &mut csv);
        }
        match trainer.step() {
            Ok(_) => {}
            Err(e @ TrainError::NonFiniteLoss { .. }) => {
                let path = a.out.join(DIAGNOSTIC_FILE);
                save_checkpoint(&snapshot(&trainer), &path)?;
                eprintln!("diagnostic checkpoint written to {}", path.display());
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    record(&trainer, end, &mut csv);

    save_png(&trainer.render(), a.out.join(RENDER_FILE))?;
    save_checkpoint(&snapshot(&trainer), a.out.join(CHECKPOINT_FILE))?;
    write_file(&a.out.join(METRICS_FILE), &csv)?;
    let m = trainer.evaluate();
    println!("step {end}: psnr {:.4} dB, ssim {:.4}; outputs in {}", m.psnr, m.ssim, a.out.display());
    Ok(())
}

pub fn cmd_render3d(a: &Render3dArgs) -> Result<(), Error> {
    let prims = load_scene(&a.scene)?;
    let camera = load_camera(&a.camera)?;
    let img = render_scene(&prims, &camera, a.proj, &RasterConfig::default());
    save_png(&img, &a.out)?;
    println!("rendered {} primitives to {}", prims.len(), a.out.display());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), Error> {
    if a.n_list.is_empty() || a.seeds == 0 {
        return Err(Error::BadArgs("--n-list and --seeds must be nonempty".into()));
    }
    let (target, name) = match a.pattern {
        Pattern::Zoneplate => (gen_zone_plate(a.size, a.strength), "zoneplate"),
        Pattern::Image => {
            let path = a.input.as_ref().ok_or_else(|| Error::BadArgs("--pattern image requires --input".into()))?;
            (load_png(path)?, "image")
        }
    };
    let base = a.train.config(a.n_list[0], a.train.steps.max(1));
    let rows = run_bench(&target, name, &a.n_list, a.seeds, &base, a.train.perf, |r| {
        log::info!("n {} seed {} {}: psnr {:.3}", r.n, r.seed, r.family, r.psnr);
    })?;
    write_bench_csv(&rows, &a.out)?;
    println!("{} rows written to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Error> {
    if a.trials == 0 {
        return Err(Error::BadArgs("--trials must be at least 1".into()));
    }
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![AccumMode::Sum, AccumMode::Alpha],
    };
    let report = run_gradcheck(&GradcheckOptions { trials: a.trials, modes, seed: a.seed, ..GradcheckOptions::default() });
    for (name, err) in GROUP_NAMES.iter().zip(report.max_rel_error) {
        println!("{name:<8} max relative error {err:.3e}");
    }
    if report.max() > a.tol {
        return Err(Error::Numeric(format!("max relative error {:.3e} exceeds tolerance {:.1e}", report.max(), a.tol)));
    }
    println!("gradcheck passed ({} trials, tol {:.1e})", report.trials, a.tol);
    Ok(())
}

/// Analytic spectrum magnitude on a square grid over `[−π, π)²` rad/px.
pub fn spectrum_csv(kernel: &WaveletKernel2D, grid: usize) -> String {
    let mut out = String::from("wx,wy,magnitude\n");
    let step = 2.0 * std::f64::consts::PI / grid as f64;
    for j in 0..grid {
        let wy = -std::f64::consts::PI + j as f64 * step;
        for i in 0..grid {
            let wx = -std::f64::consts::PI + i as f64 * step;
            let _ = writeln!(out, "{wx},{wy},{}", analytic_spectrum(kernel, Vec2::new(wx, wy)));
        }
    }
    out
}

pub fn cmd_spectrum(a: &SpectrumArgs) -> Result<(), Error> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let p = ck.primitives.get(a.index).ok_or_else(|| {
        Error::BadArgs(format!("index {} out of range for {} primitives", a.index, ck.primitives.len()))
    })?;
    let (splat, _) = p.prepare().map_err(|e| Error::Numeric(format!("primitive {}: {e}", a.index)))?;
    let kernel = WaveletKernel2D::new(splat.mean, splat.conic, splat.freq, 1.0);
    write_file(&a.out, &spectrum_csv(&kernel, SPECTRUM_GRID))?;
    println!("spectrum of primitive {} written to {}", a.index, a.out.display());
    Ok(())
}
