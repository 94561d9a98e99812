//! `noiseforge` command line. Logs go to stderr, artifacts only to files.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage, 3 validation failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::corpus::{split_corpus, CorpusManifest, SplitAssignment, TaskKind};
use crate::error::{Error, Result};
use crate::image::{self, normalize, quantize};
use crate::ladder::{
    build_curves, evaluate_sweep, generate_corrupted_corpus, predict_reference, EvalOptions,
    GenerateOptions, Pairing, SeverityLadder,
};
use crate::noise::{inject, photon_budget, sigma_e, NoiseSpec, DEFAULT_N0, DEFAULT_SIGMA0};
use crate::report;
use crate::validate::{run_validation, Fault, ValidationConfig};

pub const RUN_METADATA_FILE: &str = "run_metadata.txt";

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "noiseforge", version, about = "Calibrated noise injection and robustness evaluation for grayscale radiographs")]
pub struct Cli {
    /// More log output on stderr (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt a single image.
    Inject(InjectArgs),
    /// Generate a corrupted copy of a corpus at every ladder point.
    Sweep(SweepArgs),
    /// Run the built-in reference segmenter over a sweep tree.
    PredictReference(PredictArgs),
    /// Score a predictions tree against ground truth along the ladder.
    Eval(EvalArgs),
    /// Monte Carlo check of the noise samplers against their closed forms.
    ValidateNoise(ValidateArgs),
    /// Patient-level train/val/test split.
    Split(SplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Seg,
    Cls,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Seg => TaskKind::Segmentation,
            TaskArg::Cls => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Axis,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    InflatedVariance,
}

#[derive(Debug, Args)]
pub struct CalibrationArgs {
    /// Photons per pixel at s_q = 1.
    #[arg(long, default_value_t = DEFAULT_N0)]
    pub n0: f64,
    /// Electronic noise std at s_e = 1, in normalized units.
    #[arg(long, default_value_t = DEFAULT_SIGMA0)]
    pub sigma0: f64,
    /// Global seed; the only source of randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LadderArgs {
    /// Quantum severity levels, comma separated, starting at 0.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,6,8,10")]
    pub sq_levels: Vec<f64>,
    /// Electronic severity levels, comma separated, starting at 0.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,6,8,10")]
    pub se_levels: Vec<f64>,
    /// axis: one axis at a time; full: every (s_q, s_e) pair.
    #[arg(long, value_enum, default_value_t = GridArg::Axis)]
    pub grid: GridArg,
    /// Drop the joint (1, 1) point from an axis sweep.
    #[arg(long, default_value_t = false)]
    pub no_joint: bool,
}

impl LadderArgs {
    fn ladder(&self) -> Result<SeverityLadder> {
        let pairing = match self.grid {
            GridArg::Axis => Pairing::Axis,
            GridArg::Full => Pairing::Full,
        };
        SeverityLadder::new(self.sq_levels.clone(), self.se_levels.clone(), pairing, !self.no_joint)
    }

    fn describe(&self, out: &mut Vec<(String, String)>) {
        out.push(("sq_levels".into(), join(&self.sq_levels)));
        out.push(("se_levels".into(), join(&self.se_levels)));
        out.push(("grid".into(), format!("{:?}", self.grid).to_lowercase()));
        out.push(("joint".into(), (!self.no_joint).to_string()));
    }
}

#[derive(Debug, Args)]
pub struct JobsArg {
    /// Worker threads; 0 uses one per core. Output bytes do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Input 8-bit grayscale image (PNG or PGM).
    #[arg(long)]
    pub input: PathBuf,
    /// Output image; `.pgm` writes binary PGM, anything else PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Quantum severity; 0 or >= 1.
    #[arg(long, default_value_t = 0.0)]
    pub sq: f64,
    /// Electronic severity; >= 0.
    #[arg(long, default_value_t = 0.0)]
    pub se: f64,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the corrupted tree.
    #[arg(long)]
    pub out: PathBuf,
    /// Task the manifest describes.
    #[arg(long, value_enum, default_value_t = TaskArg::Seg)]
    pub task: TaskArg,
    /// Resample inputs to HxW before injection, e.g. 512x512.
    #[arg(long, value_parser = parse_resize)]
    pub resize: Option<(usize, usize)>,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Sweep tree written by `sweep`.
    #[arg(long)]
    pub sweep: PathBuf,
    /// Output predictions tree.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ladder: LadderArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictions root with one directory per ladder point.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output directory for records, curves and summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Task the manifest describes.
    #[arg(long, value_enum, default_value_t = TaskArg::Seg)]
    pub task: TaskArg,
    /// Label used in records and output file names.
    #[arg(long, default_value = "task")]
    pub task_id: String,
    /// Split file from `split`; evaluation then uses the test split only.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Score threshold for F1.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Resample ground-truth masks to HxW, matching a resized sweep.
    #[arg(long, value_parser = parse_resize)]
    pub resize: Option<(usize, usize)>,
    /// Flag records as produced by the reference segmenter.
    #[arg(long, default_value_t = false)]
    pub reference_predictor: bool,
    #[command(flatten)]
    pub ladder: LadderArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Samples per check, at least 100000.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Constant intensity of the test field.
    #[arg(long, default_value_t = 0.5)]
    pub intensity: f64,
    /// Quantum levels to check; 0 entries are skipped.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,6,8,10")]
    pub sq_levels: Vec<f64>,
    /// Electronic levels to check; 0 entries are skipped.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,6,8,10")]
    pub se_levels: Vec<f64>,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[command(flatten)]
    pub jobs: JobsArg,
    /// Test hook: swap in a defective sampler.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output split CSV (`patient_id,split`).
    #[arg(long)]
    pub out: PathBuf,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.7,0.15,0.15")]
    pub fractions: Vec<f64>,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the positive-patient prevalence equal across splits.
    #[arg(long, default_value_t = false)]
    pub stratify: bool,
    /// Task the manifest describes.
    #[arg(long, value_enum, default_value_t = TaskArg::Seg)]
    pub task: TaskArg,
}

fn parse_resize(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    if h == 0 || w == 0 {
        return Err(format!("resize dimensions must be positive, got `{s}`"));
    }
    Ok((h, w))
}

fn join(levels: &[f64]) -> String {
    levels.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    // no env lookup: behavior comes from flags only
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

// One digest over every image file in id order.
fn corpus_digest(manifest: &CorpusManifest) -> Result<String> {
    let mut entries: Vec<_> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.image_id.as_bytes());
        h.update([0]);
        h.update(sha256_file(&e.image_path)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn write_metadata(dir: &Path, command: &str, fields: &[(String, String)], spec: Option<&NoiseSpec>) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(text, "command = {command}").unwrap();
    for (k, v) in fields {
        writeln!(text, "{k} = {v}").unwrap();
    }
    if let Some(spec) = spec {
        writeln!(text, "# base noise spec").unwrap();
        text.push_str(&spec.to_string());
        if !text.ends_with('\n') {
            text.push('\n');
        }
    }
    let path = dir.join(RUN_METADATA_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_budget(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{n:.0}")
    } else {
        format!("{n:.1}")
    }
}

fn cmd_inject(args: &InjectArgs) -> Result<u8> {
    let c = &args.calibration;
    let spec = NoiseSpec::new(args.sq, args.se, c.seed).with_calibration(c.n0, c.sigma0);
    spec.validate()?;
    let img = normalize(&image::read_gray(&args.input)?);
    if spec.quantum_active() {
        info!("photons/pixel = {}", fmt_budget(photon_budget(spec.s_q, spec.n0)?));
    } else {
        info!("photons/pixel = unlimited (quantum noise off)");
    }
    info!("sigma_e = {}", sigma_e(spec.s_e, spec.sigma0)?);
    let realization = inject(&img, &spec)?;
    image::write_gray(&quantize(&realization.corrupted)?, &args.out)?;
    info!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let ladder = args.ladder.ladder()?;
    let c = &args.calibration;
    let spec = NoiseSpec::new(0.0, 0.0, c.seed).with_calibration(c.n0, c.sigma0);
    spec.validate()?;
    let manifest = CorpusManifest::from_path(&args.manifest, args.task.into())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let opts = GenerateOptions { resize: args.resize };
    let summary = with_pool(args.jobs.jobs, || {
        generate_corrupted_corpus(&manifest, &ladder, &spec, &args.out, opts)
    })??;

    let mut fields = vec![("task".to_string(), TaskKind::from(args.task).to_string())];
    args.ladder.describe(&mut fields);
    fields.push(("points".into(), ladder.points().len().to_string()));
    fields.push((
        "resize".into(),
        args.resize.map_or("none".into(), |(h, w)| format!("{h}x{w}")),
    ));
    fields.push(("manifest_sha256".into(), sha256_file(&args.manifest)?));
    fields.push(("images_sha256".into(), corpus_digest(&manifest)?));
    write_metadata(&args.out, "sweep", &fields, Some(&spec))?;

    info!(
        "{} points x {} images, {} files rewritten",
        ladder.points().len(),
        manifest.entries.len(),
        summary.files_rewritten
    );
    if !summary.failures.is_empty() {
        // per-image errors were logged by the generator; the rest of the tree is complete
        warn!("{} images failed", summary.failures.len());
        return Ok(EXIT_IO);
    }
    Ok(EXIT_OK)
}

fn cmd_predict_reference(args: &PredictArgs) -> Result<u8> {
    let ladder = args.ladder.ladder()?;
    let manifest = CorpusManifest::from_path(&args.manifest, TaskKind::Segmentation)?;
    let n = with_pool(args.jobs.jobs, || {
        predict_reference(&manifest, &ladder, &args.sweep, &args.out)
    })??;
    info!("wrote {n} reference masks under {}", args.out.display());
    Ok(EXIT_OK)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let ladder = args.ladder.ladder()?;
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Error::Domain(format!(
            "threshold must be in [0, 1], got {}",
            args.threshold
        )));
    }
    let manifest = CorpusManifest::from_path(&args.manifest, args.task.into())?;
    let split = args.splits.as_deref().map(SplitAssignment::from_path).transpose()?;
    let opts = EvalOptions {
        task_id: args.task_id.clone(),
        split,
        threshold: args.threshold,
        resize: args.resize,
        reference_predictor: args.reference_predictor,
    };
    let evaluation = with_pool(args.jobs.jobs, || {
        evaluate_sweep(&manifest, &ladder, &args.predictions, &opts)
    })??;
    let curves = build_curves(&evaluation.records)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let id = &args.task_id;
    write_file(&args.out.join("records.csv"), &report::records_csv(&evaluation.records))?;
    write_file(&args.out.join(format!("curves_{id}.json")), &report::curves_json(id, &curves))?;
    write_file(
        &args.out.join(format!("summary_{id}.txt")),
        &report::summary_table(id, &evaluation.records, &curves, evaluation.tuned_threshold.as_ref()),
    )?;

    let mut fields = vec![
        ("task".to_string(), TaskKind::from(args.task).to_string()),
        ("task_id".into(), id.clone()),
        ("threshold".into(), args.threshold.to_string()),
        ("reference_predictor".into(), args.reference_predictor.to_string()),
    ];
    args.ladder.describe(&mut fields);
    fields.push(("manifest_sha256".into(), sha256_file(&args.manifest)?));
    if let Some(s) = &args.splits {
        fields.push(("splits_sha256".into(), sha256_file(s)?));
    }
    write_metadata(&args.out, "eval", &fields, None)?;

    info!(
        "{} records over {} points, {} points skipped",
        evaluation.records.len(),
        ladder.points().len() - evaluation.skipped.len(),
        evaluation.skipped.len()
    );
    Ok(EXIT_OK)
}

fn cmd_validate_noise(args: &ValidateArgs) -> Result<u8> {
    let c = &args.calibration;
    let cfg = ValidationConfig {
        intensity: args.intensity,
        samples: args.samples,
        n0: c.n0,
        sigma0: c.sigma0,
        quantum_levels: args.sq_levels.clone(),
        electronic_levels: args.se_levels.clone(),
        seed: c.seed,
        fault: args.inject_fault.map(|f| match f {
            FaultArg::InflatedVariance => Fault::InflatedPoissonVariance,
        }),
    };
    let checks = with_pool(args.jobs.jobs, || run_validation(&cfg))??;
    let mut failed = 0;
    for ch in &checks {
        let verdict = if ch.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: measured {:.6e}, expected {:.6e}, tolerance {:.3e}",
            ch.name, ch.measured, ch.expected, ch.tolerance
        );
        failed += usize::from(!ch.passed);
    }
    if failed > 0 {
        log::error!("{failed} of {} checks failed", checks.len());
        return Ok(EXIT_VALIDATION);
    }
    info!("all {} checks passed", checks.len());
    Ok(EXIT_OK)
}

fn cmd_split(args: &SplitArgs) -> Result<u8> {
    let fractions: [f64; 3] = args
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| Error::Domain("--fractions takes exactly three values".into()))?;
    let manifest = CorpusManifest::from_path(&args.manifest, args.task.into())?;
    let split = split_corpus(&manifest, fractions, args.seed, args.stratify)?;
    write_file(&args.out, &split.to_csv())?;
    info!(
        "train {} / val {} / test {} patients",
        split.count(crate::corpus::Split::Train),
        split.count(crate::corpus::Split::Val),
        split.count(crate::corpus::Split::Test)
    );
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Inject(a) => cmd_inject(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::PredictReference(a) => cmd_predict_reference(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ValidateNoise(a) => cmd_validate_noise(a),
        Command::Split(a) => cmd_split(a),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
