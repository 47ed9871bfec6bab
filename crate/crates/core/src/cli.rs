//! Command-line front end.
//!
//! Every subcommand accepts `--config <file>` with flat `key = value` lines
//! whose keys are the subcommand's long flag names. Values from the file are
//! applied first and explicit flags override them.
//!
//! Exit codes: 0 success, 1 a quality check failed, 2 an error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::classifier::{
    self, build_ablation, load_cifar10, load_image_dir, load_mnist, preprocess_frame, Dataset, JuncNetConfig,
};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};
use crate::navigation::{self, classify_and_navigate, load_turn_plan, parse_labels, simulate, CommandKind};
use crate::network::{grad_check, load_checkpoint, save_checkpoint, Tensor};
use crate::parallel;
use crate::radon::{self, RadonConfig};

/// Environment variable naming the dataset root (default `data`).
pub const DATA_ENV: &str = "JUNCNET_DATA";

#[derive(Debug, Parser)]
#[command(
    name = "juncnet",
    version,
    about = "Road junction detection and junction-counting navigation"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file with defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Project an image (or the built-in phantom) and reconstruct it.
    Reconstruct(ReconstructArgs),
    /// Train a network and write a checkpoint plus history.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Compare analytic gradients of a small network with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the junction counter over labels or classified frames.
    NavigateSim(NavigateArgs),
    /// Write the network input channels of frames as images.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Directory of class subdirectories holding PGM/PPM frames.
    Dir,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Input PGM/PPM image.
    #[arg(long, conflicts_with = "phantom", required_unless_present = "phantom")]
    pub input: Option<PathBuf>,
    /// Use a Shepp-Logan phantom of this side instead of an input file.
    #[arg(long, value_name = "SIDE")]
    pub phantom: Option<usize>,
    #[arg(long, default_value_t = 180)]
    pub angles: usize,
    /// Project and reconstruct the full square rather than the inscribed circle.
    #[arg(long)]
    pub no_circle_mask: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Output file prefix (defaults to the input stem or "phantom").
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub input_side: usize,
    /// Input channels (defaults: 1 for mnist/cifar10, 2 for dir).
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub conv1: usize,
    #[arg(long, default_value_t = 64)]
    pub conv2: usize,
    #[arg(long, default_value_t = 128)]
    pub dense: usize,
    /// Number of conv+pool stages (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub conv_blocks: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Dataset location (defaults: $JUNCNET_DATA/mnist or
    /// $JUNCNET_DATA/cifar-10-batches-bin; required for dir).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Projection angles for the radon channel of dir datasets.
    #[arg(long, default_value_t = 180)]
    pub angles: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Use only the first N training samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Checkpoint path (default <out-dir>/model.jncw).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Use only the first N test samples.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Exit with 1 when accuracy is below this value.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub input_side: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub conv1: usize,
    #[arg(long, default_value_t = 8)]
    pub conv2: usize,
    #[arg(long, default_value_t = 16)]
    pub dense: usize,
    /// Samples in the probe batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct NavigateArgs {
    /// Turn plan: `index,action,yaw_degrees` lines.
    #[arg(long)]
    pub plan: PathBuf,
    /// Per-frame labels (`junction`/`none`), one per line.
    #[arg(long, conflicts_with_all = ["checkpoint", "frames"], required_unless_present = "frames")]
    pub labels: Option<PathBuf>,
    /// Trained checkpoint used to classify --frames.
    #[arg(long, requires = "frames")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of PGM/PPM frames, processed in file-name order.
    #[arg(long, requires = "checkpoint")]
    pub frames: Option<PathBuf>,
    #[arg(long, default_value_t = navigation::DEFAULT_DEBOUNCE)]
    pub debounce: usize,
    /// Output class index that means "junction".
    #[arg(long, default_value_t = 0)]
    pub junction_class: usize,
    #[arg(long, default_value_t = 180)]
    pub angles: usize,
    #[arg(long, default_value = "commands.log")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// A PGM/PPM frame or a directory of frames.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "preprocessed")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub input_side: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 180)]
    pub angles: usize,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CheckFailed,
}

impl From<Outcome> for ExitCode {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Ok => ExitCode::SUCCESS,
            Outcome::CheckFailed => ExitCode::from(1),
        }
    }
}

/// Parses `args` (including the program name), applies any config file and
/// runs the command. Diagnostics go to standard error.
pub fn main_with_args(args: Vec<OsString>) -> ExitCode {
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(o) => o.into(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected key = value, found {line:?}"),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "empty key".into(),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Result<Option<(PathBuf, usize)>> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            let v = args
                .get(i + 1)
                .ok_or_else(|| Error::InvalidConfig("--config needs a file".into()))?;
            found = Some((PathBuf::from(v), i));
            i += 1;
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some((PathBuf::from(v), i));
        }
        i += 1;
    }
    Ok(found)
}

/// Inserts the config file's settings as flags directly after the
/// subcommand name, ahead of any user flags so those take precedence.
fn apply_config_file(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((path, _)) = config_path(&args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let settings = parse_config(&text)?;
    let cmd = Cli::command();
    let mut skip_next = false;
    let sub_pos = args.iter().enumerate().skip(1).find_map(|(i, a)| {
        let s = a.to_string_lossy();
        if std::mem::take(&mut skip_next) {
            return None;
        }
        if s == "--config" {
            skip_next = true;
            return None;
        }
        cmd.find_subcommand(s.as_ref()).map(|_| i)
    });
    let Some(sub_pos) = sub_pos else {
        return Ok(args);
    };
    let name = args[sub_pos].to_string_lossy().into_owned();
    let sub = cmd.find_subcommand(&name).expect("matched above");
    let mut injected = Vec::new();
    for (key, value) in settings {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| Error::InvalidConfig(format!("unknown key {key:?} for {name}")))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}")));
            injected.push(OsString::from(value));
        } else {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "no" | "0" => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "{key} expects true or false, got {value:?}"
                    )))
                }
            }
        }
    }
    args.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(args)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Cmd::Reconstruct(a) => cmd_reconstruct(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&a),
        Cmd::NavigateSim(a) => cmd_navigate_sim(&a),
        Cmd::Preprocess(a) => cmd_preprocess(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn radon_config(angles: usize, circle_mask: bool) -> Result<RadonConfig> {
    let cfg = RadonConfig {
        num_angles: angles,
        circle_mask,
        ..RadonConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<Outcome> {
    let cfg = radon_config(a.angles, !a.no_circle_mask)?;
    let (img, default_name) = match (&a.input, a.phantom) {
        (Some(path), _) => {
            let stem = path
                .file_stem()
                .map_or("image".into(), |s| s.to_string_lossy().into_owned());
            (imaging::load_gray_any(path)?, stem)
        }
        (None, Some(side)) => (radon::shepp_logan(side)?, "phantom".to_string()),
        (None, None) => return Err(Error::InvalidConfig("need --input or --phantom".into())),
    };
    let name = a.name.clone().unwrap_or(default_name);
    let square = imaging::pad_to_square(&img);
    let sino = radon::radon_forward(&square, &cfg)?;
    let fbp = radon::fbp_reconstruct(&sino, square.width(), &cfg)?;
    let feature = radon::radon_feature_image(&img, &cfg)?;

    create_dir(&a.out_dir)?;
    let out = |suffix: &str| a.out_dir.join(format!("{name}_{suffix}"));
    imaging::save_pgm_normalized(&sino.to_image(), out("sino.pgm"))?;
    sino.write_raw(out("sino.raw"))?;
    imaging::save_pgm_normalized(&fbp, out("fbp.pgm"))?;
    radon::write_image_raw(&fbp, out("fbp.raw"))?;
    imaging::save_pgm(&feature.map(|v| v * 255.0), out("feature.pgm"))?;
    radon::write_image_raw(&feature, out("feature.raw"))?;

    println!("sinogram={}x{}", sino.num_angles(), sino.num_offsets());
    if a.phantom.is_some() {
        let m = radon::circle_metrics(&fbp, &square)?;
        println!("pearson={:.6}", m.pearson);
        println!("rmse={:.6}", m.rmse);
    }
    println!("wrote={}", out("{sino,fbp,feature}.{pgm,raw}").display());
    Ok(Outcome::Ok)
}

fn data_root() -> PathBuf {
    std::env::var_os(DATA_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

fn dataset_dir(d: &DataArgs) -> Result<PathBuf> {
    match (&d.data_dir, d.dataset) {
        (Some(p), _) => Ok(p.clone()),
        (None, DatasetKind::Mnist) => Ok(data_root().join("mnist")),
        (None, DatasetKind::Cifar10) => Ok(data_root().join("cifar-10-batches-bin")),
        (None, DatasetKind::Dir) => Err(Error::InvalidConfig("--dataset dir needs --data-dir".into())),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

fn load_dataset(d: &DataArgs, split: Split, cfg: &JuncNetConfig, limit: Option<usize>) -> Result<Dataset> {
    let dir = dataset_dir(d)?;
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let ds = match d.dataset {
        DatasetKind::Mnist => {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            load_mnist(
                dir.join(format!("{prefix}-images-idx3-ubyte")),
                dir.join(format!("{prefix}-labels-idx1-ubyte")),
                cfg.input_side,
                limit,
            )?
        }
        DatasetKind::Cifar10 => {
            let files: Vec<PathBuf> = if split == Split::Train {
                (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
            } else {
                vec![dir.join("test_batch.bin")]
            };
            load_cifar10(&files, cfg.input_side, limit)?
        }
        DatasetKind::Dir => {
            let mut ds = load_image_dir(&dir, cfg)?;
            if let Some(l) = limit {
                let extra = ds.len().saturating_sub(l);
                ds.split_off(extra);
            }
            if ds.skipped > 0 {
                eprintln!("warning: skipped {} non-image files", ds.skipped);
            }
            ds
        }
    };
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ds)
}

fn default_channels(kind: DatasetKind) -> usize {
    match kind {
        DatasetKind::Dir => 2,
        DatasetKind::Mnist | DatasetKind::Cifar10 => 1,
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let channels = a.model.channels.unwrap_or(default_channels(a.data.dataset));
    let mut cfg = JuncNetConfig {
        input_side: a.model.input_side,
        in_channels: channels,
        conv1_filters: a.model.conv1,
        conv2_filters: a.model.conv2,
        dense_hidden: a.model.dense,
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        radon: radon_config(a.data.angles, true)?,
        ..JuncNetConfig::default()
    };
    if a.data.dataset != DatasetKind::Dir && channels != 1 {
        return Err(Error::InvalidConfig(
            "mnist and cifar10 provide single-channel inputs; use --channels 1".into(),
        ));
    }
    cfg.validate()?;
    create_dir(&a.out_dir)?;
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| a.out_dir.join("model.jncw"));

    let data = load_dataset(&a.data, Split::Train, &cfg, a.train_limit)?;
    cfg.classes = data.num_classes();
    let mut model = build_ablation(&cfg, a.model.conv_blocks)?;
    println!(
        "samples={} classes={} params={}",
        data.len(),
        cfg.classes,
        model.param_count()
    );
    let history = classifier::train(&mut model, &data, &cfg, &mut |s| {
        println!("epoch={} loss={:.6} accuracy={:.4}", s.epoch, s.loss, s.accuracy);
    })?;
    if !classifier::smoothed_loss_non_increasing(&history, 2, 5) {
        eprintln!("warning: smoothed training loss rose during the first epochs");
    }
    save_checkpoint(&model, &checkpoint)?;
    write_text(&a.out_dir.join("history.csv"), &classifier::history_csv(&history))?;
    if let Some(last) = history.last() {
        println!("loss={:.6}", last.loss);
        println!("accuracy={:.6}", last.accuracy);
    }
    println!("checkpoint={}", checkpoint.display());
    Ok(Outcome::Ok)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let model = load_checkpoint(&a.checkpoint)?;
    let [c, side, _] = model.input_shape();
    let cfg = JuncNetConfig {
        input_side: side,
        in_channels: c,
        classes: model.num_classes(),
        radon: radon_config(a.data.angles, true)?,
        ..JuncNetConfig::default()
    };
    let data = load_dataset(&a.data, Split::Test, &cfg, a.test_limit)?;
    let report = classifier::evaluate(&model, &data)?;
    create_dir(&a.out_dir)?;
    report.write_confusion_csv(a.out_dir.join("confusion.csv"), data.class_names())?;
    let mut per_class = String::new();
    for (i, name) in data.class_names().iter().enumerate() {
        let _ = writeln!(
            per_class,
            "class={name} precision={:.4} recall={:.4}",
            report.precision[i], report.recall[i]
        );
    }
    print!("{per_class}");
    println!("samples={}", report.total);
    println!("error_rate={:.6}", report.error_rate);
    println!("accuracy={:.6}", report.accuracy);
    match a.min_accuracy {
        Some(min) if report.accuracy < min => {
            eprintln!("accuracy {:.4} below required {min}", report.accuracy);
            Ok(Outcome::CheckFailed)
        }
        _ => Ok(Outcome::Ok),
    }
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let cfg = JuncNetConfig {
        input_side: a.input_side,
        in_channels: a.channels,
        conv1_filters: a.conv1,
        conv2_filters: a.conv2,
        dense_hidden: a.dense,
        classes: a.classes,
        seed: a.seed,
        ..JuncNetConfig::default()
    };
    if a.batch == 0 || !a.step.is_finite() || a.step <= 0.0 {
        return Err(Error::InvalidConfig("--batch and --step must be positive".into()));
    }
    let model = classifier::build_juncnet(&cfg)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(a.seed.wrapping_add(1));
    let x = Tensor::from_fn(&[a.batch, a.channels, a.input_side, a.input_side], |_| {
        rng.random::<f64>()
    });
    let labels: Vec<usize> = (0..a.batch).map(|_| rng.random_range(0..a.classes)).collect();
    let report = grad_check(&model, &x, &labels, a.step, a.threshold)?;
    println!("params={}", report.checked);
    if let Some((name, i)) = &report.worst {
        println!("worst={name}[{i}]");
    }
    println!("max_rel_error={:.3e}", report.max_rel_error);
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        eprintln!(
            "max relative error {:.3e} exceeds {:.3e}",
            report.max_rel_error, a.threshold
        );
        Outcome::CheckFailed
    })
}

/// Binary PGM/PPM files of `dir` in name order; other files are skipped.
fn image_files(dir: &Path) -> Result<(Vec<PathBuf>, usize)> {
    let mut files = Vec::new();
    let mut skipped = 0;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let mut magic = [0u8; 2];
        let is_image = fs::File::open(&path)
            .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut magic))
            .is_ok()
            && (&magic == b"P5" || &magic == b"P6");
        if is_image {
            files.push(path);
        } else {
            skipped += 1;
        }
    }
    files.sort();
    Ok((files, skipped))
}

pub fn cmd_navigate_sim(a: &NavigateArgs) -> Result<Outcome> {
    let plan = load_turn_plan(&a.plan)?;
    let log = match (&a.labels, &a.checkpoint, &a.frames) {
        (Some(labels), _, _) => {
            let text = fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
            simulate(&parse_labels(&text)?, &plan, a.debounce)?.0
        }
        (None, Some(ckpt), Some(frames)) => {
            let model = load_checkpoint(ckpt)?;
            let [c, side, _] = model.input_shape();
            let cfg = JuncNetConfig {
                input_side: side,
                in_channels: c,
                classes: model.num_classes(),
                radon: radon_config(a.angles, true)?,
                ..JuncNetConfig::default()
            };
            let (files, skipped) = image_files(frames)?;
            if skipped > 0 {
                eprintln!("warning: skipped {skipped} non-image files");
            }
            let images = files
                .iter()
                .map(imaging::load_gray_any)
                .collect::<Result<Vec<GrayImage>>>()?;
            classify_and_navigate(images, &model.inference(), &plan, &cfg, a.debounce, a.junction_class)?
        }
        _ => {
            return Err(Error::InvalidConfig(
                "need --labels or --checkpoint with --frames".into(),
            ))
        }
    };
    write_text(&a.output, &navigation::format_log(&log))?;
    let yaws = log.iter().filter(|r| r.command.kind == CommandKind::Yaw).count();
    println!("frames={}", log.len());
    println!("junctions={}", log.last().map_or(0, |r| r.junction_count));
    println!("yaw_commands={yaws}");
    println!("log={}", a.output.display());
    Ok(Outcome::Ok)
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<Outcome> {
    let cfg = JuncNetConfig {
        input_side: a.input_side,
        in_channels: a.channels,
        radon: radon_config(a.angles, true)?,
        ..JuncNetConfig::default()
    };
    cfg.validate()?;
    let files = if a.input.is_dir() {
        image_files(&a.input)?.0
    } else {
        vec![a.input.clone()]
    };
    create_dir(&a.out_dir)?;
    let results = parallel::par_map(&files, parallel::worker_threads(), |path| -> Result<()> {
        let img = imaging::load_gray_any(path)?;
        let t = preprocess_frame(&img, &cfg)?;
        let stem = path
            .file_stem()
            .map_or("frame".into(), |s| s.to_string_lossy().into_owned());
        let plane = cfg.input_side * cfg.input_side;
        for (ch, chunk) in t.data().chunks(plane).enumerate() {
            let img = GrayImage::new(
                cfg.input_side,
                cfg.input_side,
                chunk.iter().map(|v| v * 255.0).collect(),
            )?;
            imaging::save_pgm(&img, a.out_dir.join(format!("{stem}_ch{ch}.pgm")))?;
        }
        Ok(())
    });
    for r in results {
        r?;
    }
    println!("frames={}", files.len());
    println!("out_dir={}", a.out_dir.display());
    Ok(Outcome::Ok)
}
