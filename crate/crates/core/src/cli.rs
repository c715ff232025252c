//! Command-line front end.
//!
//! Settings resolve as flag, then `--config` file (`key = value` lines, `#`
//! comments), then built-in default. The resolved settings are written next to
//! every output as `run-config.txt`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::adapt::{self, WindowPolicy};
use crate::checkpoint;
use crate::eval;
use crate::exec::{self, Exec};
use crate::frame::SharedFrame;
use crate::model::{Arch, ModelParams};
use crate::optim::OptimizerKind;
use crate::ppm;
use crate::synth::SynthFamily;
use crate::tasks::{self, Sequence};
use crate::trainer::{self, AdaptConfig, MetaConfig, TrainSchedule};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "scene-adapt",
    version,
    about = "Scene-adaptive frame interpolation via meta-learned test-time adaptation"
)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run independent work items sequentially or on the thread pool.
    #[arg(long, global = true)]
    pub exec: Option<Exec>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences of a texture translating at constant
    /// velocity, with exact ground truth for every frame.
    SynthData(SynthArgs),
    /// Supervised training on consecutive frame triplets (the baseline model).
    Pretrain(PretrainArgs),
    /// Fine-tune a model on the meta-training windows' narrow-gap triplets
    /// without inner/outer structure (the re-trained control).
    Retrain(RetrainArgs),
    /// Meta-train: adapt a copy per task on the two wide-gap triplets, then
    /// update the initialization with the summed first-order gradient of the
    /// narrow-gap loss at each adapted copy.
    MetaTrain(MetaTrainArgs),
    /// Adapt on a 4-frame (or 3-frame) low-frame-rate window and write the
    /// window with the synthesized in-between frames.
    Adapt(AdaptArgs),
    /// Double the frame rate of a sequence, adapting independently per
    /// 4-frame window.
    Interpolate(InterpolateArgs),
    /// Compare baseline and re-trained models without adaptation against the
    /// meta-trained model with test-time adaptation.
    Eval(EvalArgs),
    /// Inner-step (`--mode k`) or inner-learning-rate (`--mode lr`) ablation grid.
    Ablate(AblateArgs),
    /// Naive test-time fine-tuning curve: PSNR change of a held-out middle
    /// frame per update step.
    Feasibility(FeasibilityArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    /// Per-axis velocity range in pixels per frame.
    #[arg(long)]
    pub velocity_range: Option<f64>,
    /// `HxW`, each a multiple of 4.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// 1 (grayscale) or 3 (RGB).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Comma-separated encoder widths, e.g. `8,16,32`.
    #[arg(long)]
    pub widths: Option<String>,
    /// Adaptive kernel taps (odd).
    #[arg(long)]
    pub kernel_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// `sgd` or `adamax`.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Loss per step as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Validation sequences; enables the plateau decay of the learning rate.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub plateau: PlateauArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlateauArgs {
    /// Divisor applied to the outer learning rate on a validation plateau.
    #[arg(long)]
    pub decay_factor: Option<f64>,
    /// Validation evaluations without improvement before decaying.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Outer steps between validation evaluations.
    #[arg(long)]
    pub val_interval: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InnerArgs {
    /// Inner (adaptation) learning rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Inner update steps.
    #[arg(long)]
    pub k: Option<usize>,
    /// `sgd` or `adamax`; adamax state starts fresh for every adaptation.
    #[arg(long)]
    pub inner_optimizer: Option<OptimizerKind>,
}

#[derive(Debug, Args)]
pub struct MetaTrainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step losses and validation curve as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub inner: InnerArgs,
    /// Outer learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Tasks per outer step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Outer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Optimizer for the initialization update; defaults to `adamax`, the
    /// optimizer `pretrain` and `retrain` use.
    #[arg(long)]
    pub outer_optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub plateau: PlateauArgs,
}

#[derive(Debug, Args)]
pub struct InputSeqArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of `*.ppm` frames.
    #[arg(long)]
    pub seq: PathBuf,
    /// Use every n-th frame of `--seq` as input; skipped frames serve as
    /// ground truth for a PSNR report.
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub input: InputSeqArgs,
    #[command(flatten)]
    pub inner: InnerArgs,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub input: InputSeqArgs,
    #[command(flatten)]
    pub inner: InnerArgs,
    /// Skip adaptation (same as `--alpha 0`).
    #[arg(long)]
    pub no_adapt: bool,
    /// Distance between adaptation window starts (1..=3).
    #[arg(long)]
    pub window_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub retrained: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inner: InnerArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblateMode {
    K,
    Lr,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: AblateMode,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Meta-trained checkpoint (`--mode k`).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Re-trained checkpoint (`--mode k`).
    #[arg(long)]
    pub retrained: Option<PathBuf>,
    /// Comma-separated inner step counts (`--mode k`).
    #[arg(long)]
    pub ks: Option<String>,
    /// `ALPHA:CKPT` of a model meta-trained with inner rate ALPHA (`--mode lr`, repeatable).
    #[arg(long = "entry")]
    pub entries: Vec<String>,
    #[command(flatten)]
    pub inner: InnerArgs,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sequence of at least 7 frames; frames 0, 2, 4, 6 are the low-rate input.
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
}

/// Merges flags, config-file entries and defaults, recording each resolved value.
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}:{}: expected key = value",
                        path.display(),
                        n + 1
                    ))
                })?;
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self {
            file,
            resolved: Vec::new(),
        })
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(s) => s.parse().map_err(|e| {
                    CliError::Usage(format!("config key {key}: cannot parse {s:?}: {e}"))
                })?,
                None => default,
            },
        };
        self.note(key, &value);
        Ok(value)
    }

    pub fn note(&mut self, key: &str, value: &impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    pub fn note_path(&mut self, key: &str, path: &Path) {
        self.note(key, &path.display());
    }

    pub fn render(&self, command: &str) -> String {
        let mut s = format!("command = {command}\n");
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Unknown config keys are usage errors.
    fn check_unused(&self) -> CliResult<()> {
        for k in self.file.keys() {
            if !self.resolved.iter().any(|(r, _)| r == k) && !GLOBAL_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    }
}

const GLOBAL_KEYS: [&str; 2] = ["threads", "exec"];

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Resolved settings for a file output go to `<file>.run-config.txt`.
fn echo_for_file(res: &Resolver, command: &str, out: &Path) -> CliResult<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".run-config.txt");
    write_file(Path::new(&name), res.render(command))
}

fn echo_for_dir(res: &Resolver, command: &str, dir: &Path) -> CliResult<()> {
    write_file(&dir.join("run-config.txt"), res.render(command))
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Usage(format!("size {s:?} must look like HxW")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("size {s:?} must look like HxW")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse {v:?} in {s:?}")))
        })
        .collect()
}

fn load_ckpt(res: &mut Resolver, key: &str, path: &Path) -> CliResult<ModelParams> {
    res.note_path(key, path);
    checkpoint::load(path).map_err(runtime)
}

fn load_data(
    res: &mut Resolver,
    key: &str,
    dir: &Path,
    channels: usize,
) -> CliResult<Vec<Sequence>> {
    res.note_path(key, dir);
    ppm::load_dataset(dir, channels).map_err(runtime)
}

fn resolve_inner(
    res: &mut Resolver,
    a: &InnerArgs,
    default: AdaptConfig,
) -> CliResult<AdaptConfig> {
    Ok(AdaptConfig {
        alpha: res.get("alpha", a.alpha, default.alpha)?,
        k: res.get("k", a.k, default.k)?,
        optimizer: res.get("inner-optimizer", a.inner_optimizer, default.optimizer)?,
    })
}

fn resolve_schedule(
    res: &mut Resolver,
    s: &ScheduleArgs,
    default: TrainSchedule,
) -> CliResult<TrainSchedule> {
    Ok(TrainSchedule {
        steps: res.get("steps", s.steps, default.steps)?,
        lr: res.get("lr", s.lr, default.lr)?,
        batch: res.get("batch", s.batch, default.batch)?,
        optimizer: res.get("optimizer", s.optimizer, default.optimizer)?,
        seed: res.get("seed", s.seed, default.seed)?,
        exec: default.exec,
    })
}

fn resolve_plateau(
    res: &mut Resolver,
    p: &PlateauArgs,
    mut m: MetaConfig,
) -> CliResult<MetaConfig> {
    m.decay_factor = res.get("decay-factor", p.decay_factor, m.decay_factor)?;
    m.patience = res.get("patience", p.patience, m.patience)?;
    m.val_interval = res.get("val-interval", p.val_interval, m.val_interval)?;
    Ok(m)
}

fn losses_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l:e}\n", i + 1));
    }
    s
}

/// Default architecture of newly trained models.
pub fn default_arch() -> Arch {
    Arch {
        channels: 1,
        widths: vec![8, 16, 32],
        kernel_size: 5,
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut res = Resolver::new(cli.config.as_deref())?;
    let threads = res.get("threads", cli.threads, 0usize)?;
    if threads > 0 {
        exec::set_threads(threads).map_err(runtime)?;
    }
    let ex = res.get("exec", cli.exec, Exec::default())?;
    let outcome = match &cli.command {
        Command::SynthData(a) => synth_data(&mut res, a),
        Command::Pretrain(a) => pretrain(&mut res, a, ex),
        Command::Retrain(a) => retrain(&mut res, a, ex),
        Command::MetaTrain(a) => meta_train(&mut res, a, ex),
        Command::Adapt(a) => adapt_cmd(&mut res, a),
        Command::Interpolate(a) => interpolate(&mut res, a, ex),
        Command::Eval(a) => eval_cmd(&mut res, a, ex),
        Command::Ablate(a) => ablate(&mut res, a, ex),
        Command::Feasibility(a) => feasibility(&mut res, a),
    };
    outcome?;
    res.check_unused()
}

fn synth_data(res: &mut Resolver, a: &SynthArgs) -> CliResult<()> {
    let count = res.get("count", a.count, 16usize)?;
    let velocity_range = res.get("velocity-range", a.velocity_range, 2.0)?;
    let size = res.get("size", a.size.clone(), "32x32".to_string())?;
    let length = res.get("length", a.length, tasks::WINDOW)?;
    let seed = res.get("seed", a.seed, 0u64)?;
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let (height, width) = parse_size(&size)?;
    let family = SynthFamily {
        count,
        velocity_range,
        height,
        width,
        channels: 3,
        length,
        seed,
    };
    let seqs = family.generate().map_err(runtime)?;
    for (i, seq) in seqs.iter().enumerate() {
        let frames: Vec<&crate::Frame> = seq.iter().map(|f| &**f).collect();
        ppm::save_sequence(&frames, &a.out.join(format!("seq{i:04}"))).map_err(runtime)?;
    }
    echo_for_dir(res, "synth-data", &a.out)?;
    println!(
        "wrote {count} sequences of {length} frames ({height}x{width}) to {}",
        a.out.display()
    );
    Ok(())
}

fn pretrain(res: &mut Resolver, a: &PretrainArgs, ex: Exec) -> CliResult<()> {
    let d = default_arch();
    let arch = Arch {
        channels: res.get("channels", a.arch.channels, d.channels)?,
        widths: parse_list(
            &res.get("widths", a.arch.widths.clone(), "8,16,32".to_string())?,
            "widths",
        )?,
        kernel_size: res.get("kernel-size", a.arch.kernel_size, d.kernel_size)?,
    };
    let mut sched = resolve_schedule(res, &a.schedule, TrainSchedule::new(1e-3, 200, 0))?;
    sched.exec = ex;
    let data = load_data(res, "data", &a.data, arch.channels)?;
    let triplets: Vec<_> = data
        .iter()
        .map(|s| tasks::consecutive_triplets(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?
        .into_iter()
        .flatten()
        .collect();
    let init = ModelParams::init(&arch, sched.seed).map_err(runtime)?;
    let (params, losses) = trainer::pretrain(&init, &triplets, &sched).map_err(runtime)?;
    checkpoint::save(&params, &a.out).map_err(runtime)?;
    echo_for_file(res, "pretrain", &a.out)?;
    if let Some(r) = &a.report {
        write_file(r, losses_csv(&losses))?;
    }
    println!(
        "pretrained {arch} ({} parameters) on {} triplets; final loss {:.6}",
        params.param_count(),
        triplets.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn retrain(res: &mut Resolver, a: &RetrainArgs, ex: Exec) -> CliResult<()> {
    let init = load_ckpt(res, "ckpt", &a.ckpt)?;
    let mut sched = resolve_schedule(res, &a.schedule, TrainSchedule::new(1e-4, 200, 0))?;
    sched.exec = ex;
    let data = load_data(res, "data", &a.data, init.arch().channels)?;
    let (params, csv) = match &a.val {
        Some(val_dir) => {
            let val = load_data(res, "val", val_dir, init.arch().channels)?;
            let mcfg = resolve_plateau(
                res,
                &a.plateau,
                MetaConfig {
                    beta: sched.lr,
                    batch: sched.batch,
                    max_outer_steps: sched.steps,
                    seed: sched.seed,
                    optimizer: sched.optimizer,
                    exec: ex,
                    ..MetaConfig::default()
                },
            )?;
            let (p, report) =
                trainer::retrain_validated(&init, &data, &val, &mcfg).map_err(runtime)?;
            (p, report.to_csv())
        }
        None => {
            let (p, losses) = trainer::retrain(&init, &data, &sched).map_err(runtime)?;
            (p, losses_csv(&losses))
        }
    };
    checkpoint::save(&params, &a.out).map_err(runtime)?;
    echo_for_file(res, "retrain", &a.out)?;
    if let Some(r) = &a.report {
        write_file(r, csv)?;
    }
    println!(
        "re-trained for {} steps -> {}",
        sched.steps,
        a.out.display()
    );
    Ok(())
}

fn meta_train(res: &mut Resolver, a: &MetaTrainArgs, ex: Exec) -> CliResult<()> {
    let init = load_ckpt(res, "ckpt", &a.ckpt)?;
    let data = load_data(res, "data", &a.data, init.arch().channels)?;
    let val = load_data(res, "val", &a.val, init.arch().channels)?;
    let acfg = resolve_inner(res, &a.inner, AdaptConfig::default())?;
    let d = MetaConfig::default();
    let mcfg = MetaConfig {
        beta: res.get("beta", a.beta, d.beta)?,
        batch: res.get("batch", a.batch, d.batch)?,
        max_outer_steps: res.get("steps", a.steps, d.max_outer_steps)?,
        optimizer: res.get("outer-optimizer", a.outer_optimizer, OptimizerKind::Adamax)?,
        seed: res.get("seed", a.seed, d.seed)?,
        exec: ex,
        ..d
    };
    let mcfg = resolve_plateau(res, &a.plateau, mcfg)?;
    let (params, report) =
        trainer::meta_train(&init, &data, &val, &acfg, &mcfg).map_err(runtime)?;
    checkpoint::save(&params, &a.out).map_err(runtime)?;
    echo_for_file(res, "meta-train", &a.out)?;
    if let Some(r) = &a.report {
        write_file(r, report.to_csv())?;
    }
    let last_val = report.steps.iter().rev().find_map(|r| r.val_loss);
    println!(
        "meta-trained for {} outer steps; validation loss {:.6} -> {:.6}; {} decay event(s)",
        report.steps.len(),
        report.initial_val_loss.unwrap_or(f64::NAN),
        last_val.or(report.initial_val_loss).unwrap_or(f64::NAN),
        report.decay_events.len()
    );
    Ok(())
}

/// Input frames (every `every`-th) and the skipped ground-truth frames.
fn load_input(
    res: &mut Resolver,
    a: &InputSeqArgs,
    channels: usize,
) -> CliResult<(Vec<SharedFrame>, Sequence, usize)> {
    res.note_path("seq", &a.seq);
    let every = res.get("every", a.every, 1usize)?;
    if every == 0 {
        return Err(CliError::Usage("--every must be at least 1".into()));
    }
    let all = ppm::load_sequence_as(&a.seq, channels).map_err(runtime)?;
    let input = all.iter().step_by(every).cloned().collect();
    Ok((input, all, every))
}

/// Mean PSNR of synthesized frames against skipped originals, when the input
/// was subsampled by 2.
fn report_psnr(
    every: usize,
    synthesized: &[(usize, &crate::Frame)],
    all: &Sequence,
) -> CliResult<Option<f64>> {
    if every != 2 {
        return Ok(None);
    }
    let mut vals = Vec::new();
    for &(gap, frame) in synthesized {
        if let Some(truth) = all.get(2 * gap + 1) {
            vals.push(eval::psnr(frame, truth).map_err(runtime)?);
        }
    }
    Ok((!vals.is_empty()).then(|| eval::mean(&vals)))
}

fn adapt_cmd(res: &mut Resolver, a: &AdaptArgs) -> CliResult<()> {
    let params = load_ckpt(res, "ckpt", &a.input.ckpt)?;
    let (input, all, every) = load_input(res, &a.input, params.arch().channels)?;
    let acfg = resolve_inner(res, &a.inner, AdaptConfig::default())?;
    let window = &input[..input.len().min(4)];
    let out = adapt::adapt_and_interpolate(&params, window, &acfg).map_err(runtime)?;
    let mut frames: Vec<&crate::Frame> = Vec::new();
    for (i, f) in window.iter().enumerate() {
        frames.push(f);
        if let Some(m) = out.frames.get(i) {
            frames.push(m);
        }
    }
    ppm::save_sequence(&frames, &a.input.out).map_err(runtime)?;
    echo_for_dir(res, "adapt", &a.input.out)?;
    let synthesized: Vec<(usize, &crate::Frame)> = out.frames.iter().enumerate().collect();
    match report_psnr(every, &synthesized, &all)? {
        Some(p) => println!(
            "wrote {} frames to {}; mean PSNR {p:.4} dB",
            frames.len(),
            a.input.out.display()
        ),
        None => println!("wrote {} frames to {}", frames.len(), a.input.out.display()),
    }
    Ok(())
}

fn interpolate(res: &mut Resolver, a: &InterpolateArgs, ex: Exec) -> CliResult<()> {
    let params = load_ckpt(res, "ckpt", &a.input.ckpt)?;
    let (input, all, every) = load_input(res, &a.input, params.arch().channels)?;
    let mut acfg = resolve_inner(res, &a.inner, AdaptConfig::default())?;
    if a.no_adapt {
        acfg = AdaptConfig::none();
        res.note("no-adapt", &true);
    }
    let stride = res.get(
        "window-stride",
        a.window_stride,
        WindowPolicy::default().stride,
    )?;
    let out = adapt::interpolate_sequence(&params, &input, &acfg, WindowPolicy { stride }, ex)
        .map_err(runtime)?;
    let frames: Vec<&crate::Frame> = out.iter().map(|f| &**f).collect();
    ppm::save_sequence(&frames, &a.input.out).map_err(runtime)?;
    echo_for_dir(res, "interpolate", &a.input.out)?;
    let synthesized: Vec<(usize, &crate::Frame)> = out
        .iter()
        .skip(1)
        .step_by(2)
        .map(|f| &**f)
        .enumerate()
        .collect();
    match report_psnr(every, &synthesized, &all)? {
        Some(p) => println!(
            "wrote {} frames to {}; mean PSNR {p:.4} dB",
            out.len(),
            a.input.out.display()
        ),
        None => println!("wrote {} frames to {}", out.len(), a.input.out.display()),
    }
    Ok(())
}

fn eval_cmd(res: &mut Resolver, a: &EvalArgs, ex: Exec) -> CliResult<()> {
    let baseline = load_ckpt(res, "baseline", &a.baseline)?;
    let retrained = load_ckpt(res, "retrained", &a.retrained)?;
    let meta = load_ckpt(res, "meta", &a.meta)?;
    let data = load_data(res, "data", &a.data, baseline.arch().channels)?;
    let acfg = resolve_inner(res, &a.inner, AdaptConfig::default())?;
    let table =
        eval::compare_modes(&baseline, &retrained, &meta, &data, &acfg, ex).map_err(runtime)?;
    write_file(&a.out, table.to_csv())?;
    echo_for_file(res, "eval", &a.out)?;
    for m in [eval::BASELINE, eval::RETRAINED, eval::META] {
        println!("{m:<14} {:.4} dB", table.mean_of(m).unwrap_or(f64::NAN));
    }
    Ok(())
}

fn ablate(res: &mut Resolver, a: &AblateArgs, ex: Exec) -> CliResult<()> {
    let mode = if a.mode == AblateMode::K { "k" } else { "lr" };
    let missing = |flag: &str| CliError::Usage(format!("--mode {mode} requires {flag}"));
    match a.mode {
        AblateMode::K => {
            res.note("mode", &"k");
            let meta = load_ckpt(
                res,
                "meta",
                a.meta.as_deref().ok_or_else(|| missing("--meta"))?,
            )?;
            let retrained = load_ckpt(
                res,
                "retrained",
                a.retrained
                    .as_deref()
                    .ok_or_else(|| missing("--retrained"))?,
            )?;
            let data = load_data(res, "data", &a.data, meta.arch().channels)?;
            let acfg = resolve_inner(res, &a.inner, AdaptConfig::default())?;
            let ks: Vec<usize> =
                parse_list(&res.get("ks", a.ks.clone(), "0,1,2,3,5".to_string())?, "ks")?;
            let grid = eval::ablate_inner_steps(
                &meta,
                &retrained,
                &data,
                acfg.alpha,
                acfg.optimizer,
                &ks,
                ex,
            )
            .map_err(runtime)?;
            write_file(&a.out, grid.to_csv())?;
            echo_for_file(res, "ablate", &a.out)?;
            print!("{}", grid.monotonicity_report());
        }
        AblateMode::Lr => {
            res.note("mode", &"lr");
            if a.entries.is_empty() {
                return Err(missing("at least one --entry ALPHA:CKPT"));
            }
            let mut models = Vec::new();
            for e in &a.entries {
                let (alpha, path) = e
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("--entry {e:?} must be ALPHA:CKPT")))?;
                let alpha: f64 = alpha
                    .parse()
                    .map_err(|_| CliError::Usage(format!("--entry {e:?}: bad alpha")))?;
                let p = load_ckpt(res, &format!("entry[{alpha:e}]"), Path::new(path))?;
                models.push((alpha, p));
            }
            let data = load_data(res, "data", &a.data, models[0].1.arch().channels)?;
            let d = AdaptConfig::default();
            let k = res.get("k", a.inner.k, d.k)?;
            let optimizer = res.get("inner-optimizer", a.inner.inner_optimizer, d.optimizer)?;
            let entries: Vec<(f64, &ModelParams)> = models.iter().map(|(a, p)| (*a, p)).collect();
            let grid = eval::ablate_lr(&entries, &data, k, optimizer, ex).map_err(runtime)?;
            write_file(&a.out, grid.to_csv())?;
            echo_for_file(res, "ablate", &a.out)?;
            for (alpha, p) in grid.alphas.iter().zip(&grid.psnr) {
                println!("alpha={alpha:e}: {p:.4} dB");
            }
        }
    }
    Ok(())
}

fn feasibility(res: &mut Resolver, a: &FeasibilityArgs) -> CliResult<()> {
    let params = load_ckpt(res, "ckpt", &a.ckpt)?;
    res.note_path("seq", &a.seq);
    let seq = ppm::load_sequence_as(&a.seq, params.arch().channels).map_err(runtime)?;
    let steps = res.get("steps", a.steps, 200usize)?;
    let lr = res.get("lr", a.lr, 1e-3)?;
    let optimizer = res.get("optimizer", a.optimizer, OptimizerKind::Adamax)?;
    let curve = eval::feasibility_curve(&params, &seq, lr, steps, optimizer).map_err(runtime)?;
    write_file(&a.out, curve.to_csv())?;
    echo_for_file(res, "feasibility", &a.out)?;
    println!(
        "initial PSNR {:.4} dB; max gain {:+.4} dB; +0.1 dB first reached at step {}",
        curve.initial_psnr,
        curve.max_delta(),
        curve
            .first_crossing(0.1)
            .map_or("never".to_string(), |s| s.to_string())
    );
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
