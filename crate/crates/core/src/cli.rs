//! Command-line front end. Each command is first resolved into an
//! [`Invocation`] (inputs plus the fully resolved [`RunConfig`]); every
//! output gets a JSON sidecar holding that invocation, so `rerun` can
//! reproduce it.

use std::ffi::OsString;
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::applications::{
    build_mask, compose, crowd_seed, generate_crowd, harmonize, HarmonizationSpec, LowPass, RoiMask,
};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, CHECKPOINT_KEYS};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::motion::{bundled_walk, read_bvh_file, write_bvh_file, ContactSpec, MotionSequence, Normalizer};
use crate::trainer::{StepOutcome, Trainer, TrainingSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sinmotion",
    version,
    about = "Train a diffusion model on one motion; sample and edit variations"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Config sources shared by all commands: an optional file, then explicit
/// flags. Hyperparameter-table flags keep their underscore names.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any config key, repeatable: `--set lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long = "num_channels")]
    pub num_channels: Option<String>,
    #[arg(long = "channel_mult")]
    pub channel_mult: Option<String>,
    #[arg(long = "num_res_blocks")]
    pub num_res_blocks: Option<String>,
    #[arg(long = "kernel_size")]
    pub kernel_size: Option<String>,
    #[arg(long = "use_scale_shift_norm")]
    pub use_scale_shift_norm: Option<String>,
    #[arg(long = "head_dim")]
    pub head_dim: Option<String>,
    #[arg(long = "num_heads")]
    pub num_heads: Option<String>,
    #[arg(long = "diffusion_steps")]
    pub diffusion_steps: Option<String>,
    #[arg(long = "noise_schedule")]
    pub noise_schedule: Option<String>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<String>,
    #[arg(long = "dropout")]
    pub dropout: Option<String>,
    #[arg(long = "lr")]
    pub lr: Option<String>,
    #[arg(long = "lr_gamma")]
    pub lr_gamma: Option<String>,
    #[arg(long = "num_steps")]
    pub num_steps: Option<String>,
    #[arg(long = "padding_mode")]
    pub padding_mode: Option<String>,
    #[arg(long = "warmup_steps")]
    pub warmup_steps: Option<String>,
    #[arg(long = "weight_decay")]
    pub weight_decay: Option<String>,
    #[arg(long = "qna_window")]
    pub qna_window: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, &str)> {
        let flags: [(&'static str, &Option<String>); 19] = [
            ("num_channels", &self.num_channels),
            ("channel_mult", &self.channel_mult),
            ("num_res_blocks", &self.num_res_blocks),
            ("kernel_size", &self.kernel_size),
            ("use_scale_shift_norm", &self.use_scale_shift_norm),
            ("head_dim", &self.head_dim),
            ("num_heads", &self.num_heads),
            ("diffusion_steps", &self.diffusion_steps),
            ("noise_schedule", &self.noise_schedule),
            ("batch_size", &self.batch_size),
            ("dropout", &self.dropout),
            ("lr", &self.lr),
            ("lr_gamma", &self.lr_gamma),
            ("num_steps", &self.num_steps),
            ("padding_mode", &self.padding_mode),
            ("warmup_steps", &self.warmup_steps),
            ("weight_decay", &self.weight_decay),
            ("qna_window", &self.qna_window),
            ("seed", &self.seed),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    /// `base`, then the file, then `--set`, then named flags, then `extra`.
    pub fn resolve(&self, base: RunConfig, extra: &[(&str, String)]) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => base.with_file(p)?,
            None => base,
        };
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
            pairs.push((k.trim(), v.trim()));
        }
        pairs.extend(self.flag_pairs());
        pairs.extend(extra.iter().map(|(k, v)| (*k, v.as_str())));
        cfg = cfg.with_overrides(pairs)?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one BVH motion (or the bundled synthetic walk).
    Train {
        /// Input BVH; omit together with --synthetic to use the bundled walk.
        input: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        /// Start from the small smoke-test configuration.
        #[arg(long)]
        smoke: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Comma-separated contact joints (default: names with foot/toe).
        #[arg(long = "contact-joints")]
        contact_joints: Option<String>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sample one or more motions.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Length in frames (default: training length).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Keep parts of a reference motion and synthesize the rest.
    Compose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Kept frame ranges, e.g. `0..40,260..300`.
        #[arg(long = "keep-frames")]
        keep_frames: Option<String>,
        /// Kept feature groups: joint names, `root_position`, `rotations`, `contacts`.
        #[arg(long = "keep-joints")]
        keep_joints: Option<String>,
        #[arg(long)]
        ramp: Option<usize>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-synthesize a content motion in the learned style, keeping its low frequencies.
    Harmonize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long = "filter-factor")]
        filter_factor: Option<usize>,
        /// Injected frame range, e.g. `100..200` (default: all frames).
        #[arg(long)]
        window: Option<String>,
        /// Test mode: a zero low-pass filter, equivalent to plain sampling.
        #[arg(long = "zero-filter")]
        zero_filter: bool,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Window metrics of generated BVH files against the input motion.
    Eval {
        #[arg(long)]
        input: PathBuf,
        /// Directory of generated `.bvh` files.
        #[arg(long)]
        generated: PathBuf,
        /// Report path (`.json`); a `.csv` is written beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "window-len")]
        window_len: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-run the command recorded in an output's sidecar.
    Rerun {
        sidecar: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

/// A fully resolved command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Train {
        /// `None` trains on the bundled walk.
        input: Option<PathBuf>,
        resume: Option<PathBuf>,
        contact_joints: Option<Vec<String>>,
        config: RunConfig,
    },
    Sample {
        checkpoint: PathBuf,
        frames: Option<usize>,
        count: usize,
        config: RunConfig,
    },
    Compose {
        checkpoint: PathBuf,
        reference: PathBuf,
        keep_frames: Vec<Range<usize>>,
        keep_joints: Vec<String>,
        config: RunConfig,
    },
    Harmonize {
        checkpoint: PathBuf,
        content: PathBuf,
        window: Option<Range<usize>>,
        zero_filter: bool,
        config: RunConfig,
    },
    Eval {
        input: PathBuf,
        generated: PathBuf,
        report_name: String,
        config: RunConfig,
    },
}

impl Invocation {
    pub fn config(&self) -> &RunConfig {
        match self {
            Invocation::Train { config, .. }
            | Invocation::Sample { config, .. }
            | Invocation::Compose { config, .. }
            | Invocation::Harmonize { config, .. }
            | Invocation::Eval { config, .. } => config,
        }
    }
}

/// Written beside every output as `<stem>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub output: String,
    /// Seed that drove this particular output.
    pub seed: u64,
    pub invocation: Invocation,
    pub details: serde_json::Value,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parses `a..b` (also `a-b`) ranges separated by commas.
pub fn parse_ranges(s: &str) -> Result<Vec<Range<usize>>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once("..")
                .or_else(|| p.split_once('-'))
                .ok_or_else(|| Error::Config(format!("range '{p}' is not of the form a..b")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad range bound in '{p}'")))
            };
            Ok(parse(a)?..parse(b)?)
        })
        .collect()
}

fn split_names(s: &Option<String>) -> Vec<String> {
    s.iter()
        .flat_map(|v| v.split(','))
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .collect()
}

/// Resolves `cfg` on top of the checkpoint's own settings; those may not
/// be overridden.
fn resolve_for_checkpoint(cfg: &ConfigArgs, checkpoint: &Path, extra: &[(&str, String)]) -> Result<RunConfig> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let base = RunConfig::default().adopt(ckpt.model.config(), &ckpt.train);
    let config = cfg.resolve(base.clone(), extra)?;
    config.ensure_same(&base, CHECKPOINT_KEYS)?;
    Ok(config)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

impl Command {
    /// Resolves paths and config; returns the invocation and output dir.
    pub fn resolve(self) -> Result<Option<(Invocation, PathBuf)>> {
        Ok(Some(match self {
            Command::Train {
                input,
                synthetic,
                smoke,
                resume,
                contact_joints,
                out_dir,
                cfg,
            } => {
                if input.is_some() && synthetic {
                    return Err(Error::Config(
                        "give either an input BVH or --synthetic, not both".into(),
                    ));
                }
                if input.is_none() && !synthetic && resume.is_none() {
                    return Err(Error::Config(
                        "train needs an input BVH, --synthetic or --resume".into(),
                    ));
                }
                let mut base = if smoke {
                    RunConfig::smoke()
                } else {
                    RunConfig::default()
                };
                if let Some(path) = &resume {
                    let ckpt = Checkpoint::load(path)?;
                    base = RunConfig {
                        seed: ckpt.train.seed,
                        ..base.adopt(ckpt.model.config(), &ckpt.train)
                    };
                }
                let config = cfg.resolve(base.clone(), &[])?;
                if resume.is_some() {
                    let mut keys = CHECKPOINT_KEYS.to_vec();
                    keys.push("seed");
                    config.ensure_same(&base, &keys)?;
                }
                let names = split_names(&contact_joints);
                (
                    Invocation::Train {
                        input: input.as_deref().map(absolute).transpose()?,
                        resume: resume.as_deref().map(absolute).transpose()?,
                        contact_joints: (!names.is_empty()).then_some(names),
                        config,
                    },
                    out_dir,
                )
            }
            Command::Sample {
                checkpoint,
                frames,
                count,
                out_dir,
                cfg,
            } => (
                Invocation::Sample {
                    checkpoint: absolute(&checkpoint)?,
                    frames,
                    count,
                    config: resolve_for_checkpoint(&cfg, &checkpoint, &[])?,
                },
                out_dir,
            ),
            Command::Compose {
                checkpoint,
                reference,
                keep_frames,
                keep_joints,
                ramp,
                out_dir,
                cfg,
            } => {
                let extra: Vec<(&str, String)> = ramp.map(|r| ("ramp_frames", r.to_string())).into_iter().collect();
                (
                    Invocation::Compose {
                        checkpoint: absolute(&checkpoint)?,
                        reference: absolute(&reference)?,
                        keep_frames: keep_frames
                            .as_deref()
                            .map(parse_ranges)
                            .transpose()?
                            .unwrap_or_default(),
                        keep_joints: split_names(&keep_joints),
                        config: resolve_for_checkpoint(&cfg, &checkpoint, &extra)?,
                    },
                    out_dir,
                )
            }
            Command::Harmonize {
                checkpoint,
                content,
                filter_factor,
                window,
                zero_filter,
                out_dir,
                cfg,
            } => {
                let extra: Vec<(&str, String)> = filter_factor
                    .map(|f| ("filter_factor", f.to_string()))
                    .into_iter()
                    .collect();
                let window = match window.as_deref().map(parse_ranges).transpose()? {
                    None => None,
                    Some(mut v) if v.len() == 1 => v.pop(),
                    Some(_) => return Err(Error::Config("--window takes a single range".into())),
                };
                (
                    Invocation::Harmonize {
                        checkpoint: absolute(&checkpoint)?,
                        content: absolute(&content)?,
                        window,
                        zero_filter,
                        config: resolve_for_checkpoint(&cfg, &checkpoint, &extra)?,
                    },
                    out_dir,
                )
            }
            Command::Eval {
                input,
                generated,
                out,
                window_len,
                stride,
                tau,
                cfg,
            } => {
                let mut extra: Vec<(&str, String)> = Vec::new();
                if let Some(w) = window_len {
                    extra.push(("window_len", w.to_string()));
                }
                if let Some(s) = stride {
                    extra.push(("stride", s.to_string()));
                }
                if let Some(t) = tau {
                    extra.push(("tau", t.to_string()));
                }
                let report_name = out
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| Error::Config("--out must name a file".into()))?
                    .to_string();
                let dir = out
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(Path::new("."))
                    .to_path_buf();
                (
                    Invocation::Eval {
                        input: absolute(&input)?,
                        generated: absolute(&generated)?,
                        report_name,
                        config: cfg.resolve(RunConfig::default(), &extra)?,
                    },
                    dir,
                )
            }
            Command::Rerun { sidecar, out_dir } => (Sidecar::load(&sidecar)?.invocation, out_dir),
        }))
    }
}

fn tool() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_sidecar(dir: &Path, output: &str, seed: u64, inv: &Invocation, details: serde_json::Value) -> Result<PathBuf> {
    let stem = Path::new(output).file_stem().and_then(|s| s.to_str()).unwrap_or(output);
    let path = dir.join(format!("{stem}.json"));
    let side = Sidecar {
        tool: tool(),
        output: output.to_string(),
        seed,
        invocation: inv.clone(),
        details,
    };
    write_text(&path, &serde_json::to_string_pretty(&side)?)?;
    Ok(path)
}

/// Single-output commands sample with crowd member 0's seed, so that they
/// line up with `sample --count 1`.
pub fn single_output_seed(config: &RunConfig) -> u64 {
    crowd_seed(config.seed, 0)
}

/// Loads a BVH with the contact joints of `checkpoint`'s skeleton.
pub fn load_like(ckpt: &Checkpoint, path: &Path, config: &RunConfig) -> Result<MotionSequence> {
    let names: Vec<String> = ckpt
        .skeleton
        .contact_joints()
        .iter()
        .map(|&j| ckpt.skeleton.joints()[j].name.clone())
        .collect();
    let spec = if names.is_empty() {
        ContactSpec::None
    } else {
        ContactSpec::Named(names)
    };
    read_bvh_file(path)?.to_motion(&spec, config.contact_threshold)
}

/// Runs `inv`, writing every output into `out_dir`; returns written files.
pub fn run(inv: &Invocation, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = inv.config();
    let mut files = vec![out_dir.join(RUN_CONFIG_FILE)];
    write_text(&files[0], &config.to_text())?;
    match inv {
        Invocation::Train {
            input,
            resume,
            contact_joints,
            config,
        } => {
            let (mut trainer, source) = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    let source = TrainingSource {
                        motion: ckpt.training_motion()?,
                        normalizer: ckpt.normalizer.clone(),
                    };
                    let mut t = Trainer::resume(&ckpt)?;
                    t.set_num_steps(config.num_steps);
                    (t, source)
                }
                None => {
                    let motion = match input {
                        Some(p) => {
                            let spec = match contact_joints {
                                Some(n) => ContactSpec::Named(n.clone()),
                                None => ContactSpec::Auto,
                            };
                            read_bvh_file(p)?.to_motion(&spec, config.contact_threshold)?
                        }
                        None => bundled_walk(),
                    };
                    let model = config.model_config(motion.features())?;
                    let source = TrainingSource::new(motion);
                    (
                        Trainer::new(model, source.normalized()?, config.train_config())?,
                        source,
                    )
                }
            };
            let every = config.checkpoint_every;
            let mut saved = Vec::new();
            let result = trainer.run(|t, outcome| {
                if let StepOutcome::Updated(r) = outcome {
                    if every > 0 && r.step % every == 0 && r.step < t.config().num_steps {
                        let p = out_dir.join(format!("model_step{}.ckpt", r.step));
                        t.checkpoint(&source).save(&p)?;
                        saved.push(p);
                    }
                }
                Ok(())
            });
            let loss_path = out_dir.join(LOSS_FILE);
            trainer.report().write_csv_file(&loss_path, config.log_every)?;
            files.push(loss_path);
            files.extend(saved);
            result?;
            let model_path = out_dir.join(MODEL_FILE);
            trainer.checkpoint(&source).save(&model_path)?;
            files.push(model_path);
            let rep = trainer.report();
            let details = serde_json::json!({
                "steps": trainer.steps_done(),
                "skipped_steps": rep.skipped_steps,
                "parameter_count": trainer.model().parameter_count(),
                "first_loss": rep.records.first().map(|r| r.loss),
                "last_loss": rep.records.last().map(|r| r.loss),
            });
            files.push(write_sidecar(out_dir, MODEL_FILE, config.seed, inv, details)?);
        }
        Invocation::Sample {
            checkpoint,
            frames,
            count,
            config,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let schedule = ckpt.train.schedule()?;
            let n = frames.unwrap_or(ckpt.train_frames());
            ckpt.model.config().check_frames(n)?;
            let xs = generate_crowd(
                || ckpt.model.predictor(),
                &schedule,
                *count,
                n,
                ckpt.features(),
                config.seed,
                config.sampler(),
            )?;
            for (i, x) in xs.iter().enumerate() {
                let name = format!("sample_{i:03}.bvh");
                let path = out_dir.join(&name);
                write_bvh_file(&ckpt.to_motion(x)?, &path)?;
                files.push(path);
                let details = serde_json::json!({ "index": i, "frames": n });
                files.push(write_sidecar(out_dir, &name, crowd_seed(config.seed, i), inv, details)?);
            }
        }
        Invocation::Compose {
            checkpoint,
            reference,
            keep_frames,
            keep_joints,
            config,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let y = ckpt.normalize(&load_like(&ckpt, reference, config)?)?;
            let n = y.shape()[0];
            ckpt.model.config().check_frames(n)?;
            let joints: Vec<&str> = keep_joints.iter().map(String::as_str).collect();
            let mask: RoiMask = build_mask(n, &ckpt.layout, keep_frames, &joints, config.ramp_frames)?;
            let seed = single_output_seed(config);
            let x = compose(
                &mut ckpt.model.predictor(),
                &ckpt.train.schedule()?,
                &y,
                &mask,
                seed,
                config.sampler(),
            )?;
            let name = "composed.bvh";
            let path = out_dir.join(name);
            write_bvh_file(&ckpt.to_motion(&x)?, &path)?;
            files.push(path);
            let details = serde_json::json!({
                "frames": n,
                "keep_frames": keep_frames,
                "keep_joints": keep_joints,
                "ramp_frames": config.ramp_frames,
            });
            files.push(write_sidecar(out_dir, name, seed, inv, details)?);
        }
        Invocation::Harmonize {
            checkpoint,
            content,
            window,
            zero_filter,
            config,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let y = ckpt.normalize(&load_like(&ckpt, content, config)?)?;
            ckpt.model.config().check_frames(y.shape()[0])?;
            let spec = HarmonizationSpec {
                filter: if *zero_filter {
                    LowPass::Zero
                } else {
                    LowPass::Resample(config.filter_factor)
                },
                frames: window.clone(),
            };
            let seed = single_output_seed(config);
            let x = harmonize(
                &mut ckpt.model.predictor(),
                &ckpt.train.schedule()?,
                None,
                &y,
                &spec,
                seed,
                config.sampler(),
            )?;
            let name = "harmonized.bvh";
            let path = out_dir.join(name);
            write_bvh_file(&ckpt.to_motion(&x)?, &path)?;
            files.push(path);
            files.push(write_sidecar(out_dir, name, seed, inv, serde_json::to_value(&spec)?)?);
        }
        Invocation::Eval {
            input,
            generated,
            report_name,
            config,
        } => {
            let (report, names) = eval_files(input, generated, config)?;
            let path = out_dir.join(report_name);
            let json = serde_json::json!({
                "config": config,
                "eval": config.eval_config(),
                "input": input,
                "generated": names,
                "report": report,
            });
            write_text(&path, &serde_json::to_string_pretty(&json)?)?;
            files.push(path.clone());
            let csv_path = path.with_extension("csv");
            let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            report.write_csv(file)?;
            files.push(csv_path);
        }
    }
    Ok(files)
}

/// Loads the input and every generated `.bvh` (sorted by name), normalizes
/// all of them with the input's statistics and evaluates.
pub fn eval_files(input: &Path, generated_dir: &Path, config: &RunConfig) -> Result<(MetricsReport, Vec<String>)> {
    let bvh = read_bvh_file(input)?;
    let motion = bvh.to_motion(&ContactSpec::Auto, config.contact_threshold)?;
    let names: Vec<String> = motion
        .skeleton()
        .contact_joints()
        .iter()
        .map(|&j| motion.skeleton().joints()[j].name.clone())
        .collect();
    let spec = if names.is_empty() {
        ContactSpec::None
    } else {
        ContactSpec::Named(names)
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(generated_dir)
        .map_err(|e| Error::io(generated_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("bvh")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .bvh files in {}", generated_dir.display())));
    }
    let normalizer = Normalizer::fit(motion.dynamics());
    let mut gens: Vec<Array2<f64>> = Vec::new();
    for p in &paths {
        let g = read_bvh_file(p)?.to_motion(&spec, config.contact_threshold)?;
        if g.layout() != motion.layout() {
            return Err(Error::shape(format!(
                "{} has a different skeleton than the input",
                p.display()
            )));
        }
        gens.push(normalizer.normalize(g.dynamics())?);
    }
    let input_n = normalizer.normalize(motion.dynamics())?;
    let report = evaluate(&input_n, &gens, &config.eval_config())?;
    let names = paths
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    Ok((report, names))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = cli.command.resolve().and_then(|r| match r {
        Some((inv, dir)) => run(&inv, &dir),
        None => Ok(Vec::new()),
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
