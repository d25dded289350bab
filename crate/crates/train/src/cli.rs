//! Command-line surface. Settings resolve as defaults of the chosen
//! profile, then the `--config` file, then `--set` overrides and explicit
//! flags.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hrmedseg_core::cost::{self, anchor_text, cost_report, scaling_report, Mode};
use hrmedseg_core::data::{self, load_checkpoint, read_image_pnm, write_mask_pgm};
use hrmedseg_core::decoder::hard_labels;
use hrmedseg_core::encoder::{dgla_factored, dgla_naive};
use hrmedseg_core::Model;
use hrmedseg_tensor::Tensor;

use crate::bench::{bench_attn, bench_text};
use crate::config::{parse_assignment, parse_pairs, TrainConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck_all, report_text, uniform};
use crate::train::{
    dump_teacher_features, evaluate, teacher_for, load_data, targets_from_file, teacher_targets, train_distill, train_segmentation,
};

#[derive(Debug, Parser)]
#[command(name = "hrmedseg", about = "Memory-efficient segmentation: training, analysis and checks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `toy` or `paper`.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segmentation training on the configured dataset.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Feature distillation of encoder and neck against the teacher.
    Distill {
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the stand-in teacher's features here and exit.
        #[arg(long)]
        dump_teacher: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Mask prediction for one PPM/PGM image.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice and mIoU of a checkpoint on the validation split.
    Eval,
    /// Analytic parameter, FLOP and memory report.
    Analyze {
        #[arg(long, default_value_t = 1024)]
        height: usize,
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        element_bytes: usize,
        /// Inference-mode liveness instead of training mode.
        #[arg(long)]
        inference: bool,
        /// Emit the per-layer table as CSV.
        #[arg(long)]
        csv: bool,
        /// Comma-separated square sides for a scaling table.
        #[arg(long, value_delimiter = ',')]
        scaling: Vec<usize>,
    },
    /// Finite-difference checks of every block family.
    Gradcheck,
    /// Quick end-to-end health check.
    Selftest,
    /// Measured attention time against modeled FLOPs.
    BenchAttn {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 96)]
        c: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<TrainConfig> {
    let mut pairs = Vec::new();
    if let Some(p) = &common.config {
        pairs.extend(parse_pairs(&std::fs::read_to_string(p)?)?);
    }
    if let Some(p) = &common.profile {
        pairs.push(("profile".into(), p.clone()));
    }
    for s in &common.set {
        pairs.push(parse_assignment(s)?);
    }
    if let Some(s) = common.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if let Some(c) = &common.checkpoint {
        pairs.push(("checkpoint".into(), c.display().to_string()));
    }
    for (k, v) in extra {
        if let Some(v) = v {
            pairs.push((k.to_string(), v.clone()));
        }
    }
    let mut cfg = TrainConfig::default();
    cfg.apply(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn model_from_checkpoint(cfg: &TrainConfig) -> Result<Model> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("a checkpoint path is required (--checkpoint)".into()))?;
    Ok(Model::with_params(cfg.model.clone(), load_checkpoint(path)?)?)
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let common = &cli.common;
    match &cli.command {
        Command::Train { epochs, lr, metrics } => {
            let cfg = resolve(
                common,
                &[
                    ("epochs", epochs.map(|v| v.to_string())),
                    ("lr", lr.map(|v| v.to_string())),
                    ("metrics", path_str(metrics)),
                ],
            )?;
            let (train, val) = load_data(&cfg)?;
            writeln!(out, "epoch,loss,dice,miou,lr,seconds")?;
            let outcome = train_segmentation(&cfg, &train, &val, |r| {
                let _ = writeln!(
                    out,
                    "{},{:.6},{:.4},{:.4},{:e},{:.2}",
                    r.epoch,
                    r.loss,
                    r.dice.unwrap_or(f64::NAN),
                    r.miou.unwrap_or(f64::NAN),
                    r.lr,
                    r.seconds
                );
            })?;
            writeln!(out, "best val dice {:.4}", outcome.best_dice)?;
            Ok(0)
        }
        Command::Distill {
            epochs,
            dump_teacher,
            metrics,
        } => {
            let cfg = resolve(
                common,
                &[
                    ("distill_epochs", epochs.map(|v| v.to_string())),
                    ("metrics", path_str(metrics)),
                ],
            )?;
            let (train, _) = load_data(&cfg)?;
            if let Some(path) = dump_teacher {
                let targets = teacher_targets(&teacher_for(&cfg)?, &train, cfg.batch_size)?;
                dump_teacher_features(path, &train, &targets)?;
                writeln!(out, "wrote {} feature maps to {}", targets.len(), path.display())?;
                return Ok(0);
            }
            let targets = match &cfg.teacher_features {
                Some(p) => targets_from_file(p, &train, &cfg)?,
                None => teacher_targets(&teacher_for(&cfg)?, &train, cfg.batch_size)?,
            };
            let mut model = Model::new(cfg.model.clone())?;
            let history = train_distill(&cfg, &mut model, &train, &targets, cfg.distill_epochs, |r| {
                let _ = writeln!(out, "epoch {} mse {:.6} lr {:e}", r.epoch, r.loss, r.lr);
            })?;
            if let Some(init) = history.initial_loss {
                writeln!(out, "initial mse {init:.6}")?;
            }
            if let Some(p) = &cfg.checkpoint {
                data::save_checkpoint(&model.params, p)?;
            }
            if let Some(p) = &cfg.metrics {
                history.write_csv(p)?;
            }
            Ok(0)
        }
        Command::Infer { image, out: dest } => {
            let cfg = resolve(common, &[])?;
            let model = model_from_checkpoint(&cfg)?;
            let img = read_image_pnm(image)?;
            let (h, w) = (img.shape()[1], img.shape()[2]);
            let x = img.reshape(&[1, 3, h, w])?;
            let labels = hard_labels(&model.forward(&x)?.detach())?;
            write_mask_pgm(dest, &labels[0], w, h, cfg.model.c2)?;
            let fg = labels[0].iter().filter(|&&k| k != 0).count();
            writeln!(out, "wrote {} ({fg} foreground pixels of {})", dest.display(), h * w)?;
            Ok(0)
        }
        Command::Eval => {
            let cfg = resolve(common, &[])?;
            let model = model_from_checkpoint(&cfg)?;
            let (_, val) = load_data(&cfg)?;
            let (dice, iou) = evaluate(&model, &val, cfg.batch_size)?;
            writeln!(out, "samples {}\ndice {dice:.4}\nmiou {iou:.4}", val.len())?;
            Ok(0)
        }
        Command::Analyze {
            height,
            width,
            batch,
            element_bytes,
            inference,
            csv,
            scaling,
        } => {
            let cfg = resolve(common, &[])?;
            let mode = if *inference { Mode::Inference } else { Mode::Training };
            let report = cost_report(&cfg.model, *height, *width, *batch, *element_bytes, mode)?;
            if *csv {
                write!(out, "{}", report.to_csv())?;
                return Ok(0);
            }
            write!(out, "{}", report.to_text())?;
            let per_image = cost::estimate_flops(&cfg.model, *height, *width, 1)?.0;
            writeln!(out)?;
            write!(out, "{}", anchor_text(&report, per_image))?;
            if !scaling.is_empty() {
                writeln!(out)?;
                write!(out, "{}", scaling_report(&cfg.model, scaling, *batch, mode)?.to_text())?;
            }
            Ok(0)
        }
        Command::Gradcheck => {
            let checks = gradcheck_all()?;
            write!(out, "{}", report_text(&checks))?;
            Ok(if checks.iter().all(|c| c.passed()) { 0 } else { 1 })
        }
        Command::Selftest => selftest(out),
        Command::BenchAttn { n_list, d, c, reps } => {
            write!(out, "{}", bench_text(&bench_attn(n_list, *d, *c, *reps)?))?;
            Ok(0)
        }
    }
}

fn selftest(out: &mut dyn Write) -> Result<i32> {
    let mut failures = 0;
    let mut line = |name: &str, ok: bool, out: &mut dyn Write| -> Result<()> {
        failures += usize::from(!ok);
        writeln!(out, "{} {name}", if ok { "ok  " } else { "FAIL" })?;
        Ok(())
    };

    let (q, k, v) = (uniform(&[16, 4], -1.0, 1.0, 1), uniform(&[16, 4], -1.0, 1.0, 2), uniform(&[16, 5], -1.0, 1.0, 3));
    let naive = dgla_naive(&q, &k, &v)?.output;
    let fast = dgla_factored(&q, &k, &v)?;
    let diff = naive.data().iter().zip(fast.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    line("factored attention matches the quadratic reference", diff < 1e-5, out)?;

    let checks = gradcheck_all()?;
    line("gradient checks", checks.iter().all(|c| c.passed()), out)?;

    let cfg = hrmedseg_core::ModelConfig::toy();
    let model = Model::new(cfg.clone())?;
    line(
        "parameter count matches the cost model",
        cost::count_params(&cfg)?.0 == model.num_params() as u64,
        out,
    )?;

    let dir = std::env::temp_dir().join(format!("hrmedseg-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    data::save_checkpoint(&model.params, &path)?;
    let loaded = load_checkpoint(&path)?;
    let same = model
        .params
        .iter()
        .all(|(n, t)| loaded.get(n).map(|u| u.data() == t.data()).unwrap_or(false));
    line("checkpoint round trip", same && loaded.len() == model.params.len(), out)?;
    let _ = std::fs::remove_dir_all(&dir);

    let x = Tensor::new(&[1, 3, 64, 64], uniform(&[3 * 64 * 64], 0.0, 1.0, 4).data().to_vec())?;
    let p = model.forward(&x)?;
    line("mask probabilities in (0,1)", p.data().iter().all(|&v| v > 0.0 && v < 1.0), out)?;

    writeln!(out, "{failures} failure(s)")?;
    Ok(if failures == 0 { 0 } else { 1 })
}
