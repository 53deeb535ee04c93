//! Command implementations behind the `maffsrn` binary. Every command
//! returns a JSON value for stdout; progress goes to stderr.

pub mod args;
pub mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use maffsrn::complexity::{analyze, Resolution};
use maffsrn::imaging::{make_pair, psnr, read_png, rgb_to_y, ssim, write_png, Dataset, Image};
use maffsrn::model::{load_checkpoint, save_checkpoint};
use maffsrn::training::{self, smoke, EpochStats, GradcheckOptions, TrainConfig};
use maffsrn::{NetConfig, Network};
use rayon::prelude::*;
use serde_json::{json, Value};

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, Context, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};

pub const THREADS_ENV: &str = "MAFFSRN_THREADS";

/// Loss ratio the smoke run must reach.
pub const SMOKE_MAX_RATIO: f64 = 0.5;

pub fn run(cli: Cli) -> CliResult<Value> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Degrade(a) => cmd_degrade(a),
        Command::Sr(a) => cmd_sr(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Train(a) => cmd_train(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Init(a) => cmd_init(a),
    }
}

/// Sizes the global thread pool from `MAFFSRN_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size thread pool: {e}")))
}

/// JSON has no infinity; identical images report PSNR as the string "inf".
pub fn metric(v: f64) -> Value {
    if v.is_infinite() && v > 0.0 {
        json!("inf")
    } else {
        json!(v)
    }
}

pub fn load_config(path: Option<&Path>) -> CliResult<NetConfig> {
    let Some(path) = path else {
        return Ok(NetConfig::default());
    };
    let text = fs::read_to_string(path).code(EXIT_USAGE, format!("reading config {}", path.display()))?;
    NetConfig::from_json(&text).code(EXIT_USAGE, format!("parsing config {}", path.display()))
}

fn load_network(path: &Path) -> CliResult<Network> {
    load_checkpoint(path).code(EXIT_DATA, format!("loading checkpoint {}", path.display()))
}

fn read_image(path: &Path) -> CliResult<Image> {
    read_png(path).code(EXIT_DATA, format!("reading {}", path.display()))
}

fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    write_png(path, img).code(EXIT_DATA, format!("writing {}", path.display()))
}

fn cmd_analyze(a: args::AnalyzeArgs) -> CliResult<Value> {
    let cfg = load_config(a.config.as_deref())?;
    let hr: Resolution = a.hr.parse::<Resolution>().code(EXIT_USAGE, "--hr")?;
    let report = analyze(&cfg, hr).code(EXIT_USAGE, "analysis")?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn cmd_degrade(a: args::DegradeArgs) -> CliResult<Value> {
    if !(1..=8).contains(&a.scale) {
        return Err(CliError::usage(format!(
            "scale must be between 1 and 8, got {}",
            a.scale
        )));
    }
    let hr = read_image(&a.input)?;
    if hr.width() < a.scale || hr.height() < a.scale {
        return Err(CliError::data(format!(
            "{}x{} image is smaller than the scale {}",
            hr.width(),
            hr.height(),
            a.scale
        )));
    }
    let pair = make_pair(&hr, a.scale).code(EXIT_DATA, "degrading")?;
    write_image(&a.output, &pair.lr)?;
    Ok(json!({
        "input": a.input,
        "output": a.output,
        "scale": a.scale,
        "hr_size": [pair.hr.width(), pair.hr.height()],
        "lr_size": [pair.lr.width(), pair.lr.height()],
    }))
}

fn upscale(net: &Network, img: &Image) -> CliResult<Image> {
    if img.channels() != net.config().colors {
        return Err(CliError::data(format!(
            "image has {} channels, the network expects {}",
            img.channels(),
            net.config().colors
        )));
    }
    net.upscale(img).code(EXIT_DATA, "super-resolving").map_err(|e| {
        // keep numeric failures distinguishable
        match e.error.downcast_ref::<maffsrn::Error>() {
            Some(inner) if error::classify(inner) == EXIT_NUMERIC => CliError::new(EXIT_NUMERIC, e.error),
            _ => e,
        }
    })
}

fn cmd_sr(a: args::SrArgs) -> CliResult<Value> {
    let net = load_network(&a.ckpt)?;
    let lr = read_image(&a.input)?;
    let start = Instant::now();
    let sr = upscale(&net, &lr)?;
    let elapsed = start.elapsed();
    write_image(&a.output, &sr)?;
    Ok(json!({
        "output": a.output,
        "scale": net.config().scale,
        "input_size": [lr.width(), lr.height()],
        "output_size": [sr.width(), sr.height()],
        "elapsed_ms": elapsed.as_secs_f64() * 1e3,
    }))
}

/// PSNR and SSIM between the Y channels of two 8-bit images.
pub fn evaluate_y(sr: &Image, hr: &Image, border: usize) -> maffsrn::Result<(f64, f64)> {
    let (a, b) = (rgb_to_y(sr), rgb_to_y(hr));
    Ok((psnr(&a, &b, border)?, ssim(&a, &b)?))
}

fn cmd_eval(a: args::EvalArgs) -> CliResult<Value> {
    let net = load_network(&a.ckpt)?;
    let scale = net.config().scale;
    if let Some(s) = a.scale {
        if s != scale {
            return Err(CliError::usage(format!("--scale {s} but the checkpoint is x{scale}")));
        }
    }
    let border = a.border.unwrap_or(scale);
    let data = Dataset::from_hr_dir(&a.hr_dir, scale).code(EXIT_DATA, format!("loading {}", a.hr_dir.display()))?;

    let rows: Vec<(f64, f64)> = data
        .pairs
        .par_iter()
        .map(|pair| {
            let sr = upscale(&net, &pair.lr)?;
            evaluate_y(&sr, &pair.hr, border).code(EXIT_DATA, "scoring")
        })
        .collect::<CliResult<_>>()?;

    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let images: Vec<Value> = data
        .names
        .iter()
        .zip(&rows)
        .map(|(name, (p, s))| json!({"name": name, "psnr": metric(*p), "ssim": s}))
        .collect();
    for (name, (p, s)) in data.names.iter().zip(&rows) {
        eprintln!("{name}: {p:.4} dB, SSIM {s:.4}");
    }
    Ok(json!({
        "scale": scale,
        "border": border,
        "channel": "y",
        "images": images,
        "mean_psnr": metric(mean_psnr),
        "mean_ssim": mean_ssim,
    }))
}

fn write_curve(path: &Path, curve: &[EpochStats]) -> CliResult<()> {
    let mut out = String::from("epoch,lr,loss\n");
    for s in curve {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.lr, s.loss));
    }
    fs::write(path, out).at(format!("writing {}", path.display()))
}

fn cmd_train(a: args::TrainArgs) -> CliResult<Value> {
    if a.smoke {
        return train_smoke(&a);
    }
    let data_dir = a
        .data_dir
        .as_deref()
        .ok_or_else(|| CliError::usage("--data-dir is required (or pass --smoke)"))?;
    let cfg = load_config(a.config.as_deref())?;
    let tcfg = TrainConfig {
        lr0: a.lr0,
        batch: a.batch,
        patch: a.patch,
        epochs: a.epochs,
        halve_every: a.halve_every,
        optimizer: a
            .optimizer
            .parse::<training::OptimizerKind>()
            .code(EXIT_USAGE, "--optimizer")?,
        loss: a.loss.parse::<training::LossKind>().code(EXIT_USAGE, "--loss")?,
        seed: a.seed,
        augment: !a.no_augment,
        iters_per_epoch: a.iters_per_epoch,
        ..TrainConfig::default()
    };
    tcfg.validate().code(EXIT_USAGE, "training options")?;
    if a.checkpoint_every == Some(0) {
        return Err(CliError::usage("--checkpoint-every must be at least 1"));
    }
    let data = Dataset::from_root(data_dir, cfg.scale).code(EXIT_DATA, format!("loading {}", data_dir.display()))?;
    let val = a
        .val_dir
        .as_deref()
        .map(|d| Dataset::from_hr_dir(d, cfg.scale).code(EXIT_DATA, format!("loading {}", d.display())))
        .transpose()?;
    fs::create_dir_all(&a.out_dir).at(format!("creating {}", a.out_dir.display()))?;

    let mut net = Network::<f32>::build(&cfg, a.seed)?;
    eprintln!(
        "training {} parameters on {} images, {} iterations per epoch",
        net.param_count(),
        data.len(),
        training::iterations_per_epoch(&data, &tcfg)
    );
    let mut best: Option<(usize, f64)> = None;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut reporter = |s: &EpochStats, net: &Network| -> maffsrn::Result<()> {
        eprintln!("epoch {:>5}  lr {:.3e}  loss {:.6}", s.epoch, s.lr, s.loss);
        if let Some(k) = a.checkpoint_every {
            if (s.epoch + 1).is_multiple_of(k) {
                let path = a.out_dir.join(format!("epoch_{:05}.mafw", s.epoch + 1));
                save_checkpoint(net, &path)?;
                written.push(path);
            }
        }
        if let Some(val) = &val {
            let mut total = 0.0;
            for pair in &val.pairs {
                let sr = net.upscale(&pair.lr)?;
                total += evaluate_y(&sr, &pair.hr, cfg.scale)?.0;
            }
            let score = total / val.len() as f64;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((s.epoch, score));
                save_checkpoint(net, &a.out_dir.join("best.mafw"))?;
            }
        }
        Ok(())
    };
    let curve = training::train(&mut net, &data, &tcfg, &mut reporter).at("training")?;
    let csv = a.out_dir.join("loss.csv");
    write_curve(&csv, &curve)?;
    let final_path = a.out_dir.join("final.mafw");
    save_checkpoint(&net, &final_path).at(format!("writing {}", final_path.display()))?;
    Ok(json!({
        "epochs": curve.len(),
        "iterations_per_epoch": training::iterations_per_epoch(&data, &tcfg),
        "final_loss": curve.last().map(|s| s.loss),
        "loss_csv": csv,
        "final_checkpoint": final_path,
        "checkpoints": written,
        "best": best.map(|(epoch, psnr)| json!({"epoch": epoch, "psnr": metric(psnr)})),
    }))
}

fn train_smoke(a: &args::TrainArgs) -> CliResult<Value> {
    eprintln!(
        "smoke run: {} iterations on one {}x{} patch",
        smoke::SMOKE_ITERATIONS,
        smoke::SMOKE_PATCH,
        smoke::SMOKE_PATCH
    );
    let report = smoke::run_smoke(a.seed).at("smoke run")?;
    if a.out_dir.is_dir() {
        write_curve(&a.out_dir.join("smoke_loss.csv"), &report.curve)?;
    }
    let passed = report.ratio <= SMOKE_MAX_RATIO;
    let out = json!({
        "iterations": report.curve.len(),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "ratio": report.ratio,
        "passed": passed,
    });
    if !passed {
        let _ = writeln!(std::io::stdout(), "{out}");
        return Err(CliError::numeric(format!(
            "loss only fell to {:.3} of its initial value",
            report.ratio
        )));
    }
    Ok(out)
}

/// One FFG of two MABs at width 8.
pub fn tiny_config() -> NetConfig {
    let mut cfg = NetConfig::maffsrn(2);
    cfg.n_ffg = 1;
    cfg.ffg.m = 2;
    cfg.mab.channels = 8;
    cfg
}

fn cmd_gradcheck(a: args::GradcheckArgs) -> CliResult<Value> {
    let cfg = match &a.config {
        Some(p) => load_config(Some(p))?,
        None => tiny_config(),
    };
    let opts = GradcheckOptions {
        samples: a.samples,
        eps: a.eps,
        seed: a.seed,
        input_size: a.input_size,
        zero_input: a.zero_input,
    };
    let report = training::gradcheck_network_with(&cfg, &opts).at("gradient check")?;
    eprintln!(
        "checked {} entries ({} gates), max relative error {:.3e}",
        report.entries.len(),
        report.gates_checked,
        report.max_rel_error
    );
    let ok = report.all_finite && report.max_rel_error < a.tol;
    let value = serde_json::to_value(&report).expect("report serializes");
    if !ok {
        let _ = writeln!(std::io::stdout(), "{value}");
        return Err(CliError::numeric(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tol
        )));
    }
    Ok(value)
}

fn cmd_init(a: args::InitArgs) -> CliResult<Value> {
    let cfg = load_config(a.config.as_deref())?;
    let net = if a.zero {
        Network::<f32>::zeroed(&cfg)?
    } else {
        Network::<f32>::build(&cfg, a.seed)?
    };
    save_checkpoint(&net, &a.output).at(format!("writing {}", a.output.display()))?;
    Ok(json!({
        "output": a.output,
        "params": net.param_count(),
        "scale": cfg.scale,
        "zero": a.zero,
    }))
}
