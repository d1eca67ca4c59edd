//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use ccnet_core::config::RunConfig;
use ccnet_core::io;
use ccnet_core::pipeline::{evaluate_model, format_predictions, ground_truth, localize_all};
use ccnet_core::synth::{generate_split, DatasetStats, SPLIT_TEST, SPLIT_TRAIN};
use ccnet_core::{evaluate, Ccnet, EvalReport, LocalizedEvent, Trainer, Video};

use crate::ablate;
use crate::args::{Cli, Command, Common};
use crate::error::{CliError, CliResult};
use crate::state::{self, CHECKPOINT_FILE, LOG_FILE, LOG_HEADER};

pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";

/// Runs `cli.command` inside a rayon pool of `--workers` threads.
pub fn dispatch(cli: &Cli) -> CliResult<()> {
    if cli.common.workers == 0 {
        return Err(CliError::usage(anyhow!("--workers must be at least 1")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build()
        .map_err(|e| CliError::internal(anyhow!("cannot start worker pool: {e}")))?;
    pool.install(|| run_command(&cli.common, &cli.command))
}

fn run_command(common: &Common, command: &Command) -> CliResult<()> {
    match command {
        Command::Gen { out } => gen(common, out),
        Command::Train {
            data,
            out,
            resume,
            epochs,
        } => train(common, data, out, *resume, *epochs),
        Command::Eval {
            checkpoint,
            data,
            split,
            predictions,
            out,
        } => eval(common, checkpoint.as_deref(), data, split, predictions.as_deref(), out),
        Command::Infer {
            checkpoint,
            data,
            split,
            out,
        } => infer(common, checkpoint, data, split, out),
        Command::Ablate { data, out, axes } => ablate::run(common, data, out, axes),
        Command::Gates {
            checkpoint,
            data,
            split,
            video,
            out,
        } => gates(common, checkpoint, data, split, video, out.as_deref()),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::usage(anyhow!("cannot write {}: {e}", path.display())))
}

pub fn gen(common: &Common, out: &Path) -> CliResult<()> {
    let cfg = state::load_config(common)?;
    state::create_dir(out)?;
    let train = generate_split(&cfg.data, SPLIT_TRAIN)?;
    let mut test_cfg = cfg.data.clone();
    test_cfg.videos = cfg.test_videos;
    let test = generate_split(&test_cfg, SPLIT_TEST)?;
    io::write_dataset(&out.join("train"), &train)?;
    io::write_dataset(&out.join("test"), &test)?;
    state::echo_config(out, &cfg)?;
    for (name, videos) in [("train", &train), ("test", &test)] {
        let s = DatasetStats::of(videos);
        println!(
            "{name}: videos={} events={} short={} mid={} long={} other={}",
            s.videos, s.events, s.buckets[0], s.buckets[1], s.buckets[2], s.other
        );
    }
    Ok(())
}

/// Rejects datasets whose feature shapes disagree with the model configuration.
pub fn check_shapes(videos: &[Video], cfg: &RunConfig) -> CliResult<()> {
    let m = &cfg.model;
    for v in videos {
        let checks = [
            ("model.max_len", v.audio.len(), m.max_len),
            ("model.max_len", v.visual.len(), m.max_len),
            ("model.audio_dim", v.audio.dim(), m.audio_dim),
            ("model.visual_dim", v.visual.dim(), m.visual_dim),
        ];
        for (key, got, want) in checks {
            if got != want {
                return Err(CliError::usage(anyhow!(
                    "video {}: feature shape {got} does not match {key}={want}",
                    v.id
                )));
            }
        }
        if let Some(e) = v.events.iter().find(|e| e.class_id >= m.classes) {
            return Err(CliError::usage(anyhow!(
                "video {}: class {} outside model.classes={}",
                v.id,
                e.class_id,
                m.classes
            )));
        }
    }
    Ok(())
}

/// Trains `trainer` up to `cfg.train.epochs`, checkpointing after every epoch.
pub fn train_loop(
    trainer: &mut Trainer<f32>,
    cfg: &RunConfig,
    data: &[Video],
    out: &Path,
    mut log: impl FnMut(&str) -> CliResult<()>,
) -> CliResult<()> {
    let ck_path = out.join(CHECKPOINT_FILE);
    io::write_checkpoint(&ck_path, &state::checkpoint_from(trainer, cfg))?;
    while trainer.epoch < cfg.train.epochs {
        let m = trainer.train_epoch(data)?;
        if !m.loss.total.is_finite() {
            return Err(CliError::internal(anyhow!("training diverged at epoch {}", m.epoch)));
        }
        log(&m.log_line())?;
        io::write_checkpoint(&ck_path, &state::checkpoint_from(trainer, cfg))?;
    }
    Ok(())
}

pub fn train(common: &Common, data: &Path, out: &Path, resume: bool, epochs: Option<usize>) -> CliResult<()> {
    let ck_path = out.join(CHECKPOINT_FILE);
    let (mut trainer, cfg) = if resume && ck_path.exists() {
        let (mut trainer, mut cfg) = state::load_checkpoint(&ck_path, common)?;
        if let Some(n) = epochs {
            cfg.train.epochs = n;
        }
        trainer.config = cfg.train.clone();
        trainer.optimizer.config = cfg.train.optimizer.clone();
        (trainer, cfg)
    } else {
        let mut cfg = state::load_config(common)?;
        if let Some(n) = epochs {
            cfg.train.epochs = n;
        }
        let model = Ccnet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
        (Trainer::new(model, cfg.train.clone())?, cfg)
    };
    let videos = state::load_split(data, "train")?;
    check_shapes(&videos, &cfg)?;
    if videos.is_empty() && trainer.epoch < cfg.train.epochs {
        return Err(CliError::usage(anyhow!("training set {} is empty", data.display())));
    }
    state::create_dir(out)?;
    state::echo_config(out, &cfg)?;

    let log_path = out.join(LOG_FILE);
    let fresh = !(resume && log_path.exists());
    let mut log = OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| CliError::usage(anyhow!("cannot open {}: {e}", log_path.display())))?;
    let write_err = |e: std::io::Error| CliError::internal(anyhow!("cannot write {}: {e}", log_path.display()));
    if fresh {
        writeln!(log, "{LOG_HEADER}").map_err(write_err)?;
    }
    train_loop(&mut trainer, &cfg, &videos, out, |line| {
        println!("{line}");
        writeln!(log, "{line}").map_err(write_err)
    })
}

/// Parses predictions written by `infer` or `eval`, grouped by video order.
pub fn parse_predictions(what: &str, text: &str, videos: &[Video]) -> CliResult<Vec<Vec<LocalizedEvent>>> {
    let index: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
    let mut out = vec![Vec::new(); videos.len()];
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| CliError::usage(anyhow!("{what}:{}: {msg}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let &i = index
            .get(fields[0])
            .ok_or_else(|| bad(format!("unknown video id `{}`", fields[0])))?;
        let num = |k: usize| -> CliResult<f64> {
            let v: f64 = fields[k].parse().map_err(|e| bad(format!("field {}: {e}", k + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("field {} is not finite", k + 1)))
            }
        };
        let class = fields[3].parse::<usize>().map_err(|e| bad(format!("field 4: {e}")))?;
        out[i].push(LocalizedEvent::new(num(1)?, num(2)?, class, num(4)?));
    }
    Ok(out)
}

fn write_report(out: &Path, report: &EvalReport) -> CliResult<()> {
    let text = format!("{}\n{}", report.table(), report.key_values());
    print!("{text}");
    write_file(&out.join(REPORT_FILE), &text)
}

pub fn eval(
    common: &Common,
    checkpoint: Option<&Path>,
    data: &Path,
    split: &str,
    predictions: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let loaded = checkpoint.map(|p| state::load_checkpoint(p, common)).transpose()?;
    let cfg = match &loaded {
        Some((_, cfg)) => cfg.clone(),
        None => state::load_config(common)?,
    };
    let videos = state::load_split(data, split)?;
    let preds = match (predictions, &loaded) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(anyhow!("cannot read {}: {e}", path.display())))?;
            parse_predictions(&path.display().to_string(), &text, &videos)?
        }
        (None, Some((trainer, _))) => {
            check_shapes(&videos, &cfg)?;
            localize_all(&trainer.model, &videos, &cfg.decode, &cfg.nms)?
        }
        (None, None) => return Err(CliError::usage(anyhow!("eval needs --checkpoint or --predictions"))),
    };
    let report = evaluate(&preds, &ground_truth(&videos), cfg.model.classes, &cfg.eval)?;
    state::create_dir(out)?;
    write_report(out, &report)?;
    write_file(&out.join(PREDICTIONS_FILE), &format_predictions(&videos, &preds))
}

pub fn infer(common: &Common, checkpoint: &Path, data: &Path, split: &str, out: &Path) -> CliResult<()> {
    let (trainer, cfg) = state::load_checkpoint(checkpoint, common)?;
    let videos = state::load_split(data, split)?;
    check_shapes(&videos, &cfg)?;
    let preds = localize_all(&trainer.model, &videos, &cfg.decode, &cfg.nms)?;
    state::create_dir(out)?;
    let n: usize = preds.iter().map(Vec::len).sum();
    println!("{} events over {} videos", n, videos.len());
    write_file(&out.join(PREDICTIONS_FILE), &format_predictions(&videos, &preds))
}

/// Gate CSV: one row per timestep per level, levels numbered from 1.
pub fn gates_csv(model: &Ccnet<f32>, video: &Video) -> CliResult<String> {
    let (_, gates) = model.predict(&video.audio, &video.visual)?;
    let mut csv = String::from("level,t,g_a,g_v\n");
    for (l, (ga, gv)) in gates.iter().enumerate() {
        for (t, (a, v)) in ga.weights.iter().zip(&gv.weights).enumerate() {
            csv.push_str(&format!("{},{t},{a:.9},{v:.9}\n", l + 1));
        }
    }
    Ok(csv)
}

pub fn gates(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    split: &str,
    video: &str,
    out: Option<&Path>,
) -> CliResult<()> {
    let (trainer, cfg) = state::load_checkpoint(checkpoint, common)?;
    let videos = state::load_split(data, split)?;
    let v = videos
        .iter()
        .find(|v| v.id == video)
        .ok_or_else(|| CliError::usage(anyhow!("unknown video id `{video}`")))?;
    check_shapes(std::slice::from_ref(v), &cfg)?;
    let csv = gates_csv(&trainer.model, v)?;
    match out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Trains a fresh model on `train` and scores it on `test`.
pub fn train_and_evaluate(cfg: &RunConfig, train: &[Video], test: &[Video]) -> CliResult<EvalReport> {
    let model = Ccnet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    while trainer.epoch < cfg.train.epochs {
        let m = trainer.train_epoch(train)?;
        if !m.loss.total.is_finite() {
            return Err(CliError::internal(anyhow!("training diverged at epoch {}", m.epoch)));
        }
    }
    Ok(evaluate_model(&trainer.model, test, cfg)?.0)
}
