//! Configuration layering and checkpoint <-> trainer conversion.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use ccnet_core::config::{Profile, RunConfig};
use ccnet_core::io::{self, Checkpoint};
use ccnet_core::{Ccnet, ParamStore, Trainer};

use crate::args::{Common, ProfileArg};
use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "CCNET_SEED";
pub const CHECKPOINT_FILE: &str = "model.ccn";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train.log";
pub const LOG_HEADER: &str = "epoch\tloss\tcls\treg\tseconds";

const MOMENT1: &str = "adam.m.";
const MOMENT2: &str = "adam.v.";

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(anyhow!("cannot read {}: {e}", path.display())))
}

/// Overrides in increasing precedence: config file, `CCNET_SEED`, `--set`, `--seed`.
pub fn apply_overrides(cfg: &mut RunConfig, common: &Common) -> CliResult<()> {
    if let Some(path) = &common.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed = raw
            .trim()
            .parse::<u64>()
            .map_err(|e| CliError::usage(anyhow!("{SEED_ENV}={raw:?} is not a seed: {e}")))?;
        cfg.set_seed(seed);
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(anyhow!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(())
}

pub fn base_profile(common: &Common) -> RunConfig {
    RunConfig::profile(match common.profile {
        ProfileArg::Toy => Profile::Toy,
        ProfileArg::Full => Profile::Full,
    })
}

pub fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = base_profile(common);
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

/// Writes the effective configuration next to other outputs.
pub fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_text())
        .map_err(|e| CliError::usage(anyhow!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(anyhow!("cannot create {}: {e}", dir.display())))
}

/// Training progress stored alongside the configuration in a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
}

pub fn checkpoint_from(trainer: &Trainer<f32>, cfg: &RunConfig) -> Checkpoint {
    let mut config = cfg.to_text();
    config.push_str(&format!("state.epoch={}\nstate.step={}\n", trainer.epoch, trainer.optimizer.step));
    let mut params = trainer.model.params.clone();
    params.zero_grad();
    let mut store = ParamStore::new();
    for p in params.iter() {
        store.add(p.name.clone(), p.value.clone());
    }
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for (name, m) in names.iter().zip(&trainer.optimizer.first) {
        store.add(format!("{MOMENT1}{name}"), m.clone());
    }
    for (name, v) in names.iter().zip(&trainer.optimizer.second) {
        store.add(format!("{MOMENT2}{name}"), v.clone());
    }
    Checkpoint { config, params: store }
}

/// Splits checkpoint text into the run configuration and training state.
pub fn parse_checkpoint_config(text: &str) -> CliResult<(RunConfig, TrainState)> {
    let mut state = TrainState::default();
    let mut rest = String::new();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("state.epoch=") {
            state.epoch = v.parse().map_err(|e| CliError::usage(anyhow!("checkpoint state.epoch: {e}")))?;
        } else if let Some(v) = line.strip_prefix("state.step=") {
            state.step = v.parse().map_err(|e| CliError::usage(anyhow!("checkpoint state.step: {e}")))?;
        } else {
            rest.push_str(line);
            rest.push('\n');
        }
    }
    let mut cfg = RunConfig::toy();
    cfg.apply_text(&rest)
        .map_err(|e| CliError::usage(anyhow!("checkpoint configuration: {e}")))?;
    Ok((cfg, state))
}

/// Rebuilds a trainer, including optimizer moments, from a checkpoint.
pub fn trainer_from(ck: &Checkpoint, cfg: &RunConfig, state: TrainState) -> CliResult<Trainer<f32>> {
    let mut model = Ccnet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut weights = ParamStore::new();
    for p in ck.params.iter().filter(|p| !p.name.starts_with("adam.")) {
        weights.add(p.name.clone(), p.value.clone());
    }
    model
        .load_params(&weights)
        .map_err(|e| CliError::usage(anyhow!("checkpoint does not match the model configuration: {e}")))?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let names: Vec<String> = trainer.model.params.iter().map(|p| p.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        for (prefix, slot) in [(MOMENT1, &mut trainer.optimizer.first[i]), (MOMENT2, &mut trainer.optimizer.second[i])] {
            let key = format!("{prefix}{name}");
            match ck.params.id(&key) {
                Ok(id) if ck.params.get(id).value.shape() == slot.shape() => *slot = ck.params.get(id).value.clone(),
                Ok(_) => return Err(CliError::usage(anyhow!("checkpoint tensor `{key}` has the wrong shape"))),
                Err(_) if state.step == 0 => {}
                Err(_) => return Err(CliError::usage(anyhow!("checkpoint lacks optimizer state `{key}`"))),
            }
        }
    }
    trainer.optimizer.step = state.step;
    trainer.epoch = state.epoch;
    Ok(trainer)
}

/// Loads a checkpoint and layers command-line overrides on its configuration.
pub fn load_checkpoint(path: &Path, common: &Common) -> CliResult<(Trainer<f32>, RunConfig)> {
    if !path.exists() {
        return Err(CliError::usage(anyhow!("checkpoint {} does not exist", path.display())));
    }
    let ck = io::read_checkpoint(path)?;
    let (mut cfg, state) = parse_checkpoint_config(&ck.config)?;
    apply_overrides(&mut cfg, common)?;
    let trainer = trainer_from(&ck, &cfg, state)?;
    Ok((trainer, cfg))
}

/// A dataset root with `train/` and `test/` resolves to the requested split.
pub fn split_dir(data: &Path, split: &str) -> PathBuf {
    let nested = data.join(split);
    if nested.join(io::MANIFEST_FILE).exists() {
        nested
    } else {
        data.to_path_buf()
    }
}

pub fn load_split(data: &Path, split: &str) -> CliResult<Vec<ccnet_core::Video>> {
    let dir = split_dir(data, split);
    if !dir.join(io::MANIFEST_FILE).exists() {
        return Err(CliError::usage(anyhow!(
            "no {} in {} or {}",
            io::MANIFEST_FILE,
            data.display(),
            data.join(split).display()
        )));
    }
    Ok(io::read_dataset(&dir)?)
}
