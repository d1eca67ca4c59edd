#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small shapes so every command finishes in well under a second per epoch.
pub const TINY: &str = "\
model.max_len=16
model.levels=3
model.dim=8
model.heads=2
model.audio_dim=6
model.visual_dim=7
model.classes=3
train.epochs=2
train.batch_size=4
data.train_videos=8
data.test_videos=6
data.max_len_frac=1.0
";

pub fn ccnet(args: &[&str]) -> Output {
    ccnet_env(args, &[])
}

pub fn ccnet_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ccnet"));
    cmd.args(args).env_remove("CCNET_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("ccnet runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
pub fn ok(out: &Output) {
    assert_eq!(code(out), 0, "stdout:\n{}\nstderr:\n{}", stdout(out), stderr(out));
}

pub fn write_tiny(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the tiny dataset under `dir/data` and returns (config, data dir).
pub fn tiny_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_tiny(dir);
    let data = dir.join("data");
    ok(&ccnet(&["gen", "--config", s(&cfg), "--out", s(&data)]));
    (cfg, data)
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
