#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use maffsrn::imaging::{write_png, Image};
use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", self.stdout))
    }
}

pub fn maffsrn(args: &[&str]) -> Run {
    maffsrn_env(args, &[])
}

pub fn maffsrn_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_maffsrn"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Smooth RGB test card.
pub fn card(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |x, y, c| {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        let v = 128.0 + 90.0 * ((fx * 7.0 + c as f64).sin() * (fy * 5.0).cos());
        v.round() as u8
    })
    .unwrap()
}

pub fn save(img: &Image, path: &Path) {
    write_png(path, img).unwrap();
}
