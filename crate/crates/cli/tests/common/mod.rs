#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// A small but complete configuration; sizes keep every command under a
/// few seconds.
pub const SMALL: &str = r#"
seed = 11
grid.steps_per_year = 12
sizes.m = 100
sizes.m1 = 10
sizes.m2 = 100
calibration.max_iter = 2
calibration.rn_max_iter = 30
measure.kind = "exponential"
measure.source = "builtin:case-2"
diagnostics.checkpoints = [0.25, 0.5, 1.0]
diagnostics.fan_paths = 10
xva.m1 = 10
xva.m2 = 20
output.dir = "run"
"#;

pub const PIPELINE: [&str; 7] = ["reconstruct", "calibrate-hist", "calibrate-rn", "simulate", "ssa", "xva", "report"];

pub fn lierate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lierate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs every pipeline command with `extra` flags; panics on failure.
pub fn run_pipeline(dir: &Path, config: &str, extra: &[&str]) {
    for cmd in PIPELINE {
        let mut args = vec!["--config", config];
        args.extend_from_slice(extra);
        args.push(cmd);
        let o = lierate(dir, &args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
}
