//! Drives the `micronnet` binary end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_micronnet"))
        .args(args)
        .env_remove("MICRONNET_LOG")
        .output()
        .expect("binary runs");
    Outcome {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Small but complete run configuration: a 24x24 network, a few dozen
/// iterations, class balancing with augmentation and checkpoints.
pub const PIPELINE_CONFIG: &str = r#"
seed = 3
split_ratio = 0.75
balance_target = 4
checkpoint_every = 15
probe_count = 32

[arch]
spec = """
input 3x24x24
conv 1x1x3 linear
conv 3x3x6
pool 2x2 s2
conv 3x3x8
pool 2x2 s2
fc 32
softmax 43
"""

[train]
base_lr = 0.01
batch_size = 20
max_iterations = 30

[search]
space = "toy"
evaluator = "param_ratio"
floor = 0.6
brute_force = true
"#;

pub struct Pipeline {
    pub root: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: PathBuf,
}

impl Pipeline {
    pub fn new(root: &Path) -> Self {
        let p = Pipeline {
            root: root.to_path_buf(),
            data: root.join("data"),
            out: root.join("out"),
            config: root.join("run.toml"),
        };
        fs::write(&p.config, PIPELINE_CONFIG).unwrap();
        p
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    /// synth-data, train, eval, quantize (both formats), metrics, search.
    /// Returns each step's exit code in order.
    pub fn run_all(&self) -> Vec<(String, Outcome)> {
        let cfg = Self::s(&self.config);
        let out = Self::s(&self.out);
        let data = Self::s(&self.data);
        let model = self.out.join("model.bin");
        let model = Self::s(&model);
        let steps: Vec<(&str, Vec<&str>)> = vec![
            (
                "synth-data",
                vec![
                    "synth-data",
                    "--config",
                    cfg,
                    "--out",
                    data,
                    "--per-class",
                    "4",
                    "--test-per-class",
                    "2",
                ],
            ),
            (
                "train",
                vec!["train", "--config", cfg, "--out", out, "--data", data],
            ),
            (
                "eval",
                vec![
                    "eval",
                    "--config",
                    cfg,
                    "--out",
                    out,
                    "--model",
                    model,
                    "--data",
                    data,
                    "--degrade",
                    "0",
                    "--degrade",
                    "5",
                ],
            ),
            (
                "quantize-fp16",
                vec![
                    "quantize", "--config", cfg, "--out", out, "--model", model, "--format", "fp16",
                ],
            ),
            (
                "quantize-fixed16",
                vec![
                    "quantize", "--config", cfg, "--out", out, "--model", model, "--format",
                    "fixed16", "--data", data,
                ],
            ),
            (
                "metrics",
                vec![
                    "metrics",
                    "--config",
                    cfg,
                    "--out",
                    out,
                    "--model",
                    model,
                    "--accuracy",
                    "90",
                ],
            ),
            ("search", vec!["search", "--config", cfg, "--out", out]),
        ];
        steps
            .into_iter()
            .map(|(name, args)| (name.to_string(), run(&args)))
            .collect()
    }
}
