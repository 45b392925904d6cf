//! The `micronnet` command line.
//!
//! Every command reads an optional TOML run configuration, applies the
//! `--seed` and `--out` overrides, writes its outputs atomically under the
//! output directory and returns a process exit code:
//! 0 success, 1 usage or configuration error, 2 data error, 3 infeasible
//! search. Log verbosity comes from `MICRONNET_LOG` (e.g. `info`).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, balanced, degrade, load_dataset, AugmentPolicy, Dataset, Split};
use crate::efficiency::{param_count, EfficiencyReport};
use crate::error::{Error, Result};
use crate::network::{self, micronnet_default, write_atomic, ArchitectureSpec, Network};
use crate::quantization::{quantize, QuantFormat};
use crate::search::{
    brute_force, cliff_space, optimize, toy_space, BottleneckEvaluator, CliffEvaluator, Evaluator,
    ParamRatioEvaluator, SearchSpace, TrainingEvaluator, Tunable, DEFAULT_BRUTE_FORCE_CAP,
    DEFAULT_FLOOR,
};
use crate::tensor::{Precision, Tensor};
use crate::training::{accuracy, trace_csv, train, TraceRecord, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "micronnet",
    version,
    about = "Compact traffic-sign classifier toolkit"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a benchmark-layout dataset.
    Train(TrainArgs),
    /// Top-1 accuracy of a model, optionally under Gaussian noise.
    Eval(EvalArgs),
    /// Convert a float32 model to fp16 or fixed16 storage.
    Quantize(QuantizeArgs),
    /// Parameter, MAC and efficiency report for a model or spec.
    Metrics(MetricsArgs),
    /// Minimise parameters under an accuracy floor.
    Search(SearchArgs),
    /// Write a synthetic 43-class dataset in the benchmark layout.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root (benchmark layout).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output model path (default: <out>/model.bin).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which split to score.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Noise level in percent of the [0, 1] range; repeat for several levels.
    #[arg(long = "degrade")]
    pub degrade: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// fp16 or fixed16.
    #[arg(long)]
    pub format: QuantFormat,
    /// Output model path (default: <out>/model_<format>.bin).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Draw probe images from this dataset instead of seeded noise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, conflicts_with = "spec")]
    pub model: Option<PathBuf>,
    /// Architecture text file; default architecture when neither is given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Top-1 accuracy in percent.
    #[arg(long)]
    pub accuracy: Option<f64>,
    /// Bytes per stored parameter (default: the model's format, or 4).
    #[arg(long)]
    pub bytes_per_param: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Dataset root for the training evaluator.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub test_per_class: usize,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected train or test, got {s:?}")),
    }
}

/// Architecture: inline text, a file, or the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub spec: Option<String>,
    pub spec_file: Option<PathBuf>,
}

impl ArchConfig {
    pub fn resolve(&self) -> Result<ArchitectureSpec> {
        let spec = match (&self.spec, &self.spec_file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set arch.spec or arch.spec_file, not both".into(),
                ))
            }
            (Some(text), None) => text.parse()?,
            (None, Some(path)) => read_spec(path)?,
            (None, None) => micronnet_default(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    ParamRatio,
    Bottleneck,
    Cliff,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Toy,
    Cliff,
    /// `arch` plus `search.tunables`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SpaceKind,
    pub tunables: Vec<Tunable>,
    pub evaluator: EvaluatorKind,
    /// Accuracy floor in [0, 1].
    pub floor: f64,
    /// Maximum distinct evaluations.
    pub budget: usize,
    /// Param-ratio and cliff evaluators: reference parameter count (0 = base spec's).
    pub p0: f64,
    /// Bottleneck evaluator: `[layer, width]` pairs.
    pub required: Vec<(usize, usize)>,
    /// Cliff evaluator: layer and width whose accuracy collapses.
    pub cliff_layer: usize,
    pub cliff_width: usize,
    /// Also run the exhaustive search and report both.
    pub brute_force: bool,
    /// Training evaluator: iterations per candidate.
    pub iterations: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SpaceKind::Toy,
            tunables: Vec::new(),
            evaluator: EvaluatorKind::ParamRatio,
            floor: DEFAULT_FLOOR,
            budget: 500,
            p0: 0.0,
            required: Vec::new(),
            cliff_layer: 0,
            cliff_width: 2,
            brute_force: false,
            iterations: 300,
        }
    }
}

/// Everything a run needs, loadable from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds initialisation, data order, augmentation, noise and probes.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_root: Option<PathBuf>,
    /// Fraction of the training split used for fitting; the rest validates.
    pub split_ratio: f64,
    /// Augment each class up to this many samples (0 = no balancing).
    pub balance_target: usize,
    /// Save a checkpoint every N iterations (0 = final model only).
    pub checkpoint_every: u64,
    /// Probe images for quantization parity.
    pub probe_count: usize,
    pub eval_batch: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    pub search: SearchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data_root: None,
            split_ratio: 0.9,
            balance_target: 0,
            checkpoint_every: 0,
            probe_count: 256,
            eval_batch: 256,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentPolicy::default(),
            search: SearchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        if !(0.0..=1.0).contains(&self.split_ratio) || self.split_ratio == 0.0 {
            return Err(Error::Config(format!(
                "split_ratio must be in (0, 1], got {}",
                self.split_ratio
            )));
        }
        if self.probe_count == 0 || self.eval_batch == 0 {
            return Err(Error::Config(
                "probe_count and eval_batch must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.search.floor) {
            return Err(Error::Config(format!(
                "search.floor must be in [0, 1], got {}",
                self.search.floor
            )));
        }
        Ok(())
    }

    /// The master seed drives every seeded component.
    fn seeded_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn seeded_augment(&self) -> AugmentPolicy {
        AugmentPolicy {
            seed: self.seed,
            ..self.augment.clone()
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Ingestion(_) | Error::Row { .. } | Error::Sample(_) => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = e.print();
            return EXIT_OK;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    match &cli.command {
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Quantize(a) => cmd_quantize(&cfg, a),
        Command::Metrics(a) => cmd_metrics(&cfg, a),
        Command::Search(a) => cmd_search(&cfg, a),
        Command::SynthData(a) => cmd_synth(&cfg, a),
    }
}

fn read_spec(path: &Path) -> Result<ArchitectureSpec> {
    fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .parse()
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(&cfg.out_dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn data_root<'a>(flag: &'a Option<PathBuf>, cfg: &'a RunConfig) -> Result<&'a Path> {
    flag.as_deref()
        .or(cfg.data_root.as_deref())
        .ok_or_else(|| Error::Config("no dataset given; pass --data or set data_root".into()))
}

fn input_size(spec: &ArchitectureSpec) -> Result<usize> {
    match spec.input {
        (3, h, w) if h == w => Ok(h),
        other => Err(Error::Spec(format!(
            "datasets need square 3-channel inputs, spec takes {other:?}"
        ))),
    }
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<i32> {
    let spec = cfg.arch.resolve()?;
    let num_classes = spec
        .num_classes()
        .expect("validated spec ends in a classifier");
    let root = data_root(&a.data, cfg)?;
    let all = load_dataset(root, Split::Train, input_size(&spec)?)?;
    if let Some(&bad) = all.labels().iter().find(|&&l| l >= num_classes) {
        return Err(Error::Ingestion(format!(
            "label {bad} but the network has {num_classes} classes"
        )));
    }
    let (fit, val) = if cfg.split_ratio < 1.0 {
        all.split(cfg.split_ratio, cfg.seed)?
    } else {
        (all, Dataset::empty((3, spec.input.1, spec.input.2)))
    };
    let fit = if cfg.balance_target > 0 {
        balanced(&fit, num_classes, cfg.balance_target, &cfg.seeded_augment())?
    } else {
        fit
    };
    info!(
        "training on {} samples, validating on {}",
        fit.len(),
        val.len()
    );

    let out = out_dir(cfg)?.to_path_buf();
    let tcfg = cfg.seeded_train();
    let net = Network::build(&spec, cfg.seed)?;
    let every = cfg.checkpoint_every;
    let mut hook = |r: &TraceRecord, net: &Network| -> Result<()> {
        if r.iter.is_multiple_of(100) {
            info!("iter {} lr {:.6} loss {:.4}", r.iter, r.lr, r.loss);
        }
        if every > 0 && (r.iter + 1).is_multiple_of(every) {
            network::save(net, &out.join(format!("checkpoint_{}.bin", r.iter + 1)))?;
        }
        Ok(())
    };
    let outcome = train(
        net,
        &fit,
        (!val.is_empty()).then_some(&val),
        &tcfg,
        &mut hook,
    )?;

    let train_acc = accuracy(&outcome.network, &fit, cfg.eval_batch)?;
    let val_acc = if val.is_empty() {
        None
    } else {
        Some(accuracy(&outcome.network, &val, cfg.eval_batch)?)
    };
    let model_path = a.model.clone().unwrap_or_else(|| out.join("model.bin"));
    network::save(&outcome.network, &model_path)?;
    write_text(&out.join("trace.csv"), &trace_csv(&outcome.trace))?;

    let final_loss = outcome.trace.last().map_or(f32::NAN, |r| r.loss);
    let val_text = val_acc.map_or("-".to_string(), |v| format!("{:.4}", v));
    let report = format!(
        "model: {}\niterations: {}\ntrain samples: {}\nvalidation samples: {}\nfinal batch loss: {final_loss:.6}\ntrain accuracy: {train_acc:.4}\nvalidation accuracy: {val_text}\n",
        model_path.display(),
        tcfg.max_iterations,
        fit.len(),
        val.len(),
    );
    let csv = format!(
        "metric,value\niterations,{}\ntrain_samples,{}\nvalidation_samples,{}\nfinal_loss,{final_loss:.6}\ntrain_accuracy,{train_acc:.6}\nvalidation_accuracy,{}\n",
        tcfg.max_iterations,
        fit.len(),
        val.len(),
        val_acc.map_or(String::new(), |v| format!("{v:.6}")),
    );
    write_text(&out.join("train_report.txt"), &report)?;
    write_text(&out.join("train_report.csv"), &csv)?;
    print!("{report}");
    Ok(EXIT_OK)
}

/// Top-1 accuracy with every image degraded at `sigma_pct`; image `i` uses
/// noise seed `seed + i`.
pub fn degraded_accuracy(
    net: &Network,
    data: &Dataset,
    sigma_pct: f64,
    seed: u64,
    batch: usize,
) -> Result<f64> {
    if sigma_pct == 0.0 {
        return accuracy(net, data, batch);
    }
    let mut noisy = Dataset::empty(data.item_shape());
    for i in 0..data.len() {
        let t = degrade(
            &data.image_tensor(i),
            sigma_pct,
            seed.wrapping_add(i as u64),
        )?;
        noisy.push(t.data(), data.labels()[i])?;
    }
    accuracy(net, &noisy, batch)
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<i32> {
    let net = network::load(&a.model)?;
    let root = data_root(&a.data, cfg)?;
    let data = load_dataset(root, a.split, input_size(net.spec())?)?;
    let levels = if a.degrade.is_empty() {
        vec![0.0]
    } else {
        a.degrade.clone()
    };
    let mut text = format!(
        "model: {}\nsamples: {}\nseed: {}\n{:>10} {:>10}\n",
        a.model.display(),
        data.len(),
        cfg.seed,
        "sigma_pct",
        "top1"
    );
    let mut csv = String::from("sigma_pct,top1\n");
    for &sigma in &levels {
        let acc = degraded_accuracy(&net, &data, sigma, cfg.seed, cfg.eval_batch)?;
        text.push_str(&format!("{sigma:>10} {:>10.4}\n", acc * 100.0));
        csv.push_str(&format!("{sigma},{:.6}\n", acc * 100.0));
    }
    let out = out_dir(cfg)?;
    write_text(&out.join("eval_report.txt"), &text)?;
    write_text(&out.join("eval.csv"), &csv)?;
    print!("{text}");
    Ok(EXIT_OK)
}

/// `n` seeded uniform [0, 1) images of the given item shape.
pub fn random_probes(n: usize, item: (usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * item.0 * item.1 * item.2;
    Tensor::from_vec(
        [n, item.0, item.1, item.2],
        (0..len).map(|_| rng.random::<f32>()).collect(),
    )
    .expect("length matches shape")
}

fn cmd_quantize(cfg: &RunConfig, a: &QuantizeArgs) -> Result<i32> {
    let net = network::load(&a.model)?;
    let probe = match &a.data {
        Some(root) => {
            let data = load_dataset(root, a.split, input_size(net.spec())?)?;
            let idx: Vec<usize> = (0..data.len().min(cfg.probe_count)).collect();
            data.batch(&idx)?.0
        }
        None => random_probes(cfg.probe_count, net.spec().input, cfg.seed),
    };
    let (q, report) = quantize(&net, a.format, &probe)?;
    let out = out_dir(cfg)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| out.join(format!("model_{}.bin", a.format)));
    network::save(&q, &path)?;
    write_text(
        &out.join(format!("quant_report_{}.txt", a.format)),
        &report.to_text(),
    )?;
    write_text(
        &out.join(format!("quant_report_{}.csv", a.format)),
        &report.to_csv(),
    )?;
    print!("{}", report.to_text());
    Ok(EXIT_OK)
}

fn cmd_metrics(cfg: &RunConfig, a: &MetricsArgs) -> Result<i32> {
    let (name, spec, width) = match (&a.model, &a.spec) {
        (Some(m), _) => {
            let net = network::load(m)?;
            let width = match net.precision() {
                Precision::Float32 => 4,
                _ => 2,
            };
            (m.display().to_string(), net.spec().clone(), width)
        }
        (None, Some(s)) => (s.display().to_string(), read_spec(s)?, 4),
        (None, None) => ("default".to_string(), cfg.arch.resolve()?, 4),
    };
    let mut report = EfficiencyReport::new(name, &spec, a.bytes_per_param.unwrap_or(width))?;
    if let Some(acc) = a.accuracy {
        if !(acc > 0.0 && acc <= 100.0) {
            return Err(Error::Argument(format!(
                "accuracy must be a percentage in (0, 100], got {acc}"
            )));
        }
        report = report.with_accuracy(acc);
    }
    let out = out_dir(cfg)?;
    write_text(&out.join("metrics.txt"), &report.to_table())?;
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(EXIT_OK)
}

fn search_space(cfg: &RunConfig) -> Result<SearchSpace> {
    match cfg.search.space {
        SpaceKind::Toy => Ok(toy_space()),
        SpaceKind::Cliff => Ok(cliff_space()),
        SpaceKind::Custom => SearchSpace::new(cfg.arch.resolve()?, cfg.search.tunables.clone()),
    }
}

fn cmd_search(cfg: &RunConfig, a: &SearchArgs) -> Result<i32> {
    let s = &cfg.search;
    let space = search_space(cfg)?;
    let p0 = if s.p0 > 0.0 {
        s.p0
    } else {
        param_count(space.base())? as f64
    };
    let mut eval: Box<dyn Evaluator> = match s.evaluator {
        EvaluatorKind::ParamRatio => Box::new(ParamRatioEvaluator { p0 }),
        EvaluatorKind::Bottleneck => Box::new(BottleneckEvaluator {
            required: s.required.clone(),
        }),
        EvaluatorKind::Cliff => Box::new(CliffEvaluator {
            p0,
            layer: s.cliff_layer,
            width: s.cliff_width,
        }),
        EvaluatorKind::Training => {
            let data = load_dataset(
                data_root(&a.data, cfg)?,
                Split::Train,
                input_size(space.base())?,
            )?;
            let tcfg = TrainConfig {
                max_iterations: s.iterations,
                ..cfg.seeded_train()
            };
            Box::new(TrainingEvaluator::new(
                &data,
                tcfg,
                cfg.split_ratio,
                cfg.seed,
            )?)
        }
    };
    let result = optimize(&space, eval.as_mut(), s.floor, s.budget)?;
    let mut text = result.summary();
    if s.brute_force {
        let exact = brute_force(&space, eval.as_mut(), s.floor, DEFAULT_BRUTE_FORCE_CAP)?;
        text.push_str(&format!(
            "brute force: {} ({} params, a_v {:.4}); greedy/optimum params ratio {:.4}\n",
            if exact.is_feasible() {
                "feasible"
            } else {
                "infeasible"
            },
            exact.params,
            exact.accuracy,
            result.params as f64 / exact.params as f64
        ));
    }
    let out = out_dir(cfg)?;
    write_text(&out.join("search_log.csv"), &result.log_csv())?;
    write_text(&out.join("search_report.txt"), &text)?;
    write_text(&out.join("best_spec.txt"), &result.best.to_string())?;
    print!("{text}");
    Ok(if result.is_feasible() {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}

fn cmd_synth(cfg: &RunConfig, a: &SynthArgs) -> Result<i32> {
    if a.per_class == 0 {
        return Err(Error::Argument("--per-class must be >= 1".into()));
    }
    let out = out_dir(cfg)?;
    data::write_gtsrb(
        out,
        Split::Train,
        &data::synth_samples(a.per_class, cfg.seed),
    )?;
    if a.test_per_class > 0 {
        data::write_gtsrb(
            out,
            Split::Test,
            &data::synth_samples(a.test_per_class, cfg.seed.wrapping_add(1)),
        )?;
    }
    println!(
        "wrote {} training and {} test images under {}",
        a.per_class * data::NUM_CLASSES,
        a.test_per_class * data::NUM_CLASSES,
        out.display()
    );
    Ok(EXIT_OK)
}
