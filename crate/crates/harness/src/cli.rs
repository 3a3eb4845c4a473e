//! The `fgprop` command line.
//!
//! Exit codes: 0 on success (including `--help`), 1 on usage errors, 2 on
//! runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fgprop_core::corruption::{corrupt_with, empirical_covariance, BlurOperator, NoiseSetting};
use fgprop_core::gaussian::GaussianRecord;
use fgprop_core::net::{classification_accuracy, evaluate_loss, save_model, train, Loss, TrainConfig};
use fgprop_core::propagate::{FgConfig, DEFAULT_MC_SAMPLES};
use fgprop_core::{Dataset, Gaussian, Network, RegressionSample};
use serde_json::json;

use crate::datasets::{digits, moons};
use crate::experiment::{reference_samples, run_ablation, run_experiment, trial_seed, ExperimentConfig, LayerSelector, SettingInputs};
use crate::render::{ellipse_svg, heatmap_svg, summary_bars, write_svg};
use crate::report::format_summary;

#[derive(Debug, Parser)]
#[command(name = "fgprop", version, about = "Propagate input uncertainty through trained networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedural dataset.
    Generate(GenerateArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Corrupt every input of a dataset with noise and blur.
    Corrupt(CorruptArgs),
    /// Propagate one input through the model and print the output Gaussians as JSON.
    Propagate(PropagateArgs),
    /// Run the noise-setting sweep and write reports.
    Evaluate(EvaluateArgs),
    /// Sweep the number of factor-graph input nodes.
    Ablate(AblateArgs),
    /// Render covariance heatmaps, ellipse plots or a report summary as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetKind {
    Digits,
    Moons,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "digits")]
    kind: DatasetKind,
    #[arg(long, default_value_t = 3000)]
    count: usize,
    /// Image side for digits.
    #[arg(long, default_value_t = 8)]
    side: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    Residual,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "residual")]
    arch: Arch,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, value_enum, default_value = "cross-entropy")]
    loss: LossArg,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    kernel: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// Comma-separated methods among fg, ekf, ut, mc.
    #[arg(long, value_delimiter = ',', default_value = "fg,ekf,ut")]
    methods: Vec<String>,
    /// Target layer: `output`, `penultimate` or a layer id.
    #[arg(long, default_value = "output")]
    layer: LayerSelector,
    /// Factor-graph input nodes.
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo sample count (reference and `mc` method).
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dataset sample to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 5)]
    kernel: usize,
    /// Dataset of residual vectors; their sample covariance replaces the
    /// corruption model and the input is used unblurred.
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[command(flatten)]
    method: MethodArgs,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Noise levels; crossed with the kernel sizes.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2")]
    sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    kernel: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[command(flatten)]
    method: MethodArgs,
    /// Nemenyi significance level.
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2")]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Largest node count; the sweep covers 1..=m-max.
    #[arg(long, default_value_t = 9)]
    m_max: usize,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Render the bar chart of an existing `summary.json` instead.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    report: Option<PathBuf>,
    #[arg(long, required_unless_present = "report")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "report")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 5)]
    kernel: usize,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value = "figures")]
    out: PathBuf,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Corrupt(a) => corrupt_cmd(a),
        Command::Propagate(a) => propagate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Render(a) => render_cmd(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let data = match a.kind {
        DatasetKind::Digits => digits(a.count, a.side, a.seed)?,
        DatasetKind::Moons => moons(a.count, a.noise, a.seed)?,
    };
    data.save(&a.out)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let init = match a.arch {
        Arch::Residual => Network::residual_mlp(data.input_dim, a.hidden, data.target_dim, a.seed)?,
        Arch::Mlp => Network::mlp(&[data.input_dim, a.hidden, a.hidden, data.target_dim], a.seed)?,
    };
    let loss = match a.loss {
        LossArg::CrossEntropy => Loss::CrossEntropy,
        LossArg::Mse => Loss::Mse,
    };
    let cfg = TrainConfig { epochs: a.epochs, learning_rate: a.lr, batch_size: a.batch, seed: a.seed, loss };
    let (net, report) = train(&init, &data.samples, &cfg)?;
    save_model(&net, &a.out)?;
    let mut line = format!("loss {:.6} -> {:.6}", report.initial_loss, report.final_loss());
    if loss == Loss::CrossEntropy {
        line.push_str(&format!(", training accuracy {:.4}", classification_accuracy(&net, &data.samples)?));
    } else {
        line.push_str(&format!(", mse {:.6}", evaluate_loss(&net, &data.samples, Loss::Mse)?));
    }
    println!("{line}; model written to {}", a.out.display());
    Ok(())
}

fn corrupt_cmd(a: CorruptArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let setting = NoiseSetting::new(a.sigma, a.kernel)?;
    let shape = data.image_shape_or_square().context("dataset inputs are not images")?;
    let blur = BlurOperator::new(a.kernel, shape.0, shape.1)?;
    let samples = data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let input = corrupt_with(&s.input, &setting, &blur, trial_seed(a.seed, i))?;
            Ok(RegressionSample { input, target: s.target.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Dataset::new(samples, data.image_shape)?;
    out.save(&a.out)?;
    println!("wrote {} corrupted samples to {}", out.len(), a.out.display());
    Ok(())
}

fn experiment_config(model: &Path, data: &Path, m: &MethodArgs) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(model, data);
    cfg.methods = m.methods.clone();
    cfg.layer = m.layer;
    cfg.fg = FgConfig { m: m.m, ..FgConfig::default() };
    cfg.seed = m.seed;
    cfg.mc_reference = m.mc_samples;
    cfg.mc_samples = m.mc_samples;
    cfg
}

/// Target network and the input Gaussian for one dataset sample.
fn single_input(
    cfg: &ExperimentConfig,
    index: usize,
    setting: &NoiseSetting,
    residuals: Option<&Path>,
) -> Result<(Network, Gaussian)> {
    let (net, data) = cfg.load()?;
    ensure!(index < data.len(), "index {index} is out of range for {} samples", data.len());
    let net = net.truncate(cfg.layer.resolve(&net)?)?;
    let input = match residuals {
        Some(path) => {
            let res = Dataset::load(path)?;
            let vectors: Vec<_> = res.samples.into_iter().map(|s| s.input).collect();
            Gaussian::from_estimate(data.samples[index].input.clone(), empirical_covariance(&vectors)?)?
        }
        None => {
            let inputs = SettingInputs::new(&data, setting, 0)?;
            let trial = (0..data.len()).find(|&t| inputs.sample_index(t) == index).unwrap();
            inputs.input(trial)?
        }
    };
    Ok((net, input))
}

fn propagate_cmd(a: PropagateArgs) -> Result<()> {
    let cfg = experiment_config(&a.model, &a.data, &a.method);
    cfg.validate()?;
    let setting = NoiseSetting::new(a.sigma, a.kernel)?;
    let (net, input) = single_input(&cfg, a.index, &setting, a.residuals.as_deref())?;
    let registry = cfg.registry();
    let mut outputs = serde_json::Map::new();
    for m in registry.select(&cfg.methods)? {
        let g = m.propagate(&net, &input, cfg.seed)?;
        outputs.insert(m.name().to_string(), serde_json::to_value(GaussianRecord::from(&g))?);
    }
    let doc = json!({ "index": a.index, "input_dim": input.dim(), "output_dim": net.output_dim(), "methods": outputs });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mut cfg = experiment_config(&a.model, &a.data, &a.method);
    cfg.settings = Vec::new();
    for &s in &a.sigma {
        for &k in &a.kernel {
            cfg.settings.push(NoiseSetting::new(s, k)?);
        }
    }
    cfg.trials = a.trials;
    cfg.alpha = a.alpha;
    cfg.out = Some(a.out.clone());
    let report = run_experiment(&cfg)?;
    print!("{}", format_summary(&report));
    println!("reports written to {}", a.out.display());
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let mut cfg = experiment_config(&a.model, &a.data, &a.method);
    cfg.settings = a.sigma.iter().map(|&s| NoiseSetting::new(s, 1)).collect::<Result<_, _>>()?;
    cfg.trials = a.trials;
    cfg.out = Some(a.out.clone());
    let points = run_ablation(&cfg, a.m_max)?;
    for p in &points {
        println!("m={:<2} mean W2 {:.6}  wall {:.3}s", p.m, p.mean_w2, p.wall_seconds);
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    if let Some(path) = &a.report {
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut rows = Vec::new();
        for s in summary["settings"].as_array().context("summary has no settings")? {
            for m in s["methods"].as_array().context("setting has no methods")? {
                let name = m["method"].as_str().unwrap_or("?").to_string();
                rows.push((s["setting"].as_str().unwrap_or("?").to_string(), name, m["median"].as_f64().unwrap_or(f64::NAN)));
            }
        }
        let out = a.out.join("summary.svg");
        write_svg(&summary_bars(&rows)?, &out)?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let (Some(model), Some(data)) = (&a.model, &a.data) else { bail!("--model and --data are required") };
    let cfg = experiment_config(model, data, &a.method);
    cfg.validate()?;
    let setting = NoiseSetting::new(a.sigma, a.kernel)?;
    let (net, input) = single_input(&cfg, a.index, &setting, None)?;
    let registry = cfg.registry();
    let mut gaussians = Vec::new();
    for m in registry.select(&cfg.methods)? {
        gaussians.push((m.name().to_string(), m.propagate(&net, &input, cfg.seed)?));
    }
    let reference = fgprop_core::propagate::propagate_mc(&net, &input, cfg.mc_reference, cfg.seed ^ 0x5eed)?;
    let mut covs: Vec<_> = gaussians.iter().map(|(n, g)| (n.clone(), g.cov().clone())).collect();
    covs.push(("mc-reference".into(), reference.cov().clone()));
    let heat = a.out.join("covariance.svg");
    write_svg(&heatmap_svg(&covs)?, &heat)?;
    println!("wrote {}", heat.display());
    if net.output_dim() == 2 {
        let samples = reference_samples(&net, &input, cfg.mc_reference, cfg.seed)?;
        let out = a.out.join("ellipses.svg");
        write_svg(&ellipse_svg(&samples, &gaussians)?, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
