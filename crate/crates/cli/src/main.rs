// SPDX-License-Identifier: Apache-2.0

//! `snnsim`: run spiking models through the reference and event-driven
//! simulators, and generate seeded toy fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use snnsim_core::report::{render_csv, render_text, RenderOptions};
use snnsim_core::synth::{random_inputs, random_labels, toy_model, ToyConfig};
use snnsim_core::{load_model, run_batch, save_model, CoreError, InputBundle, MaskAxis, Mode, SimConfig};

const EXIT_DIVERGED: u8 = 1;
const EXIT_LOAD: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "snnsim", version, about = "Event-driven spiking accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model over an input bundle.
    Run(RunArgs),
    /// Write a seeded toy model container and input bundle.
    Generate(GenerateArgs),
    /// Print the default simulator configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Reference,
    Eventdriven,
    Compare,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Reference => Mode::Reference,
            ModeArg::Eventdriven => Mode::EventDriven,
            ModeArg::Compare => Mode::Compare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Token,
    Channel,
}

#[derive(Args)]
struct RunArgs {
    /// Model manifest, or the directory holding it.
    #[arg(long)]
    model: PathBuf,
    /// Input bundle file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "compare")]
    mode: ModeArg,
    /// TOML file with simulator constants.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    emit: Emit,
    /// Omit timestamps so identical runs give identical bytes.
    #[arg(long)]
    deterministic_output: bool,
    /// Images processed in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Number of input images.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Input spike density.
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    /// Attach random labels to the inputs.
    #[arg(long)]
    labels: bool,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Input side length (multiple of 8).
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, value_enum, default_value = "token")]
    axis: AxisArg,
    /// Keep raw classifier weights instead of aligning them to the W2TTFS window.
    #[arg(long)]
    unaligned: bool,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) => EXIT_CONFIG,
        CoreError::Graph { .. } | CoreError::Contract(_) | CoreError::MissingWeight { .. } => EXIT_LOAD,
        // the event path broke down: report as a divergence
        CoreError::Ordering { .. } | CoreError::Livelock(_) => EXIT_DIVERGED,
    }
}

fn run(args: RunArgs) -> Result<u8, Failure> {
    let cfg = match &args.config {
        Some(p) => SimConfig::load(p).map_err(|e| fail(EXIT_CONFIG)(e.into()))?,
        None => SimConfig::default(),
    };
    if args.workers == 0 {
        return Err(fail(EXIT_CONFIG)(anyhow::anyhow!("--workers must be at least 1")));
    }
    let model = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))
        .map_err(fail(EXIT_LOAD))?;
    let bundle = InputBundle::read(&args.input)
        .with_context(|| format!("loading inputs {}", args.input.display()))
        .map_err(fail(EXIT_LOAD))?;
    if bundle.shape != model.input_shape() {
        return Err(fail(EXIT_LOAD)(anyhow::anyhow!(
            "inputs are {}, model expects {}",
            bundle.shape,
            model.input_shape()
        )));
    }
    let report = run_batch(&model, &bundle, args.mode.into(), &cfg, args.workers).map_err(|e| Failure {
        code: core_code(&e),
        error: e.into(),
    })?;
    let opts = RenderOptions {
        deterministic: args.deterministic_output,
    };
    let text = match args.emit {
        Emit::Text => render_text(&report, &model, &cfg, opts),
        Emit::Csv => render_csv(&report, opts),
    };
    match &args.report {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing report {}", p.display()))
            .map_err(fail(EXIT_CONFIG))?,
        None => print!("{text}"),
    }
    if report.diverged() {
        eprintln!("snnsim: event-driven run diverged from the reference");
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn generate(args: GenerateArgs) -> Result<u8, Failure> {
    let mut toy = ToyConfig {
        channels: args.channels,
        classes: args.classes,
        align_classifier: !args.unaligned,
        axis: match args.axis {
            AxisArg::Token => MaskAxis::Token,
            AxisArg::Channel => MaskAxis::Channel,
        },
        ..ToyConfig::default()
    };
    toy.input.height = args.size;
    toy.input.width = args.size;
    if !(0.0..=1.0).contains(&args.density) {
        return Err(fail(EXIT_CONFIG)(anyhow::anyhow!("--density must be in [0, 1]")));
    }
    let model = toy_model(args.seed, &toy).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let write = |out: &Path| -> anyhow::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let manifest = save_model(&model, out)?;
        let images = random_inputs(args.seed, model.input_shape(), args.count, args.density);
        let labels = args.labels.then(|| random_labels(args.seed, args.count, args.classes));
        let bundle = InputBundle::new(model.input_shape(), images, labels)?;
        let inputs = out.join("inputs.bin");
        bundle.write(&inputs)?;
        Ok((manifest, inputs))
    };
    let (manifest, inputs) = write(&args.out).map_err(fail(EXIT_LOAD))?;
    println!("model: {}", manifest.display());
    println!("inputs: {}", inputs.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Generate(a) => generate(a),
        Command::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("snnsim: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
