//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure (including a failed gradient check).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::builder::TypedValueParser as _;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::charts::{export_pgm, render_charts, SamplingPolicy, DEFAULT_MAX_POINTS, DEFAULT_RESOLUTION};
use crate::data::{default_chart_selection, load_dataset, save_dataset, split, synthesize_dataset, Dataset, GeneratorParams};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, SuiteOptions};
use crate::model::{ModelConfig, Readout, Variant};
use crate::study::{run_study, StudyKind, StudySpec};
use crate::tensor::{fault, DType};
use crate::train::{evaluate, load_checkpoint, save_checkpoint, train, Split, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "qdist", version, about = "Multimodal q-profile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as JSONL.
    GenData(GenDataArgs),
    /// Render chart stacks of selected records to PGM files.
    Render(RenderArgs),
    /// Train a model; writes a checkpoint and a metrics CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint; prints `mse=<value>`.
    Eval(EvalArgs),
    /// Run an ablation study over settings × seeds.
    Ablate(AblateArgs),
    /// Finite-difference check of every op and the tiny model.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1200, value_parser = clap::value_parser!(u64).range(1..))]
    num: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = crate::data::DEFAULT_GRID, value_parser = clap::value_parser!(u64).range(2..).map(|v| v as usize))]
    grid: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Fraction of non-chart indicators replaced by noise.
    #[arg(long, default_value_t = 0.5)]
    distractors: f64,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_POINTS)]
    max_points: usize,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Record ids (comma separated); all records when omitted.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Full-size architecture.
    Full,
    /// Small architecture used by the ablation runner.
    Desk,
    /// Minimal architecture for smoke tests.
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

/// Architecture flags; anything unset comes from the preset.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Raw vector length n.
    #[arg(long)]
    raw_len: Option<usize>,
    #[arg(long)]
    mlp_layers: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    /// Conv stage widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    conv_channels: Option<Vec<usize>>,
    #[arg(long)]
    heads: Option<usize>,
    /// Fusion Transformer blocks L.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    ffn_mult: Option<usize>,
    /// Chart height and width.
    #[arg(long)]
    resolution: Option<usize>,
    /// Interval-sampling cap M.
    #[arg(long)]
    max_points: Option<usize>,
    /// Target grid size; taken from the data when omitted.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_parser = parse_readout)]
    readout: Option<Readout>,
}

fn parse_readout(s: &str) -> std::result::Result<Readout, String> {
    match s {
        "mean" => Ok(Readout::Mean),
        "first" => Ok(Readout::First),
        _ => Err(format!("unknown readout `{s}` (expected mean or first)")),
    }
}

impl ModelArgs {
    fn build(&self, default: Preset, data_grid: Option<usize>) -> ModelConfig {
        let mut c = match self.preset.unwrap_or(default) {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {$(
                if let Some(v) = &self.$flag {
                    c.$field = v.clone();
                }
            )*};
        }
        set!(raw_len <- raw_len, mlp_layers <- mlp_layers, mlp_hidden <- mlp_hidden,
             d_model <- d_model, conv_channels <- conv_channels, heads <- heads,
             fusion_blocks <- blocks, ffn_mult <- ffn_mult, max_points <- max_points,
             readout <- readout);
        if let Some(r) = self.resolution {
            c.height = r;
            c.width = r;
        }
        match (self.grid, data_grid) {
            (Some(g), _) | (None, Some(g)) => c.grid = g,
            (None, None) => {}
        }
        c
    }
}

/// Where the test split comes from.
#[derive(Args, Debug)]
struct TestArgs {
    /// Separate test file.
    #[arg(long, conflicts_with = "test_fraction")]
    test_data: Option<PathBuf>,
    /// Hold out this fraction of --data as the test split.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Shuffle seed of the hold-out split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl TestArgs {
    fn resolve(&self, data: Dataset, default_fraction: Option<f64>) -> Result<(Dataset, Option<Dataset>)> {
        if let Some(path) = &self.test_data {
            return Ok((data, Some(load_dataset(path)?)));
        }
        match self.test_fraction.or(default_fraction) {
            Some(f) => {
                let (tr, te) = split(&data, f, self.split_seed)?;
                Ok((tr, Some(te)))
            }
            None => Ok((data, None)),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long, default_value = "multimodal")]
    variant: Variant,
    #[arg(long, default_value_t = 130)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f64")]
    dtype: Precision,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Wall-clock column of the metrics; `off` writes zeros.
    #[arg(long, value_enum, default_value = "on")]
    timing: Switch,
    #[arg(long, default_value = "model.qdf")]
    ckpt: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Evaluate only the held-out part of --data.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    study: StudyKind,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Sweep values, overriding the study's default sweep.
    #[arg(long, value_delimiter = ',')]
    settings: Option<Vec<String>>,
    /// Per-run CSV.
    #[arg(long, default_value = "study.csv")]
    out: PathBuf,
    /// Per-setting medians CSV; printed to stdout either way.
    #[arg(long)]
    medians: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    dtype: Option<Precision>,
    #[arg(long, value_enum, default_value = "on")]
    timing: Switch,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Random seeds per op.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Corrupt an op's backward pass on purpose.
    #[arg(long, hide = true, value_parser = ["sigmoid"])]
    inject_fault: Option<String>,
}

fn dtype(p: Precision) -> DType {
    match p {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    }
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let params = GeneratorParams {
        num_records: a.num as usize,
        grid: a.grid,
        noise: a.noise,
        distractor_fraction: a.distractors,
        ..GeneratorParams::default()
    };
    let ds = synthesize_dataset(&params, a.seed)?;
    save_dataset(&ds, &a.out)?;
    writeln!(out, "wrote {} records to {}", ds.len(), a.out.display())?;
    Ok(())
}

fn render(a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let policy = SamplingPolicy::new(a.max_points)?;
    let selection = default_chart_selection();
    let records: Vec<_> = if a.ids.is_empty() {
        ds.records().iter().collect()
    } else {
        a.ids
            .iter()
            .map(|id| ds.get(id).ok_or_else(|| Error::Config(format!("no record with id `{id}`"))))
            .collect::<Result<_>>()?
    };
    let mut files = 0;
    for r in records {
        let stack = render_charts(r, &selection, policy, a.resolution, a.resolution)?;
        files += export_pgm(&stack, &r.id, &selection, &a.out)?.len();
    }
    writeln!(out, "wrote {files} PGM files to {}", a.out.display())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (train_set, test_set) = a.test.resolve(load_dataset(&a.data)?, None)?;
    let model = a.model.build(Preset::Full, train_set.grid_size());
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        seed: a.seed,
        variant: a.variant,
        dtype: dtype(a.dtype),
        eval_every: a.eval_every,
        timing: a.timing == Switch::On,
    };
    let outcome = train(&model, &config, &train_set, test_set.as_ref())?;
    save_checkpoint(&outcome.checkpoint, &a.ckpt)?;
    outcome.metrics.write_csv(&a.metrics)?;
    let show = |s| outcome.metrics.last(s).map(|v| format!("{v:?}")).unwrap_or_else(|| "-".into());
    writeln!(
        out,
        "train_mse={} test_mse={} charts_rendered={}",
        show(Split::Train),
        show(Split::Test),
        outcome.charts_rendered
    )?;
    writeln!(out, "checkpoint {} metrics {}", a.ckpt.display(), a.metrics.display())?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let mut ds = load_dataset(&a.data)?;
    if let Some(f) = a.test_fraction {
        ds = split(&ds, f, a.split_seed)?.1;
    }
    let mse = evaluate(&ck, &ds, a.batch)?;
    writeln!(out, "mse={mse:?}")?;
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let (train_set, test_set) = a.test.resolve(load_dataset(&a.data)?, Some(1.0 / 6.0))?;
    let test_set = test_set.expect("a default fraction is always given");
    let mut spec = StudySpec::desk(a.study);
    spec.seeds = a.seeds.clone();
    if let Some(s) = &a.settings {
        spec.settings = s.clone();
    }
    spec.model = a.model.build(Preset::Desk, train_set.grid_size());
    let t = &mut spec.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lr = a.lr.unwrap_or(t.lr);
    t.batch_size = a.batch.unwrap_or(t.batch_size);
    t.dtype = a.dtype.map(dtype).unwrap_or(t.dtype);
    t.timing = a.timing == Switch::On;

    let result = run_study(&spec, &train_set, &test_set, |row| {
        let mse = row.test_mse.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        eprintln!("{} {}={} seed={} test_mse={mse} {}", row.study, row.study, row.setting, row.seed, row.status);
    })?;
    result.write_csv(&a.out)?;
    let medians = result.medians_csv();
    if let Some(path) = &a.medians {
        std::fs::write(path, &medians)?;
    }
    write!(out, "{medians}")?;
    Ok(())
}

fn grad_check(a: &GradCheckArgs, out: &mut dyn Write) -> Result<bool> {
    if a.inject_fault.is_some() {
        fault::set_sigmoid_backward(true);
    }
    let report = run_suite(&SuiteOptions {
        seeds: a.seeds,
        eps: a.eps,
        model_seeds: a.seeds,
    });
    fault::set_sigmoid_backward(false);
    let report = report?;
    writeln!(out, "{report}")?;
    Ok(report.passed())
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Render(a) => render(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::GradCheck(a) => match grad_check(a, out) {
            Ok(true) => Ok(()),
            Ok(false) => {
                let _ = writeln!(err, "error: gradient check failed");
                return EXIT_FAILURE;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

/// [`run_with`] on the process arguments and standard streams.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
