use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nbfuse_core::ablation::{prepare_data, run_ablation_suite_with, train_and_evaluate, Split};
use nbfuse_core::checkpoint::{load_checkpoint, read_meta, save_checkpoint};
use nbfuse_core::config::RunConfig;
use nbfuse_core::encoders::{load_embeddings, EmbeddingDims, NUM_CLASSES};
use nbfuse_core::model::{full_model_grad_check, Dataset, FusionModel, GradCheckSetup};
use nbfuse_core::synthdata::{calibration_note, generate};
use nbfuse_core::{Precision, Scalar};

#[derive(Debug, Parser)]
#[command(name = "nbfuse", version, about = "Confidence-gated image/text fusion on synthetic embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic embedding dataset.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint, epoch log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of the complete model's gradients.
    Gradcheck(GradcheckArgs),
    /// Train every ablation variant over several seeds and write the table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Run configuration whose generator keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of text vectors replaced by noise.
    #[arg(long)]
    noise_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train.nbemb and val.nbemb; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding val.nbemb, or a single .nbemb file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Use the default encoder widths, sampling coordinates per tensor.
    #[arg(long)]
    default_dims: bool,
    /// Coordinates per tensor with --default-dims.
    #[arg(long, default_value_t = 300)]
    max_coords: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [42u64, 43, 44, 45, 46])]
    seeds: Vec<u64>,
    /// Shared dataset; each seed generates its own when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| config.out_dir.clone())
        .context("no output directory: pass --out or set out_dir")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_split(dir: &Path, dims: EmbeddingDims) -> Result<Split> {
    let train = load_embeddings(&dir.join("train.nbemb"), Some(dims))?;
    let val = load_embeddings(&dir.join("val.nbemb"), Some(dims))?;
    Ok((train, val))
}

fn dims(config: &RunConfig) -> EmbeddingDims {
    EmbeddingDims {
        image: config.synth.d_i,
        text: config.synth.d_t,
        classes: NUM_CLASSES,
    }
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.synth.seed = seed;
    }
    if let Some(r) = a.noise_rate {
        config.synth.noise_rate = r;
    }
    let ds = generate(&config.synth)?;
    ds.write(&a.out, &calibration_note())?;
    println!(
        "wrote {} train and {} val records to {}",
        ds.train().len(),
        ds.val().len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let config = load_config(a.config.as_deref())?;
    let out = out_dir(a.out, &config)?;
    let provided = match a.data.or_else(|| config.data_dir.clone()) {
        Some(dir) => Some(load_split(&dir, dims(&config))?),
        None => None,
    };
    let data = prepare_data(&config, provided.as_ref())?;
    write(&out.join("config.txt"), &config.to_text())?;
    match config.precision {
        Precision::F32 => train_at::<f32>(&config, &data, &out),
        Precision::F64 => train_at::<f64>(&config, &data, &out),
    }
}

fn train_at<S: Scalar>(config: &RunConfig, data: &Split, out: &Path) -> Result<ExitCode> {
    let outcome = train_and_evaluate::<S>(config, data)?;
    save_checkpoint(&out.join("model.nbck"), &outcome.model, &config.to_text())?;
    write(&out.join("log.txt"), &outcome.log.to_string())?;
    let metrics = outcome.report.to_string();
    write(&out.join("metrics.txt"), &metrics)?;
    print!("{metrics}");
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let meta = read_meta(&bytes)?;
    let file = if a.data.is_dir() { a.data.join("val.nbemb") } else { a.data.clone() };
    let dims = EmbeddingDims {
        image: meta.model.prmf.d_i,
        text: meta.model.prmf.d_t,
        classes: meta.model.prmf.classes,
    };
    let data = Dataset::Embedded(load_embeddings(&file, Some(dims))?);
    let report = match meta.precision {
        Precision::F32 => eval_at::<f32>(&a.model, &data)?,
        Precision::F64 => eval_at::<f64>(&a.model, &data)?,
    };
    let text = report.to_string();
    if let Some(out) = a.out {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join("metrics.txt"), &text)?;
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn eval_at<S: Scalar>(path: &Path, data: &Dataset) -> Result<nbfuse_core::metrics::MetricsReport> {
    let (model, _): (FusionModel<S>, _) = load_checkpoint(path)?;
    Ok(model.evaluate(data)?.1)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut setup = if a.default_dims {
        GradCheckSetup::default_dims(a.max_coords)
    } else {
        GradCheckSetup::default()
    };
    setup.seed = a.seed;
    let report = full_model_grad_check(&setup)?;
    println!("{report}");
    if !report.pass {
        bail!("gradient check failed: max relative error {:.3e}", report.max_rel_error());
    }
    Ok(ExitCode::SUCCESS)
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let config = load_config(a.config.as_deref())?;
    let out = out_dir(a.out, &config)?;
    if a.seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    let data = match a.data.or_else(|| config.data_dir.clone()) {
        Some(dir) => Some(load_split(&dir, dims(&config))?),
        None => None,
    };
    write(&out.join("config.txt"), &config.to_text())?;
    let mut per_seed = String::new();
    let table = run_ablation_suite_with(&config, &a.seeds, data.as_ref(), |v, seed, r| {
        eprintln!("{:<24} seed={seed} acc={:.4}", v.name(), r.acc);
        per_seed.push_str(&format!("variant={} seed={seed}\n{r}", v.name()));
    })?;
    write(&out.join("runs.txt"), &per_seed)?;
    let text = table.to_string();
    write(&out.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}
