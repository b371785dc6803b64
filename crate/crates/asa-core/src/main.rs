//! Command-line harness for end-to-end experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use asa_core::adapt::{adapt, train_si, AdaptConfig, Method, SiTrainConfig, Supervision};
use asa_core::datagen::{
    default_corpus, load_acoustic_model, load_dataset, save_checkpoint, save_dataset,
    validate_model_dataset, CorpusConfig,
};
use asa_core::harness::{
    build_cells, distribution_diagnostics, frame_error_rate, run_experiment, ProbeConfig,
    SweepPlan,
};
use asa_core::Result;

#[derive(Parser)]
#[command(
    name = "asa",
    about = "Adversarial speaker adaptation experiments on synthetic multi-speaker data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: SI speakers, target adaptation sets
    /// and a held-out target test set.
    GenData(GenDataArgs),
    /// Train the speaker-independent model on pooled SI speakers.
    TrainSi(TrainSiArgs),
    /// Adapt the SI model to the target speaker with one method.
    Adapt(AdaptArgs),
    /// Evaluate a model on a test set (FER, plus distribution diagnostics
    /// against an SI reference when given).
    Eval(EvalArgs),
    /// Run a full method/size/seed grid and write a CSV report.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the dataset files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    feature_dim: usize,
    #[arg(long, default_value_t = 10)]
    num_senones: usize,
    #[arg(long, default_value_t = 8)]
    num_si_speakers: usize,
    #[arg(long, default_value_t = 2000)]
    frames_per_speaker: usize,
    /// Adaptation set sizes; each is a prefix of the largest.
    #[arg(long, value_delimiter = ',', default_values_t = vec![50, 100, 200, 400])]
    adapt_sizes: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    test_frames: usize,
    /// Norm of the target speaker's shift (the mismatch to adapt away).
    #[arg(long, default_value_t = 3.0)]
    target_shift: f64,
    /// Target speaker rotation angle in radians.
    #[arg(long, default_value_t = 0.3)]
    target_rotation: f64,
}

#[derive(Args)]
struct TrainSiArgs {
    /// Dataset files to pool for SI training.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Checkpoint path for the trained SI model.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![32, 32, 32, 6])]
    hidden: Vec<usize>,
    /// Hidden layers assigned to the feature extractor.
    #[arg(long, default_value_t = 4)]
    n_h: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct AdaptArgs {
    /// SI model checkpoint.
    #[arg(long)]
    si: PathBuf,
    /// Adaptation dataset for the target speaker.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path for the adapted SD model.
    #[arg(long)]
    out: PathBuf,
    /// Optional checkpoint path for the trained discriminator.
    #[arg(long)]
    disc_out: Option<PathBuf>,
    /// finetune | kld | asa | asa-sp
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.02)]
    mu: f64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 25)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// supervised | unsupervised
    #[arg(long, default_value = "supervised")]
    supervision: String,
    #[arg(long, default_value_t = 4)]
    n_h: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 64])]
    disc_hidden: Vec<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    /// Test dataset.
    #[arg(long)]
    test: PathBuf,
    /// SI reference checkpoint; enables probe and MMD diagnostics.
    #[arg(long)]
    si: Option<PathBuf>,
    /// Representation for the diagnostics: features | posteriors
    #[arg(long, default_value = "features")]
    space: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// SI model checkpoint.
    #[arg(long)]
    si: PathBuf,
    /// Directory holding target_adapt_<size>.asad files.
    #[arg(long)]
    data_dir: PathBuf,
    /// Target test dataset.
    #[arg(long)]
    test: PathBuf,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "finetune,kld,asa")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 3.0, 5.0])]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.5, 0.8])]
    rhos: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![50, 100, 200, 400])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    /// supervised | unsupervised
    #[arg(long, default_value = "supervised")]
    supervision: String,
    #[arg(long, default_value_t = 0.02)]
    mu: f64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 25)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    n_h: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 64])]
    disc_hidden: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Worker threads for sweep cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Suppress the timestamp header so reruns are byte-identical.
    #[arg(long, default_value_t = false)]
    deterministic: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::TrainSi(args) => run_train_si(args),
        Command::Adapt(args) => run_adapt(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = CorpusConfig {
        feature_dim: args.feature_dim,
        num_senones: args.num_senones,
        num_si_speakers: args.num_si_speakers,
        frames_per_si_speaker: args.frames_per_speaker,
        adapt_sizes: args.adapt_sizes.clone(),
        test_frames: args.test_frames,
        target_shift_norm: args.target_shift,
        target_rotation: args.target_rotation,
        seed: args.seed,
        ..CorpusConfig::default()
    };
    let corpus = default_corpus(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (i, speaker) in corpus.si_speakers.iter().enumerate() {
        let path = args.out_dir.join(format!("si_spk{i:02}.asad"));
        save_dataset(speaker, &path)?;
        println!("wrote {} ({} frames)", path.display(), speaker.len());
    }
    for &size in &corpus.adapt_sizes {
        let subset = corpus.adapt_set(size)?;
        let path = args.out_dir.join(format!("target_adapt_{size}.asad"));
        save_dataset(&subset, &path)?;
        println!("wrote {} ({} frames)", path.display(), subset.len());
    }
    let test_path = args.out_dir.join("target_test.asad");
    save_dataset(&corpus.test, &test_path)?;
    println!("wrote {} ({} frames)", test_path.display(), corpus.test.len());
    Ok(())
}

fn run_train_si(args: TrainSiArgs) -> Result<()> {
    let mut parts = Vec::new();
    for path in &args.data {
        parts.push(load_dataset(path)?);
    }
    let pooled = asa_core::datagen::FrameDataset::concat(&parts)?;
    println!(
        "training SI model on {} pooled frames from {} files",
        pooled.len(),
        parts.len()
    );
    let cfg = SiTrainConfig {
        hidden: args.hidden,
        n_h: args.n_h,
        epochs: args.epochs,
        mu: args.mu,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let (model, trace) = train_si(&pooled, &cfg)?;
    if let Some(last) = trace.epochs.last() {
        println!(
            "final epoch: senone loss {:.4}, update norm {:.4}",
            last.senone_loss, last.update_norm
        );
    }
    let train_fer = frame_error_rate(&model, &pooled)?;
    println!("training-set FER {:.4}", train_fer);
    save_checkpoint(&model.into(), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_adapt(args: AdaptArgs) -> Result<()> {
    let si = load_acoustic_model(&args.si)?;
    let data = load_dataset(&args.data)?;
    validate_model_dataset(&si, &data)?;
    let cfg = AdaptConfig {
        method: Method::from_str(&args.method)?,
        lambda: args.lambda,
        rho: args.rho,
        mu: args.mu,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        supervision: Supervision::from_str(&args.supervision)?,
        n_h: args.n_h,
        disc_hidden: args.disc_hidden,
    };
    println!(
        "adapting with {} on {} frames ({})",
        cfg.method,
        data.len(),
        cfg.supervision.as_str()
    );
    let outcome = adapt(&si, &data, &cfg)?;
    if let Some(last) = outcome.trace.epochs.last() {
        match last.disc_loss {
            Some(d) => println!(
                "final epoch: senone loss {:.4}, disc loss {:.4}",
                last.senone_loss, d
            ),
            None => println!("final epoch: senone loss {:.4}", last.senone_loss),
        }
    }
    save_checkpoint(&outcome.model.into(), &args.out)?;
    println!("wrote {}", args.out.display());
    if let (Some(path), Some(disc)) = (&args.disc_out, outcome.discriminator) {
        save_checkpoint(&disc.into(), path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let model = load_acoustic_model(&args.model)?;
    let test = load_dataset(&args.test)?;
    let fer = frame_error_rate(&model, &test)?;
    println!("fer {:.6}", fer);
    if let Some(si_path) = &args.si {
        let si = load_acoustic_model(si_path)?;
        let method = match args.space.as_str() {
            "features" => Method::Asa,
            "posteriors" => Method::AsaSp,
            other => {
                return Err(asa_core::Error::InvalidInput(format!(
                    "unknown space '{other}' (expected features|posteriors)"
                )))
            }
        };
        let (probe_acc, divergence) = distribution_diagnostics(
            method,
            &model,
            &si,
            &test.features,
            &ProbeConfig::default(),
            args.bandwidth,
            args.seed,
        )?;
        println!("probe_acc {:.6}", probe_acc);
        println!("mmd {:.6}", divergence.max(0.0));
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|m| Method::from_str(m))
        .collect::<Result<_>>()?;
    let cells = build_cells(&methods, &args.lambdas, &args.rhos, &args.sizes);
    let mut adapt_datasets = BTreeMap::new();
    for &size in &args.sizes {
        adapt_datasets.insert(
            size,
            args.data_dir.join(format!("target_adapt_{size}.asad")),
        );
    }
    let plan = SweepPlan {
        cells,
        seeds: args.seeds.clone(),
        si_checkpoint: args.si.clone(),
        adapt_datasets,
        test_dataset: args.test.clone(),
        base: AdaptConfig {
            method: Method::Finetune,
            lambda: 0.0,
            rho: 0.0,
            mu: args.mu,
            epochs: args.epochs,
            batch_size: args.batch_size,
            seed: 0,
            supervision: Supervision::from_str(&args.supervision)?,
            n_h: args.n_h,
            disc_hidden: args.disc_hidden.clone(),
        },
        probe: ProbeConfig::default(),
        bandwidth: args.bandwidth,
        jobs: args.jobs,
        deterministic: args.deterministic,
    };
    println!(
        "sweep: {} cells x {} seeds on {} workers",
        plan.cells.len(),
        plan.seeds.len(),
        plan.jobs
    );
    let report = run_experiment(&plan, &args.out)?;
    println!("wrote {}", args.out.display());
    println!("aggregates:");
    for row in &report.aggregates {
        println!(
            "  {:>8} lambda={:<4} rho={:<4} frames={:<5} fer={:.4} probe={:.4} mmd={:.4}",
            row.method, row.lambda, row.rho, row.adapt_frames, row.fer, row.probe_accuracy,
            row.mmd
        );
    }
    Ok(())
}
