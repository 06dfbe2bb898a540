use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tactile_zsl::config::RunConfig;
use tactile_zsl::data::{gen_synthetic, SyntheticConfig};
use tactile_zsl::format::{load_dataset, load_model, save_dataset, save_labels, save_matrix, save_model};
use tactile_zsl::metrics::CosineMode;
use tactile_zsl::networks::{FeatureDims, Modality, VaeGanModel};
use tactile_zsl::pipeline::{ablation_suite, diagnostics, run_gzsl, run_zsl, synthesize_untouched};
use tactile_zsl::trainer::train_with_snapshots;
use tactile_zsl::data::TouchedPart;
use tactile_zsl::{Error, Result};

#[derive(Parser)]
#[command(name = "tactile-zsl", version, about = "Zero-shot tactile recognition from visual and semantic cues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    GenData(GenDataArgs),
    /// Train the feature generator on touched classes.
    Train(TrainArgs),
    /// Synthesize tactile features for untouched classes.
    Synth(EvalArgs),
    /// Conventional zero-shot evaluation on untouched classes.
    EvalZsl(EvalArgs),
    /// Generalized zero-shot evaluation with the novelty gate.
    EvalGzsl(EvalArgs),
    /// Distribution diagnostics of synthesized against real features.
    Diag(EvalArgs),
    /// Train and evaluate all encoder/fusion ablations over several seeds.
    AblateSuite(AblateArgs),
}

#[derive(Args, Clone)]
struct SynthDataArgs {
    #[arg(long, default_value_t = 10)]
    touched: usize,
    #[arg(long, default_value_t = 2)]
    val: usize,
    #[arg(long, default_value_t = 3)]
    untouched: usize,
    #[arg(long, default_value_t = 32)]
    d_v: usize,
    #[arg(long, default_value_t = 16)]
    d_s: usize,
    #[arg(long, default_value_t = 24)]
    d_x: usize,
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Give two untouched classes the same semantic vector.
    #[arg(long)]
    shared_untouched_semantics: bool,
}

impl SynthDataArgs {
    fn config(&self, seed: u64) -> Result<SyntheticConfig> {
        if self.touched == 0 || self.val == 0 || self.untouched == 0 {
            return Err(Error::Usage("--touched, --val and --untouched must be at least 1".into()));
        }
        Ok(SyntheticConfig {
            touched: self.touched,
            validation: self.val,
            untouched: self.untouched,
            dims: FeatureDims {
                d_v: self.d_v,
                d_s: self.d_s,
                d_x: self.d_x,
            },
            samples_per_class: self.samples,
            noise: self.noise,
            shared_untouched_semantics: self.shared_untouched_semantics,
            seed,
            ..SyntheticConfig::default()
        })
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: SynthDataArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablate {
    NoEncoder,
    NoFusion,
}

/// Run options shared by every command; flags override the config file.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_generator: Option<f64>,
    #[arg(long)]
    lr_discriminator: Option<f64>,
    /// Decay on the generator's input-layer weights; 0 disables it.
    #[arg(long)]
    input_decay: Option<f64>,
    /// Synthetic rows per untouched class.
    #[arg(long = "per-class")]
    per_class: Option<usize>,
    #[arg(long)]
    projections: Option<usize>,
    /// overall, class-mean or pairwise.
    #[arg(long)]
    cosine_mode: Option<String>,
    /// multimodal, visual or semantic.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablate>,
    #[arg(long)]
    classifier_iterations: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(v) = self.iterations {
            cfg.train.iterations = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr_encoder {
            cfg.train.lr_encoder = v;
        }
        if let Some(v) = self.lr_generator {
            cfg.train.lr_generator = v;
        }
        if let Some(v) = self.lr_discriminator {
            cfg.train.lr_discriminator = v;
        }
        if let Some(v) = self.input_decay {
            cfg.train.generator_input_decay = v;
        }
        if let Some(v) = self.per_class {
            cfg.per_class_count = v;
        }
        if let Some(v) = self.projections {
            cfg.projections = v;
        }
        if let Some(v) = self.classifier_iterations {
            cfg.classifier.iterations = v;
        }
        if let Some(m) = &self.cosine_mode {
            cfg.cosine_mode = CosineMode::parse(m)
                .ok_or_else(|| Error::Usage(format!("unknown cosine mode {m:?}")))?;
        }
        if let Some(m) = &self.modality {
            cfg.model.modality =
                Modality::parse(m).ok_or_else(|| Error::Usage(format!("unknown modality {m:?}")))?;
        }
        for a in &self.ablate {
            match a {
                Ablate::NoEncoder => cfg.model.use_encoder = false,
                Ablate::NoFusion => cfg.model.use_fusion = false,
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory, or a `.bin` path for the model file.
    #[arg(long)]
    out: PathBuf,
    /// Save a model snapshot every N iterations.
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of seeds, counted from --first-seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Use one fixed dataset instead of generating one per seed.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    synthetic: SynthDataArgs,
    #[command(flatten)]
    run: RunArgs,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_eval_inputs(args: &EvalArgs) -> Result<(VaeGanModel, tactile_zsl::data::Dataset, RunConfig)> {
    let cfg = args.run.resolve()?;
    cfg.validate()?;
    let (model, _) = load_model(&args.model)?;
    let ds = load_dataset(&args.data)?;
    out_dir(&args.out)?;
    Ok((model, ds, cfg))
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let ds = gen_synthetic(&args.data.config(args.seed)?)?;
    let manifest = save_dataset(&ds, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(n) = args.snapshot_every {
        cfg.train.snapshot_every = n;
    }
    let ds = load_dataset(&args.data)?;
    cfg.adopt_dims(ds.meta.dims);
    cfg.validate()?;

    let (dir, model_path) = if args.out.extension().is_some_and(|e| e == "bin") {
        let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, args.out.clone())
    } else {
        (args.out.clone(), args.out.join("model.bin"))
    };
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    out_dir(&dir)?;

    let set = ds.touched(TouchedPart::Train {
        stride: cfg.holdout_stride,
    })?;
    let mut model = VaeGanModel::new(cfg.model.clone(), cfg.seed)?;
    let snap_dir = dir.join("snapshots");
    let log = train_with_snapshots(&mut model, &set, &cfg.train, |m, it| {
        out_dir(&snap_dir)?;
        save_model(&snap_dir.join(format!("model_{it:06}.bin")), m, None)
    })?;
    save_model(&model_path, &model, None)?;
    log.save_csv(&dir.join("train_log.csv"))?;
    write(&dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!("{}", model_path.display());
    Ok(())
}

fn synth(args: &EvalArgs) -> Result<()> {
    let (model, ds, cfg) = load_eval_inputs(args)?;
    let syn = synthesize_untouched(&model, &ds, &cfg)?;
    save_matrix(&args.out.join("synthetic.vszt"), &syn.features)?;
    save_labels(&args.out.join("synthetic_labels.u32"), &syn.labels)?;
    Ok(())
}

fn eval_zsl(args: &EvalArgs) -> Result<()> {
    let (model, ds, cfg) = load_eval_inputs(args)?;
    let out = run_zsl(&model, &ds, &cfg)?;
    write(&args.out.join("zsl_report.json"), out.report.to_json()?)?;
    write(&args.out.join("zsl_confusion.csv"), out.confusion.to_csv(&out.class_names))?;
    println!("average accuracy {:.4}", out.report.average_accuracy);
    Ok(())
}

fn eval_gzsl(args: &EvalArgs) -> Result<()> {
    let (model, ds, cfg) = load_eval_inputs(args)?;
    let out = run_gzsl(&model, &ds, &cfg)?;
    write(&args.out.join("gzsl_report.json"), out.report.to_json()?)?;
    write(&args.out.join("gzsl_confusion.csv"), out.confusion.to_csv(&out.class_names))?;
    write(&args.out.join("threshold_sweep.csv"), out.sweep.to_csv())?;
    save_model(&args.out.join("model_gated.bin"), &model, Some(&out.gate))?;
    let r = &out.report;
    println!(
        "acc_t {:.4} acc_u {:.4} H {:.4}",
        r.acc_t.unwrap_or(f64::NAN),
        r.acc_u.unwrap_or(f64::NAN),
        r.h.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn diag(args: &EvalArgs) -> Result<()> {
    let (model, ds, cfg) = load_eval_inputs(args)?;
    let (d, pca, tags) = diagnostics(&model, &ds, &cfg)?;
    write(&args.out.join("diagnostics.json"), serde_json::to_string_pretty(&d)? + "\n")?;
    let mut csv = String::from("label,source,pc1,pc2\n");
    for ((label, synthetic), r) in tags.iter().zip(pca.coords.iter_rows()) {
        let source = if *synthetic { "synthetic" } else { "real" };
        csv.push_str(&format!("{label},{source},{},{}\n", r[0], r[1]));
    }
    write(&args.out.join("pca.csv"), csv)?;
    println!("wasserstein {:.6} mean_cosine {:.6}", d.wasserstein, d.mean_cosine);
    Ok(())
}

fn ablate_suite(args: &AblateArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let seeds: Vec<u64> = (args.first_seed..args.first_seed + args.seeds).collect();
    if seeds.is_empty() {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let fixed = args.data.as_deref().map(load_dataset).transpose()?;
    let summary = ablation_suite(&cfg, &seeds, |seed| match &fixed {
        Some(ds) => Ok(ds.clone()),
        None => gen_synthetic(&args.synthetic.config(seed)?),
    })?;
    out_dir(&args.out)?;
    write(&args.out.join("ablation.csv"), summary.to_csv())?;
    write(&args.out.join("ablation.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for (name, acc) in &summary.mean_accuracy {
        println!("{name}: accuracy {acc:.4} wasserstein {:.4}", summary.mean_wasserstein[name]);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::EvalZsl(a) => eval_zsl(a),
        Command::EvalGzsl(a) => eval_gzsl(a),
        Command::Diag(a) => diag(a),
        Command::AblateSuite(a) => ablate_suite(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
