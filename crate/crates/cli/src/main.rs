mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mixcomp::diffusion::{BackboneKind, Variant};

use config::RunConfig;
use rundir::RunDir;

/// A sampled output that broke the known-region contract.
#[derive(Debug)]
pub struct ContractViolation(pub String);

impl std::fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ContractViolation {}

#[derive(Parser, Debug)]
#[command(
    name = "mixcomp",
    version,
    about = "Reference-guided composition experiments on synthetic scenes"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent of the run directory (default: $MIXCOMP_RUN_ROOT, then ./runs).
    #[arg(long, global = true)]
    out_root: Option<PathBuf>,
    /// Run directory name (default: the command name).
    #[arg(long, global = true)]
    name: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Existing dataset directory instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of generated samples.
    #[arg(long)]
    count: Option<usize>,
    /// Seed of the first generated sample.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    augment: bool,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long, value_parser = parse_backbone)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// DiT patch size.
    #[arg(long)]
    patch: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct EvalArgs {
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic composition dataset.
    Gen {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        augment: bool,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Inpaint held-out samples with a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reference_free: bool,
    },
    /// Train all three variants identically and profile layerwise ℓ2.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Feature-consistency report for a checkpoint.
    Conlab {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Extra checkpoints for the ℓ2 profile, as NAME=PATH.
        #[arg(long = "compare", value_parser = parse_named_path)]
        compare: Vec<(String, PathBuf)>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Pair frames from a directory of PPM frames and PGM masks.
    Curate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        sobel_threshold: Option<f64>,
        #[arg(long)]
        laplacian_threshold: Option<f64>,
        #[arg(long)]
        mask_threshold: Option<f64>,
        #[arg(long)]
        cluster_threshold: Option<f64>,
    },
    /// PSNR and SSIM over same-named PPM files.
    Metrics {
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Ablate { .. } => "ablate",
            Command::Conlab { .. } => "conlab",
            Command::Curate { .. } => "curate",
            Command::Metrics { .. } => "metrics",
        }
    }
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    match s {
        "unet" => Ok(BackboneKind::Unet),
        "dit" => Ok(BackboneKind::Dit),
        _ => Err(format!("unknown backbone {s:?} (expected unet or dit)")),
    }
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data.dir = self.data;
        }
        set(&mut cfg.data.count, self.count);
        set(&mut cfg.data.seed, self.data_seed);
        cfg.data.augment |= self.augment;
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.model.kind, self.backbone);
        set(&mut cfg.model.variant, self.variant);
        set(&mut cfg.model.init_seed, self.init_seed);
        if let Some(t) = self.timesteps {
            cfg.model.set_timesteps(t);
        }
        set(&mut cfg.model.dit.patch, self.patch);
    }
}

impl TrainArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.train.steps, self.steps);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.lr, self.lr);
        set(&mut cfg.train.seed, self.seed);
    }
}

impl EvalArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.eval.draws, self.draws);
        set(&mut cfg.eval.seed, self.eval_seed);
        set(&mut cfg.eval.samples, self.eval_samples);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.command = cli.command.name().to_string();
    let dir_name = cli.name.clone().unwrap_or_else(|| cfg.command.clone());

    enum Job {
        Gen,
        Train,
        Sample(PathBuf),
        Ablate,
        Conlab(PathBuf, Vec<(String, PathBuf)>),
        Curate(PathBuf),
        Metrics(PathBuf, PathBuf),
    }
    let job = match cli.command {
        Command::Gen { count, seed, augment } => {
            set(&mut cfg.data.count, count);
            set(&mut cfg.data.seed, seed);
            cfg.data.augment |= augment;
            Job::Gen
        }
        Command::Train { data, model, train } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            Job::Train
        }
        Command::Sample {
            checkpoint,
            data,
            count,
            steps,
            seed,
            reference_free,
        } => {
            if data.is_some() {
                cfg.data.dir = data;
            }
            set(&mut cfg.sample.count, count);
            set(&mut cfg.sample.steps, steps);
            set(&mut cfg.sample.seed, seed);
            cfg.sample.reference_free |= reference_free;
            Job::Sample(checkpoint)
        }
        Command::Ablate {
            data,
            model,
            train,
            eval,
        } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            eval.apply(&mut cfg);
            Job::Ablate
        }
        Command::Conlab {
            checkpoint,
            compare,
            data,
            eval,
        } => {
            if data.is_some() {
                cfg.data.dir = data;
            }
            eval.apply(&mut cfg);
            Job::Conlab(checkpoint, compare)
        }
        Command::Curate {
            frames,
            sobel_threshold,
            laplacian_threshold,
            mask_threshold,
            cluster_threshold,
        } => {
            set(&mut cfg.curation.filters.sobel_threshold, sobel_threshold);
            set(&mut cfg.curation.filters.laplacian_threshold, laplacian_threshold);
            set(&mut cfg.curation.filters.mask_threshold, mask_threshold);
            set(&mut cfg.curation.cluster_threshold, cluster_threshold);
            Job::Curate(frames)
        }
        Command::Metrics { outputs, gt } => Job::Metrics(outputs, gt),
    };
    cfg.validate()?;

    let run = RunDir::create(cli.out_root.as_deref(), &dir_name)?;
    run.echo_config(&cfg)?;
    eprintln!("run directory {}", run.path.display());
    match job {
        Job::Gen => commands::gen(&cfg, &run),
        Job::Train => commands::train_cmd(&cfg, &run),
        Job::Sample(ck) => commands::sample(&cfg, &run, &ck),
        Job::Ablate => commands::ablate(&cfg, &run),
        Job::Conlab(ck, compare) => commands::conlab(&cfg, &run, &ck, &compare),
        Job::Curate(frames) => commands::curate(&cfg, &run, &frames),
        Job::Metrics(outputs, gt) => commands::metrics(&run, &outputs, &gt),
    }
}

/// 1 usage or configuration error, 2 data error, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ContractViolation>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<mixcomp::Error>() {
            return match e {
                mixcomp::Error::Config(_) => 1,
                mixcomp::Error::NonFinite(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
