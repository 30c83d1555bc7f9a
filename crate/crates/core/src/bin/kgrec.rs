use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kgrec::eval::render_table;
use kgrec::pipeline::{Pipeline, PipelineConfig, StageError};

#[derive(Parser, Debug)]
#[command(
    name = "kgrec",
    version,
    about = "Knowledge-graph embedding recommender",
    after_help = "Any config field can be set with a flag of its dotted name, e.g. --ltr.num_trees 50 or --synth.dominant_relation \"Transmission type\"."
)]
struct Cli {
    /// JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in config to start from before --config and overrides
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Single-threaded, reproducible training
    #[arg(long, global = true)]
    deterministic: bool,

    #[arg(long, global = true, env = "KGREC_WORK_DIR")]
    work_dir: Option<PathBuf>,

    /// Use artifacts even when produced under a different config
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Paper-scale walks and 200-dimensional embeddings
    Default,
    /// Short walks and 32-dimensional embeddings for the synthetic dataset
    Small,
    /// Small sizes over pure subgraphs with profile-average features
    Bench,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    /// Relation features plus the feedback feature
    Full,
    /// Relation features only
    Content,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the planted-preference dataset into data/
    Synth,
    /// Ingest triples and interactions and assign the train/test split
    Ingest,
    /// Write random-walk corpora (optional; embed regenerates them)
    Walk,
    /// Train one embedding table per relation type plus feedback
    Embed,
    /// Compute user-item relatedness features
    Features,
    /// Train the LambdaMART ranker and the factorization baselines
    Train,
    /// Evaluate and write reports
    Eval {
        /// Also evaluate single-feature models and the baselines
        #[arg(long)]
        ablation: bool,
    },
    /// Print the top-n items for a user
    Recommend {
        #[arg(short, long)]
        user: String,
        #[arg(short, default_value_t = 10)]
        n: usize,
        /// Which trained ranker to use
        #[arg(long, value_enum, default_value_t = Model::Full)]
        model: Model,
    },
    /// Run every stage
    All {
        #[arg(long)]
        ablation: bool,
    },
    /// Print the effective config as JSON
    Config,
}

type Overrides = Vec<(String, String)>;

/// Splits `--a.b value` and `--a.b=value` pairs out of the arguments.
fn take_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(flag) if flag.contains('.') && !flag.starts_with('.') => {
                if let Some((k, v)) = flag.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                    overrides.push((flag.to_string(), v));
                }
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn build_config(cli: &Cli, overrides: &[(String, String)]) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => match cli.preset {
            Preset::Default => PipelineConfig::default(),
            Preset::Small => PipelineConfig::small(),
            Preset::Bench => PipelineConfig::bench(),
        },
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(w) = &cli.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), StageError> {
    let cfg = build_config(&cli, &overrides)?;
    if let Command::Config = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        let n = if cfg.deterministic { 1 } else { cfg.threads };
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| StageError::Config(format!("thread pool: {e}")))?;
        }
    }
    let p = Pipeline::new(cfg, cli.force)?;
    match cli.command {
        Command::Synth => p.cmd_synth(),
        Command::Ingest => p.cmd_ingest(),
        Command::Walk => p.cmd_walk(),
        Command::Embed => p.cmd_embed(),
        Command::Features => p.cmd_features(),
        Command::Train => p.cmd_train(),
        Command::Eval { ablation } => {
            let reports = p.cmd_eval(ablation || p.cfg.ablation)?;
            print!("{}", render_table(&reports));
            Ok(())
        }
        Command::Recommend { user, n, model } => {
            for line in p.cmd_recommend(&user, n, model == Model::Content)? {
                println!("{line}");
            }
            Ok(())
        }
        Command::All { ablation } => {
            let mut p = p;
            p.cfg.ablation |= ablation;
            let reports = p.cmd_all()?;
            print!("{}", render_table(&reports));
            Ok(())
        }
        Command::Config => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match take_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
