use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pfml_core::field::GridBounds;
use pfml_experiments::config::ExperimentConfig;
use pfml_experiments::pipeline::RunError;
use pfml_experiments::runner::{self, CheckKind, Context, GridOptions, Status};

#[derive(Parser)]
#[command(name = "pfml", version, about = "Potential-field metric learning experiments")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for multi-run commands.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, with wall-clock fields zeroed.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset to dataset.csv.
    Gen,
    /// Train once and evaluate zero-shot retrieval.
    Train,
    /// Clean vs noisy labels for both kernels over several seeds.
    NoiseBench,
    /// Sweep one hyperparameter over several seeds.
    Ablate,
    /// Sample a class potential of a planar charge file.
    FieldGrid {
        #[arg(long)]
        charges: PathBuf,
        #[arg(long = "class", default_value_t = 0)]
        class_id: usize,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// `x_min,x_max,y_min,y_max`.
        #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
        bounds: Option<GridBounds>,
    },
    /// Run a numerical check; exits 1 when it fails.
    Check {
        kind: CheckArg,
        /// Instances (prop1), trials (corollary1) or snapshots per cell (gradcheck).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Optimal proxy-to-data alignment of two point files.
    W2 {
        #[arg(long)]
        proxies: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    Prop1,
    Corollary1,
    Gradcheck,
}

fn parse_bounds(s: &str) -> Result<GridBounds, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x_min, x_max, y_min, y_max] => Ok(GridBounds {
            x_min,
            x_max,
            y_min,
            y_max,
        }),
        _ => Err(format!("expected 4 comma-separated numbers, got {}", v.len())),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let (name, text) = match &cli.config {
        Some(path) => (
            path.display().to_string(),
            std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?,
        ),
        None => ("<defaults>".to_string(), String::new()),
    };
    let mut cfg = ExperimentConfig::load(&name, &text, |k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Status, RunError> {
    let cfg = load_config(cli).map_err(|e| match e {
        // An unreadable config file is a configuration error.
        RunError::Io { path, source } => RunError::input(path, 0, source.to_string()),
        other => other,
    })?;
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .expect("thread pool is configured once");
    }
    let ctx = Context {
        out_dir: cfg.output_dir.clone(),
        deterministic: cli.deterministic,
    };
    match &cli.command {
        Command::Gen => runner::gen(&cfg, &ctx),
        Command::Train => runner::train(&cfg, &ctx),
        Command::NoiseBench => runner::noise_bench(&cfg, &ctx).map(|_| Status::Ok),
        Command::Ablate => runner::ablate(&cfg, &ctx).map(|_| Status::Ok),
        Command::FieldGrid {
            charges,
            class_id,
            resolution,
            bounds,
        } => runner::field_grid(
            &cfg,
            &ctx,
            &GridOptions {
                charges: charges.clone(),
                class_id: *class_id,
                resolution: *resolution,
                bounds: *bounds,
            },
        ),
        Command::Check { kind, count } => {
            let kind = match kind {
                CheckArg::Prop1 => CheckKind::Prop1,
                CheckArg::Corollary1 => CheckKind::Corollary1,
                CheckArg::Gradcheck => CheckKind::Gradcheck,
            };
            let status = runner::check(&cfg, &ctx, kind, *count)?;
            if status == Status::CheckFailed {
                eprintln!("check {} failed; see the report in {}", kind.name(), ctx.out_dir.display());
            }
            Ok(status)
        }
        Command::W2 { proxies, data } => runner::w2(&ctx, proxies, data),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
