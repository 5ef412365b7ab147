use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use wsd_cli::commands::{self, GenData};
use wsd_cli::RunConfig;
use wsd_diffusion::SampleConfig;

#[derive(Parser)]
#[command(name = "wsd", version, about = "Generate animatable avatars by diffusing over fitted network weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view dataset.
    GenData {
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one identity's avatar network.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        identity: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every identity of a dataset (one worker per identity, capped by WSD_THREADS).
    FitAll {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect fitted checkpoints and their standardizer into one pack.
    Pack {
        /// Checkpoint paths or glob patterns.
        #[arg(long, num_args = 1.., required = true)]
        ckpts: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the weight-space denoiser on a pack.
    TrainDiffusion {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw new weight records with DDIM.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        ddim_steps: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one checkpoint under a pose and camera to PNG.
    Render {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Which camera, when the camera file holds a list.
        #[arg(long, default_value_t = 0)]
        camera_index: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated checkpoints against reference checkpoints.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Fit { .. } => "fit",
            Command::FitAll { .. } => "fit-all",
            Command::Pack { .. } => "pack",
            Command::TrainDiffusion { .. } => "train-diffusion",
            Command::Sample { .. } => "sample",
            Command::Render { .. } => "render",
            Command::Eval { .. } => "eval",
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<Value> {
    match cmd {
        Command::GenData { identities, frames, cameras, res, seed, config, out } => {
            let cfg = RunConfig::resolve(config.as_deref())?;
            commands::gen_data(&cfg, &GenData { identities, frames, cameras, resolution: res, seed, out })
        }
        Command::Fit { data, identity, config, iterations, out } => {
            let mut cfg = RunConfig::resolve(config.as_deref())?;
            cfg.fit.iterations = iterations.unwrap_or(cfg.fit.iterations);
            commands::fit(&cfg, &data, identity, &out)
        }
        Command::FitAll { data, config, iterations, out } => {
            let mut cfg = RunConfig::resolve(config.as_deref())?;
            cfg.fit.iterations = iterations.unwrap_or(cfg.fit.iterations);
            commands::fit_all(&cfg, &data, &out)
        }
        Command::Pack { ckpts, out } => commands::pack(&ckpts, &out),
        Command::TrainDiffusion { pack, config, epochs, out } => {
            let mut cfg = RunConfig::resolve(config.as_deref())?;
            cfg.diffusion.train.epochs = epochs.unwrap_or(cfg.diffusion.train.epochs);
            commands::train_diffusion(&cfg, &pack, &out)
        }
        Command::Sample { model, count, ddim_steps, eta, seed, config, out } => {
            let cfg = RunConfig::resolve(config.as_deref())?;
            let s = &cfg.sample;
            let sc = SampleConfig {
                steps: ddim_steps.unwrap_or(s.ddim_steps),
                eta: eta.unwrap_or(s.eta),
                seed: seed.unwrap_or(s.seed),
            };
            commands::sample(&model, count, &sc, &out)
        }
        Command::Render { weights, pose, camera, camera_index, config, out } => {
            let cfg = RunConfig::resolve(config.as_deref())?;
            commands::render(&cfg, &weights, &pose, &camera, camera_index, &out)
        }
        Command::Eval { generated, reference, seed, config, out } => {
            let cfg = RunConfig::resolve(config.as_deref())?;
            commands::eval(&cfg, &generated, &reference, seed, &out)
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by their
/// parent's message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !msg.contains(&c) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = commands::thread_budget();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("thread pool: {e}");
    }
    let name = cli.command.name();
    match run(cli.command) {
        Ok(fields) => {
            let mut line = json!({ "command": name, "status": "ok" });
            if let (Value::Object(l), Value::Object(f)) = (&mut line, fields) {
                l.extend(f);
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = describe(&e);
            eprintln!("error: {msg}");
            println!("{}", json!({ "command": name, "status": "error", "error": msg }));
            ExitCode::from(1)
        }
    }
}
