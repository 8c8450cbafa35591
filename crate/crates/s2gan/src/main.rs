use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use s2gan_core::networks::Scale;
use s2gan_core::train::Phase;

use s2gan::commands::check::{self, CheckScope};
use s2gan::commands::generate::{self, Models, RenderInput, WalkMode, WalkOptions};
use s2gan::commands::train::{self, state_path};
use s2gan::io::config::RunConfig;
use s2gan::{Error, Result};

static INTERRUPT: AtomicBool = AtomicBool::new(false);

/// Train and sample a factored structure/style GAN on synthetic box-world
/// scenes.
#[derive(Parser)]
#[command(name = "s2gan", version)]
struct Cli {
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 1, 1/2 or 1/4; overrides `scale`.
    #[arg(long, global = true)]
    scale: Option<String>,
    /// Refuse malformed inputs instead of fixing them with a warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    FcnPretrain,
    Structure,
    StyleFrozenFcn,
    StyleFinetuneFcn,
    Joint,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Phase {
        match p {
            PhaseArg::FcnPretrain => Phase::FcnPretrain,
            PhaseArg::Structure => Phase::Structure,
            PhaseArg::StyleFrozenFcn => Phase::StyleFrozenFcn,
            PhaseArg::StyleFinetuneFcn => Phase::StyleFinetuneFcn,
            PhaseArg::Joint => Phase::Joint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Structure,
    Style,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Networks,
    All,
}

#[derive(Args)]
struct CheckpointArg {
    /// Defaults to `<out>/state.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training phase, resuming it if it was interrupted.
    Train {
        #[arg(value_enum)]
        phase: PhaseArg,
    },
    /// Draw normal map and image pairs.
    Sample {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Step a few noise coordinates and render each frame.
    Walk {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, value_enum, default_value = "structure")]
        mode: ModeArg,
        /// Sample index whose noise is the first frame.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value_t = 10)]
        dims: usize,
        #[arg(long, default_value_t = 0.1)]
        step: f32,
        #[arg(long, default_value_t = 7)]
        frames: usize,
    },
    /// Run the style generator on given normals.
    Render {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Normal image (PPM).
        #[arg(long, group = "input")]
        normals: Option<PathBuf>,
        /// Synthetic scene seed.
        #[arg(long, group = "input")]
        scene: Option<u64>,
        /// Sample directory with depth.pgm, rgb.ppm and meta.txt.
        #[arg(long, group = "input")]
        rgbd: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Central-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        /// Add a case with a deliberately wrong backward.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Print the layer shape table of every network.
    Audit,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    if let Some(s) = &cli.scale {
        c.train.scale = Scale::parse(s).map_err(|e| Error::Usage(e.to_string()))?;
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let config = run_config(&cli)?;
    let out = config.out_dir.clone();
    let seed = config.train.seed;
    let load = |c: &CheckpointArg| Models::load(&c.checkpoint.clone().unwrap_or_else(|| state_path(&out)));
    match cli.command {
        Command::Train { phase } => {
            ctrlc::set_handler(|| INTERRUPT.store(true, Ordering::SeqCst))
                .map_err(|e| Error::Usage(format!("cannot install the interrupt handler: {}", e)))?;
            let o = train::train(&config, phase.into(), &INTERRUPT)?;
            if o.interrupted {
                info!("{} stopped at {}/{}; rerun to resume", o.phase, o.iteration, o.total);
            } else {
                info!("{} finished; checkpoint in {}", o.phase, out.display());
            }
        }
        Command::Sample { ckpt, count } => {
            let mut m = load(&ckpt)?;
            for d in generate::sample(&mut m, seed, count, &out)? {
                println!("{}", d.display());
            }
        }
        Command::Walk {
            ckpt,
            mode,
            index,
            dims,
            step,
            frames,
        } => {
            let mut m = load(&ckpt)?;
            let mode = match mode {
                ModeArg::Structure => WalkMode::Structure,
                ModeArg::Style => WalkMode::Style,
            };
            let opts = WalkOptions {
                mode,
                index,
                dims,
                step,
                frames,
            };
            println!("{}", generate::walk(&mut m, seed, opts, &out)?.display());
        }
        Command::Render {
            ckpt,
            normals,
            scene,
            rgbd,
            count,
        } => {
            let input = match (normals, scene, rgbd) {
                (Some(p), _, _) => RenderInput::NormalsFile(p),
                (_, Some(s), _) => RenderInput::Scene(s),
                (_, _, Some(d)) => RenderInput::Rgbd(d),
                _ => return Err(Error::Usage("render needs --normals, --scene or --rgbd".into())),
            };
            let mut m = load(&ckpt)?;
            for d in generate::render(&mut m, &input, seed, count, cli.strict, &out)? {
                println!("{}", d.display());
            }
        }
        Command::Gradcheck { scope, corrupt } => {
            let scope = match scope {
                ScopeArg::Ops => CheckScope::Ops,
                ScopeArg::Networks => CheckScope::Networks,
                ScopeArg::All => CheckScope::All,
            };
            check::gradcheck(scope, corrupt, seed)?;
        }
        Command::Audit => print!("{}", check::audit(config.train.scale)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
