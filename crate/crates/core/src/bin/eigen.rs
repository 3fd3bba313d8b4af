use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use eigen_core::cppn::RenderMode;
use eigen_core::imaging::{load_png, save_png, ImagingError};
use eigen_core::pipeline::{self, evaluate_image, PipelineError, RunConfig};
use eigen_core::predictor::{make_static_sequence, predict_identity, PredictorSpec};
use eigen_core::protocol::{self, Message, ProtocolError};

#[derive(Parser)]
#[command(
    name = "eigen",
    version,
    about = "Evolve images that a frame predictor sees as moving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a population and write per-generation artifacts.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        generations: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// identity | shift:DX,DY | drift:GAIN | external:COMMAND
        #[arg(long)]
        predictor: Option<PredictorSpec>,
        #[arg(long)]
        mode: Option<RenderMode>,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Score an existing PNG and print the fitness as JSON.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        predictor: Option<PredictorSpec>,
        /// Flow and fitness settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the flow overlay here.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Continue a run from a generation checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictor process that answers every request with the last frame.
    #[command(hide = true)]
    EchoPredictor {
        /// Reply to every request with this error text instead.
        #[arg(long)]
        fail: Option<String>,
    },
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) | PipelineError::Json { .. } => 2,
        PipelineError::Io { .. }
        | PipelineError::Imaging(ImagingError::Io(_) | ImagingError::Format(_)) => 3,
        PipelineError::Predict(_) => 4,
        _ => 1,
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, PipelineError> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Run {
            config,
            seed,
            generations,
            out,
            predictor,
            mode,
            diagnostics,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(g) = generations {
                cfg.max_generations = g;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(p) = predictor {
                cfg.predictor = p;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cfg.diagnostics |= diagnostics;
            let report = pipeline::run(&cfg)?;
            println!(
                "{}",
                serde_json::json!({
                    "generations": report.generations.len(),
                    "best_total": report.best_score.total,
                    "converged": report.converged,
                    "output_dir": cfg.output_dir,
                })
            );
        }
        Command::Score {
            image,
            predictor,
            config,
            overlay,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(p) = predictor {
                cfg.predictor = p;
            }
            let img = load_png(&image)?;
            let predictor = cfg.predictor.build(1)?;
            let eval = evaluate_image(img, &cfg, predictor.as_ref())?;
            if let Some(path) = overlay {
                save_png(&eval.overlay(&cfg)?, path)?;
            }
            println!(
                "{}",
                serde_json::to_string(&eval.score).expect("scores serialize")
            );
        }
        Command::Resume { checkpoint, out } => {
            let report = pipeline::resume(&checkpoint, out.as_deref())?;
            println!(
                "{}",
                serde_json::json!({
                    "generations": report.generations.len(),
                    "best_total": report.best_score.total,
                    "converged": report.converged,
                })
            );
        }
        Command::EchoPredictor { fail } => {
            if let Err(e) = echo_predictor(fail) {
                error!("echo predictor: {e}");
                return Err(PipelineError::Predict(e.into()));
            }
        }
    }
    Ok(())
}

fn echo_predictor(fail: Option<String>) -> Result<(), ProtocolError> {
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    loop {
        let msg = match protocol::read_message(&mut input) {
            Ok(m) => m,
            // end of input between messages is a clean shutdown
            Err(ProtocolError::Truncated) => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = match (msg, &fail) {
            (_, Some(text)) => Message::Error(text.clone()),
            (Message::Request { frames, extension }, None) => {
                match frames
                    .last()
                    .cloned()
                    .map(|last| make_static_sequence(&last, 1, extension as usize))
                {
                    Some(Ok(req)) => Message::Response {
                        frames: predict_identity(&req).predicted,
                    },
                    Some(Err(e)) => Message::Error(e.to_string()),
                    None => Message::Error("request has no frames".into()),
                }
            }
            (other, None) => {
                Message::Error(format!("unexpected message type {}", other.type_code()))
            }
        };
        protocol::write_message(&mut output, &reply)?;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
