use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use navguard::config::load_scene;
use navguard::env::{FrameEncoder, Pose};
use navguard::pipeline::{self, metrics_text, CliError, Overrides, Run, StepsTarget};
use navguard::teleop::{spawn_server, ServeOptions, SessionOptions, TeleopSession};

#[derive(Parser)]
#[command(name = "navguard", version, about = "Collision-avoidance pipeline: simulate, train, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scene file (or builtin:<name>) and estimate its free space.
    SceneValidate {
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record (RGB, depth) pairs for vision training.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Number of images.
        #[arg(long)]
        steps: Option<usize>,
    },
    TrainVision {
        #[command(flatten)]
        common: Common,
    },
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        /// Environment steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    EvalSurvival {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    CorrectionField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    MpcBench {
        #[command(flatten)]
        common: Common,
    },
    /// Write depth.pgm and rgb.ppm seen from a pose.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 0.0)]
        yaw: f64,
    },
    /// Serve the live teleoperation WebSocket.
    Teleop {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        kinematic: bool,
    },
}

fn prepare(common: &Common, overrides: Overrides, steps: StepsTarget) -> Result<Run, CliError> {
    let overrides = Overrides { seed: common.seed, out: common.out.clone(), ..overrides };
    pipeline::prepare(common.config.as_deref(), &overrides, steps)
}

fn teleop(run: &Run, host: &str, port: u16, speed: f64, kinematic: bool) -> Result<(), CliError> {
    let (encoder, actor) = pipeline::load_policy(run)?;
    let scene = Arc::new(load_scene(&run.config.scene)?);
    let encoder: Arc<dyn FrameEncoder> = Arc::new(encoder);
    let session = TeleopSession::new(
        scene,
        run.config.env.clone(),
        run.config.mpc.clone(),
        Some(encoder),
        Box::new(actor),
        SessionOptions { kinematic, seed: run.config.seed },
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let addr: SocketAddr =
        format!("{host}:{port}").parse().map_err(|e| CliError::Validation(format!("bad address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let server = spawn_server(session, addr, ServeOptions { speed })
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("teleop listening on ws://{}", server.addr);
        server.wait().await;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<Option<serde_json::Value>, CliError> {
    let none = Overrides::default();
    let metrics = match cli.command {
        Command::SceneValidate { scene, seed } => {
            let report = pipeline::cmd_scene_validate(&scene, seed)?;
            serde_json::to_value(report)?
        }
        Command::Collect { common, steps } => {
            pipeline::cmd_collect(&prepare(&common, Overrides { steps, ..none }, StepsTarget::CollectImages)?)?
        }
        Command::TrainVision { common } => pipeline::cmd_train_vision(&prepare(&common, none, StepsTarget::None)?)?,
        Command::TrainPolicy { common, steps } => {
            pipeline::cmd_train_policy(&prepare(&common, Overrides { steps, ..none }, StepsTarget::TrainSteps)?)?
        }
        Command::EvalSurvival { common, trials } => {
            pipeline::cmd_eval_survival(&prepare(&common, Overrides { trials, ..none }, StepsTarget::None)?)?
        }
        Command::CorrectionField { common, steps, threshold } => pipeline::cmd_correction_field(&prepare(
            &common,
            Overrides { steps, threshold, ..none },
            StepsTarget::CorrectionSteps,
        )?)?,
        Command::MpcBench { common } => pipeline::cmd_mpc_bench(&prepare(&common, none, StepsTarget::None)?)?,
        Command::Render { common, x, y, yaw } => {
            pipeline::cmd_render(&prepare(&common, none, StepsTarget::None)?, Pose { x, y, yaw, pitch: 0.0 })?
        }
        Command::Teleop { common, port, host, speed, kinematic } => {
            teleop(&prepare(&common, none, StepsTarget::None)?, &host, port, speed, kinematic)?;
            return Ok(None);
        }
    };
    Ok(Some(metrics))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(metrics) => {
            if let Some(m) = metrics {
                print!("{}", metrics_text(&m));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
