use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthohuman::datagen::{load_backgrounds_dir, load_meshes_dir, RenderConfig, RotationSweep};
use orthohuman::fusion::reconstruct_maps;
use orthohuman::geometry::MapPair;
use orthohuman::runtime::{infer, train, write_inference, Dataset, InferConfig};
use orthohuman::{io, Checkpoint, DatagenConfig, DatasetManifest, EvalConfig, OrthographicCamera, ReconstructionConfig, Side, TrainConfig};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "orthohuman", version, about = "Single-image human digitization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON file overriding the defaults; flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render training samples from meshes and background photos.
    Datagen {
        #[arg(long)]
        meshes: PathBuf,
        /// Procedural backgrounds are used when omitted.
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Degrees as `start:stop:step` or a single angle.
        #[arg(long, allow_hyphen_values = true)]
        rotations: Option<RotationSweep>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the predictor stack on one or more generated datasets.
    Train {
        /// Dataset directory or manifest file; may be repeated.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Predict maps and a mesh for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip volume fusion.
        #[arg(long)]
        no_mesh: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Fuse a front/back depth pair into a mesh.
    Fuse {
        #[arg(long)]
        depth_front: PathBuf,
        #[arg(long)]
        depth_back: PathBuf,
        #[arg(long, requires = "color_back")]
        color_front: Option<PathBuf>,
        #[arg(long, requires = "color_front")]
        color_back: Option<PathBuf>,
        /// `camera.json` describing the depth grid; the default render camera otherwise.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        zres: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compare a reconstruction with ground truth.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Metrics JSON; normal-map PNGs are written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

type BoxError = Box<dyn std::error::Error>;

fn load_config<T: DeserializeOwned + Default>(arg: &ConfigArg) -> Result<T, BoxError> {
    match &arg.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), BoxError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(command: Command) -> Result<(), BoxError> {
    match command {
        Command::Datagen { meshes, backgrounds, out, rotations, seed, config } => {
            let mut cfg: DatagenConfig = load_config(&config)?;
            cfg.rotations = rotations.unwrap_or(cfg.rotations);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let meshes = load_meshes_dir(&meshes)?;
            let backgrounds = backgrounds.map(|d| load_backgrounds_dir(&d)).transpose()?.unwrap_or_default();
            let manifest = orthohuman::build_dataset(&meshes, &backgrounds, &cfg, &out)?;
            log::info!("{}", serde_json::json!({"event": "datagen", "samples": manifest.records.len(), "out": out}));
        }
        Command::Train { data, out, resume, epochs, max_steps, config } => {
            let mut cfg: TrainConfig = load_config(&config)?;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.max_steps = max_steps.or(cfg.max_steps);
            cfg.checkpoint_dir = out.or(cfg.checkpoint_dir);
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
            }
            let manifests = data.iter().map(|d| DatasetManifest::load(d)).collect::<Result<Vec<_>, _>>()?;
            let resume = resume.map(|p| Checkpoint::load(&p, &candle_core::Device::Cpu)).transpose()?;
            let outcome = train(&Dataset::from_manifests(&manifests), &cfg, resume.as_ref())?;
            if outcome.written.is_empty() {
                log::warn!("no checkpoint directory configured; trained weights were not saved");
            }
        }
        Command::Infer { checkpoint, image, out, no_mesh, config } => {
            let mut cfg: InferConfig = load_config(&config)?;
            cfg.reconstruct &= !no_mesh;
            let ckpt = Checkpoint::load(&checkpoint, &candle_core::Device::Cpu)?;
            let result = infer(&image, &ckpt, &cfg)?;
            let written = write_inference(&out, &result)?;
            log::info!("{}", serde_json::json!({"event": "infer", "files": written}));
        }
        Command::Fuse { depth_front, depth_back, color_front, color_back, camera, out, zres, config } => {
            let mut cfg: ReconstructionConfig = load_config(&config)?;
            cfg.z_resolution = zres.unwrap_or(cfg.z_resolution);
            cfg.validate()?;
            let camera: OrthographicCamera = match camera {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)?,
                None => RenderConfig::default().ortho(Side::Front),
            };
            let load = |p: &Path, side| io::load_depth_pfm(p, side, camera.frame, camera.near, camera.far);
            let depths = MapPair::new(load(&depth_front, Side::Front)?, load(&depth_back, Side::Back)?);
            let colors = match (color_front, color_back) {
                (Some(f), Some(b)) => Some(MapPair::new(io::load_image(&f)?, io::load_image(&b)?)),
                _ => None,
            };
            let mesh = reconstruct_maps(&depths, colors.as_ref(), &cfg)?;
            io::write_mesh(&out, &mesh)?;
            log::info!("{}", serde_json::json!({"event": "fuse", "vertices": mesh.vertices.len(), "faces": mesh.faces.len(), "out": out}));
        }
        Command::Eval { recon, gt, out, samples, seed, config } => {
            let mut cfg: EvalConfig = load_config(&config)?;
            cfg.n_samples = samples.unwrap_or(cfg.n_samples);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let result = orthohuman::evaluate_model(&io::read_mesh(&recon)?, &io::read_mesh(&gt)?, &cfg)?;
            write_json(&out, &result.metrics)?;
            let dir = out.parent().unwrap_or(Path::new("."));
            for side in [Side::Front, Side::Back] {
                let s = side.suffix();
                io::save_image_png(&dir.join(format!("normal_recon_{s}.png")), &result.recon_normals.get(side).to_image())?;
                io::save_image_png(&dir.join(format!("normal_gt_{s}.png")), &result.gt_normals.get(side).to_image())?;
            }
            println!("{}", serde_json::to_string(&result.metrics)?);
        }
    }
    Ok(())
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let msg = record.args().to_string();
            // Messages that are already JSON objects are embedded as-is.
            let body = serde_json::from_str::<serde_json::Value>(&msg).ok().filter(|v| v.is_object()).unwrap_or(serde_json::Value::String(msg));
            let line = serde_json::json!({"level": record.level().as_str(), "target": record.target(), "msg": body});
            writeln!(buf, "{line}")
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", serde_json::json!({"event": "error", "error": e.to_string()}));
            ExitCode::from(2)
        }
    }
}
