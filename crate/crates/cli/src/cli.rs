//! Command-line entry points.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fegan_core::data::{self, io, synthetic, CannyParams, MaskKind};
use fegan_core::pipeline::{resize_image, resize_labels, EditModel, UserLayers};
use fegan_core::training::{self, Checkpoint, Stage, TrainConfig};

use crate::api::SizeLimit;
use crate::service::{self, AppState, ServiceConfig};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_DIMENSION_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fegan", version, about = "Sketch- and color-guided fashion image editing")]
pub struct Cli {
    /// Directory holding `parser.fegan` and `inpainter.fegan`.
    #[arg(long, global = true, env = "FEGAN_CHECKPOINT_DIR", default_value = "checkpoints")]
    pub checkpoint_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Resize a dataset to the model resolution and cache its sketch and color layers.
    Preprocess(PreprocessArgs),
    /// Print a training configuration as TOML.
    InitConfig(InitConfigArgs),
    /// Train the parsing network.
    TrainParser(TrainArgs),
    /// Train the inpainting network against a frozen parser.
    TrainInpainter(TrainArgs),
    /// Score an inpainter checkpoint on a manifest and print a metrics report.
    Eval(EvalArgs),
    /// Edit one image.
    Edit(EditArgs),
    /// Run the HTTP editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = training::DEFAULT_HEIGHT)]
    pub height: usize,
    #[arg(long, default_value_t = training::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = data::DEFAULT_NUM_CLASSES)]
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Parser,
    Inpainter,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Parser => Stage::Parser,
            StageArg::Inpainter => Stage::Inpainter,
        }
    }
}

#[derive(Debug, Args)]
pub struct InitConfigArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// Small synthetic preset that trains on a CPU in minutes.
    #[arg(long)]
    pub toy: bool,
    /// Use this manifest instead of synthetic data.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from this checkpoint; the configuration must match it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Frozen parser for inpainter training.
    #[arg(long)]
    pub parser_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Inpainter checkpoint; defaults to `inpainter.fegan` in the checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub sketch: PathBuf,
    /// RGBA PNG; alpha > 0 marks a color stroke.
    #[arg(long)]
    pub strokes: PathBuf,
    /// Label map of the unedited image.
    #[arg(long)]
    pub parsing: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the completed parsing here.
    #[arg(long)]
    pub parsing_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Largest accepted image side.
    #[arg(long, default_value_t = 1024)]
    pub max_size: usize,
}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let core = err.chain().find_map(|e| e.downcast_ref::<fegan_core::Error>());
    match core {
        Some(fegan_core::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
        Some(fegan_core::Error::Shape(_)) => EXIT_DIMENSION_MISMATCH,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let dir = cli.checkpoint_dir;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::InitConfig(a) => init_config(a),
        Command::TrainParser(a) => train(Stage::Parser, a, &dir),
        Command::TrainInpainter(a) => train(Stage::Inpainter, a, &dir),
        Command::Eval(a) => eval(a, &dir),
        Command::Edit(a) => edit(a, &dir),
        Command::Serve(a) => serve(a, &dir),
    }
}

fn inpainter_checkpoint(arg: Option<PathBuf>, dir: &Path) -> PathBuf {
    arg.unwrap_or_else(|| dir.join("inpainter.fegan"))
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let manifest = synthetic::write_dataset(&a.out, a.count, a.height, a.width, a.seed)?;
    println!("{}", manifest.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let canny = CannyParams::default();
    let mut entries = Vec::new();
    for (i, entry) in io::read_manifest(&a.manifest)?.into_iter().enumerate() {
        let image = resize_image(&io::load_image(&entry.image_path)?, a.height, a.width)?;
        let parsing = io::load_parsing(&entry.parsing_path, a.num_classes)?;
        let parsing = resize_labels(&parsing, a.height, a.width)?;
        let stem = format!("{i:05}");
        let out = io::ManifestEntry {
            image_path: PathBuf::from(format!("image_{stem}.png")),
            parsing_path: PathBuf::from(format!("parsing_{stem}.png")),
        };
        io::save_image(&image, &a.out.join(&out.image_path))?;
        io::save_parsing(&parsing, &a.out.join(&out.parsing_path))?;
        io::save_mask(&data::extract_sketch(&image, &canny)?, &a.out.join(format!("sketch_{stem}.png")))?;
        io::save_image(&data::extract_color_domain(&image, &parsing)?.pixels, &a.out.join(format!("colors_{stem}.png")))?;
        entries.push(out);
    }
    let manifest = a.out.join("manifest.jsonl");
    io::write_manifest(&manifest, &entries)?;
    println!("{}", manifest.display());
    Ok(())
}

fn init_config(a: InitConfigArgs) -> anyhow::Result<()> {
    let stage = Stage::from(a.stage);
    let mut config = if a.toy { TrainConfig::toy(stage) } else { TrainConfig::new(stage, training::DataSource::Synthetic { count: 8, seed: 0 }) };
    if let Some(path) = a.manifest {
        config.data.source = training::DataSource::Manifest { path };
    }
    let text = config.to_toml()?;
    match a.out {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn train(stage: Stage, a: TrainArgs, dir: &Path) -> anyhow::Result<()> {
    let mut config = TrainConfig::load(&a.config)?;
    if config.stage != stage {
        bail!(fegan_core::Error::config(format!(
            "{} is a {} configuration, expected {}",
            a.config.display(),
            config.stage.as_str(),
            stage.as_str()
        )));
    }
    if let Some(d) = a.output_dir {
        config.output_dir = Some(d);
    }
    config.output_dir.get_or_insert_with(|| dir.to_path_buf());
    if let Some(n) = a.max_steps {
        config.max_steps = Some(n);
    }
    if stage == Stage::Inpainter {
        if let Some(p) = a.parser_checkpoint {
            config.parser_checkpoint = Some(p);
        }
        config.parser_checkpoint.get_or_insert_with(|| dir.join("parser.fegan"));
    }
    config.validate()?;
    let ckpt = match a.resume {
        Some(path) => training::resume(&Checkpoint::load(&path)?, config.clone())?,
        None => training::train_stage(config.clone())?,
    };
    let out = config.output_dir.as_deref().unwrap_or(dir).join(format!("{}.fegan", stage.as_str()));
    println!("{} step={} fingerprint={}", out.display(), ckpt.step, ckpt.fingerprint);
    Ok(())
}

fn eval(a: EvalArgs, dir: &Path) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&inpainter_checkpoint(a.checkpoint, dir))?;
    let report = training::evaluate(&ckpt, &a.manifest, a.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = a.out {
        std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn edit(a: EditArgs, dir: &Path) -> anyhow::Result<()> {
    let image = io::load_image(&a.image)?;
    let mask = io::load_mask(&a.mask, MaskKind::Edit)?;
    let sketch = io::load_mask(&a.sketch, MaskKind::Sketch)?;
    let strokes = std::fs::read(&a.strokes).map_err(|e| fegan_core::Error::io(&a.strokes, e))?;
    let (stroke_mask, stroke_colors) = io::decode_strokes(&strokes)?;
    let model = EditModel::load(&inpainter_checkpoint(a.checkpoint, dir))?;
    let parsing = match &a.parsing {
        Some(p) => Some(io::load_parsing(p, model.num_classes())?),
        None => None,
    };
    let layers = UserLayers { image, mask, sketch, stroke_mask, stroke_colors, parsing };
    let out = model.edit_layers(&layers, a.seed)?;
    io::save_image(&out.image, &a.out)?;
    if let Some(p) = &a.parsing_out {
        io::save_parsing(&out.parsing, p)?;
    }
    Ok(())
}

fn serve(a: ServeArgs, dir: &Path) -> anyhow::Result<()> {
    let path = inpainter_checkpoint(a.checkpoint, dir);
    let config = ServiceConfig {
        limit: SizeLimit { max_height: a.max_size, max_width: a.max_size },
        workers: a.workers,
        ..ServiceConfig::default()
    };
    let state = AppState::new(config);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        tracing::info!(addr = %a.addr, "listening");
        let loader = state.clone();
        tokio::task::spawn_blocking(move || match EditModel::load(&path) {
            Ok(model) => {
                tracing::info!(fingerprint = model.fingerprint(), "model ready");
                loader.install(model);
            }
            Err(e) => tracing::error!(error = %e, checkpoint = %path.display(), "failed to load model"),
        });
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
