mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Layered Gaussian scenes from one RGB image and two depth layers.
#[derive(Parser, Debug)]
#[command(name = "layersplat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the initial Gaussian set from an image and its depth.
    Init(InitArgs),
    /// Optimize a scene against the views listed in a manifest.
    Fit(FitArgs),
    /// Render a splat file from a camera.
    Render(RenderArgs),
    /// Compare a rendering with ground truth (PSNR, SSIM).
    Eval(EvalArgs),
    /// Write the splat file and manifest a viewer loads.
    ExportViewer(ExportArgs),
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// RGB image (PNG).
    pub image: PathBuf,
    /// First depth layer in meters (PFM, or 16-bit PNG in millimeters).
    pub depth: PathBuf,
    /// Second depth layer; by default the first layer max-dilated.
    #[arg(long)]
    pub depth2: Option<PathBuf>,
    /// Camera JSON; by default focal length max(W, H) at the image center.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Base scale factor; by default 1.5 / max(grid width, grid height).
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub downsample: usize,
    /// Window radius in pixels for the default second layer.
    #[arg(long, default_value_t = commands::DEFAULT_DILATION)]
    pub dilation: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Lines of `input|novel image camera [depth [depth2]]`.
    pub manifest: PathBuf,
    /// Start from this splat file instead of the manifest's input depth.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// TOML table of loss weights; unset keys keep their defaults.
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    /// Override one loss weight, e.g. `--weight color=2`. Repeatable.
    #[arg(long = "weight", value_name = "NAME=VALUE")]
    pub weights: Vec<String>,
    /// Also optimize the per-pixel depth scale map.
    #[arg(long)]
    pub optimize_scale_map: bool,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub downsample: usize,
    #[arg(long, default_value_t = commands::DEFAULT_DILATION)]
    pub dilation: usize,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Per-step loss CSV; defaults to the output path with a `.csv` extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Final loss report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    pub splat: PathBuf,
    /// Target camera JSON.
    pub camera: PathBuf,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    #[arg(long, default_value = "render.png")]
    pub out_color: PathBuf,
    #[arg(long)]
    pub out_alpha: Option<PathBuf>,
    /// 16-bit inverse depth PNG plus a `.txt` sidecar holding its scale.
    #[arg(long)]
    pub out_invdepth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub rendered: PathBuf,
    pub truth: PathBuf,
    /// Restrict metrics to pixels visible from this source camera.
    #[arg(long, requires_all = ["target_camera", "target_depth"])]
    pub source_camera: Option<PathBuf>,
    #[arg(long, requires = "source_camera")]
    pub target_camera: Option<PathBuf>,
    #[arg(long, requires = "source_camera")]
    pub target_depth: Option<PathBuf>,
    /// Also report ground truth against its own horizontal shifts, given as
    /// fractions of the width.
    #[arg(long, value_delimiter = ',')]
    pub shifts: Vec<f64>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    pub splat: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(a) => commands::init(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Render(a) => commands::render(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ExportViewer(a) => commands::export_viewer(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
