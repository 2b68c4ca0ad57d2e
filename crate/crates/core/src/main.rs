use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rblob::pipeline::{self, MeshFormat, PipelineConfig, SynthConfig, SynthShape};
use rblob::response::ResponseKind;
use rblob::synth::GaussianBump;
use rblob::Error;

#[derive(Parser)]
#[command(
    name = "rblob",
    version,
    about = "Blob detection for vector-valued signals on triangle meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect blobs; writes blobs.json, blobs.csv and manifest.json
    Detect(RunArgs),
    /// Dump every smoothed scale level as a signal CSV
    ScaleSpace(RunArgs),
    /// Dump per-level Hessian fields as CSV
    Hessian(RunArgs),
    /// Build bag-of-words descriptors for one or more surfaces
    Descriptors(DescriptorArgs),
    /// Generate a synthetic mesh, signal and ground truth
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponseArg {
    Detsum,
    Theorem,
    Mean,
}

impl From<ResponseArg> for ResponseKind {
    fn from(r: ResponseArg) -> Self {
        match r {
            ResponseArg::Detsum => ResponseKind::Detsum,
            ResponseArg::Theorem => ResponseKind::Theorem,
            ResponseArg::Mean => ResponseKind::Mean,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input mesh (OFF or ASCII PLY)
    #[arg(long)]
    mesh: Vec<PathBuf>,
    /// Sidecar signal CSV, one per mesh
    #[arg(long)]
    signal: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    response: Option<ResponseArg>,
    #[arg(long)]
    tmin: Option<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Suppression overlap factor in [0, 1]
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    minima: Option<bool>,
    #[arg(long)]
    maxima: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    words: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default(),
        };
        if !self.mesh.is_empty() {
            cfg.mesh = self.mesh;
        }
        if !self.signal.is_empty() {
            cfg.signal = self.signal;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if let Some(v) = self.response {
            cfg.response = v.into();
        }
        cfg.t_min = self.tmin.or(cfg.t_min);
        cfg.t_max = self.tmax.or(cfg.t_max);
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.substeps {
            cfg.substeps = v;
        }
        if let Some(v) = self.threshold {
            cfg.detector.threshold = v;
        }
        if let Some(v) = self.overlap {
            cfg.detector.suppression_overlap = v;
        }
        if let Some(v) = self.minima {
            cfg.detector.detect_minima = v;
        }
        if let Some(v) = self.maxima {
            cfg.detector.detect_maxima = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.words {
            cfg.words = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct DescriptorArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Precomputed blob lists (blobs.json) used as surfaces
    #[arg(long)]
    blobs: Vec<PathBuf>,
    /// Existing codebook to encode against
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Train a codebook on the inputs and save it
    #[arg(long)]
    train: bool,
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Plane,
    Icosphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Off,
    Ply,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    shape: ShapeArg,
    /// Grid resolution (vertices per side)
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    #[arg(long, default_value_t = 3)]
    subdiv: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Plant one Gaussian of this width at the grid center (plane) or the
    /// north pole (icosphere)
    #[arg(long)]
    bump: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// JSON array of {center, sigma, channel, amplitude} records
    #[arg(long)]
    bumps: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Off)]
    format: FormatArg,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

impl SynthArgs {
    fn into_config(self) -> Result<SynthConfig, Error> {
        let mut bumps: Vec<GaussianBump> = match &self.bumps {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)?
            }
            None => Vec::new(),
        };
        if let Some(sigma) = self.bump {
            let center = match self.shape {
                ShapeArg::Plane => [0.5 * self.extent, 0.5 * self.extent, 0.0],
                ShapeArg::Icosphere => [0.0, 0.0, self.radius],
            };
            bumps.push(GaussianBump {
                center,
                sigma,
                channel: 0,
                amplitude: self.amplitude,
            });
        }
        Ok(SynthConfig {
            shape: match self.shape {
                ShapeArg::Plane => SynthShape::Plane,
                ShapeArg::Icosphere => SynthShape::Icosphere,
            },
            n: self.n,
            extent: self.extent,
            subdiv: self.subdiv,
            radius: self.radius,
            channels: self.channels,
            bumps,
            format: match self.format {
                FormatArg::Off => MeshFormat::Off,
                FormatArg::Ply => MeshFormat::Ply,
            },
            out: self.out,
        })
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Detect(args) => {
            let blobs = pipeline::cmd_detect(&args.into_config()?)?;
            log::info!("{} blobs", blobs.len());
        }
        Command::ScaleSpace(args) => {
            pipeline::cmd_scale_space(&args.into_config()?)?;
        }
        Command::Hessian(args) => {
            pipeline::cmd_hessian(&args.into_config()?)?;
        }
        Command::Descriptors(args) => {
            let mut cfg = args.run.into_config()?;
            if !args.blobs.is_empty() {
                cfg.blobs = args.blobs;
            }
            if args.codebook.is_some() {
                cfg.codebook = args.codebook;
            }
            cfg.train |= args.train;
            if let Some(v) = args.max_pairs {
                cfg.max_pairs = v;
            }
            pipeline::cmd_descriptors(&cfg)?;
        }
        Command::Synth(args) => {
            let mesh = pipeline::cmd_synth(&args.into_config()?)?;
            log::info!(
                "{} vertices, {} faces",
                mesh.num_vertices(),
                mesh.num_faces()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
