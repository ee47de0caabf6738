use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use meshsplat::config::RunConfig;
use meshsplat::export::{load_field, write_field, write_ply};
use meshsplat::imageio::{write_rgb8_png, write_rgb_png};
use meshsplat::metrics::evaluate;
use meshsplat::pipeline::Pipeline;
use meshsplat::raster::{render_control_maps, DepthColormapCodec};
use meshsplat::splatter::render;
use meshsplat::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "meshsplat", version, about = "Synthesize a Gaussian-surfel scene along a camera path over a labeled mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write the field, frames and manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Write control maps (depth, semantic, instance, depth colormap) per view.
    Rasterize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        views: Option<String>,
    },
    /// Render a saved field along the configured path.
    RenderPath {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        views: Option<String>,
    },
    /// Convert a saved field to a splat PLY.
    ExportSplats {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the quality report of a saved field as JSON.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        views: Option<String>,
    },
}

/// `a..b` (end exclusive), `a..=b`, or a single index.
fn parse_views(spec: Option<&str>, len: usize) -> Result<Vec<usize>> {
    let Some(spec) = spec else { return Ok((0..len).collect()) };
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad view range `{spec}`")));
    let range = if let Some((a, b)) = spec.split_once("..=") {
        num(a)?..num(b)? + 1
    } else if let Some((a, b)) = spec.split_once("..") {
        num(a)?..num(b)?
    } else {
        let v = num(spec)?;
        v..v + 1
    };
    if range.is_empty() || range.end > len {
        return Err(Error::Config(format!("view range `{spec}` is empty or exceeds the {len} path views")));
    }
    Ok(range.collect())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scene = cfg.build_scene()?;
    let path = cfg.build_path()?;
    let backend = cfg.backend();
    let pipeline = Pipeline::new(&scene, &path, backend.as_ref(), &cfg.pipeline)?;
    let result = pipeline.run()?;
    let out = &cfg.output;
    let frames = out.join("frames");
    create_dir(&frames)?;
    write_field(&out.join("field.surf"), &result.field)?;
    write_ply(&out.join("field.ply"), &result.field)?;
    for (v, pose) in path.poses.iter().enumerate() {
        let r = render(&result.field, pose, &path.intrinsics, [0.0; 3]);
        write_rgb_png(&frames.join(format!("frame_{v:04}.png")), &r.rgb)?;
    }
    let manifest = result.manifest(cfg.pipeline.seed, path.intrinsics.width, path.intrinsics.height);
    let text = serde_json::to_string_pretty(&manifest)?;
    let file = out.join("manifest.json");
    std::fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
    info!("wrote {} surfels and {} frames to {}", result.field.len(), path.len(), out.display());
    Ok(())
}

fn rasterize(common: &Common, views: Option<&str>) -> Result<()> {
    let cfg = load_config(common)?;
    let scene = cfg.build_scene()?;
    let path = cfg.build_path()?;
    let views = parse_views(views, path.len())?;
    let dir = cfg.output.join("control");
    create_dir(&dir)?;
    let codec = DepthColormapCodec::new(0.5, 1000.0)?;
    let k = &path.intrinsics;
    for v in views {
        let maps = render_control_maps(&scene, &path.poses[v], k);
        let stem = format!("view_{v:04}");
        maps.write(&dir, &stem)?;
        let colors = codec.encode(&maps.depth_raster());
        write_rgb8_png(&dir.join(format!("{stem}_depth.png")), k.width, k.height, &colors.data)?;
    }
    Ok(())
}

fn render_path(common: &Common, field: &Path, views: Option<&str>) -> Result<()> {
    let cfg = load_config(common)?;
    let path = cfg.build_path()?;
    let views = parse_views(views, path.len())?;
    let field = load_field(field)?;
    let dir = cfg.output.join("render");
    create_dir(&dir)?;
    for v in views {
        let r = render(&field, &path.poses[v], &path.intrinsics, [0.0; 3]);
        write_rgb_png(&dir.join(format!("frame_{v:04}.png")), &r.rgb)?;
    }
    Ok(())
}

fn metrics(common: &Common, field: &Path, views: Option<&str>) -> Result<()> {
    let cfg = load_config(common)?;
    let scene = cfg.build_scene()?;
    let path = cfg.build_path()?;
    let views = parse_views(views, path.len())?;
    let field = load_field(field)?;
    let backend = cfg.backend();
    let report = evaluate(&field, &scene, &path, &views, Some(backend.as_ref()))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Format { .. } | Error::Schema(_))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth { common } => synth(common),
        Command::Rasterize { common, views } => rasterize(common, views.as_deref()),
        Command::RenderPath { common, field, views } => render_path(common, field, views.as_deref()),
        Command::ExportSplats { field, out } => load_field(field).and_then(|f| write_ply(out, &f)),
        Command::Metrics { common, field, views } => metrics(common, field, views.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(module) = e.module() {
                eprintln!("  in module `{module}`");
            }
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
