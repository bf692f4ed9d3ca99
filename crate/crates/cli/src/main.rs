//! One binary, subcommand style: synthetic supervision generation, scene
//! fitting, rendering, meshing, DSM preparation, and depth evaluation.
//! Every run is reproducible byte-for-byte given the same config and
//! `--seed`; failures exit nonzero with a single `error[<class>]: ...`
//! line on stderr.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use terraplane::cameras::{CameraSpec, Pose};
use terraplane::checkpoint::{load_checkpoint, save_checkpoint};
use terraplane::field::SceneModel;
use terraplane::fit::{fit_scene, FitConfig};
use terraplane::geodata::{self, PrepareConfig};
use terraplane::imgio;
use terraplane::math::vec3;
use terraplane::meshing;
use terraplane::metrics::{depth_metrics, Alignment};
use terraplane::renderer::{render_height, render_view, FieldSource, MarchConfig};
use terraplane::supervision::SupervisionSet;
use terraplane::synth;

#[derive(Parser)]
#[command(
    name = "terraplane",
    about = "Tri-plane volumetric scene fields: fit, render, mesh, evaluate",
    version
)]
struct Cli {
    /// Worker thread cap (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic supervision set from an analytic scene.
    MakeSynthetic(MakeSynthetic),
    /// Fit a scene model to a supervision directory.
    Fit(Fit),
    /// Render images (and depth/opacity grids) from a checkpoint.
    Render(Render),
    /// Extract a colored isosurface mesh from one or more checkpoints.
    Mesh(MeshCmd),
    /// Elevation metrics of a predicted height grid against a DSM.
    EvalDepth(EvalDepth),
    /// Prepare aligned ground-truth DSMs for satellite images.
    PrepDsm(PrepDsm),
}

#[derive(Args)]
struct MakeSynthetic {
    /// Scene description (TOML); the bundled city block when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    pano_width: usize,
    #[arg(long, default_value_t = 64)]
    pano_height: usize,
    #[arg(long, default_value_t = 128)]
    sat_size: usize,
    /// Samples per ray for ground-truth rendering.
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    /// Also write the held-out panorama (for evaluation, not fitting).
    #[arg(long, default_value_t = false)]
    with_holdout: bool,
}

#[derive(Args)]
struct Fit {
    /// Supervision directory written by make-synthetic.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Fit configuration (TOML); defaults when omitted. Flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rays_per_batch: Option<usize>,
    /// Training log destination (default: `<out>.log`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Render {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Camera kind for single-view rendering.
    #[arg(long, value_parser = ["panorama", "perspective", "satellite"])]
    camera: Option<String>,
    /// Camera position "x,y,z" (panorama/perspective).
    #[arg(long, default_value = "0,0,1.8")]
    pos: String,
    #[arg(long, default_value_t = 0.0)]
    yaw_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pitch_deg: f64,
    #[arg(long, default_value_t = 90.0)]
    fov_deg: f64,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Satellite footprint side in meters (defaults to the scene crop).
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 60.0)]
    altitude: f64,
    /// Pose-sequence file for frame rendering.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Illumination code index; the mean code when omitted.
    #[arg(long)]
    code_index: Option<usize>,
    #[arg(long, default_value_t = 96)]
    samples: usize,
    /// Also write the rendered height grid (satellite camera only).
    #[arg(long, default_value_t = false)]
    with_height: bool,
}

#[derive(Args)]
struct MeshCmd {
    /// Checkpoint path; repeat with matching --tile for stitching.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Tile lattice coordinate "i,j" per checkpoint (stitching only).
    #[arg(long)]
    tile: Vec<String>,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 128)]
    res: usize,
    /// Output mesh path (.obj or .ply).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    code_index: Option<usize>,
}

#[derive(Args)]
struct EvalDepth {
    /// Predicted height grid (.tif/.asc).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth DSM (.tif/.asc).
    #[arg(long)]
    gt: PathBuf,
    /// Remove the median vertical offset before scoring.
    #[arg(long, default_value_t = false)]
    align_median: bool,
    /// Optional report file; stdout always gets the report line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepDsm {
    /// Directory of `<lat>_<lon>_z<zoom>.png` satellite images.
    #[arg(long)]
    images: PathBuf,
    /// Directory of DSM tiles (.tif/.asc).
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Maximum accepted nodata percentage.
    #[arg(long, default_value_t = 5.0)]
    threshold: f64,
    /// Treat all tiles as feet regardless of filename.
    #[arg(long, default_value_t = false)]
    assume_feet: bool,
    /// Average all overlapping tiles instead of picking the best one.
    #[arg(long, default_value_t = false)]
    mosaic: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("error[cli-error]: thread pool already initialized");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = err
                .downcast_ref::<terraplane::Error>()
                .map(|e| e.class())
                .unwrap_or("cli-error");
            eprintln!("error[{class}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::MakeSynthetic(args) => make_synthetic(args),
        Command::Fit(args) => fit(args),
        Command::Render(args) => render(args),
        Command::Mesh(args) => mesh(args),
        Command::EvalDepth(args) => eval_depth(args),
        Command::PrepDsm(args) => prep_dsm(args),
    }
}

fn make_synthetic(args: MakeSynthetic) -> anyhow::Result<()> {
    let scene: synth::SceneSpec = match &args.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scene {}", path.display()))?;
            toml::from_str(&text).map_err(|e| anyhow!("scene parse: {e}"))?
        }
        None => synth::city_block(),
    };
    scene.validate()?;
    let mut cameras = synth::city_block_cameras(args.pano_width, args.pano_height);
    cameras.satellite = CameraSpec::Orthographic {
        center: [0.0, 0.0],
        extent: 50.0,
        altitude: 60.0,
        width: args.sat_size,
        height: args.sat_size,
    };
    let march = MarchConfig {
        n_samples: args.samples,
        ..Default::default()
    };
    if args.with_holdout {
        if let Some(holdout) = cameras.holdout_pano.clone() {
            cameras.panoramas.push(holdout);
        }
    }
    cameras.holdout_pano = None;
    let set = synth::generate_supervision(&scene, &cameras, args.seed, &march)?;
    set.save_to_dir(&args.out)?;
    let scene_text = toml::to_string_pretty(&scene)?;
    std::fs::write(args.out.join("scene.toml"), scene_text)?;
    println!(
        "wrote {} satellite view(s) and {} panorama(s) to {}",
        set.satellites.len(),
        set.panoramas.len(),
        args.out.display()
    );
    Ok(())
}

fn fit(args: Fit) -> anyhow::Result<()> {
    let mut cfg: FitConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text)
                .map_err(|e| anyhow!(terraplane::Error::InvalidConfig(e.to_string())))?
        }
        None => FitConfig::default(),
    };
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.rays_per_batch {
        cfg.rays_per_batch = v;
    }
    let views = SupervisionSet::load_from_dir(&args.data)?;
    let result = fit_scene(&views, &cfg)?;
    save_checkpoint(&args.out, &result.model)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out.with_extension("log"));
    let mut log_text = String::new();
    for record in &result.log {
        log_text.push_str(&record.to_line());
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;
    if let Some(iteration) = result.diverged_at {
        bail!(terraplane::Error::Diverged { iteration });
    }
    println!(
        "fitted {} iterations; checkpoint {}",
        result.log.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_vec3(s: &str) -> anyhow::Result<terraplane::math::Vec3> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("expected `x,y,z`, got `{s}`"))?;
    if parts.len() != 3 {
        bail!("expected `x,y,z`, got `{s}`");
    }
    Ok(vec3(parts[0], parts[1], parts[2]))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    camera: String,
    #[serde(default = "default_traj_width")]
    width: usize,
    #[serde(default = "default_traj_height")]
    height: usize,
    #[serde(default)]
    fov_deg: Option<f64>,
    frames: Vec<TrajectoryFrame>,
}

fn default_traj_width() -> usize {
    256
}

fn default_traj_height() -> usize {
    256
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFrame {
    position: [f64; 3],
    #[serde(default)]
    yaw_deg: f64,
    #[serde(default)]
    pitch_deg: f64,
}

fn render(args: Render) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out)?;
    let code = match args.code_index {
        Some(i) => model
            .codes
            .get(i)
            .ok_or_else(|| anyhow!("code index {i} out of range ({})", model.codes.len()))?
            .clone(),
        None => model.mean_code(),
    };
    let march = MarchConfig {
        n_samples: args.samples,
        ..Default::default()
    };

    let mut frames: Vec<(String, CameraSpec)> = Vec::new();
    if let Some(traj_path) = &args.trajectory {
        let text = std::fs::read_to_string(traj_path)?;
        let traj: TrajectoryFile =
            toml::from_str(&text).map_err(|e| anyhow!("trajectory parse: {e}"))?;
        for (i, frame) in traj.frames.iter().enumerate() {
            let pose = Pose::new(
                vec3(frame.position[0], frame.position[1], frame.position[2]),
                frame.yaw_deg.to_radians(),
                frame.pitch_deg.to_radians(),
                0.0,
            );
            let cam = match traj.camera.as_str() {
                "panorama" => CameraSpec::Panorama {
                    pose,
                    yaw_span: std::f64::consts::TAU,
                    pitch_span: std::f64::consts::FRAC_PI_2,
                    width: traj.width,
                    height: traj.height,
                },
                "perspective" => CameraSpec::Perspective {
                    pose,
                    fov_deg: traj.fov_deg.unwrap_or(90.0),
                    width: traj.width,
                    height: traj.height,
                },
                other => bail!("trajectory camera `{other}` must be panorama or perspective"),
            };
            frames.push((format!("frame_{i:04}"), cam));
        }
    } else {
        let kind = args
            .camera
            .as_deref()
            .ok_or_else(|| anyhow!("pass --camera or --trajectory"))?;
        let pos = parse_vec3(&args.pos)?;
        let pose = Pose::new(
            pos,
            args.yaw_deg.to_radians(),
            args.pitch_deg.to_radians(),
            0.0,
        );
        let cam = match kind {
            "panorama" => CameraSpec::Panorama {
                pose,
                yaw_span: std::f64::consts::TAU,
                pitch_span: std::f64::consts::FRAC_PI_2,
                width: args.width.unwrap_or(512),
                height: args.height.unwrap_or(128),
            },
            "perspective" => CameraSpec::Perspective {
                pose,
                fov_deg: args.fov_deg,
                width: args.width.unwrap_or(256),
                height: args.height.unwrap_or(256),
            },
            "satellite" => CameraSpec::Orthographic {
                center: [0.0, 0.0],
                extent: args.extent.unwrap_or(model.field.extent.l_base),
                altitude: args.altitude,
                width: args.width.unwrap_or(256),
                height: args.height.unwrap_or(256),
            },
            other => bail!("unknown camera `{other}`"),
        };
        frames.push(("view".to_string(), cam));
    }

    let src = FieldSource::new(&model.field, &model.sky, &code)?;
    for (name, cam) in &frames {
        let out = render_view(&src, cam, &march, None)?;
        imgio::save_png_rgb(&args.out.join(format!("{name}.png")), &out.color_image())?;
        imgio::save_fgrid(
            &args.out.join(format!("{name}_depth.fg32")),
            &out.depth_image(),
        )?;
        let opacity = terraplane::img::ScalarImage {
            width: out.width,
            height: out.height,
            values: out.opacity.clone(),
            valid: vec![true; out.opacity.len()],
        };
        imgio::save_fgrid(&args.out.join(format!("{name}_opacity.fg32")), &opacity)?;
        if args.with_height {
            if let CameraSpec::Orthographic { .. } = cam {
                let grid = render_height(&src, cam, &march)?;
                geodata::save_grid(&args.out.join(format!("{name}_height.tif")), &grid)?;
            }
        }
    }
    println!("rendered {} frame(s) into {}", frames.len(), args.out.display());
    Ok(())
}

fn mesh(args: MeshCmd) -> anyhow::Result<()> {
    let models: Vec<SceneModel> = args
        .checkpoint
        .iter()
        .map(|p| load_checkpoint(p).map_err(Into::into))
        .collect::<anyhow::Result<_>>()?;
    let grid = if models.len() == 1 {
        meshing::eval_density_grid(&models[0].field, args.res)?
    } else {
        if args.tile.len() != models.len() {
            bail!(
                "stitching needs one --tile i,j per checkpoint ({} vs {})",
                args.tile.len(),
                models.len()
            );
        }
        let mut tiles = Vec::new();
        for (spec, model) in args.tile.iter().zip(&models) {
            let parts: Vec<i64> = spec
                .split(',')
                .map(|p| p.trim().parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow!("bad tile coordinate `{spec}`"))?;
            if parts.len() != 2 {
                bail!("bad tile coordinate `{spec}`");
            }
            tiles.push(((parts[0], parts[1]), &model.field));
        }
        meshing::stitch_tiles(&tiles, args.res)?
    };
    let mut mesh = meshing::marching_cubes(&grid, args.tau)?;
    let code = match args.code_index {
        Some(i) => models[0]
            .codes
            .get(i)
            .ok_or_else(|| anyhow!("code index {i} out of range"))?
            .clone(),
        None => models[0].mean_code(),
    };
    meshing::colorize(&mut mesh, &models[0].field, &code);
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("obj") => meshing::save_obj(&args.out, &mesh)?,
        Some("ply") => meshing::save_ply(&args.out, &mesh)?,
        other => bail!("unsupported mesh extension {other:?}; use .obj or .ply"),
    }
    println!(
        "mesh: {} vertices, {} triangles -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_depth(args: EvalDepth) -> anyhow::Result<()> {
    let pred = geodata::load_grid(&args.pred)?;
    let gt = geodata::load_grid(&args.gt)?;
    let align = if args.align_median {
        Alignment::Median
    } else {
        Alignment::None
    };
    let metrics = depth_metrics(&pred, &gt, align)?;
    let line = metrics.report_line();
    println!("{line}");
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{line}\n"))?;
    }
    Ok(())
}

fn prep_dsm(args: PrepDsm) -> anyhow::Result<()> {
    let cfg = PrepareConfig {
        nan_threshold_pct: args.threshold,
        assume_feet: args.assume_feet,
        mosaic: args.mosaic,
    };
    let outcomes = geodata::prepare_dsm(&args.images, &args.tiles, &args.out, &cfg)?;
    let accepted = outcomes.iter().filter(|o| o.accepted).count();
    println!(
        "prepared {accepted}/{} image(s); manifest at {}",
        outcomes.len(),
        args.out.join("prep_manifest.txt").display()
    );
    Ok(())
}

