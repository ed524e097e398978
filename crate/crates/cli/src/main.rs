//! `tuvf` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when a command fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tuvf::adversarial::{self, Discriminator, PoseSampler, TextureData, TextureModel};
use tuvf::config::Config;
use tuvf::csae::{self, Csae};
use tuvf::editing::{self, transfer_texture};
use tuvf::fixtures::{self, FixtureConfig};
use tuvf::image_io::Image;
use tuvf::pipeline;
use tuvf::renderer::Camera;
use tuvf::ParamStore;

#[derive(Parser, Debug)]
#[command(name = "tuvf", version, about = "Texture UV radiance fields at desk scale")]
struct Cli {
    /// Seed for every random draw; falls back to TUVF_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Configuration file (TOML). Overrides the checkpoint's sidecar config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration with the origin of each default and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the canonical surface auto-encoder on a directory of meshes or clouds.
    TrainCsae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Loss log; defaults to `<out>.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Adversarial texture training against a directory of real images.
    TrainTexture {
        #[arg(long)]
        csae: PathBuf,
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        reals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Loss log; defaults to `<out>.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Sample grid; defaults to `<out>.samples.png`.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Render a texture on a shape.
    Render(RenderArgs),
    /// Render a texture on a shape other than the one it was made for.
    Transfer(RenderArgs),
    /// Fit a texture to an edited view inside a mask.
    Edit {
        #[command(flatten)]
        src: TextureArgs,
        #[arg(long)]
        cam: String,
        /// Edited view; its size sets the render resolution.
        #[arg(long)]
        image: PathBuf,
        /// Mask PNG; the red channel selects the edited pixels.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Per-step masked error; defaults to `<out>.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write the procedural fixture dataset.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
    },
    /// Run the fast invariant battery.
    Selfcheck,
}

#[derive(Args, Debug)]
struct TextureArgs {
    #[arg(long)]
    tex: PathBuf,
    #[arg(long)]
    csae: PathBuf,
    #[arg(long)]
    shape: PathBuf,
    /// Seed of the texture code, used when the checkpoint has no baked field.
    #[arg(long, default_value_t = 0)]
    seed_tex: u64,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    src: TextureArgs,
    /// `az,el,radius,fov` in degrees.
    #[arg(long, default_value = "30,20,2,40")]
    cam: String,
    #[arg(long, default_value = "64x64")]
    res: String,
    #[arg(long)]
    out: PathBuf,
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("TUVF_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("TUVF_SEED={v:?} is not an unsigned integer"))?)),
        Err(_) => Ok(None),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Geometry and grid settings come from the auto-encoder checkpoint, the
/// rest from the texture checkpoint, unless `--config` fixes both.
fn merged_config(explicit: Option<&Path>, csae: &Path, tex: Option<&Path>) -> Result<Config> {
    let geo = pipeline::resolve_config(explicit, Some(csae))?;
    let Some(tex) = tex else { return Ok(geo) };
    let mut cfg = pipeline::resolve_config(explicit, Some(tex))?;
    cfg.geometry = geo.geometry;
    cfg.dpsr = geo.dpsr;
    cfg.validate()?;
    Ok(cfg)
}

struct Loaded {
    cfg: Config,
    model: TextureModel,
    store: ParamStore,
    csae: Csae,
    csae_store: ParamStore,
}

fn load_all(explicit: Option<&Path>, src: &TextureArgs) -> Result<Loaded> {
    for p in [&src.csae, &src.tex, &src.shape] {
        if !p.exists() {
            bail!("{}: no such file", p.display());
        }
    }
    let cfg = merged_config(explicit, &src.csae, Some(&src.tex))?;
    let (csae, csae_store) = pipeline::load_csae(&src.csae, &cfg)?;
    let (model, store) = pipeline::load_texture(&src.tex, &cfg)?;
    Ok(Loaded {
        cfg,
        model,
        store,
        csae,
        csae_store,
    })
}

fn scene_for(l: &Loaded, shape: &Path, seed: u64) -> Result<tuvf::renderer::SceneGeometry> {
    let cloud = pipeline::load_shape(shape, l.csae.config.encoder_points, seed)?;
    Ok(pipeline::scene_from_points(&l.csae, &l.csae_store, &cloud.points, &l.cfg.dpsr())?)
}

fn train_csae(cli: &Cli, seed: Option<u64>, data: &Path, out: &Path, steps: Option<usize>, log: Option<&Path>) -> Result<()> {
    let mut cfg = pipeline::resolve_config(cli.config.as_deref(), None)?;
    if let Some(s) = seed {
        cfg.geometry.init_seed = s;
    }
    if let Some(n) = steps {
        cfg.geometry.steps = n;
    }
    cfg.validate()?;
    let seed = seed.unwrap_or(0);
    let csae = Csae::new(cfg.csae()?)?;
    let shapes = pipeline::load_training_shapes(data, csae.config.encoder_points.max(fixtures::CLOUD_POINTS), seed)?;
    let mut store = ParamStore::new();
    csae.init(&mut store);
    let train = csae::CsaeTrainConfig {
        seed,
        ..cfg.csae_train()
    };
    eprintln!("training on {} shapes for {} steps", shapes.len(), train.steps);
    let t0 = Instant::now();
    let log_rows = csae::train_csae(&csae, &mut store, &shapes, &train)?;
    pipeline::save_with_config(&store, out, &cfg)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".csv"));
    log_rows.save_csv(&log_path)?;
    let last = log_rows.rows.last().map_or(f64::NAN, |r| r.chamfer);
    println!(
        "wrote {} ({:.1}s, final chamfer {last:.3e}, log {})",
        out.display(),
        t0.elapsed().as_secs_f64(),
        log_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_texture(
    cli: &Cli,
    seed: Option<u64>,
    csae_path: &Path,
    shapes_dir: &Path,
    reals_dir: &Path,
    out: &Path,
    overrides: (Option<usize>, Option<usize>, Option<usize>),
    log: Option<&Path>,
    samples: Option<&Path>,
) -> Result<()> {
    if !csae_path.exists() {
        bail!("{}: no such file", csae_path.display());
    }
    let mut cfg = merged_config(cli.config.as_deref(), csae_path, None)?;
    let (steps, patch, batch) = overrides;
    if let Some(s) = seed {
        cfg.gan.generator_seed = s;
        cfg.gan.disc_seed = s ^ 0x6469_7363;
        cfg.render.init_seed = s ^ 0x7265_6e64;
    }
    if let Some(n) = steps {
        cfg.gan.steps = n;
    }
    if let Some(p) = patch {
        cfg.gan.patch = p;
    }
    if let Some(b) = batch {
        cfg.gan.batch = b;
    }
    cfg.validate()?;
    let seed = seed.unwrap_or(0);
    let (csae, csae_store) = pipeline::load_csae(csae_path, &cfg)?;
    let grid = cfg.dpsr();
    let scenes = pipeline::shape_files(shapes_dir)?
        .iter()
        .map(|p| {
            let cloud = pipeline::load_shape(p, csae.config.encoder_points, seed)?;
            pipeline::scene_from_points(&csae, &csae_store, &cloud.points, &grid)
        })
        .collect::<tuvf::Result<Vec<_>>>()?;
    let reals = pipeline::load_images(reals_dir)?;
    let poses = PoseSampler {
        width: reals[0].width,
        height: reals[0].height,
        ..PoseSampler::default()
    };
    let model = TextureModel::new(cfg.texgen()?, cfg.renderer()?)?;
    let gan = adversarial::GanConfig { seed, ..cfg.gan()? };
    let disc = Discriminator::new(gan.disc.clone())?;
    let mut store = ParamStore::new();
    model.init(&mut store);
    eprintln!("training on {} shapes and {} images for {} steps", scenes.len(), reals.len(), gan.steps);
    let t0 = Instant::now();
    let data = TextureData {
        scenes: &scenes,
        reals: &reals,
        poses,
    };
    let glog = adversarial::train_texture(&model, &disc, &mut store, &data, &gan)?;
    // The discriminator is only needed during training.
    let mut keep = ParamStore::new();
    for (k, t) in store.iter().filter(|(k, _)| TextureModel::prefixes().iter().any(|p| k.starts_with(p))) {
        keep.insert(k, t.clone());
    }
    pipeline::save_with_config(&keep, out, &cfg)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".csv"));
    glog.save_csv(&log_path)?;
    if let Some(grid) = glog.sample_grid() {
        let p = samples.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".samples.png"));
        grid.save_png(&p, false)?;
    }
    println!("wrote {} ({:.1}s, log {})", out.display(), t0.elapsed().as_secs_f64(), log_path.display());
    Ok(())
}

fn render(cli: &Cli, seed: u64, args: &RenderArgs, transfer: bool) -> Result<()> {
    let (w, h) = pipeline::parse_resolution(&args.res)?;
    let cam = Camera::parse_spec(&args.cam, w, h)?;
    let l = load_all(cli.config.as_deref(), &args.src)?;
    let scene = scene_for(&l, &args.src.shape, seed)?;
    let field = pipeline::texture_field(&l.model, &l.store, args.src.seed_tex)?;
    let img = if transfer {
        let textured = transfer_texture(&field, &scene)?;
        let (img, log) = textured.render_logged(&l.model.renderer, &l.store, &cam, seed)?;
        eprintln!("texture {} read at {} UV indices", field.checksum(), log.rows.len());
        img
    } else {
        l.model.renderer.render_image(&scene, &field, &l.store, &cam, seed)?
    };
    img.save_png(&args.out, true)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn edit(
    cli: &Cli,
    seed: u64,
    src: &TextureArgs,
    cam: &str,
    image: &Path,
    mask: &Path,
    out: &Path,
    overrides: (Option<usize>, Option<f64>),
    log: Option<&Path>,
) -> Result<()> {
    let target = Image::load_png(image)?;
    let (mw, mh, mask) = Image::load_mask(mask)?;
    if (mw, mh) != (target.width, target.height) {
        bail!("mask is {mw}x{mh} but the edited image is {}x{}", target.width, target.height);
    }
    let cam = Camera::parse_spec(cam, target.width, target.height)?;
    let mut l = load_all(cli.config.as_deref(), src)?;
    if let Some(n) = overrides.0 {
        l.cfg.edit.steps = n;
    }
    if let Some(lr) = overrides.1 {
        l.cfg.edit.lr = lr;
    }
    l.cfg.validate()?;
    let scene = scene_for(&l, &src.shape, seed)?;
    let field = pipeline::texture_field(&l.model, &l.store, src.seed_tex)?;
    let ecfg = editing::EditConfig {
        render_seed: seed,
        ..l.cfg.edit()
    };
    let t0 = Instant::now();
    let r = editing::edit_texture(&l.model.renderer, &l.store, &scene, &field, &cam, &target, &mask, &ecfg)?;
    let baked = pipeline::bake_field(&l.store, &r.field);
    pipeline::save_with_config(&baked, out, &l.cfg)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".csv"));
    write_text(&log_path, &r.to_csv())?;
    println!(
        "wrote {} ({:.1}s, masked error {:.4e} -> {:.4e}, {:.1}% reduction)",
        out.display(),
        t0.elapsed().as_secs_f64(),
        r.initial_error(),
        r.final_error(),
        100.0 * r.reduction()
    );
    Ok(())
}

fn gen_fixtures(seed: u64, out: &Path, views: usize, res: usize) -> Result<()> {
    if views == 0 || res == 0 {
        bail!("--views and --res must be positive");
    }
    let cfg = FixtureConfig {
        views,
        resolution: res,
        ..FixtureConfig::default()
    };
    let written = fixtures::gen_fixtures(out, seed, &cfg)?;
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}

fn selfcheck() -> Result<bool> {
    let checks = tuvf::selfcheck::run()?;
    let mut ok = true;
    for c in &checks {
        println!("{c}");
        ok &= c.passed;
    }
    println!("{} of {} checks passed", checks.iter().filter(|c| c.passed).count(), checks.len());
    Ok(ok)
}

fn run(cli: &Cli) -> Result<()> {
    let seed = resolve_seed(cli.seed)?;
    if let Some(n) = cli.workers {
        tuvf::set_workers(n)?;
    }
    if cli.print_config {
        let cfg = pipeline::resolve_config(cli.config.as_deref(), None)?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let s = seed.unwrap_or(0);
    match cli.command.as_ref().expect("checked by main") {
        Command::TrainCsae { data, out, steps, log } => train_csae(cli, seed, data, out, *steps, log.as_deref()),
        Command::TrainTexture {
            csae,
            shapes,
            reals,
            out,
            steps,
            patch,
            batch,
            log,
            samples,
        } => train_texture(cli, seed, csae, shapes, reals, out, (*steps, *patch, *batch), log.as_deref(), samples.as_deref()),
        Command::Render(a) => render(cli, s, a, false),
        Command::Transfer(a) => render(cli, s, a, true),
        Command::Edit {
            src,
            cam,
            image,
            mask,
            out,
            steps,
            lr,
            log,
        } => edit(cli, s, src, cam, image, mask, out, (*steps, *lr), log.as_deref()),
        Command::GenFixtures { out, views, res } => gen_fixtures(s, out, *views, *res),
        Command::Selfcheck => {
            if selfcheck()? {
                Ok(())
            } else {
                bail!("selfcheck failed")
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.command.is_none() && !cli.print_config {
        use clap::CommandFactory;
        let _ = Cli::command().write_long_help(&mut std::io::stderr());
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
