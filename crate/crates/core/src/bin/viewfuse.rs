use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use viewfuse::flowio::{read_flow, read_image, write_flow, write_gray16, write_image};
use viewfuse::pipeline::{default_overlap, flow_metrics, prepare_inputs, run_pipeline, Metrics, Rect};
use viewfuse::synth::{generate_scene, random_scene, wide_frame, SceneSpec};
use viewfuse::{FusionConfig, ImageBuffer};

#[derive(Parser)]
#[command(name = "viewfuse", version, about = "Wide/telephoto fusion through view transition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a wide frame with a telephoto image of its overlap region.
    Fuse(FuseArgs),
    /// Report occlusion and clip-bound statistics for a flow.
    Metrics(MetricsArgs),
    /// Render a synthetic pair with ground-truth flow and occlusion.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct Params {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    grad_threshold: Option<f64>,
    #[arg(long)]
    rhe_block: Option<usize>,
    #[arg(long)]
    rhe_stride: Option<usize>,
    #[arg(long)]
    occ_soft: Option<usize>,
    #[arg(long)]
    overlap_soft: Option<usize>,
    /// literal | exact-ray
    #[arg(long)]
    transition: Option<String>,
    /// auto or a level count
    #[arg(long)]
    pyramid_levels: Option<String>,
}

impl Params {
    fn resolve(&self) -> Result<FusionConfig> {
        let mut cfg = FusionConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("config: {}", path.display()))?;
        }
        let mut set = |key: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                cfg.set(key, &v).with_context(|| format!("config: --{}", key.replace('_', "-")))?;
            }
            Ok(())
        };
        set("kernel", self.kernel.map(|v| v.to_string()))?;
        set("ratio", self.ratio.map(|v| v.to_string()))?;
        set("grad_threshold", self.grad_threshold.map(|v| v.to_string()))?;
        set("rhe_block", self.rhe_block.map(|v| v.to_string()))?;
        set("rhe_stride", self.rhe_stride.map(|v| v.to_string()))?;
        set("occ_soft", self.occ_soft.map(|v| v.to_string()))?;
        set("overlap_soft", self.overlap_soft.map(|v| v.to_string()))?;
        set("transition", self.transition.clone())?;
        set("pyramid_levels", self.pyramid_levels.clone())?;
        cfg.validate().context("config")?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    wide: PathBuf,
    #[arg(long)]
    tele: PathBuf,
    /// Backward flow on the overlap grid (.flo). Estimated by block matching when absent.
    #[arg(long)]
    flow: Option<PathBuf>,
    /// X,Y,W,H in wide-frame pixels; defaults to the centred half-size rectangle.
    #[arg(long, value_parser = parse_rect)]
    overlap_rect: Option<Rect>,
    /// Output directory for overlap.png and full.png.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
}

#[derive(Args)]
struct MetricsArgs {
    /// Backward flow (.flo).
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Already transformed flow; computed from --flow when absent.
    #[arg(long)]
    transformed_flow: Option<PathBuf>,
    /// Estimate the flow from these images instead of reading it.
    #[arg(long, requires = "tele")]
    wide: Option<PathBuf>,
    #[arg(long, requires = "wide")]
    tele: Option<PathBuf>,
    #[arg(long, value_parser = parse_rect)]
    overlap_rect: Option<Rect>,
    #[command(flatten)]
    params: Params,
}

#[derive(Args)]
struct SynthArgs {
    /// key=value scene description; a seeded random scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the random scene (the overlap region).
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        &[x, y, w, h] => Ok((x, y, w, h)),
        _ => Err(format!("expected X,Y,W,H, got {s:?}")),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("output: creating {}", dir.display()))
}

fn load_inputs(wide: &Path, tele: &Path, flow: Option<&Path>, rect: Option<Rect>) -> Result<(ImageBuffer, ImageBuffer, viewfuse::FlowField, Rect)> {
    let wide = read_image(wide).context("reading wide image")?;
    let tele = read_image(tele).context("reading tele image")?;
    let flow = flow.map(|p| read_flow(p).context("reading flow")).transpose()?;
    let rect = rect.unwrap_or_else(|| default_overlap(wide.width(), wide.height()));
    let (_, tele_o, flow) = prepare_inputs(&wide, &tele, flow, rect)?;
    Ok((wide, tele_o, flow, rect))
}

fn fuse(args: FuseArgs) -> Result<()> {
    let cfg = args.params.resolve()?;
    let (wide, tele, flow, rect) = load_inputs(&args.wide, &args.tele, args.flow.as_deref(), args.overlap_rect)?;
    let out = run_pipeline(&wide, &tele, &flow, rect, &cfg)?;
    ensure_dir(&args.out)?;
    write_image(args.out.join("overlap.png"), out.overlap()).context("output: overlap")?;
    write_image(args.out.join("full.png"), &out.full).context("output: full view")?;
    if let Some(dir) = &args.dump_intermediates {
        ensure_dir(dir)?;
        let vt = &out.transition;
        let (w, h) = flow.dims();
        write_flow(dir.join("flow.flo"), &flow)?;
        write_flow(dir.join("target.flo"), &vt.target)?;
        write_flow(dir.join("clipped.flo"), &vt.clipped)?;
        write_flow(dir.join("transformed.flo"), &vt.transformed)?;
        write_image(dir.join("foreground.pgm"), &vt.foreground.to_image())?;
        write_gray16(dir.join("distance.pgm"), w, h, vt.distance.values(), 1.0)?;
        write_image(dir.join("occ_original.pgm"), &out.occ_original.to_image())?;
        write_image(dir.join("occ_transformed.pgm"), &out.occ_transformed.to_image())?;
        write_image(dir.join("blend_weight.pgm"), &out.fusion.weights.to_image())?;
        write_image(dir.join("tele_view.png"), &out.tele_view.image)?;
        write_image(dir.join("wide_view.png"), &out.wide_view.image)?;
        write_image(dir.join("tele_toned.png"), &out.fusion.toned)?;
        let mut timing = String::new();
        for (stage, d) in &out.timings.0 {
            timing.push_str(&format!("{stage}={:.6}\n", d.as_secs_f64()));
        }
        fs::write(dir.join("timings.txt"), timing).context("output: timings")?;
    }
    print!("{}", out.metrics.to_key_values());
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let cfg = args.params.resolve()?;
    let flow = match (&args.flow, &args.wide, &args.tele) {
        (Some(p), _, _) => read_flow(p).context("reading flow")?,
        (None, Some(w), Some(t)) => load_inputs(w, t, None, args.overlap_rect)?.2,
        _ => bail!("metrics needs --flow or both --wide and --tele"),
    };
    let m = match &args.transformed_flow {
        None => flow_metrics(&flow, &cfg)?,
        Some(p) => {
            let t = read_flow(p).context("reading transformed flow")?;
            let original = viewfuse::occlusion::compute_occlusion(&flow, &cfg);
            let transformed = viewfuse::occlusion::compute_occlusion(&t, &cfg);
            let bound = flow_metrics(&flow, &cfg)?.bound_excess;
            Metrics::from_masks(&original, &transformed, bound)
        }
    };
    print!("{}", m.to_key_values());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.scene {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("scene: reading {}", p.display()))?;
            SceneSpec::parse(&text).context("scene")?
        }
        None => random_scene(args.seed, args.size),
    };
    let scene = generate_scene(&spec).context("scene")?;
    let frame = (2 * spec.width, 2 * spec.height);
    let rect = default_overlap(frame.0, frame.1);
    let wide = wide_frame(&spec, &scene, frame, (rect.0, rect.1))?;
    ensure_dir(&args.out)?;
    write_image(args.out.join("wide.png"), &wide)?;
    write_image(args.out.join("tele.png"), &scene.tele)?;
    write_flow(args.out.join("flow.flo"), &scene.gt_flow)?;
    write_image(args.out.join("occlusion.pgm"), &scene.gt_occ.to_image())?;
    fs::write(args.out.join("scene.txt"), spec.to_text()).context("output: scene")?;
    println!("overlap_rect={},{},{},{}", rect.0, rect.1, rect.2, rect.3);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Metrics(a) => metrics(a),
        Command::Synth(a) => synth(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
