use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mv3d_core::image::load_rgb;
use mv3d_core::metrics::{evaluate_pair, EvalOptions, MetricsReport, NnMode};
use mv3d_core::pipeline::{
    cfg_table, emit_plot_data, load_rendered, reconstruct_stage, render_stage, run_pipeline, sample_stage, Backend,
    Manifest, PipelineConfig, RunReport, StageInputs, Variant,
};
use mv3d_core::surface::marching_cubes;
use mv3d_core::{Mesh, SdfGrid, ViewGrid};

#[derive(Parser, Debug)]
#[command(
    name = "mv3d",
    version,
    about = "Multi-view guided image-to-3D pipeline at desk scale"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML pipeline config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Output directory (default `out`); `evaluate` and `plot-data` only
    /// write files when it is given.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exhaustive nearest-neighbour search instead of the kd-tree.
    #[arg(long, global = true)]
    brute_force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Lite,
    Std,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Learned,
    Carve,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render fixture orbits, masks and the condition view.
    RenderFixtures {
        /// Fixture names; defaults to the configured fixture.
        #[arg(long = "fixture")]
        fixtures: Vec<String>,
        #[arg(long)]
        no_condition: bool,
    },
    /// Turn a rendered directory into a sampled view grid.
    Sample {
        #[arg(long)]
        input: PathBuf,
    },
    /// Reconstruct an SDF grid from `grid.png` (plus optional condition) in a directory.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
    },
    /// Marching cubes on a binary SDF grid.
    ExtractMesh {
        #[arg(long)]
        sdf: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        iso: f64,
    },
    /// Chamfer distance and F-scores between two OBJ meshes.
    Evaluate {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        align: bool,
        #[arg(long, default_value_t = mv3d_core::metrics::DEFAULT_SAMPLES)]
        points: usize,
    },
    /// Full pipeline into the output directory.
    Run,
    /// Guidance weights per view over the diffusion time range.
    CfgTable {
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Runtime vs quality CSV from finished run directories.
    PlotData {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Config file or defaults, then command-line overrides.
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, self.seed) {
            (Some(path), _) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(seed)) => PipelineConfig::new(seed),
            (None, None) => bail!("a seed is required: pass --seed or a --config with `seed`"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.variant {
            cfg.variant = match v {
                VariantArg::Lite => Variant::Lite,
                VariantArg::Std => Variant::Std,
            };
        }
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Learned => Backend::Learned,
                BackendArg::Carve => Backend::Carve,
            };
        }
        cfg.eval.brute_force |= self.brute_force;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn render(common: &Common, fixtures: &[String], no_condition: bool) -> Result<()> {
    let cfg = common.pipeline_config()?;
    let names = if fixtures.is_empty() {
        vec![cfg.fixture.clone()]
    } else {
        fixtures.to_vec()
    };
    for name in &names {
        let dir = if names.len() == 1 {
            common.out_dir()
        } else {
            common.out_dir().join(name)
        };
        create_out(&dir)?;
        render_stage(name, cfg.variant, cfg.condition && !no_condition, cfg.seed, &dir)
            .with_context(|| format!("rendering fixture `{name}`"))?;
        println!("{name}: {}", dir.display());
    }
    Ok(())
}

/// Copies the condition image and manifest so the directory stays self-contained.
fn carry_condition(from: &Path, to: &Path) -> Result<()> {
    for name in ["condition.png", "manifest.json"] {
        let src = from.join(name);
        if src.exists() && src != to.join(name) {
            fs::copy(&src, to.join(name)).with_context(|| format!("copying {}", src.display()))?;
        }
    }
    Ok(())
}

fn sample(common: &Common, input: &Path) -> Result<()> {
    let cfg = common.pipeline_config()?;
    let inputs = load_rendered(input).with_context(|| format!("reading rendered views in {}", input.display()))?;
    let grid = sample_stage(&inputs.grid, &cfg.sampler, &cfg.cfg, cfg.seed)?;
    create_out(&common.out_dir())?;
    grid.save_png(&common.out_dir().join("grid.png"))?;
    carry_condition(input, &common.out_dir())?;
    println!(
        "grid {}x{} -> {}",
        grid.width(),
        grid.height(),
        common.out_dir().join("grid.png").display()
    );
    Ok(())
}

fn load_grid_dir(dir: &Path) -> Result<StageInputs> {
    let grid =
        ViewGrid::load_png(&dir.join("grid.png")).with_context(|| format!("reading {}/grid.png", dir.display()))?;
    let cond_path = dir.join("condition.png");
    let condition = cond_path.exists().then(|| load_rgb(&cond_path)).transpose()?;
    let manifest = dir.join("manifest.json");
    let condition_pose = if manifest.exists() {
        Manifest::load(&manifest)?.condition_pose
    } else {
        None
    };
    Ok(StageInputs {
        grid,
        condition,
        condition_pose,
    })
}

fn reconstruct(common: &Common, input: &Path) -> Result<()> {
    let cfg = common.pipeline_config()?;
    let inputs = load_grid_dir(input)?;
    let sdf = reconstruct_stage(&inputs, &cfg)?;
    create_out(&common.out_dir())?;
    let path = common.out_dir().join("sdf.bin");
    sdf.save(&path)?;
    println!("{:?} grid ({}) -> {}", sdf.dims, cfg.backend.label(), path.display());
    Ok(())
}

fn extract(common: &Common, sdf: &Path, iso: f64) -> Result<()> {
    let grid = SdfGrid::load(sdf)?;
    let mesh = marching_cubes(&grid, iso);
    create_out(&common.out_dir())?;
    let path = common.out_dir().join("mesh.obj");
    mesh.save_obj(&path)?;
    println!(
        "{} vertices, {} triangles -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        path.display()
    );
    Ok(())
}

fn evaluate(common: &Common, pred: &Path, gt: &Path, align: bool, points: usize) -> Result<MetricsReport> {
    let a = Mesh::load_obj(pred).with_context(|| format!("reading {}", pred.display()))?;
    let b = Mesh::load_obj(gt).with_context(|| format!("reading {}", gt.display()))?;
    let opts = EvalOptions {
        align,
        points,
        mode: if common.brute_force {
            NnMode::BruteForce
        } else {
            NnMode::KdTree
        },
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(0));
    Ok(evaluate_pair(&a, &b, &opts, &mut rng)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let c = &cli.common;
    match &cli.command {
        Command::RenderFixtures { fixtures, no_condition } => render(c, fixtures, *no_condition)?,
        Command::Sample { input } => sample(c, input)?,
        Command::Reconstruct { input } => reconstruct(c, input)?,
        Command::ExtractMesh { sdf, iso } => extract(c, sdf, *iso)?,
        Command::Evaluate {
            pred,
            gt,
            align,
            points,
        } => {
            let report = evaluate(c, pred, gt, *align, *points)?;
            let json = serde_json::to_string_pretty(&report)?;
            let csv = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row());
            if let Some(out) = &c.out {
                create_out(out)?;
                write_text(&out.join("metrics.json"), &format!("{json}\n"))?;
                write_text(&out.join("metrics.csv"), &csv)?;
            }
            println!("{json}");
            print!("{csv}");
        }
        Command::Run => {
            let cfg = c.pipeline_config()?;
            let out = c.out_dir();
            let report = run_pipeline(&cfg, &out)?;
            for s in &report.timings.stages {
                println!("{:<12} {:8.3} s", s.stage, s.seconds);
            }
            println!("{:<12} {:8.3} s", "total", report.total_seconds());
            if let Some(m) = &report.metrics {
                println!("{}\n{}", MetricsReport::CSV_HEADER, m.csv_row());
            }
            println!("report: {}", out.join("report.json").display());
        }
        Command::CfgTable { steps } => {
            let cfg = match (&c.config, c.seed) {
                (None, None) => PipelineConfig::new(0),
                _ => c.pipeline_config()?,
            };
            print!("{}", cfg_table(&cfg.cfg, *steps)?);
        }
        Command::PlotData { runs } => {
            let reports = runs
                .iter()
                .map(|r| RunReport::load(r).with_context(|| format!("reading run {}", r.display())))
                .collect::<Result<Vec<_>>>()?;
            let csv = emit_plot_data(&reports);
            if let Some(out) = &c.out {
                create_out(out)?;
                write_text(&out.join("plot_data.csv"), &csv)?;
            }
            print!("{csv}");
        }
    }
    Ok(())
}
