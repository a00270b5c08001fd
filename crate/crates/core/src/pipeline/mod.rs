//! End-to-end orchestration: render → sample → reconstruct → extract → evaluate.
//!
//! A run owns its output directory. Everything written to `report.json` is a
//! pure function of the config, so two runs with the same config produce
//! byte-identical reports; wall-clock durations go to `timings.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{GrayImage, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_poses, CameraPose};
use crate::cfg::{initial_latent, sample_loop, AnchorDenoiser, CfgSchedule};
use crate::field::Field;
use crate::image::{load_rgb, mask_from_white_background, save_png};
use crate::metrics::{evaluate_pair, EvalOptions, MetricsReport, NnMode, FSCORE_THRESHOLDS};
use crate::mvgrid::{assemble, split, ViewGrid, ViewSet, GRID_COLS, GRID_ROWS};
use crate::recon::{carve, reconstruct_learned, CarveConfig, LearnedBackend, Silhouette};
use crate::renderer::{fixture, render_fixture_set, AnalyticSdf};
use crate::surface::{is_watertight, marching_cubes, mesh_from_fn, Mesh, SdfGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Lite,
    Std,
}

impl Variant {
    pub fn tile_size(self) -> u32 {
        match self {
            Variant::Lite => 320,
            Variant::Std => 512,
        }
    }

    /// `(width, height)` of the view grid.
    pub fn grid_size(self) -> (u32, u32) {
        (GRID_COLS * self.tile_size(), GRID_ROWS * self.tile_size())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Learned,
    #[default]
    Carve,
}

impl Backend {
    pub fn label(self) -> &'static str {
        match self {
            Backend::Learned => "learned",
            Backend::Carve => "carve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Ground-truth views go straight to reconstruction.
    #[default]
    Bypass,
    /// Guided sampling with the anchor denoiser, targeting the input grid.
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Bypass,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarveSettings {
    pub threshold: f64,
    pub truncation_voxels: f64,
}

impl Default for CarveSettings {
    fn default() -> Self {
        let c = CarveConfig::default();
        Self {
            threshold: c.threshold,
            truncation_voxels: c.truncation_voxels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
    pub points: usize,
    pub align: bool,
    pub brute_force: bool,
    /// Node resolution of the ground-truth mesh extracted from the fixture.
    pub gt_resolution: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            thresholds: FSCORE_THRESHOLDS.to_vec(),
            points: crate::metrics::DEFAULT_SAMPLES,
            align: false,
            brute_force: false,
            gt_resolution: 128,
        }
    }
}

impl EvalSettings {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            align: self.align,
            thresholds: self.thresholds.clone(),
            points: self.points,
            mode: if self.brute_force {
                NnMode::BruteForce
            } else {
                NnMode::KdTree
            },
            ..Default::default()
        }
    }
}

/// Supplied images instead of a fixture. `grid` is a 3×2 view grid;
/// `condition_pose` lets the carve backend use the condition silhouette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputImages {
    pub grid: PathBuf,
    #[serde(default)]
    pub condition: Option<PathBuf>,
    #[serde(default)]
    pub condition_pose: Option<CameraPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_fixture")]
    pub fixture: String,
    #[serde(default)]
    pub input: Option<InputImages>,
    /// Render and use a condition view from a sampled pose.
    #[serde(default = "default_true")]
    pub condition: bool,
    #[serde(default = "default_voxels")]
    pub voxel_resolution: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub cfg: CfgSchedule,
    #[serde(default)]
    pub carve: CarveSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_fixture() -> String {
    "sphere".into()
}

fn default_true() -> bool {
    true
}

fn default_voxels() -> usize {
    96
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            variant: Variant::default(),
            backend: Backend::default(),
            fixture: default_fixture(),
            input: None,
            condition: true,
            voxel_resolution: default_voxels(),
            sampler: SamplerConfig::default(),
            cfg: CfgSchedule::default(),
            carve: CarveSettings::default(),
            eval: EvalSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.carve_config().validate()?;
        if self.sampler.steps == 0 {
            return Err(Error::Config("sampler.steps must be at least 1".into()));
        }
        if self.eval.points == 0 || self.eval.gt_resolution < 2 {
            return Err(Error::Config(
                "eval.points and eval.gt_resolution must be positive".into(),
            ));
        }
        if let Some(t) = self.eval.thresholds.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("eval threshold {t} must be positive")));
        }
        if self.input.is_none() {
            fixture(&self.fixture).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn carve_config(&self) -> CarveConfig {
        CarveConfig {
            resolution: self.voxel_resolution,
            threshold: self.carve.threshold,
            truncation_voxels: self.carve.truncation_voxels,
            ..Default::default()
        }
    }
}

/// Per-stage random stream derived from the run seed.
pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_CONDITION: u64 = 1;
const STREAM_SAMPLER: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// What the render stage writes next to the images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixture: String,
    pub tile: u32,
    pub views: Vec<String>,
    pub masks: Vec<String>,
    pub poses: Vec<CameraPose>,
    pub condition: Option<String>,
    pub condition_mask: Option<String>,
    pub condition_pose: Option<CameraPose>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Views and optional condition image that feed reconstruction.
#[derive(Debug, Clone)]
pub struct StageInputs {
    pub grid: ViewGrid,
    pub condition: Option<RgbImage>,
    pub condition_pose: Option<CameraPose>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::at_path(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::at_path(path, e))
}

/// Renders the fixture orbit (and condition view) into `out` and returns the
/// assembled ground-truth grid.
pub fn render_stage(name: &str, variant: Variant, condition: bool, seed: u64, out: &Path) -> Result<StageInputs> {
    let shape = fixture(name)?;
    let mut rng = stage_rng(seed, STREAM_CONDITION);
    let set = render_fixture_set(&shape, variant.tile_size(), condition, &mut rng)?;
    create_dir(&out.join("views"))?;
    create_dir(&out.join("masks"))?;
    let mut manifest = Manifest {
        fixture: name.into(),
        tile: variant.tile_size(),
        views: Vec::new(),
        masks: Vec::new(),
        poses: orbit_poses().to_vec(),
        condition: None,
        condition_mask: None,
        condition_pose: None,
    };
    for (i, v) in set.views.iter().enumerate() {
        let (img, mask) = (format!("views/view_{i}.png"), format!("masks/mask_{i}.png"));
        save_png(&v.image, &out.join(&img))?;
        save_png(&v.silhouette, &out.join(&mask))?;
        manifest.views.push(img);
        manifest.masks.push(mask);
    }
    if let Some(c) = &set.condition {
        save_png(&c.image, &out.join("condition.png"))?;
        save_png(&c.silhouette, &out.join("condition_mask.png"))?;
        manifest.condition = Some("condition.png".into());
        manifest.condition_mask = Some("condition_mask.png".into());
        manifest.condition_pose = Some(c.pose);
    }
    write_json(&manifest, &out.join("manifest.json"))?;
    Ok(StageInputs {
        grid: assemble(&set.view_set())?,
        condition: set.condition.as_ref().map(|c| c.image.clone()),
        condition_pose: set.condition.map(|c| c.pose),
    })
}

/// Loads the output of [`render_stage`] back from disk.
pub fn load_rendered(dir: &Path) -> Result<StageInputs> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let images = manifest
        .views
        .iter()
        .map(|v| load_rgb(&dir.join(v)))
        .collect::<Result<Vec<_>>>()?;
    let condition = manifest
        .condition
        .as_ref()
        .map(|c| load_rgb(&dir.join(c)))
        .transpose()?;
    Ok(StageInputs {
        grid: assemble(&ViewSet::new(images)?)?,
        condition,
        condition_pose: manifest.condition_pose,
    })
}

fn load_input_images(input: &InputImages) -> Result<StageInputs> {
    Ok(StageInputs {
        grid: ViewGrid::load_png(&input.grid)?,
        condition: input.condition.as_deref().map(load_rgb).transpose()?,
        condition_pose: input.condition_pose,
    })
}

/// Bypass returns `target` unchanged; guided mode runs the sampler from
/// seeded noise toward `target` against a white anchor.
pub fn sample_stage(target: &ViewGrid, sampler: &SamplerConfig, schedule: &CfgSchedule, seed: u64) -> Result<ViewGrid> {
    match sampler.mode {
        SamplerMode::Bypass => Ok(target.clone()),
        SamplerMode::Guided => {
            let target = Field::from_rgb(&target.pixels);
            let (w, h, c) = target.shape();
            let anchor = Field::filled(w, h, c, 1.0);
            let noise_seed = rand::Rng::random(&mut stage_rng(seed, STREAM_SAMPLER));
            let init = initial_latent(w, h, c, sampler.steps, noise_seed)?;
            let mut denoiser = AnchorDenoiser { target, anchor };
            let x = sample_loop(&mut denoiser, schedule, sampler.steps, init)?;
            ViewGrid::from_image(x.to_rgb()?)
        }
    }
}

/// Silhouettes are recovered from the white background of every view.
pub fn reconstruct_stage(inputs: &StageInputs, config: &PipelineConfig) -> Result<SdfGrid> {
    let views = split(&inputs.grid)?;
    match config.backend {
        Backend::Carve => {
            let masks: Vec<GrayImage> = views.images.iter().map(mask_from_white_background).collect();
            let orbit: Vec<Silhouette> = masks
                .iter()
                .zip(&views.poses)
                .map(|(mask, pose)| Silhouette { mask, pose })
                .collect();
            let cond_mask = inputs.condition.as_ref().map(mask_from_white_background);
            let cond = match (&cond_mask, &inputs.condition_pose) {
                (Some(mask), Some(pose)) => Some(Silhouette { mask, pose }),
                _ => None,
            };
            carve(&orbit, cond, &config.carve_config())
        }
        Backend::Learned => {
            let backend = LearnedBackend::seeded(config.seed);
            reconstruct_learned(&views, inputs.condition.as_ref(), &backend, config.voxel_resolution)
        }
    }
}

pub fn extract_stage(grid: &SdfGrid) -> Mesh {
    marching_cubes(grid, 0.0)
}

/// Ground-truth mesh of a fixture on the evaluation grid.
pub fn ground_truth_mesh(shape: &AnalyticSdf, resolution: usize) -> Result<Mesh> {
    mesh_from_fn(resolution, |p| shape.eval(p))
}

pub fn evaluate_stage(pred: &Mesh, gt: &Mesh, eval: &EvalSettings, seed: u64) -> Result<MetricsReport> {
    evaluate_pair(pred, gt, &eval.options(), &mut stage_rng(seed, STREAM_EVAL))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub watertight: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub versions: BTreeMap<String, String>,
    /// Replaying this config reproduces the run.
    pub config: PipelineConfig,
    pub stages: Vec<String>,
    /// Artifact name → path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub grid_size: Option<[u32; 2]>,
    pub mesh: Option<MeshSummary>,
    /// `None` without ground truth or when the mesh came out empty.
    pub metrics: Option<MetricsReport>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// Stored separately in `timings.json`.
    #[serde(skip)]
    pub timings: Timings,
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

impl RunReport {
    fn new(config: &PipelineConfig) -> Self {
        let versions = BTreeMap::from([("mv3d-core".to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        Self {
            versions,
            config: config.clone(),
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
            grid_size: None,
            mesh: None,
            metrics: None,
            failed_stage: None,
            error: None,
            timings: Timings::default(),
        }
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.total_seconds
    }

    /// Writes `report.json` and `timings.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(self, &dir.join(REPORT_FILE))?;
        write_json(&self.timings, &dir.join(TIMINGS_FILE))
    }

    /// Reads a run directory; missing timings read as zero.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::at_path(&path, e))?;
        let mut report: RunReport = serde_json::from_str(&text)?;
        let tpath = dir.join(TIMINGS_FILE);
        if tpath.exists() {
            let text = fs::read_to_string(&tpath).map_err(|e| Error::at_path(&tpath, e))?;
            report.timings = serde_json::from_str(&text)?;
        }
        Ok(report)
    }
}

struct Recorder<'a> {
    report: RunReport,
    out: &'a Path,
    start: Instant,
}

impl Recorder<'_> {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut RunReport) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let res = f(&mut self.report);
        self.report.timings.stages.push(StageTiming {
            stage: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        match res {
            Ok(v) => {
                self.report.stages.push(name.into());
                Ok(v)
            }
            Err(e) => {
                self.report.failed_stage = Some(name.into());
                self.report.error = Some(e.to_string());
                self.finish()?;
                Err(e.in_stage(name))
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.report.timings.total_seconds = self.start.elapsed().as_secs_f64();
        self.report.save(self.out)
    }
}

/// Runs every stage into `out`. A failing stage is named in the saved
/// report and in the returned [`Error::Stage`].
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    create_dir(out)?;
    let mut rec = Recorder {
        report: RunReport::new(config),
        out,
        start: Instant::now(),
    };

    let (inputs, shape) = match &config.input {
        Some(input) => (rec.stage("load", |_| load_input_images(input))?, None),
        None => {
            let inputs = rec.stage("render", |r| {
                let inputs = render_stage(&config.fixture, config.variant, config.condition, config.seed, out)?;
                r.artifacts.insert("manifest".into(), "manifest.json".into());
                r.artifacts.insert("views".into(), "views".into());
                r.artifacts.insert("masks".into(), "masks".into());
                if inputs.condition.is_some() {
                    r.artifacts.insert("condition".into(), "condition.png".into());
                }
                Ok(inputs)
            })?;
            (inputs, Some(fixture(&config.fixture)?))
        }
    };

    let grid = rec.stage("sample", |r| {
        let grid = sample_stage(&inputs.grid, &config.sampler, &config.cfg, config.seed)?;
        grid.save_png(&out.join("grid.png"))?;
        r.artifacts.insert("grid".into(), "grid.png".into());
        r.grid_size = Some([grid.width(), grid.height()]);
        Ok(grid)
    })?;

    let sampled = StageInputs { grid, ..inputs };
    let sdf = rec.stage("reconstruct", |r| {
        let sdf = reconstruct_stage(&sampled, config)?;
        sdf.save(&out.join("sdf.bin"))?;
        r.artifacts.insert("sdf".into(), "sdf.bin".into());
        Ok(sdf)
    })?;

    let mesh = rec.stage("extract", |r| {
        let mesh = extract_stage(&sdf);
        mesh.save_obj(&out.join("mesh.obj"))?;
        r.artifacts.insert("mesh".into(), "mesh.obj".into());
        r.mesh = Some(MeshSummary {
            vertices: mesh.vertices.len(),
            triangles: mesh.triangles.len(),
            watertight: is_watertight(&mesh).watertight,
        });
        Ok(mesh)
    })?;

    if let Some(shape) = shape.filter(|_| !mesh.is_empty()) {
        rec.stage("evaluate", |r| {
            let gt = ground_truth_mesh(&shape, config.eval.gt_resolution)?;
            r.metrics = Some(evaluate_stage(&mesh, &gt, &config.eval, config.seed)?);
            Ok(())
        })?;
    }
    rec.finish()?;
    Ok(rec.report)
}

/// Column order of [`emit_plot_data`].
pub const PLOT_HEADER: &str = "total_seconds,fscore_0.1,fscore_0.2,fscore_0.5,chamfer,backend";

/// One CSV row per run (runtime vs quality); missing metrics stay empty.
pub fn emit_plot_data(reports: &[RunReport]) -> String {
    let mut csv = String::from(PLOT_HEADER);
    csv.push('\n');
    for r in reports {
        let m = r.metrics.as_ref();
        let f = |t: f64| {
            m.and_then(|m| m.fscore_at(t))
                .map(|v| v.to_string())
                .unwrap_or_default()
        };
        let cd = m.map(|m| m.chamfer.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.total_seconds(),
            f(0.1),
            f(0.2),
            f(0.5),
            cd,
            r.config.backend.label()
        );
    }
    csv
}

/// Guidance weights at `steps + 1` evenly spaced times from `t_max` down to 0:
/// `t, w_t, w_view0 … w_view5`.
pub fn cfg_table(schedule: &CfgSchedule, steps: usize) -> Result<String> {
    if steps == 0 {
        return Err(Error::Domain("cfg table needs at least one step".into()));
    }
    let mut csv = String::from("t,base");
    for i in 0..crate::mvgrid::NUM_VIEWS {
        let _ = write!(csv, ",view_{i}");
    }
    csv.push('\n');
    for k in 0..=steps {
        let t = schedule.t_max * (steps - k) as f64 / steps as f64;
        let map = schedule.weight_map(t)?;
        let _ = write!(csv, "{t},{}", schedule.base_weight(t)?);
        for w in map.weights {
            let _ = write!(csv, ",{w}");
        }
        csv.push('\n');
    }
    Ok(csv)
}

#[cfg(test)]
mod tests;
