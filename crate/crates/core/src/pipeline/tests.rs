use super::*;
use crate::image::load_gray;

fn quick(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::new(seed);
    c.voxel_resolution = 32;
    c.eval.points = 2000;
    c.eval.gt_resolution = 48;
    c
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn variant_sizes() {
    assert_eq!(Variant::Lite.grid_size(), (640, 960));
    assert_eq!(Variant::Std.grid_size(), (1024, 1536));
}

#[test]
fn toml_round_trip_and_rejections() {
    let mut c = PipelineConfig::new(7);
    c.backend = Backend::Learned;
    c.cfg.tau_back = 0.6;
    c.eval.thresholds = vec![0.05, 0.1];
    let text = c.to_toml().unwrap();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);

    let minimal = PipelineConfig::from_toml("seed = 3\n").unwrap();
    assert_eq!(minimal, PipelineConfig::new(3));
    let partial = PipelineConfig::from_toml("seed = 3\nvariant = \"std\"\n[cfg]\namplitude = 8.0\n").unwrap();
    assert_eq!(
        (partial.variant, partial.cfg.amplitude, partial.cfg.base),
        (Variant::Std, 8.0, 2.0)
    );

    assert!(matches!(
        PipelineConfig::from_toml("variant = \"lite\"\n"),
        Err(Error::Config(_))
    ));
    assert!(PipelineConfig::from_toml("seed = 1\ncolour = 3\n").is_err());
    assert!(PipelineConfig::from_toml("seed = 1\nfixture = \"teapot\"\n").is_err());
    assert!(PipelineConfig::from_toml("seed = 1\nvoxel_resolution = 4\n").is_err());
    assert!(PipelineConfig::from_toml("seed = 1\n[eval]\nthresholds = [0.0]\n").is_err());
    assert!(PipelineConfig::from_toml("seed = 1\n[sampler]\nsteps = 0\n").is_err());
}

#[test]
fn lite_run_on_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig::new(11);
    let r = run_pipeline(&c, dir.path()).unwrap();
    assert_eq!(r.grid_size, Some([640, 960]));
    let grid = ViewGrid::load_png(&dir.path().join("grid.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (640, 960));
    assert_eq!(r.stages, ["render", "sample", "reconstruct", "extract", "evaluate"]);
    let m = r.metrics.as_ref().unwrap();
    assert!(m.chamfer <= 0.05, "{}", m.chamfer);
    assert!(r.mesh.unwrap().watertight);
    assert!(r.timings.stages.iter().all(|s| s.seconds >= 0.0));
    for name in [
        "mesh.obj",
        "sdf.bin",
        "report.json",
        "timings.json",
        "manifest.json",
        "condition.png",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(
        load_gray(&dir.path().join("masks/mask_0.png")).unwrap().dimensions(),
        (320, 320)
    );

    let back = RunReport::load(dir.path()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn same_seed_same_bytes_and_replay() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let cfg = quick(42);
    let ra = run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    for f in ["mesh.obj", "report.json", "sdf.bin", "grid.png"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let echoed = RunReport::load(a.path()).unwrap().config;
    let rc = run_pipeline(&echoed, c.path()).unwrap();
    assert_eq!(read(&a.path().join("mesh.obj")), read(&c.path().join("mesh.obj")));
    assert_eq!(rc.metrics, ra.metrics);
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(1);
    cfg.fixture = "empty".into();
    match run_pipeline(&cfg, dir.path()) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "reconstruct");
            assert!(matches!(*source, Error::EmptyHull));
        }
        other => panic!("unexpected {other:?}"),
    }
    let report = RunReport::load(dir.path()).unwrap();
    assert_eq!(report.failed_stage.as_deref(), Some("reconstruct"));
    assert_eq!(report.stages, ["render", "sample"]);
    assert!(report.metrics.is_none());
}

#[test]
fn guided_sampler_keeps_silhouettes() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = render_stage("torus", Variant::Lite, false, 3, dir.path()).unwrap();
    let sampler = SamplerConfig {
        mode: SamplerMode::Guided,
        steps: 8,
    };
    let guided = sample_stage(&inputs.grid, &sampler, &CfgSchedule::default(), 3).unwrap();
    assert_ne!(guided, inputs.grid);
    assert_eq!(
        mask_from_white_background(&guided.pixels),
        mask_from_white_background(&inputs.grid.pixels)
    );
    let again = sample_stage(&inputs.grid, &sampler, &CfgSchedule::default(), 3).unwrap();
    assert_eq!(guided, again);
    let bypass = sample_stage(&inputs.grid, &SamplerConfig::default(), &CfgSchedule::default(), 3).unwrap();
    assert_eq!(bypass, inputs.grid);

    let loaded = load_rendered(dir.path()).unwrap();
    assert_eq!(loaded.grid, inputs.grid);
    assert!(loaded.condition.is_none());
}

#[test]
fn supplied_images_skip_evaluation() {
    let render_dir = tempfile::tempdir().unwrap();
    let inputs = render_stage("box", Variant::Lite, true, 5, render_dir.path()).unwrap();
    let grid_path = render_dir.path().join("gt_grid.png");
    inputs.grid.save_png(&grid_path).unwrap();
    let mut cfg = quick(5);
    cfg.input = Some(InputImages {
        grid: grid_path,
        condition: Some(render_dir.path().join("condition.png")),
        condition_pose: inputs.condition_pose,
    });
    let out = tempfile::tempdir().unwrap();
    let r = run_pipeline(&cfg, out.path()).unwrap();
    assert_eq!(r.stages, ["load", "sample", "reconstruct", "extract"]);
    assert!(r.metrics.is_none() && r.mesh.unwrap().triangles > 0);
}

fn fake_report(backend: Backend, seconds: f64, chamfer: f64) -> RunReport {
    let mut r = RunReport::new(&PipelineConfig {
        backend,
        ..PipelineConfig::new(0)
    });
    r.timings.total_seconds = seconds;
    r.metrics = Some(MetricsReport {
        chamfer,
        thresholds: FSCORE_THRESHOLDS.to_vec(),
        fscore: [("0.1", 0.25), ("0.2", 0.5), ("0.5", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        precision: BTreeMap::new(),
        recall: BTreeMap::new(),
        points: 10,
        icp_applied: false,
        icp_rotation_deg: None,
        icp_translation: None,
    });
    r
}

#[test]
fn plot_data_rows() {
    let reports = [
        fake_report(Backend::Carve, 1.5, 0.03),
        fake_report(Backend::Learned, 12.25, 0.125),
    ];
    let csv = emit_plot_data(&reports);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines,
        [
            PLOT_HEADER,
            "1.5,0.25,0.5,1,0.03,carve",
            "12.25,0.25,0.5,1,0.125,learned"
        ]
    );
    let mut empty = fake_report(Backend::Learned, 2.0, 0.0);
    empty.metrics = None;
    assert_eq!(emit_plot_data(&[empty]).lines().nth(1), Some("2,,,,,learned"));
}

#[test]
fn cfg_table_rows() {
    let csv = cfg_table(&CfgSchedule::default(), 4).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "t,base,view_0,view_1,view_2,view_3,view_4,view_5");
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    for (got, want) in first.iter().zip([1000.0, 18.0, 18.0, 15.0, 12.0, 9.0, 12.0, 15.0]) {
        assert!((got - want).abs() < 1e-12, "{}", lines[1]);
    }
    assert!(lines[5].starts_with("0,2,2,"));
    assert!(cfg_table(&CfgSchedule::default(), 0).is_err());
}
