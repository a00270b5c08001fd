use image::{GrayImage, Luma, Rgb, RgbImage};

use super::*;
use crate::camera::{orbit_poses, CameraPose};
use crate::mvgrid::ViewSet;
use crate::renderer::{dented_sphere, fixture, render_fixture_set_with_pose, undented_sphere, AnalyticSdf};
use crate::Error;

fn small_dims() -> ReconDims {
    ReconDims {
        plane_resolution: 6,
        out_channels: 12,
        ..Default::default()
    }
}

fn textured(side: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| {
        let v = (x * 7 + y * 13 + seed * 31) % 251;
        Rgb([v as u8, (v * 3 % 256) as u8, (255 - v) as u8])
    })
}

fn textured_views(side: u32) -> ViewSet {
    ViewSet::new((0..6).map(|i| textured(side, i)).collect()).unwrap()
}

#[test]
fn token_counts() {
    let model = ReconModel::with_dims(1, small_dims()).unwrap();
    let views = textured_views(320);
    let seq = tokenize_views(&model, &views, None).unwrap();
    assert_eq!(seq.count(Branch::Calibrated), 6 * 400);
    assert_eq!(seq.count(Branch::Condition), 0);
    assert!(seq
        .tokens
        .iter()
        .all(|t| !t.embedding.is_zero() && t.feature.len() == 64));

    let cond = textured(320, 9);
    let seq = tokenize_views(&model, &views, Some(&cond)).unwrap();
    assert_eq!(seq.count(Branch::Condition), 400);
    for t in seq.tokens.iter().filter(|t| t.branch == Branch::Condition) {
        assert!(t.embedding.values.iter().all(|&v| v == 0.0));
        assert_eq!(t.view, 6);
    }
}

#[test]
fn tokenize_size_errors() {
    let model = ReconModel::with_dims(1, small_dims()).unwrap();
    let views = textured_views(64);
    let wrong = textured(48, 0);
    assert!(matches!(
        tokenize_views(&model, &views, Some(&wrong)),
        Err(Error::Size(_))
    ));
    let odd = ViewSet::new((0..6).map(|i| textured(40, i)).collect()).unwrap();
    assert!(matches!(tokenize_views(&model, &odd, None), Err(Error::Size(_))));
    let rect = ViewSet {
        images: (0..6).map(|_| RgbImage::new(64, 32)).collect(),
        poses: orbit_poses(),
    };
    assert!(tokenize_views(&model, &rect, None).is_err());
}

#[test]
fn forward_contracts() {
    let model = ReconModel::with_dims(3, small_dims()).unwrap();
    assert!(matches!(model.forward(&TokenSequence::default()), Err(Error::Empty(_))));

    let views = textured_views(64);
    let seq = tokenize_views(&model, &views, None).unwrap();
    let (low, trace) = model.forward(&seq).unwrap();
    assert_eq!((low.resolution, low.channels), (6, 12));
    assert!(trace.max_row_sum_error <= 1e-6);
    assert!(low.data.iter().all(|v| v.is_finite()));
    let (again, _) = model.forward(&seq).unwrap();
    assert_eq!(low, again);

    let mut bad = seq.clone();
    bad.tokens[3].feature.pop();
    assert!(matches!(model.forward(&bad), Err(Error::Size(_))));
}

#[test]
fn calibrated_views_are_unordered() {
    let model = ReconModel::with_dims(4, small_dims()).unwrap();
    let views = textured_views(64);
    let perm = [3, 0, 5, 1, 4, 2];
    let mut poses = views.poses;
    for (dst, &src) in perm.iter().enumerate() {
        poses[dst] = views.poses[src];
    }
    let shuffled = ViewSet {
        images: perm.iter().map(|&i| views.images[i].clone()).collect(),
        poses,
    };
    let cond = textured(64, 17);
    let (a, _) = model
        .forward(&tokenize_views(&model, &views, Some(&cond)).unwrap())
        .unwrap();
    let (b, _) = model
        .forward(&tokenize_views(&model, &shuffled, Some(&cond)).unwrap())
        .unwrap();
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn condition_image_matters() {
    let model = ReconModel::with_dims(5, small_dims()).unwrap();
    let views = textured_views(64);
    let run = |c: &RgbImage| {
        model
            .forward(&tokenize_views(&model, &views, Some(c)).unwrap())
            .unwrap()
            .0
    };
    let a = run(&textured(64, 1));
    let b = run(&textured(64, 2));
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn weight_file_round_trip() {
    let model = ReconModel::with_dims(6, small_dims()).unwrap();
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    let back = ReconModel::read_from(&buf[..]).unwrap();
    assert_eq!(back.seed, 6);
    assert_eq!(back.dims, model.dims);
    let err = (&back.queries - &model.queries)
        .mapv(f64::abs)
        .fold(0.0f64, |a, &b| a.max(b));
    assert!(err < 1e-6);
    assert!(ReconModel::read_from(&buf[..10]).is_err());
}

fn silhouettes(shape: &AnalyticSdf, res: u32, cond: Option<&CameraPose>) -> (Vec<GrayImage>, Option<GrayImage>) {
    let set = render_fixture_set_with_pose(shape, res, cond).unwrap();
    (set.silhouettes(), set.condition.map(|c| c.silhouette))
}

fn orbit_inputs<'a>(masks: &'a [GrayImage], poses: &'a [CameraPose; 6]) -> Vec<Silhouette<'a>> {
    masks
        .iter()
        .zip(poses)
        .map(|(mask, pose)| Silhouette { mask, pose })
        .collect()
}

fn cfg(res: usize) -> CarveConfig {
    CarveConfig {
        resolution: res,
        ..Default::default()
    }
}

#[test]
fn hull_contains_the_sphere() {
    let shape = fixture("sphere").unwrap();
    let (masks, _) = silhouettes(&shape, 160, None);
    let poses = orbit_poses();
    let (occ, grid) = visual_hull(&orbit_inputs(&masks, &poses), &cfg(48)).unwrap();
    for (idx, &o) in occ.iter().enumerate() {
        let (i, j, k) = (idx % 48, (idx / 48) % 48, idx / (48 * 48));
        if shape.eval(&grid.position(i, j, k)) < 0.0 {
            assert!(o);
        }
    }
}

#[test]
fn adding_views_never_grows_the_hull() {
    let shape = fixture("torus").unwrap();
    let top = CameraPose::new(60.0, 30.0, 1.5, 47.9).unwrap();
    let (masks, cond) = silhouettes(&shape, 128, Some(&top));
    let poses = orbit_poses();
    let mut inputs = Vec::new();
    let mut prev: Option<Vec<bool>> = None;
    let all: Vec<Silhouette> = orbit_inputs(&masks, &poses)
        .into_iter()
        .chain([Silhouette {
            mask: cond.as_ref().unwrap(),
            pose: &top,
        }])
        .collect();
    for s in all {
        inputs.push(s);
        let (occ, _) = visual_hull(&inputs, &cfg(32)).unwrap();
        if let Some(p) = &prev {
            assert!(occ.iter().zip(p).all(|(now, before)| !now || *before));
        }
        prev = Some(occ);
    }
}

#[test]
fn orbit_hull_misses_the_dent() {
    let res = 64;
    let (masks, _) = silhouettes(&dented_sphere(), 160, None);
    let poses = orbit_poses();
    let (occ, grid) = visual_hull(&orbit_inputs(&masks, &poses), &cfg(res)).unwrap();
    let plain = undented_sphere();
    let mut plain_count = 0usize;
    let mut covered = 0usize;
    for (idx, &o) in occ.iter().enumerate() {
        let p = grid.position(idx % res, (idx / res) % res, idx / (res * res));
        if plain.eval(&p) < 0.0 {
            plain_count += 1;
            covered += o as usize;
        }
    }
    let carved = occ.iter().filter(|&&o| o).count();
    assert!(carved as f64 >= 0.99 * plain_count as f64);
    assert_eq!(covered, plain_count);
}

#[test]
fn carve_sdf_and_errors() {
    let shape = fixture("sphere").unwrap();
    let (masks, _) = silhouettes(&shape, 96, None);
    let poses = orbit_poses();
    let grid = carve(&orbit_inputs(&masks, &poses), None, &cfg(32)).unwrap();
    let h = 2.0 / 32.0;
    assert!(grid.values.iter().all(|v| v.abs() <= 4.0 * h + 1e-12));
    assert!(grid.value(16, 16, 16) < 0.0 && grid.value(0, 0, 0) > 0.0);

    let blank = GrayImage::from_pixel(96, 96, Luma([0]));
    let blanks = vec![blank; 6];
    assert!(matches!(
        carve(&orbit_inputs(&blanks, &poses), None, &cfg(32)),
        Err(Error::EmptyHull)
    ));
    assert!(carve(&[], None, &cfg(32)).is_err());
}
