//! Mesh evaluation: Chamfer distance, F-score and ICP alignment on
//! unit-sphere-normalized surface samples.

mod icp;
mod kdtree;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use icp::{icp_align, kabsch, IcpOptions, IcpResult, RigidTransform};
pub use kdtree::{brute_force_nearest, KdTree};

use crate::surface::{normalize_to_unit_sphere, sample_surface, Mesh, PointCloud};
use crate::{Error, Result};

/// F-score thresholds reported for every evaluation, in unit-sphere units.
pub const FSCORE_THRESHOLDS: [f64; 3] = [0.1, 0.2, 0.5];
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NnMode {
    #[default]
    KdTree,
    BruteForce,
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn directed_distances(from: &PointCloud, to: &PointCloud, mode: NnMode) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Empty("distance query on an empty point cloud".into()));
    }
    Ok(match mode {
        NnMode::KdTree => {
            let tree = KdTree::build(&to.points);
            from.points
                .par_iter()
                .map(|p| tree.nearest(p).expect("non-empty").1.sqrt())
                .collect()
        }
        NnMode::BruteForce => from
            .points
            .par_iter()
            .map(|p| brute_force_nearest(&to.points, p).expect("non-empty").1.sqrt())
            .collect(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer distance: half the sum of the two directed mean
/// nearest-neighbour distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_with(a, b, NnMode::KdTree)
}

pub fn chamfer_with(a: &PointCloud, b: &PointCloud, mode: NnMode) -> Result<f64> {
    let ab = directed_distances(a, b, mode)?;
    let ba = directed_distances(b, a, mode)?;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
}

fn fscore_from(ab: &[f64], ba: &[f64], tau: f64) -> FScore {
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let (precision, recall) = (frac(ab), frac(ba));
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    FScore {
        fscore,
        precision,
        recall,
    }
}

/// Precision: share of `a` within `tau` of `b`; recall: share of `b`
/// within `tau` of `a`.
pub fn fscore(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<FScore> {
    fscore_with(a, b, tau, NnMode::KdTree)
}

pub fn fscore_with(a: &PointCloud, b: &PointCloud, tau: f64, mode: NnMode) -> Result<FScore> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("F-score threshold {tau} must be positive")));
    }
    let ab = directed_distances(a, b, mode)?;
    let ba = directed_distances(b, a, mode)?;
    Ok(fscore_from(&ab, &ba, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer: f64,
    pub thresholds: Vec<f64>,
    /// Keyed by the threshold's decimal form, e.g. `"0.1"`.
    pub fscore: BTreeMap<String, f64>,
    pub precision: BTreeMap<String, f64>,
    pub recall: BTreeMap<String, f64>,
    pub points: usize,
    pub icp_applied: bool,
    pub icp_rotation_deg: Option<f64>,
    pub icp_translation: Option<[f64; 3]>,
}

impl MetricsReport {
    pub fn fscore_at(&self, tau: f64) -> Option<f64> {
        self.fscore.get(&threshold_key(tau)).copied()
    }

    pub const CSV_HEADER: &'static str = "cd,fscore_0.1,fscore_0.2,fscore_0.5";

    /// `cd, F@0.1, F@0.2, F@0.5`.
    pub fn csv_row(&self) -> String {
        let f = |t| self.fscore_at(t).map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.chamfer, f(0.1), f(0.2), f(0.5))
    }
}

pub fn threshold_key(tau: f64) -> String {
    format!("{tau}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub align: bool,
    pub thresholds: Vec<f64>,
    pub points: usize,
    pub mode: NnMode,
    pub icp: IcpOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            align: false,
            thresholds: FSCORE_THRESHOLDS.to_vec(),
            points: DEFAULT_SAMPLES,
            mode: NnMode::KdTree,
            icp: IcpOptions::default(),
        }
    }
}

/// Normalizes both meshes to the unit sphere, samples `points` from each,
/// optionally aligns the prediction by ICP, then scores.
///
/// Both meshes are sampled from generators seeded with the same value drawn
/// from `rng`, so comparing a mesh with itself gives identical clouds.
pub fn evaluate_pair<R: Rng + ?Sized>(
    pred: &Mesh,
    gt: &Mesh,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<MetricsReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("evaluation needs two non-empty meshes".into()));
    }
    if let Some(t) = opts.thresholds.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("F-score threshold {t} must be positive")));
    }
    let (pred_n, _, _) = normalize_to_unit_sphere(pred)?;
    let (gt_n, _, _) = normalize_to_unit_sphere(gt)?;
    let seed: u64 = rng.random();
    let mut a = sample_surface(&pred_n, opts.points, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let b = sample_surface(&gt_n, opts.points, &mut ChaCha8Rng::seed_from_u64(seed))?;

    let mut icp_rotation_deg = None;
    let mut icp_translation = None;
    if opts.align {
        let fit = icp_align(&a, &b, &opts.icp)?;
        icp_rotation_deg = Some(fit.transform.rotation_angle_deg());
        icp_translation = Some(fit.transform.translation.into());
        a = fit.aligned;
    }

    let ab = directed_distances(&a, &b, opts.mode)?;
    let ba = directed_distances(&b, &a, opts.mode)?;
    let mut report = MetricsReport {
        chamfer: 0.5 * (mean(&ab) + mean(&ba)),
        thresholds: opts.thresholds.clone(),
        fscore: BTreeMap::new(),
        precision: BTreeMap::new(),
        recall: BTreeMap::new(),
        points: opts.points,
        icp_applied: opts.align,
        icp_rotation_deg,
        icp_translation,
    };
    for &tau in &opts.thresholds {
        let s = fscore_from(&ab, &ba, tau);
        let key = threshold_key(tau);
        report.fscore.insert(key.clone(), s.fscore);
        report.precision.insert(key.clone(), s.precision);
        report.recall.insert(key, s.recall);
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
