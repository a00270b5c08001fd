//! Adaptive classifier-free guidance.
//!
//! The front-view scale follows `w_t = base + amplitude · (t / t_max)^exponent`
//! (2, 16, 5 and 1000 by default) and every other view is scaled by a factor
//! `τ_v ∈ [τ_back, τ_front]` that shrinks with angular distance from the
//! front view. All six views are denoised jointly as one grid latent, so the
//! per-view weights become a piecewise-constant map over the grid tiles.

use serde::{Deserialize, Serialize};

use crate::camera::ORBIT_AZIMUTHS_DEG;
use crate::field::Field;
use crate::mvgrid::{GRID_COLS, GRID_ROWS, NUM_VIEWS};
use crate::{Error, Result};

/// Interpolation of `τ` between the front and back views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauRule {
    /// Linear in azimuthal distance from the front view.
    #[default]
    Linear,
    /// Raised cosine of the azimuthal distance.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfgSchedule {
    pub base: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub t_max: f64,
    pub tau_front: f64,
    pub tau_back: f64,
    pub tau_rule: TauRule,
}

impl Default for CfgSchedule {
    fn default() -> Self {
        Self {
            base: 2.0,
            amplitude: 16.0,
            exponent: 5.0,
            t_max: 1000.0,
            tau_front: 1.0,
            tau_back: 0.5,
            tau_rule: TauRule::Linear,
        }
    }
}

/// Guidance weights of the six grid tiles at one time step, in tile order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeightMap {
    pub t: f64,
    pub weights: [f64; NUM_VIEWS],
}

impl GuidanceWeightMap {
    pub fn uniform(t: f64, w: f64) -> Self {
        Self {
            t,
            weights: [w; NUM_VIEWS],
        }
    }

    pub fn weight(&self, row: u32, col: u32) -> f64 {
        self.weights[crate::mvgrid::slot_index(row, col)]
    }
}

/// Angular distance between two azimuths, in `[0, 180]`.
pub fn azimuth_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl CfgSchedule {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.5..=1.0).contains(&v);
        if !in_unit(self.tau_front) || !in_unit(self.tau_back) || self.tau_back > self.tau_front {
            return Err(Error::Config(format!(
                "tau values ({}, {}) must satisfy 0.5 <= back <= front <= 1",
                self.tau_back, self.tau_front
            )));
        }
        if !(self.t_max > 0.0) || !self.base.is_finite() || !self.amplitude.is_finite() || !self.exponent.is_finite() {
            return Err(Error::Config(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    /// Front-view scale at diffusion time `t ∈ [0, t_max]`.
    pub fn base_weight(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::Domain(format!("time step {t} outside [0, {}]", self.t_max)));
        }
        Ok(self.base + self.amplitude * (t / self.t_max).powf(self.exponent))
    }

    /// View factor for a view at `azimuth_deg` (front view at 0°).
    pub fn view_tau(&self, azimuth_deg: f64) -> f64 {
        let frac = azimuth_distance(azimuth_deg, 0.0) / 180.0;
        let span = self.tau_front - self.tau_back;
        match self.tau_rule {
            TauRule::Linear => self.tau_front - span * frac,
            TauRule::Cosine => self.tau_back + span * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        }
    }

    pub fn view_weight(&self, t: f64, azimuth_deg: f64) -> Result<f64> {
        Ok(self.base_weight(t)? * self.view_tau(azimuth_deg))
    }

    pub fn weight_map(&self, t: f64) -> Result<GuidanceWeightMap> {
        let w = self.base_weight(t)?;
        Ok(GuidanceWeightMap {
            t,
            weights: ORBIT_AZIMUTHS_DEG.map(|az| w * self.view_tau(az)),
        })
    }
}

/// `eps_uncond + w(tile) · (eps_cond − eps_uncond)` per pixel.
pub fn guided_prediction(eps_uncond: &Field, eps_cond: &Field, map: &GuidanceWeightMap) -> Result<Field> {
    eps_uncond.check_same_shape(eps_cond)?;
    let (w, h, ch) = eps_uncond.shape();
    if w == 0 || w % GRID_COLS as usize != 0 || h % GRID_ROWS as usize != 0 {
        return Err(Error::Size(format!(
            "field {w}x{h} does not tile into a {GRID_ROWS}x{GRID_COLS} grid"
        )));
    }
    let tw = w / GRID_COLS as usize;
    let th = h / GRID_ROWS as usize;
    let mut out = eps_uncond.clone();
    for (y, row) in out.data.chunks_exact_mut(w * ch).enumerate() {
        let tile_row = (y / th) as u32;
        let cond_row = &eps_cond.data[y * w * ch..(y + 1) * w * ch];
        for (x, (px, cpx)) in row.chunks_exact_mut(ch).zip(cond_row.chunks_exact(ch)).enumerate() {
            let weight = map.weight(tile_row, (x / tw) as u32);
            for (u, c) in px.iter_mut().zip(cpx) {
                *u += weight * (c - *u);
            }
        }
    }
    Ok(out)
}

/// Produces `(eps_cond, eps_uncond)` for a latent at diffusion time `t`.
pub trait Denoiser {
    fn predict(&mut self, latent: &Field, t: u32) -> Result<(Field, Field)>;
}

impl<F> Denoiser for F
where
    F: FnMut(&Field, u32) -> Result<(Field, Field)>,
{
    fn predict(&mut self, latent: &Field, t: u32) -> Result<(Field, Field)> {
        self(latent, t)
    }
}

pub const TRAIN_TIMESTEPS: u32 = 1000;

/// Cumulative signal fraction `ᾱ_t` of the scaled-linear beta schedule
/// (β from 0.00085 to 0.012 over 1000 steps).
pub fn alpha_cumprod(t: u32) -> f64 {
    let (b0, b1) = (0.00085f64.sqrt(), 0.012f64.sqrt());
    let n = TRAIN_TIMESTEPS as f64 - 1.0;
    (0..=t.min(TRAIN_TIMESTEPS - 1))
        .map(|i| {
            let b = b0 + (b1 - b0) * i as f64 / n;
            1.0 - b * b
        })
        .product()
}

/// Noise level `σ_t = sqrt((1 − ᾱ_t) / ᾱ_t)`; `None` means the clean end point.
pub fn sigma(t: Option<u32>) -> f64 {
    match t {
        None => 0.0,
        Some(t) => {
            let a = alpha_cumprod(t);
            ((1.0 - a) / a).sqrt()
        }
    }
}

/// Descending evenly spaced time steps (`t_max/steps` apart, ending at 0).
pub fn ddim_timesteps(steps: usize) -> Result<Vec<u32>> {
    if steps == 0 || steps > TRAIN_TIMESTEPS as usize {
        return Err(Error::Domain(format!("steps {steps} outside [1, {TRAIN_TIMESTEPS}]")));
    }
    let ratio = TRAIN_TIMESTEPS as usize / steps;
    Ok((0..steps).rev().map(|i| (i * ratio) as u32).collect())
}

/// Initial latent `σ_max · N(0, I)` for a seeded sampler run.
pub fn initial_latent(width: usize, height: usize, channels: usize, steps: usize, seed: u64) -> Result<Field> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t0 = ddim_timesteps(steps)?[0];
    let mut f = Field::gaussian(width, height, channels, &mut rng);
    let s = sigma(Some(t0));
    f.data.iter_mut().for_each(|v| *v *= s);
    Ok(f)
}

/// Deterministic DDIM sampler on the variance-exploding latent
/// `x / sqrt(ᾱ_t)`, where a step reads `x ← x + (σ_prev − σ_t) · ε̂` with
/// `ε̂` the guided prediction. The last step lands on the clean sample.
pub fn sample_loop<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    schedule: &CfgSchedule,
    steps: usize,
    init: Field,
) -> Result<Field> {
    schedule.validate()?;
    let ts = ddim_timesteps(steps)?;
    let mut x = init;
    for (i, &t) in ts.iter().enumerate() {
        let (cond, uncond) = denoiser.predict(&x, t)?;
        x.check_same_shape(&cond)?;
        let map = schedule.weight_map(t as f64)?;
        let eps = guided_prediction(&uncond, &cond, &map)?;
        let ds = sigma(ts.get(i + 1).copied()) - sigma(Some(t));
        for (xv, e) in x.data.iter_mut().zip(&eps.data) {
            *xv += ds * e;
        }
    }
    Ok(x)
}

/// Toy denoiser with closed-form dynamics: the conditional branch predicts
/// the noise that points from `target` to the latent, the unconditional
/// branch the noise that points from `anchor`. Guided sampling then ends at
/// `anchor + w · (target − anchor)` for the final step's tile weight.
#[derive(Debug, Clone)]
pub struct AnchorDenoiser {
    pub target: Field,
    pub anchor: Field,
}

impl Denoiser for AnchorDenoiser {
    fn predict(&mut self, latent: &Field, t: u32) -> Result<(Field, Field)> {
        latent.check_same_shape(&self.target)?;
        latent.check_same_shape(&self.anchor)?;
        let s = sigma(Some(t));
        let toward = |goal: &Field| {
            let mut f = latent.clone();
            f.data.iter_mut().zip(&goal.data).for_each(|(v, g)| *v = (*v - g) / s);
            f
        };
        Ok((toward(&self.target), toward(&self.anchor)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn base_weight_values() {
        let s = CfgSchedule::default();
        assert_eq!(s.base_weight(0.0).unwrap(), 2.0);
        assert_eq!(s.base_weight(1000.0).unwrap(), 18.0);
        assert!((s.base_weight(500.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(s.base_weight(-1.0), Err(Error::Domain(_))));
        assert!(s.base_weight(1000.5).is_err());
        assert!(s.base_weight(f64::NAN).is_err());
    }

    #[test]
    fn tau_values() {
        let s = CfgSchedule::default();
        assert_eq!(s.view_tau(0.0), 1.0);
        assert_eq!(s.view_tau(180.0), 0.5);
        assert!((s.view_tau(60.0) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.view_tau(300.0), s.view_tau(60.0));
        assert_eq!(s.view_tau(-60.0), s.view_tau(60.0));
        let c = CfgSchedule {
            tau_rule: TauRule::Cosine,
            ..s
        };
        assert_eq!(c.view_tau(0.0), 1.0);
        assert!((c.view_tau(180.0) - 0.5).abs() < 1e-15);
        assert!((c.view_tau(90.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn view_weights() {
        let s = CfgSchedule::default();
        assert!((s.view_weight(1000.0, 180.0).unwrap() - 9.0).abs() < 1e-12);
        assert!((s.view_weight(1000.0, 120.0).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(s.view_weight(0.0, 0.0).unwrap(), 2.0);
        let m = s.weight_map(1000.0).unwrap();
        for (w, e) in m.weights.iter().zip([18.0, 15.0, 12.0, 9.0, 12.0, 15.0]) {
            assert!((w - e).abs() < 1e-12);
        }
        let m0 = s.weight_map(0.0).unwrap();
        for (w, e) in m0
            .weights
            .iter()
            .zip([2.0, 5.0 / 3.0, 4.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0])
        {
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_validation() {
        let bad = CfgSchedule {
            tau_back: 0.4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(CfgSchedule::default().validate().is_ok());
    }

    #[test]
    fn guided_constant_fields() {
        let u = Field::zeros(4, 6, 2);
        let c = Field::filled(4, 6, 2, 1.0);
        let out = guided_prediction(&u, &c, &GuidanceWeightMap::uniform(0.0, 2.0)).unwrap();
        assert!(out.data.iter().all(|&v| v == 2.0));
        assert!(guided_prediction(&u, &Field::zeros(4, 3, 2), &GuidanceWeightMap::uniform(0.0, 1.0)).is_err());
        assert!(guided_prediction(
            &Field::zeros(3, 6, 1),
            &Field::zeros(3, 6, 1),
            &GuidanceWeightMap::uniform(0.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn guided_uses_tile_weights() {
        let s = CfgSchedule::default();
        let map = s.weight_map(1000.0).unwrap();
        let u = Field::zeros(4, 6, 1);
        let c = Field::filled(4, 6, 1, 1.0);
        let out = guided_prediction(&u, &c, &map).unwrap();
        // pixel (3, 3) lives in tile row 1, col 1 → 180°
        assert_eq!(out.get(3, 3, 0), 9.0);
        assert_eq!(out.get(0, 0, 0), 18.0);
        assert_eq!(out.get(2, 5, 0), 15.0);
    }

    #[test]
    fn timesteps() {
        assert_eq!(ddim_timesteps(4).unwrap(), vec![750, 500, 250, 0]);
        assert_eq!(ddim_timesteps(50).unwrap().len(), 50);
        assert!(ddim_timesteps(0).is_err());
        assert!(sigma(Some(999)) > sigma(Some(500)));
        assert!(sigma(Some(0)) > 0.0 && sigma(None) == 0.0);
    }

    #[test]
    fn zero_noise_keeps_latent() {
        let init = initial_latent(4, 6, 3, 10, 1).unwrap();
        let mut zero = |x: &Field, _t: u32| {
            Ok((
                Field::zeros(x.width, x.height, x.channels),
                Field::zeros(x.width, x.height, x.channels),
            ))
        };
        for steps in [1, 7, 25] {
            let out = sample_loop(&mut zero, &CfgSchedule::default(), steps, init.clone()).unwrap();
            assert_eq!(out, init);
        }
    }

    #[test]
    fn toy_denoiser_reaches_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = Field::gaussian(4, 6, 3, &mut rng);
        let init = initial_latent(4, 6, 3, 50, 9).unwrap();
        let mut den = AnchorDenoiser {
            target: target.clone(),
            anchor: target.clone(),
        };
        let out = sample_loop(&mut den, &CfgSchedule::default(), 50, init.clone()).unwrap();
        assert!(out.max_abs_diff(&target) < 1e-3);

        // independent replay of the geometric decay x − target ← (σ_prev/σ_t)(x − target)
        let ts = ddim_timesteps(50).unwrap();
        let mut factor = 1.0;
        for (i, &t) in ts.iter().enumerate() {
            factor *= sigma(ts.get(i + 1).copied()) / sigma(Some(t));
        }
        assert_eq!(factor, 0.0);

        let again = sample_loop(&mut den, &CfgSchedule::default(), 50, init).unwrap();
        assert_eq!(again.data, out.data);
    }

    #[test]
    fn anchor_denoiser_extrapolates_by_final_weight() {
        let target = Field::filled(2, 3, 1, 0.25);
        let anchor = Field::filled(2, 3, 1, 1.0);
        let mut den = AnchorDenoiser { target, anchor };
        let out = sample_loop(&mut den, &CfgSchedule::default(), 20, Field::zeros(2, 3, 1)).unwrap();
        let m = CfgSchedule::default().weight_map(0.0).unwrap();
        for row in 0..3 {
            for col in 0..2 {
                let w = m.weight(row, col);
                let expect = 1.0 + w * (0.25 - 1.0);
                assert!((out.get(col as usize, row as usize, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn denoiser_error_propagates() {
        let mut failing = |_: &Field, _: u32| -> Result<(Field, Field)> { Err(Error::Domain("boom".into())) };
        assert!(sample_loop(&mut failing, &CfgSchedule::default(), 3, Field::zeros(2, 3, 1)).is_err());
    }
}
