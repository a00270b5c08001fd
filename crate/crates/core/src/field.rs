//! Dense multi-channel 2D float fields (latents and noise predictions).

use ::image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Row-major `height × width × channels` field of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Standard-normal samples.
    pub fn gaussian<R: Rng + ?Sized>(width: usize, height: usize, channels: usize, rng: &mut R) -> Self {
        let data = (0..width * height * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Size(format!(
                "field shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// RGB image mapped to `[0, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        Self::from_fn(img.width() as usize, img.height() as usize, 3, |x, y, c| {
            img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        })
    }

    /// Inverse of [`Field::from_rgb`] with clamping; requires 3 channels.
    pub fn to_rgb(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::Size(format!("{} channels, expected 3", self.channels)));
        }
        Ok(RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(x as usize, y as usize, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([px(0), px(1), px(2)])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 70, 9]));
        assert_eq!(Field::from_rgb(&img).to_rgb().unwrap(), img);
    }

    #[test]
    fn shape_checks() {
        let a = Field::zeros(2, 3, 1);
        assert!(a.check_same_shape(&Field::zeros(3, 2, 1)).is_err());
        assert!(a.to_rgb().is_err());
    }
}
