//! Image helpers shared by the grid codec, renderer and carving.

use std::path::Path;

use ::image::{GrayImage, ImageBuffer, Pixel, Rgb, RgbImage};

use crate::{Error, Result};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Bilinear resampling with edge clamping (pixel-center aligned).
/// Resizing to the current size returns an exact copy.
pub fn resize_image(img: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 || img.width() == 0 || img.height() == 0 {
        return Err(Error::Domain(format!(
            "cannot resize {}x{} to {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    if (width, height) == img.dimensions() {
        return Ok(img.clone());
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let max_x = img.width() as usize - 1;
    let max_y = img.height() as usize - 1;
    let axis = |dst: u32, scale: f64, max: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(max);
        let i1 = (i0 + 1).min(max);
        (i0, i1, s - s.floor())
    };
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, max_y);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, max_x);
            let p00 = img.get_pixel(x0 as u32, y0 as u32);
            let p10 = img.get_pixel(x1 as u32, y0 as u32);
            let p01 = img.get_pixel(x0 as u32, y1 as u32);
            let p11 = img.get_pixel(x1 as u32, y1 as u32);
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bot = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                *v = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, Rgb(px));
        }
    }
    Ok(out)
}

/// Silhouette from a white-background image: any non-white pixel is foreground.
pub fn mask_from_white_background(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        let fg = p.0.iter().any(|&c| c < 250);
        ::image::Luma([if fg { 255 } else { 0 }])
    })
}

pub fn save_png<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: Pixel<Subpixel = u8> + ::image::PixelWithColorType,
    C: std::ops::Deref<Target = [u8]>,
{
    img.save_with_format(path, ::image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(::image::open(path)?.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(::image::open(path)?.to_luma8())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: u32, cell: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| {
            if ((x / cell) + (y / cell)).is_multiple_of(2) {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        })
    }

    #[test]
    fn same_size_is_identity() {
        let img = checker(37, 3);
        assert_eq!(resize_image(&img, 37, 37).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = RgbImage::from_pixel(50, 30, Rgb([12, 200, 77]));
        let out = resize_image(&img, 17, 91).unwrap();
        assert!(out.pixels().all(|p| *p == Rgb([12, 200, 77])));
    }

    #[test]
    fn down_up_is_lossy() {
        let img = checker(1024, 2);
        let small = resize_image(&img, 320, 320).unwrap();
        let back = resize_image(&small, 1024, 1024).unwrap();
        assert_eq!(back.dimensions(), (1024, 1024));
        assert_ne!(back, img);
    }

    #[test]
    fn zero_size_rejected() {
        assert!(resize_image(&checker(4, 1), 0, 4).is_err());
    }

    #[test]
    fn white_background_mask() {
        let mut img = RgbImage::from_pixel(4, 4, WHITE);
        img.put_pixel(1, 2, Rgb([200, 10, 10]));
        let m = mask_from_white_background(&img);
        assert_eq!(m.get_pixel(1, 2)[0], 255);
        assert_eq!(m.pixels().filter(|p| p[0] > 0).count(), 1);
    }
}
