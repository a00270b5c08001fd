//! Codec between the 3×2 view grid and the six per-view images.
//!
//! Tiles are laid out row-major in ascending azimuth:
//!
//! ```text
//! row 0:   0°  60°
//! row 1: 120° 180°
//! row 2: 240° 300°
//! ```

use std::path::Path;

use ::image::{GenericImage, GenericImageView, ImageBuffer, Pixel, RgbImage};

use crate::camera::{orbit_poses, CameraPose};
use crate::{Error, Result};

pub const GRID_ROWS: u32 = 3;
pub const GRID_COLS: u32 = 2;
pub const NUM_VIEWS: usize = 6;

/// Grid slot `(row, col)` of view `index`.
pub fn tile_slot(index: usize) -> (u32, u32) {
    assert!(index < NUM_VIEWS, "view index {index} out of range");
    (index as u32 / GRID_COLS, index as u32 % GRID_COLS)
}

/// View index stored at grid slot `(row, col)`.
pub fn slot_index(row: u32, col: u32) -> usize {
    assert!(row < GRID_ROWS && col < GRID_COLS);
    (row * GRID_COLS + col) as usize
}

/// Six square views with their orbit poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub images: Vec<RgbImage>,
    pub poses: [CameraPose; 6],
}

impl ViewSet {
    pub fn new(images: Vec<RgbImage>) -> Result<Self> {
        let vs = Self {
            images,
            poses: orbit_poses(),
        };
        vs.tile_size()?;
        Ok(vs)
    }

    /// Shared square side length of the views.
    pub fn tile_size(&self) -> Result<u32> {
        check_tiles(&self.images)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrid {
    pub tile: u32,
    pub pixels: RgbImage,
}

impl ViewGrid {
    pub fn from_image(pixels: RgbImage) -> Result<Self> {
        let tile = grid_tile_size(pixels.width(), pixels.height())?;
        Ok(Self { tile, pixels })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::image::save_png(&self.pixels, path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::from_image(crate::image::load_rgb(path)?)
    }
}

fn check_tiles<P: Pixel>(tiles: &[ImageBuffer<P, Vec<P::Subpixel>>]) -> Result<u32> {
    if tiles.len() != NUM_VIEWS {
        return Err(Error::Size(format!("expected {NUM_VIEWS} views, got {}", tiles.len())));
    }
    let (w, h) = tiles[0].dimensions();
    if w != h || w == 0 {
        return Err(Error::Size(format!("views must be square and non-empty, got {w}x{h}")));
    }
    if let Some(bad) = tiles.iter().find(|t| t.dimensions() != (w, h)) {
        return Err(Error::Size(format!(
            "view sizes differ: {w}x{h} vs {}x{}",
            bad.width(),
            bad.height()
        )));
    }
    Ok(w)
}

/// Tile side implied by grid dimensions.
pub fn grid_tile_size(width: u32, height: u32) -> Result<u32> {
    if width == 0 || !width.is_multiple_of(GRID_COLS) || !height.is_multiple_of(GRID_ROWS) {
        return Err(Error::Layout(format!(
            "{width}x{height} does not split into {GRID_ROWS}x{GRID_COLS} tiles"
        )));
    }
    let tile = width / GRID_COLS;
    if height / GRID_ROWS != tile {
        return Err(Error::Layout(format!("{width}x{height} grid has non-square tiles")));
    }
    Ok(tile)
}

/// Tiles any six equally sized square images into a grid.
pub fn assemble_tiles<P: Pixel>(
    tiles: &[ImageBuffer<P, Vec<P::Subpixel>>],
) -> Result<ImageBuffer<P, Vec<P::Subpixel>>> {
    let tile = check_tiles(tiles)?;
    let mut out = ImageBuffer::new(tile * GRID_COLS, tile * GRID_ROWS);
    for (i, img) in tiles.iter().enumerate() {
        let (row, col) = tile_slot(i);
        out.copy_from(img, col * tile, row * tile)
            .expect("tile fits by construction");
    }
    Ok(out)
}

/// Inverse of [`assemble_tiles`].
pub fn split_tiles<P: Pixel + 'static>(
    grid: &ImageBuffer<P, Vec<P::Subpixel>>,
) -> Result<Vec<ImageBuffer<P, Vec<P::Subpixel>>>> {
    let tile = grid_tile_size(grid.width(), grid.height())?;
    Ok((0..NUM_VIEWS)
        .map(|i| {
            let (row, col) = tile_slot(i);
            grid.view(col * tile, row * tile, tile, tile).to_image()
        })
        .collect())
}

pub fn assemble(views: &ViewSet) -> Result<ViewGrid> {
    let pixels = assemble_tiles(&views.images)?;
    Ok(ViewGrid {
        tile: views.tile_size()?,
        pixels,
    })
}

pub fn split(grid: &ViewGrid) -> Result<ViewSet> {
    let images = split_tiles(&grid.pixels)?;
    Ok(ViewSet {
        images,
        poses: orbit_poses(),
    })
}

pub use crate::image::resize_image;
