//! Seeded attention-fusion reconstructor.
//!
//! Calibrated views become patch tokens carrying a projected camera
//! embedding. The condition image goes through the same patch embedding but
//! carries the all-zero camera embedding and its own branch vector. A fixed
//! set of triplane queries cross-attends to the whole token set; the result is
//! projected to the low-resolution triplane channels.

use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::camera::{camera_embedding_with_len, CameraEmbedding, EMBEDDING_LEN};
use crate::mvgrid::ViewSet;
use crate::surface::SdfGrid;
use crate::triplane::{
    expect_magic, field_from_triplane, read_f32s, read_u32s, unpatchify, SdfDecoder, Triplane, TriplaneLow,
    UnpatchifyWeights, LOW_CHANNELS, LOW_RESOLUTION, NUM_PLANES,
};
use crate::{Error, Result};

pub const PATCH_SIZE: usize = 16;
pub const TOKEN_WIDTH: usize = 64;
pub const NUM_BLOCKS: usize = 2;
pub const NUM_HEADS: usize = 4;

/// Queries handled per attention chunk; bounds the score matrix size.
const QUERY_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Calibrated,
    Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub feature: Vec<f64>,
    pub embedding: CameraEmbedding,
    pub branch: Branch,
    /// Index of the source view; the condition image uses `NUM_VIEWS`.
    pub view: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count(&self, branch: Branch) -> usize {
        self.tokens.iter().filter(|t| t.branch == branch).count()
    }
}

/// Model dimensions; the defaults give 3·64² queries and 1024 output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconDims {
    pub patch: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub plane_resolution: usize,
    pub out_channels: usize,
    pub embedding_len: usize,
}

impl Default for ReconDims {
    fn default() -> Self {
        Self {
            patch: PATCH_SIZE,
            width: TOKEN_WIDTH,
            blocks: NUM_BLOCKS,
            heads: NUM_HEADS,
            plane_resolution: LOW_RESOLUTION,
            out_channels: LOW_CHANNELS,
            embedding_len: EMBEDDING_LEN,
        }
    }
}

impl ReconDims {
    fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }

    fn num_queries(&self) -> usize {
        NUM_PLANES * self.plane_resolution * self.plane_resolution
    }

    fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Domain(format!(
                "width {} must split into {} heads",
                self.width, self.heads
            )));
        }
        if self.plane_resolution == 0 || self.out_channels == 0 || self.embedding_len < 6 {
            return Err(Error::Domain(format!("invalid model dims {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ff1: Array2<f64>,
    pub ff2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    pub seed: u64,
    pub dims: ReconDims,
    /// `patch_len × width`.
    pub patch_embed: Array2<f64>,
    pub patch_bias: Array1<f64>,
    /// `embedding_len × width`, no bias: the zero embedding adds nothing.
    pub camera_proj: Array2<f64>,
    /// Row 0 calibrated, row 1 condition.
    pub branch: Array2<f64>,
    /// `num_queries × width`, ordered plane, row, column.
    pub queries: Array2<f64>,
    pub blocks: Vec<AttentionBlock>,
    /// `width × out_channels`.
    pub out_proj: Array2<f64>,
}

/// Per-forward diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForwardTrace {
    /// Largest `|Σ_k a_qk − 1|` over every block, head and query.
    pub max_row_sum_error: f64,
    pub num_tokens: usize,
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

impl ReconModel {
    pub fn seeded(seed: u64) -> Self {
        Self::with_dims(seed, ReconDims::default()).expect("default dims are valid")
    }

    pub fn with_dims(seed: u64, dims: ReconDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = dims.width;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let patch_embed = gaussian(&mut rng, dims.patch_len(), w, inv(dims.patch_len()));
        let patch_bias = Array1::from_shape_fn(w, |_| 0.02 * rng.sample::<f64, _>(StandardNormal));
        let camera_proj = gaussian(&mut rng, dims.embedding_len, w, inv(dims.embedding_len));
        let branch = gaussian(&mut rng, 2, w, 0.5);
        let queries = gaussian(&mut rng, dims.num_queries(), w, 1.0);
        let blocks = (0..dims.blocks)
            .map(|_| AttentionBlock {
                wq: gaussian(&mut rng, w, w, inv(w)),
                wk: gaussian(&mut rng, w, w, inv(w)),
                wv: gaussian(&mut rng, w, w, inv(w)),
                wo: gaussian(&mut rng, w, w, inv(w)),
                ff1: gaussian(&mut rng, w, w, inv(w)),
                ff2: gaussian(&mut rng, w, w, inv(w)),
            })
            .collect();
        let out_proj = gaussian(&mut rng, w, dims.out_channels, inv(w));
        Ok(Self {
            seed,
            dims,
            patch_embed,
            patch_bias,
            camera_proj,
            branch,
            queries,
            blocks,
            out_proj,
        })
    }

    fn embed_image(
        &self,
        img: &RgbImage,
        embedding: &CameraEmbedding,
        branch: Branch,
        view: usize,
    ) -> Result<Vec<Token>> {
        let (w, h) = img.dimensions();
        let p = self.dims.patch as u32;
        if w != h {
            return Err(Error::Size(format!("view {view} is {w}×{h}, expected square")));
        }
        if w % p != 0 || w == 0 {
            return Err(Error::Size(format!("view side {w} is not a multiple of patch {p}")));
        }
        let per_side = (w / p) as usize;
        let mut patches = Array2::zeros((per_side * per_side, self.dims.patch_len()));
        for (n, mut row) in patches.axis_iter_mut(Axis(0)).enumerate() {
            let (py, px) = ((n / per_side) as u32, (n % per_side) as u32);
            let mut c = 0;
            for y in 0..p {
                for x in 0..p {
                    let px_val = img.get_pixel(px * p + x, py * p + y);
                    for ch in 0..3 {
                        row[c] = px_val[ch] as f64 / 127.5 - 1.0;
                        c += 1;
                    }
                }
            }
        }
        let mut feats = patches.dot(&self.patch_embed);
        feats += &self.patch_bias;
        let cam = ArrayView2::from_shape((1, embedding.len()), &embedding.values)
            .map_err(|_| Error::Size("camera embedding length".into()))?
            .dot(&self.camera_proj);
        feats += &cam.row(0);
        Ok(feats
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(n, f)| {
                let mut feature = f.to_vec();
                let (py, px) = (n / per_side, n % per_side);
                add_position(&mut feature, py as f64 / per_side as f64, px as f64 / per_side as f64);
                Token {
                    feature,
                    embedding: embedding.clone(),
                    branch,
                    view,
                }
            })
            .collect())
    }

    /// Runs cross-attention from the triplane queries to `tokens`.
    pub fn forward(&self, tokens: &TokenSequence) -> Result<(TriplaneLow, ForwardTrace)> {
        if tokens.is_empty() {
            return Err(Error::Empty("reconstruction needs at least one token".into()));
        }
        let w = self.dims.width;
        if let Some(t) = tokens.tokens.iter().find(|t| t.feature.len() != w) {
            return Err(Error::Size(format!(
                "token width {} but model width {w}",
                t.feature.len()
            )));
        }
        let mut kv = Array2::zeros((tokens.len(), w));
        for (mut row, t) in kv.axis_iter_mut(Axis(0)).zip(&tokens.tokens) {
            let b = match t.branch {
                Branch::Calibrated => 0,
                Branch::Condition => 1,
            };
            for (c, r) in row.iter_mut().enumerate() {
                *r = t.feature[c] + self.branch[[b, c]];
            }
        }

        let nq = self.dims.num_queries();
        let chunks: Vec<(Array2<f64>, f64)> = (0..nq.div_ceil(QUERY_CHUNK))
            .into_par_iter()
            .map(|ci| {
                let lo = ci * QUERY_CHUNK;
                let hi = (lo + QUERY_CHUNK).min(nq);
                let mut x = self.queries.slice(s![lo..hi, ..]).to_owned();
                let mut worst: f64 = 0.0;
                for block in &self.blocks {
                    let (attended, err) = self.attend(block, &x, &kv);
                    worst = worst.max(err);
                    x += &attended;
                    let hidden = x.dot(&block.ff1).mapv(f64::tanh);
                    x += &hidden.dot(&block.ff2);
                }
                (x.dot(&self.out_proj), worst)
            })
            .collect();

        let oc = self.dims.out_channels;
        let mut data = Vec::with_capacity(nq * oc);
        let mut worst: f64 = 0.0;
        for (out, err) in chunks {
            worst = worst.max(err);
            data.extend(out.iter());
        }
        let low = Triplane::from_data(self.dims.plane_resolution, oc, data)?;
        Ok((
            TriplaneLow(low),
            ForwardTrace {
                max_row_sum_error: worst,
                num_tokens: tokens.len(),
            },
        ))
    }

    /// Multi-head attention of queries `x` over `kv`; also returns the largest
    /// deviation of an attention row sum from one.
    fn attend(&self, block: &AttentionBlock, x: &Array2<f64>, kv: &Array2<f64>) -> (Array2<f64>, f64) {
        let q = x.dot(&block.wq);
        let k = kv.dot(&block.wk);
        let v = kv.dot(&block.wv);
        let hd = self.dims.width / self.dims.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Array2::zeros(q.raw_dim());
        let mut worst: f64 = 0.0;
        for h in 0..self.dims.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            for mut row in scores.axis_iter_mut(Axis(0)) {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|s| (s - m).exp());
                let z = row.sum();
                row /= z;
                worst = worst.max((row.sum() - 1.0).abs());
            }
            heads.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        (heads.dot(&block.wo), worst)
    }

    /// Weight file: `RCNM`, u32 version, u64 seed, seven u32 dims, then every
    /// parameter as little-endian f32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"RCNM")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let d = self.dims;
        for v in [
            d.patch,
            d.width,
            d.blocks,
            d.heads,
            d.plane_resolution,
            d.out_channels,
            d.embedding_len,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for a in self.params() {
            for v in a.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, b"RCNM", "model")?;
        let [version] = read_u32s::<1, _>(&mut r)?;
        if version != 1 {
            return Err(Error::format("model", format!("version {version}")));
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let d = read_u32s::<7, _>(&mut r)?.map(|v| v as usize);
        let dims = ReconDims {
            patch: d[0],
            width: d[1],
            blocks: d[2],
            heads: d[3],
            plane_resolution: d[4],
            out_channels: d[5],
            embedding_len: d[6],
        };
        let mut model = Self::zeros(u64::from_le_bytes(seed), dims)?;
        for mut a in model.params_mut() {
            let vals = read_f32s(&mut r, a.len())?;
            a.iter_mut().zip(vals).for_each(|(d, s)| *d = s);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::at_path(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    fn zeros(seed: u64, dims: ReconDims) -> Result<Self> {
        dims.validate()?;
        let w = dims.width;
        let sq = || Array2::zeros((w, w));
        Ok(Self {
            seed,
            dims,
            patch_embed: Array2::zeros((dims.patch_len(), w)),
            patch_bias: Array1::zeros(w),
            camera_proj: Array2::zeros((dims.embedding_len, w)),
            branch: Array2::zeros((2, w)),
            queries: Array2::zeros((dims.num_queries(), w)),
            blocks: (0..dims.blocks)
                .map(|_| AttentionBlock {
                    wq: sq(),
                    wk: sq(),
                    wv: sq(),
                    wo: sq(),
                    ff1: sq(),
                    ff2: sq(),
                })
                .collect(),
            out_proj: Array2::zeros((w, dims.out_channels)),
        })
    }

    fn params(&self) -> Vec<ndarray::ArrayViewD<'_, f64>> {
        let mut v = vec![
            self.patch_embed.view().into_dyn(),
            self.patch_bias.view().into_dyn(),
            self.camera_proj.view().into_dyn(),
            self.branch.view().into_dyn(),
            self.queries.view().into_dyn(),
        ];
        for b in &self.blocks {
            for a in [&b.wq, &b.wk, &b.wv, &b.wo, &b.ff1, &b.ff2] {
                v.push(a.view().into_dyn());
            }
        }
        v.push(self.out_proj.view().into_dyn());
        v
    }

    fn params_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, f64>> {
        let mut v = vec![
            self.patch_embed.view_mut().into_dyn(),
            self.patch_bias.view_mut().into_dyn(),
            self.camera_proj.view_mut().into_dyn(),
            self.branch.view_mut().into_dyn(),
            self.queries.view_mut().into_dyn(),
        ];
        for b in &mut self.blocks {
            for a in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.ff1, &mut b.ff2] {
                v.push(a.view_mut().into_dyn());
            }
        }
        v.push(self.out_proj.view_mut().into_dyn());
        v
    }
}

/// Adds a fixed 2-D sinusoidal position code for the patch at fractional
/// position `(row, col)` in its image.
fn add_position(feature: &mut [f64], row: f64, col: f64) {
    let quarter = feature.len() / 4;
    for i in 0..quarter {
        let freq = std::f64::consts::PI * (1 << (i % 8)) as f64;
        feature[4 * i] += 0.1 * (freq * row).sin();
        feature[4 * i + 1] += 0.1 * (freq * row).cos();
        feature[4 * i + 2] += 0.1 * (freq * col).sin();
        feature[4 * i + 3] += 0.1 * (freq * col).cos();
    }
}

/// Patch tokens for the six posed views, then the condition image (if any)
/// with the zero camera embedding.
pub fn tokenize_views(model: &ReconModel, views: &ViewSet, condition: Option<&RgbImage>) -> Result<TokenSequence> {
    let side = views.tile_size()?;
    if views.images.len() != views.poses.len() {
        return Err(Error::Size(format!(
            "{} images for {} poses",
            views.images.len(),
            views.poses.len()
        )));
    }
    let len = model.dims.embedding_len;
    let mut tokens = Vec::new();
    for (i, (img, pose)) in views.images.iter().zip(&views.poses).enumerate() {
        let emb = camera_embedding_with_len(Some(pose), len)?;
        tokens.extend(model.embed_image(img, &emb, Branch::Calibrated, i)?);
    }
    if let Some(cond) = condition {
        if cond.width() != side || cond.height() != side {
            return Err(Error::Size(format!(
                "condition image is {}×{}, views are {side}²",
                cond.width(),
                cond.height()
            )));
        }
        let emb = CameraEmbedding::zeros(len);
        tokens.extend(model.embed_image(cond, &emb, Branch::Condition, views.images.len())?);
    }
    debug_assert!(tokens
        .iter()
        .all(|t| (t.branch == Branch::Condition) == t.embedding.is_zero()));
    Ok(TokenSequence { tokens })
}

/// Everything the learned backend needs besides its inputs.
#[derive(Debug, Clone)]
pub struct LearnedBackend {
    pub model: ReconModel,
    pub unpatchify: UnpatchifyWeights,
    pub decoder: SdfDecoder,
}

impl LearnedBackend {
    /// Components derived from one seed with the default dimensions.
    pub fn seeded(seed: u64) -> Self {
        Self {
            model: ReconModel::seeded(seed),
            unpatchify: UnpatchifyWeights::default_seeded(seed.wrapping_add(1)),
            decoder: SdfDecoder::seeded(crate::triplane::HIGH_CHANNELS, seed.wrapping_add(2)),
        }
    }
}

/// tokenize → forward → unpatchify → decode on a `resolution³` grid.
pub fn reconstruct_learned(
    views: &ViewSet,
    condition: Option<&RgbImage>,
    backend: &LearnedBackend,
    resolution: usize,
) -> Result<SdfGrid> {
    let tokens = tokenize_views(&backend.model, views, condition)?;
    let (low, _) = backend.model.forward(&tokens)?;
    let high = unpatchify(&low, &backend.unpatchify)?;
    field_from_triplane(&high, &backend.decoder, resolution)
}
