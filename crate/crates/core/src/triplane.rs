//! Triplane latents, the linear unpatchify super-resolution and the SDF/colour
//! decoder.
//!
//! Each plane stores `resolution × resolution` tokens of `channels` floats.
//! Plane 0 is XY (columns follow x, rows follow y), plane 1 is XZ, plane 2
//! is YZ. Token `(u, v)` sits at the center of its cell on `[-1, 1]²`.
//!
//! Super-resolution maps every low-resolution token through one shared
//! linear layer into a `4 × 4` block of high-resolution tokens, so the cost is
//! linear in the token count and tokens never mix.

use std::io::{Read, Write};

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::surface::SdfGrid;
use crate::{Error, Result, Vec3};

pub const LOW_RESOLUTION: usize = 64;
pub const LOW_CHANNELS: usize = 1024;
pub const UPSCALE: usize = 4;
pub const HIGH_RESOLUTION: usize = LOW_RESOLUTION * UPSCALE;
pub const HIGH_CHANNELS: usize = 120;
pub const NUM_PLANES: usize = 3;

/// Coordinate pairs `(u, v)` sampled on each plane.
pub const PLANE_AXES: [(usize, usize); NUM_PLANES] = [(0, 1), (0, 2), (1, 2)];

/// Three square feature planes, token-major: `[plane][v][u][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Triplane {
    pub fn zeros(resolution: usize, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            data: vec![0.0; NUM_PLANES * resolution * resolution * channels],
        }
    }

    pub fn from_data(resolution: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::Size(format!("triplane {resolution}²×{channels} is empty")));
        }
        if data.len() != NUM_PLANES * resolution * resolution * channels {
            return Err(Error::Size(format!(
                "{} values for a {NUM_PLANES}×{resolution}²×{channels} triplane",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("triplane contains non-finite values".into()));
        }
        Ok(Self {
            resolution,
            channels,
            data,
        })
    }

    pub fn random<R: Rng + ?Sized>(resolution: usize, channels: usize, rng: &mut R) -> Self {
        let n = NUM_PLANES * resolution * resolution * channels;
        Self {
            resolution,
            channels,
            data: (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        }
    }

    pub fn num_tokens(&self) -> usize {
        NUM_PLANES * self.resolution * self.resolution
    }

    #[inline]
    pub fn token_index(&self, plane: usize, u: usize, v: usize) -> usize {
        (plane * self.resolution + v) * self.resolution + u
    }

    pub fn token(&self, plane: usize, u: usize, v: usize) -> &[f64] {
        let start = self.token_index(plane, u, v) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn token_mut(&mut self, plane: usize, u: usize, v: usize) -> &mut [f64] {
        let start = self.token_index(plane, u, v) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Cell-center coordinate of token index `i` along one plane axis.
    pub fn cell_center(&self, i: usize) -> f64 {
        -1.0 + (i as f64 + 0.5) * 2.0 / self.resolution as f64
    }

    /// Dump: `TPLN`, u32 version, u32 planes, u32 resolution, u32 channels,
    /// then little-endian f32 values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"TPLN")?;
        write_u32s(
            &mut w,
            &[1, NUM_PLANES as u32, self.resolution as u32, self.channels as u32],
        )?;
        write_f32s(&mut w, &self.data)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, b"TPLN", "triplane")?;
        let [version, planes, res, ch] = read_u32s::<4, _>(&mut r)?;
        if version != 1 || planes as usize != NUM_PLANES {
            return Err(Error::format("triplane", format!("version {version}, {planes} planes")));
        }
        let (res, ch) = (res as usize, ch as usize);
        let data = read_f32s(&mut r, NUM_PLANES * res * res * ch)?;
        Self::from_data(res, ch, data)
    }
}

/// Output of the reconstruction transformer (64² tokens, 1024 channels by default).
#[derive(Debug, Clone, PartialEq)]
pub struct TriplaneLow(pub Triplane);

/// Super-resolved planes (256² tokens, 120 channels by default).
#[derive(Debug, Clone, PartialEq)]
pub struct TriplaneHigh(pub Triplane);

impl std::ops::Deref for TriplaneLow {
    type Target = Triplane;
    fn deref(&self) -> &Triplane {
        &self.0
    }
}

impl std::ops::Deref for TriplaneHigh {
    type Target = Triplane;
    fn deref(&self) -> &Triplane {
        &self.0
    }
}

/// Shared linear layer `in_channels → factor² · out_channels` with bias.
/// `matrix` is row-major `[in][out]`; output index is `(dy · factor + dx) · out_channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpatchifyWeights {
    pub in_channels: usize,
    pub factor: usize,
    pub out_channels: usize,
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl UnpatchifyWeights {
    pub fn out_width(&self) -> usize {
        self.factor * self.factor * self.out_channels
    }

    pub fn zeros(in_channels: usize, factor: usize, out_channels: usize) -> Self {
        let out = factor * factor * out_channels;
        Self {
            in_channels,
            factor,
            out_channels,
            matrix: vec![0.0; in_channels * out],
            bias: vec![0.0; out],
        }
    }

    /// Gaussian weights scaled by `1/sqrt(in_channels)`, small bias.
    pub fn seeded(in_channels: usize, factor: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(in_channels, factor, out_channels);
        let scale = 1.0 / (in_channels as f64).sqrt();
        w.matrix
            .iter_mut()
            .for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
        w.bias
            .iter_mut()
            .for_each(|v| *v = 0.01 * rng.sample::<f64, _>(StandardNormal));
        w
    }

    /// Default dimensions: 1024 → 4·4·120.
    pub fn default_seeded(seed: u64) -> Self {
        Self::seeded(LOW_CHANNELS, UPSCALE, HIGH_CHANNELS, seed)
    }

    fn check(&self) -> Result<()> {
        if self.matrix.len() != self.in_channels * self.out_width() || self.bias.len() != self.out_width() {
            return Err(Error::Size(format!(
                "unpatchify weights hold {} + {} values for {}→{}",
                self.matrix.len(),
                self.bias.len(),
                self.in_channels,
                self.out_width()
            )));
        }
        Ok(())
    }

    /// Dump: `UNPW`, u32 version, u32 in, u32 factor, u32 out channels,
    /// then f32 matrix and bias.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"UNPW")?;
        write_u32s(
            &mut w,
            &[1, self.in_channels as u32, self.factor as u32, self.out_channels as u32],
        )?;
        write_f32s(&mut w, &self.matrix)?;
        write_f32s(&mut w, &self.bias)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, b"UNPW", "unpatchify weights")?;
        let [version, inc, factor, outc] = read_u32s::<4, _>(&mut r)?;
        if version != 1 {
            return Err(Error::format("unpatchify weights", format!("version {version}")));
        }
        let mut w = Self::zeros(inc as usize, factor as usize, outc as usize);
        w.matrix = read_f32s(&mut r, w.matrix.len())?;
        w.bias = read_f32s(&mut r, w.bias.len())?;
        Ok(w)
    }
}

const TOKEN_CHUNK: usize = 256;

/// Applies the shared linear layer to `n` packed tokens (`n × in_channels`),
/// returning `n × out_width` values. Work is split into fixed-size token
/// chunks, so the result does not depend on thread count.
pub fn expand_tokens(tokens: &[f64], weights: &UnpatchifyWeights) -> Result<Vec<f64>> {
    weights.check()?;
    let inc = weights.in_channels;
    let outw = weights.out_width();
    if !tokens.len().is_multiple_of(inc) {
        return Err(Error::Size(format!(
            "{} values are not whole {inc}-channel tokens",
            tokens.len()
        )));
    }
    let n = tokens.len() / inc;
    let w = ArrayView2::from_shape((inc, outw), &weights.matrix).expect("checked shape");
    let mut out = vec![0.0; n * outw];
    out.par_chunks_mut(TOKEN_CHUNK * outw)
        .zip(tokens.par_chunks(TOKEN_CHUNK * inc))
        .for_each(|(dst, src)| {
            let rows = src.len() / inc;
            for row in dst.chunks_exact_mut(outw) {
                row.copy_from_slice(&weights.bias);
            }
            let x = ArrayView2::from_shape((rows, inc), src).expect("chunk shape");
            let mut y = ArrayViewMut2::from_shape((rows, outw), dst).expect("chunk shape");
            general_mat_mul(1.0, &x, &w, 1.0, &mut y);
        });
    Ok(out)
}

/// Super-resolves every low token into a `factor × factor` block.
pub fn unpatchify(low: &TriplaneLow, weights: &UnpatchifyWeights) -> Result<TriplaneHigh> {
    if low.channels != weights.in_channels {
        return Err(Error::Size(format!(
            "triplane has {} channels, weights expect {}",
            low.channels, weights.in_channels
        )));
    }
    let expanded = expand_tokens(&low.data, weights)?;
    let f = weights.factor;
    let oc = weights.out_channels;
    let lr = low.resolution;
    let hr = lr * f;
    let mut high = Triplane::zeros(hr, oc);
    let outw = weights.out_width();
    let plane_len = hr * hr * oc;
    high.data
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(plane, dst)| {
            for v in 0..lr {
                for u in 0..lr {
                    let tok = (plane * lr + v) * lr + u;
                    let block = &expanded[tok * outw..(tok + 1) * outw];
                    for dy in 0..f {
                        for dx in 0..f {
                            let hi = ((v * f + dy) * hr + u * f + dx) * oc;
                            let bo = (dy * f + dx) * oc;
                            dst[hi..hi + oc].copy_from_slice(&block[bo..bo + oc]);
                        }
                    }
                }
            }
        });
    Ok(TriplaneHigh(high))
}

/// Result of [`sample`]: summed plane features and whether `p` was clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSample {
    pub feature: Vec<f64>,
    pub clamped: bool,
}

/// Bilinear lookup on each plane at the projected coordinates, summed.
pub fn sample(planes: &Triplane, p: &Vec3) -> Result<PlaneSample> {
    if !p.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain(format!("non-finite sample point {p:?}")));
    }
    let mut feature = vec![0.0; planes.channels];
    let clamped = sample_into(planes, p, &mut feature);
    Ok(PlaneSample { feature, clamped })
}

/// Accumulates the triplane feature at `p` into `out` (zeroed first).
/// Returns whether `p` had to be clamped into the cube.
pub fn sample_into(planes: &Triplane, p: &Vec3, out: &mut [f64]) -> bool {
    out.iter_mut().for_each(|v| *v = 0.0);
    let clamped = p.iter().any(|c| c.abs() > 1.0);
    let q = p.map(|c| c.clamp(-1.0, 1.0));
    let res = planes.resolution;
    let axis = |c: f64| -> (usize, usize, f64) {
        let s = ((c + 1.0) * 0.5 * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        let i0 = (s.floor() as usize).min(res.saturating_sub(2));
        let i1 = (i0 + 1).min(res - 1);
        (i0, i1, s - i0 as f64)
    };
    for (plane, &(a, b)) in PLANE_AXES.iter().enumerate() {
        let (u0, u1, fu) = axis(q[a]);
        let (v0, v1, fv) = axis(q[b]);
        let taps = [
            (u0, v0, (1.0 - fu) * (1.0 - fv)),
            (u1, v0, fu * (1.0 - fv)),
            (u0, v1, (1.0 - fu) * fv),
            (u1, v1, fu * fv),
        ];
        for (u, v, w) in taps {
            if w == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(planes.token(plane, u, v)) {
                *o += w * t;
            }
        }
    }
    clamped
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One dense layer, row-major `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn seeded<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let scale = (2.0 / inputs as f64).sqrt();
        d.weight
            .iter_mut()
            .for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
        d.bias
            .iter_mut()
            .for_each(|v| *v = 0.1 * rng.sample::<f64, _>(StandardNormal));
        d
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.bias);
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.outputs)) {
            if *xi == 0.0 {
                continue;
            }
            for (yo, w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
    }
}

/// MLP `120 → 64 → 64 → 4` with softplus activations. Output 0 is the
/// signed distance, outputs 1..4 go through a sigmoid to give RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfDecoder {
    pub layers: [Dense; 3],
}

pub const DECODER_HIDDEN: usize = 64;

impl SdfDecoder {
    pub fn zeros(inputs: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(inputs, DECODER_HIDDEN),
                Dense::zeros(DECODER_HIDDEN, DECODER_HIDDEN),
                Dense::zeros(DECODER_HIDDEN, 4),
            ],
        }
    }

    pub fn seeded(inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                Dense::seeded(inputs, DECODER_HIDDEN, &mut rng),
                Dense::seeded(DECODER_HIDDEN, DECODER_HIDDEN, &mut rng),
                Dense::seeded(DECODER_HIDDEN, 4, &mut rng),
            ],
        }
    }

    /// Decoder that ignores its input and always yields `sdf`.
    pub fn constant(inputs: usize, sdf: f64) -> Self {
        let mut d = Self::zeros(inputs);
        d.layers[2].bias[0] = sdf;
        d
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    fn forward_raw(&self, feature: &[f64]) -> [f64; 4] {
        let mut h1 = vec![0.0; self.layers[0].outputs];
        self.layers[0].forward(feature, &mut h1);
        h1.iter_mut().for_each(|v| *v = softplus(*v));
        let mut h2 = vec![0.0; self.layers[1].outputs];
        self.layers[1].forward(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = softplus(*v));
        let mut out = [0.0; 4];
        self.layers[2].forward(&h2, &mut out);
        out
    }

    /// Signed distance and RGB in `[0, 1]³`.
    pub fn decode(&self, feature: &[f64]) -> Result<(f64, [f64; 3])> {
        if feature.len() != self.inputs() {
            return Err(Error::Size(format!(
                "feature has {} channels, decoder expects {}",
                feature.len(),
                self.inputs()
            )));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite feature".into()));
        }
        let out = self.forward_raw(feature);
        Ok((out[0], [sigmoid(out[1]), sigmoid(out[2]), sigmoid(out[3])]))
    }

    /// Dump: `SDFD`, u32 version, u32 inputs, u32 hidden, then each layer's
    /// f32 weights and bias.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SDFD")?;
        write_u32s(&mut w, &[1, self.inputs() as u32, DECODER_HIDDEN as u32])?;
        for l in &self.layers {
            write_f32s(&mut w, &l.weight)?;
            write_f32s(&mut w, &l.bias)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, b"SDFD", "decoder")?;
        let [version, inputs, hidden] = read_u32s::<3, _>(&mut r)?;
        if version != 1 || hidden as usize != DECODER_HIDDEN {
            return Err(Error::format("decoder", format!("version {version}, hidden {hidden}")));
        }
        let mut d = Self::zeros(inputs as usize);
        for l in &mut d.layers {
            l.weight = read_f32s(&mut r, l.weight.len())?;
            l.bias = read_f32s(&mut r, l.bias.len())?;
        }
        Ok(d)
    }
}

/// Decoded SDF at the cell centers of a `resolution³` grid over `[-1, 1]³`.
pub fn field_from_triplane(high: &TriplaneHigh, decoder: &SdfDecoder, resolution: usize) -> Result<SdfGrid> {
    if resolution < 8 {
        return Err(Error::Domain(format!("field resolution {resolution} < 8")));
    }
    if high.channels != decoder.inputs() {
        return Err(Error::Size(format!(
            "triplane has {} channels, decoder expects {}",
            high.channels,
            decoder.inputs()
        )));
    }
    let planes: &Triplane = high;
    SdfGrid::sample_cells([resolution; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), |p| {
        let mut f = vec![0.0; planes.channels];
        sample_into(planes, p, &mut f);
        decoder.forward_raw(&f)[0]
    })
}

fn write_u32s<W: Write>(w: &mut W, vals: &[u32]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], kind: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::format(kind, "bad magic"));
    }
    Ok(())
}

pub(crate) fn read_u32s<const N: usize, R: Read>(r: &mut R) -> Result<[u32; N]> {
    let mut out = [0u32; N];
    for v in &mut out {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    Ok(out)
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
