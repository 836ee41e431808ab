//! 8x8 block-DCT embedding by quantization index modulation (QIM).
//!
//! Each selected mid-frequency coefficient carries one bit: it is moved to
//! the nearest point of the lattice `2*delta*Z + bit*delta`. The pixel-domain
//! round/clamp after the inverse transform can push a coefficient back across
//! a decision boundary, so embedding re-checks every block against the
//! 8-bit output and re-quantizes blocks that decode wrongly, for a bounded
//! number of passes. Blocks that keep failing are near saturation; from
//! [`CONTRACT_AFTER`] passes on, such a block is pulled towards mid-gray
//! before re-quantizing so that clamping stops undoing the embedding.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Result, StegoError};
use crate::media::{frame, unframe, Image, HEADER_BITS};

pub const BLOCK: usize = 8;
/// Smallest quantization step for which 8-bit rounding cannot flip a bit.
pub const MIN_DELTA: f64 = 4.0;
const MAX_PASSES: usize = 24;

/// Re-embedding pass from which stubborn blocks get their contrast reduced.
pub const CONTRACT_AFTER: usize = 4;

/// Per-pass contrast factor around mid-gray for stubborn blocks.
const CONTRACTION: f64 = 0.85;

pub type Block = [f64; BLOCK * BLOCK];

fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; BLOCK]; BLOCK];
        for (u, row) in b.iter_mut().enumerate() {
            let a = if u == 0 { (1.0 / 8.0f64).sqrt() } else { 0.5 };
            for (i, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * i + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// Orthonormal type-II 2-D DCT of a row-major 8x8 block.
pub fn dct8_forward(block: &Block) -> Block {
    let b = basis();
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for v in 0..8 {
            tmp[i * 8 + v] = (0..8).map(|j| block[i * 8 + j] * b[v][j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|i| b[u][i] * tmp[i * 8 + v]).sum();
        }
    }
    out
}

/// Orthonormal type-III 2-D DCT (inverse of [`dct8_forward`]).
pub fn dct8_inverse(coeffs: &Block) -> Block {
    let b = basis();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for j in 0..8 {
            tmp[u * 8 + j] = (0..8).map(|v| coeffs[u * 8 + v] * b[v][j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|u| b[u][i] * tmp[u * 8 + j]).sum();
        }
    }
    out
}

/// JPEG zig-zag scan order as `(row, col)` pairs.
pub fn zigzag() -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(64);
    for s in 0..15usize {
        let lo = s.saturating_sub(7);
        let hi = s.min(7);
        if s % 2 == 0 {
            for r in (lo..=hi).rev() {
                order.push((r, s - r));
            }
        } else {
            for r in lo..=hi {
                order.push((r, s - r));
            }
        }
    }
    order
}

/// Moves `c` to the nearest point of the lattice for `bit`.
pub fn qim_embed(c: f64, bit: u8, delta: f64) -> f64 {
    let offset = bit as f64 * delta;
    2.0 * delta * ((c - offset) / (2.0 * delta)).round() + offset
}

/// The bit whose lattice has the nearest point to `c`.
pub fn qim_decode(c: f64, delta: f64) -> u8 {
    let d0 = (c - qim_embed(c, 0, delta)).abs();
    let d1 = (c - qim_embed(c, 1, delta)).abs();
    u8::from(d1 < d0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DctParams {
    coefficients: Vec<(usize, usize)>,
    delta: f64,
    luma_only: bool,
}

impl Default for DctParams {
    /// Zig-zag positions 9..=16, `delta = 8`, luma-only.
    fn default() -> Self {
        DctParams {
            coefficients: zigzag()[9..=16].to_vec(),
            delta: 8.0,
            luma_only: true,
        }
    }
}

impl DctParams {
    pub fn new(coefficients: Vec<(usize, usize)>, delta: f64, luma_only: bool) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(StegoError::InvalidParams("empty coefficient set".into()));
        }
        for (i, &(u, v)) in coefficients.iter().enumerate() {
            if u >= BLOCK || v >= BLOCK {
                return Err(StegoError::InvalidParams(format!("coefficient ({u},{v}) outside 8x8")));
            }
            if (u, v) == (0, 0) {
                return Err(StegoError::InvalidParams("DC coefficient cannot carry payload".into()));
            }
            if coefficients[..i].contains(&(u, v)) {
                return Err(StegoError::InvalidParams(format!("duplicate coefficient ({u},{v})")));
            }
        }
        if !(delta.is_finite() && delta >= MIN_DELTA) {
            return Err(StegoError::InvalidParams(format!(
                "quantization step {delta} must be finite and >= {MIN_DELTA}"
            )));
        }
        Ok(DctParams {
            coefficients,
            delta,
            luma_only,
        })
    }

    pub fn with_delta(delta: f64) -> Result<Self> {
        let d = Self::default();
        Self::new(d.coefficients, delta, d.luma_only)
    }

    pub fn coefficients(&self) -> &[(usize, usize)] {
        &self.coefficients
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn luma_only(&self) -> bool {
        self.luma_only
    }
}

/// Float planes the embedder works on, plus whatever is needed to rebuild pixels.
struct Planes {
    width: usize,
    height: usize,
    /// Carrier planes (luma, a gray plane, or R/G/B).
    carriers: Vec<Vec<f64>>,
    /// Cb/Cr when embedding in luma of an RGB image.
    chroma: Option<(Vec<f64>, Vec<f64>)>,
}

fn split(image: &Image, params: &DctParams) -> Planes {
    let (w, h, c) = image.dims();
    let px = image.pixels();
    if c == 1 {
        return Planes {
            width: w,
            height: h,
            carriers: vec![px.iter().map(|&v| v as f64).collect()],
            chroma: None,
        };
    }
    if params.luma_only {
        let mut y = Vec::with_capacity(w * h);
        let mut cb = Vec::with_capacity(w * h);
        let mut cr = Vec::with_capacity(w * h);
        for p in px.chunks(3) {
            let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
            y.push(0.299 * r + 0.587 * g + 0.114 * b);
            cb.push(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
            cr.push(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
        }
        Planes {
            width: w,
            height: h,
            carriers: vec![y],
            chroma: Some((cb, cr)),
        }
    } else {
        Planes {
            width: w,
            height: h,
            carriers: (0..3).map(|ch| px.chunks(3).map(|p| p[ch] as f64).collect()).collect(),
            chroma: None,
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn compose(planes: &Planes, channels: usize) -> Image {
    let n = planes.width * planes.height;
    let pixels: Vec<u8> = match (&planes.chroma, channels) {
        (Some((cb, cr)), _) => (0..n)
            .flat_map(|i| {
                let (y, cb, cr) = (planes.carriers[0][i], cb[i] - 128.0, cr[i] - 128.0);
                [
                    to_u8(y + 1.402 * cr),
                    to_u8(y - 0.344136 * cb - 0.714136 * cr),
                    to_u8(y + 1.772 * cb),
                ]
            })
            .collect(),
        (None, 1) => planes.carriers[0].iter().map(|&v| to_u8(v)).collect(),
        (None, _) => (0..n).flat_map(|i| [0, 1, 2].map(|c| to_u8(planes.carriers[c][i]))).collect(),
    };
    Image::new(planes.width, planes.height, channels, pixels).expect("dimensions preserved")
}

fn block_origins(width: usize, height: usize) -> Vec<(usize, usize)> {
    let (bw, bh) = (width / BLOCK, height / BLOCK);
    (0..bh)
        .flat_map(|by| (0..bw).map(move |bx| (bx * BLOCK, by * BLOCK)))
        .collect()
}

fn read_block(plane: &[f64], width: usize, (x0, y0): (usize, usize)) -> Block {
    let mut b = [0.0; 64];
    for i in 0..8 {
        b[i * 8..i * 8 + 8].copy_from_slice(&plane[(y0 + i) * width + x0..(y0 + i) * width + x0 + 8]);
    }
    b
}

fn write_block(plane: &mut [f64], width: usize, (x0, y0): (usize, usize), b: &Block) {
    for i in 0..8 {
        plane[(y0 + i) * width + x0..(y0 + i) * width + x0 + 8].copy_from_slice(&b[i * 8..i * 8 + 8]);
    }
}

/// Raw carrier capacity in bits (header included). Partial edge blocks carry nothing.
pub fn dct_capacity(image: &Image, params: &DctParams) -> usize {
    let planes = if image.channels() == 3 && !params.luma_only { 3 } else { 1 };
    planes * (image.width() / BLOCK) * (image.height() / BLOCK) * params.coefficients.len()
}

/// Slot `i` of the bitstream lives in (plane, block, coefficient) order.
fn slots(image: &Image, params: &DctParams) -> (usize, Vec<(usize, usize)>) {
    let planes = if image.channels() == 3 && !params.luma_only { 3 } else { 1 };
    (planes, block_origins(image.width(), image.height()))
}

/// Every carrier bit in slot order, header included, without interpreting the frame.
pub fn dct_decode_bits(image: &Image, params: &DctParams) -> Vec<u8> {
    let planes = split(image, params);
    let (_, origins) = slots(image, params);
    let mut bits = Vec::with_capacity(dct_capacity(image, params));
    for plane in &planes.carriers {
        for &o in &origins {
            let coef = dct8_forward(&read_block(plane, planes.width, o));
            for &(u, v) in &params.coefficients {
                bits.push(qim_decode(coef[u * 8 + v], params.delta));
            }
        }
    }
    bits
}

pub fn dct_embed(cover: &Image, payload: &[u8], params: &DctParams) -> Result<Image> {
    let framed = frame(payload);
    let available = dct_capacity(cover, params);
    if framed.len() > available {
        return Err(StegoError::CapacityExceeded {
            needed: framed.len(),
            available,
        });
    }
    let ncoef = params.coefficients.len();
    let (_, origins) = slots(cover, params);
    let per_plane = origins.len() * ncoef;
    let mut target = split(cover, params);
    let width = target.width;

    // Initial quantization of every slot that carries a framed bit.
    for (p, plane) in target.carriers.iter_mut().enumerate() {
        for (bi, &o) in origins.iter().enumerate() {
            let base = p * per_plane + bi * ncoef;
            if base >= framed.len() {
                break;
            }
            let mut coef = dct8_forward(&read_block(plane, width, o));
            for (j, &(u, v)) in params.coefficients.iter().enumerate() {
                if let Some(&bit) = framed.get(base + j) {
                    coef[u * 8 + v] = qim_embed(coef[u * 8 + v], bit, params.delta);
                }
            }
            write_block(plane, width, o, &dct8_inverse(&coef));
        }
    }

    let mut stego = compose(&target, cover.channels());
    for pass in 0..MAX_PASSES {
        let decoded = split(&stego, params);
        let mut dirty = false;
        for p in 0..target.carriers.len() {
            for (bi, &o) in origins.iter().enumerate() {
                let base = p * per_plane + bi * ncoef;
                if base >= framed.len() {
                    break;
                }
                let mut coef = dct8_forward(&read_block(&decoded.carriers[p], width, o));
                let wrong = params.coefficients.iter().enumerate().any(|(j, &(u, v))| {
                    framed
                        .get(base + j)
                        .is_some_and(|&bit| qim_decode(coef[u * 8 + v], params.delta) != bit)
                });
                if !wrong {
                    continue;
                }
                dirty = true;
                if pass >= CONTRACT_AFTER {
                    let mut px = read_block(&target.carriers[p], width, o);
                    for v in px.iter_mut() {
                        *v = 127.5 + (*v - 127.5) * CONTRACTION;
                    }
                    coef = dct8_forward(&px);
                    if let Some((cb, cr)) = target.chroma.as_mut() {
                        for plane in [cb, cr] {
                            let mut c = read_block(plane, width, o);
                            for v in c.iter_mut() {
                                *v = 128.0 + (*v - 128.0) * CONTRACTION;
                            }
                            write_block(plane, width, o, &c);
                        }
                    }
                }
                for (j, &(u, v)) in params.coefficients.iter().enumerate() {
                    if let Some(&bit) = framed.get(base + j) {
                        coef[u * 8 + v] = qim_embed(coef[u * 8 + v], bit, params.delta);
                    }
                }
                write_block(&mut target.carriers[p], width, o, &dct8_inverse(&coef));
            }
        }
        if !dirty {
            break;
        }
        stego = compose(&target, cover.channels());
    }
    Ok(stego)
}

pub fn dct_extract(stego: &Image, params: &DctParams) -> Result<Vec<u8>> {
    if dct_capacity(stego, params) < HEADER_BITS {
        return Err(StegoError::MalformedHeader {
            declared: 0,
            capacity: 0,
        });
    }
    unframe(&dct_decode_bits(stego, params))
}
