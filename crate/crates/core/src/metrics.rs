//! Full-reference image quality metrics: PSNR, RMSE, MAE and windowed SSIM.
//!
//! PSNR, RMSE and MAE pool every channel of every pixel jointly. SSIM is
//! computed per channel with an 11x11 Gaussian window (sigma 1.5, valid
//! positions only) and the per-channel means are averaged.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, StegoError};
use crate::media::Image;

pub const MAX_PIXEL: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * MAX_PIXEL) * (0.01 * MAX_PIXEL);
pub const SSIM_C2: f64 = (0.03 * MAX_PIXEL) * (0.03 * MAX_PIXEL);

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(StegoError::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.pixels().len().max(1) as f64;
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / n)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_PIXEL * MAX_PIXEL / mse).log10()
    }
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.pixels().len().max(1) as f64;
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(s / n)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `w x h` plane.
fn filter(plane: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, g: &[f64]) -> f64 {
    let mu_a = filter(a, w, h, g);
    let mu_b = filter(b, w, h, g);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let e_aa = filter(&prod(a, a), w, h, g);
    let e_bb = filter(&prod(b, b), w, h, g);
    let e_ab = filter(&prod(a, b), w, h, g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    total / n as f64
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h, c) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(StegoError::DimensionMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let plane = |img: &Image, ch: usize| -> Vec<f64> { img.pixels().iter().skip(ch).step_by(c).map(|&v| v as f64).collect() };
    let s: f64 = (0..c).map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), w, h, &g)).sum();
    Ok((s / c as f64).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    CoverStego,
    SecretRecovered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub mae: f64,
    pub kind: PairKind,
}

impl MetricsReport {
    pub fn compute(a: &Image, b: &Image, kind: PairKind) -> Result<Self> {
        let m = mse(a, b)?;
        Ok(MetricsReport {
            psnr_db: psnr_from_mse(m),
            ssim: ssim(a, b)?,
            rmse: m.sqrt(),
            mae: mae(a, b)?,
            kind,
        })
    }
}

/// Formats a decibel value, writing `inf` for the identical-image sentinel.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn parse_db(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        t => t.parse().ok(),
    }
}

pub(crate) fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_db(*v))
    }
}

pub(crate) fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) => parse_db(&t).ok_or_else(|| serde::de::Error::custom(format!("bad decibel value {t:?}"))),
    }
}
