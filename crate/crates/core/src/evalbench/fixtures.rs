//! Synthetic textured covers for tests and benchmarks.
//!
//! A cover is a handful of flat-coloured rectangles and discs over a soft
//! background, a few patches of sinusoidal texture, and mild Gaussian sensor
//! noise. The noise keeps per-value histograms peaked and uneven the way
//! camera images are, which is what pairs-of-values steganalysis relies on.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use stegan_tensor::SeedSplitter;

use crate::error::{Result, StegoError};
use crate::media::{save_image, Image};

const FIXTURE_DOMAIN: u32 = 7;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) < r * r,
        }
    }
}

struct Texture {
    region: Shape,
    fx: f64,
    fy: f64,
    amp: f64,
}

/// Cover number `index` of the fixture family for `seed`.
pub fn synthetic_cover(width: usize, height: usize, channels: usize, seed: u64, index: u32) -> Result<Image> {
    if !matches!(channels, 1 | 3) {
        return Err(StegoError::InvalidParams(format!("channels must be 1 or 3, got {channels}")));
    }
    let mut rng = SeedSplitter::new(seed).substream(FIXTURE_DOMAIN, index);
    let (w, h) = (width as f64, height as f64);
    let color = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
        let base = rng.gen_range(30.0..220.0);
        [0, 1, 2].map(|_| (base + rng.gen_range(-35.0..35.0f64)).clamp(10.0, 245.0))
    };
    let background = color(&mut rng);
    let tilt = [rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)];
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.gen_range(4..10))
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let (x0, y0) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.6) * w,
                    y1: y0 + rng.gen_range(0.1..0.6) * h,
                }
            } else {
                Shape::Disc {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    r: rng.gen_range(0.05..0.3) * w.min(h),
                }
            };
            (shape, color(&mut rng))
        })
        .collect();
    let textures: Vec<Texture> = (0..rng.gen_range(1..4))
        .map(|_| {
            let (x0, y0) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            Texture {
                region: Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.15..0.5) * w,
                    y1: y0 + rng.gen_range(0.15..0.5) * h,
                },
                fx: rng.gen_range(0.05..0.8),
                fy: rng.gen_range(0.05..0.8),
                amp: rng.gen_range(4.0..20.0),
            }
        })
        .collect();
    let sigma = rng.gen_range(1.0..2.5);
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut px = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / w - 0.5, y as f64 / h - 0.5);
            let mut c = background.map(|v| v + tilt[0] * fx + tilt[1] * fy);
            for (s, col) in &shapes {
                if s.contains(x as f64, y as f64) {
                    c = *col;
                }
            }
            for t in &textures {
                if t.region.contains(x as f64, y as f64) {
                    let v = t.amp * (t.fx * x as f64 + t.fy * y as f64).sin();
                    c = c.map(|ch| ch + v);
                }
            }
            if channels == 1 {
                let g = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
                px.push((g + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            } else {
                for ch in c {
                    px.push((ch + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Image::new(width, height, channels, px)
}

/// Writes `count` covers as `cover_00000.png`, ... into `dir`.
pub fn write_fixture_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| StegoError::io(dir, e))?;
    for i in 0..count {
        let img = synthetic_cover(width, height, channels, seed, i as u32)?;
        save_image(&img, dir.join(format!("cover_{i:05}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_are_seeded_and_distinct() {
        let a = synthetic_cover(32, 24, 3, 1, 0).unwrap();
        assert_eq!(a, synthetic_cover(32, 24, 3, 1, 0).unwrap());
        assert_ne!(a, synthetic_cover(32, 24, 3, 1, 1).unwrap());
        assert_ne!(a, synthetic_cover(32, 24, 3, 2, 0).unwrap());
        assert_eq!(synthetic_cover(32, 24, 1, 1, 0).unwrap().dims(), (32, 24, 1));
    }

    #[test]
    fn dataset_is_written_in_order() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_dataset(dir.path(), 3, 16, 16, 3, 5).unwrap();
        let files = crate::trainer::list_pngs(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(files[0].ends_with("cover_00000.png"));
        let img = crate::media::load_image(&files[2]).unwrap();
        assert_eq!(img, synthetic_cover(16, 16, 3, 5, 2).unwrap());
    }
}
