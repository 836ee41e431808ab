//! Cover dataset and batch sampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stegan_tensor::{Real, SeedSplitter, Tensor};

use crate::error::{Result, StegoError};
use crate::media::{load_image, normalize, Image};

/// Stream domain for per-epoch shuffles.
const SHUFFLE_DOMAIN: u32 = 5;

/// PNG files directly inside `dir`, in lexicographic order.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let rd = std::fs::read_dir(dir).map_err(|e| StegoError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| StegoError::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<Image>,
}

impl Dataset {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(StegoError::Dataset("dataset is empty".into()));
        }
        Ok(Dataset { images })
    }

    /// Loads every PNG of `dir`, converted to `channels`, requiring each to be
    /// at least `crop x crop`.
    pub fn load(dir: impl AsRef<Path>, channels: usize, crop: usize) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(StegoError::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let mut images = Vec::new();
        for path in list_pngs(dir)? {
            let img = load_image(&path)?.with_channels(channels)?;
            if img.width() < crop || img.height() < crop {
                return Err(StegoError::Dataset(format!(
                    "{} is {}x{}, smaller than crop {crop}",
                    path.display(),
                    img.width(),
                    img.height()
                )));
            }
            images.push(img);
        }
        if images.is_empty() {
            return Err(StegoError::Dataset(format!("no PNG files in {}", dir.display())));
        }
        Ok(Dataset { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// Image index for the `cursor`-th draw: epochs visit every image once in
    /// an order shuffled from the seed.
    pub fn index_at(&self, seed: u64, cursor: u64) -> usize {
        let n = self.images.len() as u64;
        let (epoch, pos) = (cursor / n, cursor % n);
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        let mut rng = SeedSplitter::new(seed).substream(SHUFFLE_DOMAIN, epoch as u32);
        order.shuffle(&mut rng);
        order[pos as usize]
    }
}

/// One training batch: covers `[N, C, H, W]` in `[-1, 1]`, secrets
/// `[N, planes, H, W]` in `{-1, +1}` and their `{0, 1}` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub covers: Tensor<T>,
    pub secrets: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn size(&self) -> usize {
        self.covers.shape()[0]
    }

    /// Uniform random secrets for the given covers.
    pub fn with_random_secrets(covers: Tensor<T>, planes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let s = covers.shape().to_vec();
        let shape = [s[0], planes, s[2], s[3]];
        let bits: Vec<bool> = (0..shape.iter().product::<usize>()).map(|_| rng.gen()).collect();
        let secrets = Tensor::new(&shape, bits.iter().map(|&b| if b { T::one() } else { -T::one() }).collect())?;
        let targets = Tensor::new(&shape, bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect())?;
        Ok(Batch {
            covers,
            secrets,
            targets,
        })
    }
}

/// Draws `batch` random crops starting at `cursor`, then fresh secrets.
pub fn sample_batch<T: Real>(
    data: &Dataset,
    seed: u64,
    cursor: u64,
    batch: usize,
    crop: usize,
    planes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<T>> {
    let mut crops = Vec::with_capacity(batch);
    for i in 0..batch {
        let img = &data.images[data.index_at(seed, cursor + i as u64)];
        let x0 = rng.gen_range(0..=img.width() - crop);
        let y0 = rng.gen_range(0..=img.height() - crop);
        crops.push(normalize::<T>(&img.crop(x0, y0, crop, crop)?));
    }
    let covers = Tensor::stack(&crops)?;
    Batch::with_random_secrets(covers, planes, rng)
}
