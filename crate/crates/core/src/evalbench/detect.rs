//! Steganalysis detectors: pairs-of-values chi-square and a learned CNN probe.

use rand::seq::SliceRandom;
use stegan_tensor::nn::{Ctx, Mode};
use stegan_tensor::optim::{Adam, AdamState};
use stegan_tensor::{SeedSplitter, Tape, Tensor};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, StegoError};
use crate::gan::{Discriminator, PROB_EPS};
use crate::media::{normalize, Image};

/// Pairs whose expected count falls below this are left out of the statistic.
pub const CHI_MIN_EXPECTED: f64 = 5.0;

/// Decision threshold on detector scores.
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Stream domain of detector initialisation and minibatch order.
const DETECTOR_DOMAIN: u32 = 9;

/// Chi-square attack on the value pairs `(2i, 2i + 1)` of all samples.
///
/// Full LSB replacement equalises the two counts of every pair, so the
/// statistic collapses towards its null and the returned p-value tends to 1.
/// Fewer than two usable pairs (tiny or flat images) score 0.
pub fn chi_square_lsb_score(image: &Image) -> f64 {
    let mut hist = [0u64; 256];
    for &v in image.pixels() {
        hist[v as usize] += 1;
    }
    let mut stat = 0.0;
    let mut pairs = 0usize;
    for i in 0..128 {
        let expected = (hist[2 * i] + hist[2 * i + 1]) as f64 / 2.0;
        if expected < CHI_MIN_EXPECTED {
            continue;
        }
        let d = hist[2 * i] as f64 - expected;
        stat += d * d / expected;
        pairs += 1;
    }
    if pairs < 2 {
        return 0.0;
    }
    let dist = ChiSquared::new((pairs - 1) as f64).expect("positive degrees of freedom");
    (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
}

/// Balanced accuracy of thresholded scores: the mean of the rate of stego
/// scores above `threshold` and the rate of cover scores at or below it.
pub fn balanced_accuracy(cover_scores: &[f64], stego_scores: &[f64], threshold: f64) -> Result<f64> {
    if cover_scores.is_empty() || stego_scores.is_empty() {
        return Err(StegoError::InvalidParams(format!(
            "detection needs covers and stegos, got {} and {}",
            cover_scores.len(),
            stego_scores.len()
        )));
    }
    let tpr = stego_scores.iter().filter(|&&s| s > threshold).count() as f64 / stego_scores.len() as f64;
    let tnr = cover_scores.iter().filter(|&&s| s <= threshold).count() as f64 / cover_scores.len() as f64;
    Ok((tpr + tnr) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnnTrainConfig {
    /// Square crop extent fed to the classifier (multiple of 16).
    pub crop: usize,
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            crop: 64,
            width: 8,
            steps: 200,
            batch: 8,
            lr: 1e-3,
            seed: 42,
        }
    }
}

/// The discriminator topology trained as a stand-alone cover/stego classifier.
#[derive(Clone, Debug)]
pub struct CnnDetector {
    net: Discriminator<f32>,
    channels: usize,
    crop: usize,
}

fn crop_input(image: &Image, channels: usize, crop: usize) -> Result<Tensor<f32>> {
    if image.width() < crop || image.height() < crop {
        return Err(StegoError::DimensionMismatch(format!(
            "detector crop {crop} exceeds image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let img = image.with_channels(channels)?;
    let (x0, y0) = img.center_offset(crop, crop);
    Ok(normalize::<f32>(&img.crop(x0, y0, crop, crop)?))
}

impl CnnDetector {
    /// Trains on labelled examples: `covers` are class 0, `stegos` class 1.
    pub fn train(covers: &[Image], stegos: &[Image], config: CnnTrainConfig) -> Result<Self> {
        if covers.is_empty() || stegos.is_empty() {
            return Err(StegoError::InvalidParams("CNN detector needs covers and stegos".into()));
        }
        if config.batch == 0 {
            return Err(StegoError::InvalidParams("CNN detector batch must be >= 1".into()));
        }
        let channels = covers[0].channels();
        let seed = SeedSplitter::new(config.seed);
        let mut net = Discriminator::new(channels, config.width, config.crop, config.crop, &seed, DETECTOR_DOMAIN)?;
        let cover_x = covers
            .iter()
            .map(|c| crop_input(c, channels, config.crop))
            .collect::<Result<Vec<_>>>()?;
        let stego_x = stegos
            .iter()
            .map(|s| crop_input(s, channels, config.crop))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seed.substream(DETECTOR_DOMAIN, 1);
        let mut state = AdamState::for_store(&net.store);
        let adam = Adam {
            lr: config.lr,
            ..Adam::default()
        };
        let half = config.batch.div_ceil(2);
        let mut ci: Vec<usize> = (0..cover_x.len()).collect();
        let mut si: Vec<usize> = (0..stego_x.len()).collect();
        for _ in 0..config.steps {
            ci.shuffle(&mut rng);
            si.shuffle(&mut rng);
            let mut chosen: Vec<Tensor<f32>> = si.iter().cycle().take(half).map(|&i| stego_x[i].clone()).collect();
            chosen.extend(ci.iter().cycle().take(half).map(|&i| cover_x[i].clone()));
            let x = Tensor::stack(&chosen)?;
            let labels: Vec<f32> = (0..2 * half).map(|i| if i < half { 1.0 } else { 0.0 }).collect();
            let tape = Tape::new();
            let mut ctx = Ctx::new(&tape, &net.store, true, Mode::Train);
            let p = net.forward(&mut ctx, tape.constant(x))?.clamp(PROB_EPS as f32, 1.0 - PROB_EPS as f32);
            let y = tape.constant(Tensor::new(&[2 * half, 1], labels)?);
            let y_neg = y.neg().add_scalar(1.0);
            let objective = y.mul(p.ln())?.add(y_neg.mul(p.neg().add_scalar(1.0).ln())?)?.mean();
            if !objective.item().is_finite() {
                return Err(StegoError::NonFinite {
                    phase: "detector",
                    step: 0,
                    detail: format!("classifier objective = {}", objective.item()),
                });
            }
            let grads = tape.backward(objective.neg())?;
            let g = ctx.param_grads(&grads);
            let bn = ctx.into_bn_updates();
            adam.step_store(&mut net.store, &g, &mut state)?;
            bn.commit(&mut net.store);
        }
        Ok(CnnDetector {
            net,
            channels,
            crop: config.crop,
        })
    }

    /// `P(stego)` for the centre crop of `image`.
    pub fn score(&self, image: &Image) -> Result<f64> {
        let x = crop_input(image, self.channels, self.crop)?;
        let x = x.reshape(&[1, self.channels, self.crop, self.crop])?;
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.net.store, false, Mode::Eval);
        let p = self.net.forward(&mut ctx, tape.constant(x))?;
        Ok(p.item() as f64)
    }
}

/// A detector emitting `P(stego)` scores in `[0, 1]`.
#[derive(Clone, Debug)]
pub enum Detector {
    ChiSquare,
    Cnn(Box<CnnDetector>),
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::ChiSquare => "chi_square",
            Detector::Cnn(_) => "cnn",
        }
    }

    pub fn score(&self, image: &Image) -> Result<f64> {
        match self {
            Detector::ChiSquare => Ok(chi_square_lsb_score(image)),
            Detector::Cnn(net) => net.score(image),
        }
    }
}

/// Balanced accuracy of `detector` at `threshold`.
pub fn detection_accuracy(detector: &Detector, covers: &[Image], stegos: &[Image], threshold: f64) -> Result<f64> {
    let cs = covers.iter().map(|c| detector.score(c)).collect::<Result<Vec<_>>>()?;
    let ss = stegos.iter().map(|s| detector.score(s)).collect::<Result<Vec<_>>>()?;
    balanced_accuracy(&cs, &ss, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{lsb_capacity, lsb_embed, LsbParams};
    use crate::evalbench::synthetic_cover;
    use crate::media::HEADER_BITS;
    use rand::{Rng, SeedableRng};

    #[test]
    fn degenerate_images_score_zero() {
        assert_eq!(chi_square_lsb_score(&Image::filled(1, 1, 1, 7).unwrap()), 0.0);
        assert_eq!(chi_square_lsb_score(&Image::filled(64, 64, 3, 7).unwrap()), 0.0);
    }

    #[test]
    fn full_lsb_embedding_is_flagged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = LsbParams::new(1).unwrap();
        for i in 0..4 {
            let cover = synthetic_cover(128, 128, 3, 11, i).unwrap();
            let bits: Vec<u8> = (0..lsb_capacity(&cover, p) - HEADER_BITS).map(|_| rng.gen_range(0..2)).collect();
            let stego = lsb_embed(&cover, &bits, p).unwrap();
            assert!(chi_square_lsb_score(&cover) < 0.1, "cover {i}");
            assert!(chi_square_lsb_score(&stego) > 0.9, "stego {i}");
        }
    }

    #[test]
    fn balanced_accuracy_rules() {
        let covers = [0.1, 0.2, 0.3, 0.9];
        let stegos = [0.8, 0.7, 0.4];
        let a = balanced_accuracy(&covers, &stegos, 0.5).unwrap();
        assert!((a - (2.0 / 3.0 + 0.75) / 2.0).abs() < 1e-12);
        let swapped = balanced_accuracy(&stegos, &covers, 0.5).unwrap();
        assert!((swapped - (1.0 - a)).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&[0.0; 3], &[0.0; 5], 0.5).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[0.0], &[1.0], 0.5).unwrap(), 1.0);
        assert!(balanced_accuracy(&[], &[1.0], 0.5).is_err());
        assert!(balanced_accuracy(&[0.0], &[], 0.5).is_err());
    }

    #[test]
    fn cnn_detector_learns_a_visible_signal() {
        let covers: Vec<Image> = (0..6).map(|i| synthetic_cover(16, 16, 1, 2, i).unwrap()).collect();
        let stegos: Vec<Image> = covers
            .iter()
            .map(|c| Image::from_fn(16, 16, 1, |x, y, _| if (x + y) % 2 == 0 { 255 } else { c.get(x, y, 0) }).unwrap())
            .collect();
        let cfg = CnnTrainConfig {
            crop: 16,
            width: 4,
            steps: 60,
            batch: 4,
            lr: 3e-3,
            seed: 1,
        };
        let det = Detector::Cnn(Box::new(CnnDetector::train(&covers, &stegos, cfg).unwrap()));
        let acc = detection_accuracy(&det, &covers, &stegos, DETECTION_THRESHOLD).unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
        let again = CnnDetector::train(&covers, &stegos, cfg).unwrap();
        let Detector::Cnn(first) = &det else { unreachable!() };
        assert_eq!(first.score(&covers[0]).unwrap(), again.score(&covers[0]).unwrap());
    }
}
