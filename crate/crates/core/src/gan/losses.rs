//! Adversarial, reconstruction, perceptual and combined objectives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stegan_tensor::nn::{Ctx, EntryKind, Mode, ParamId, ParamStore};
use stegan_tensor::{Real, SeedSplitter, Tape, Tensor, Var};

use crate::error::{Result, StegoError};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 10.0,
            lambda_perc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_rec: f64, lambda_perc: f64) -> Result<Self> {
        if !(lambda_rec >= 0.0 && lambda_perc >= 0.0 && lambda_rec.is_finite() && lambda_perc.is_finite()) {
            return Err(StegoError::InvalidParams(format!(
                "loss weights must be finite and non-negative, got {lambda_rec}, {lambda_perc}"
            )));
        }
        Ok(LossWeights {
            lambda_rec,
            lambda_perc,
        })
    }
}

fn non_empty<T: Real>(v: &Var<'_, T>, what: &str) -> Result<()> {
    if v.shape().iter().product::<usize>() == 0 {
        return Err(StegoError::InvalidParams(format!("empty batch of {what} probabilities")));
    }
    Ok(())
}

fn clamp_prob<'t, T: Real>(p: Var<'t, T>) -> Var<'t, T> {
    p.clamp(T::from_f64_lossy(PROB_EPS), T::from_f64_lossy(1.0 - PROB_EPS))
}

/// `mean log D(x) + mean log(1 - D(G(s, x)))`, the value the discriminator
/// maximizes.
pub fn adversarial_loss<'t, T: Real>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    non_empty(&d_real, "real")?;
    non_empty(&d_fake, "fake")?;
    let real = clamp_prob(d_real).ln().mean();
    let fake = clamp_prob(d_fake).neg().add_scalar(T::one()).ln().mean();
    Ok(real.add(fake)?)
}

/// Non-saturating generator objective `-mean log D(G(s, x))`.
pub fn generator_adversarial_loss<'t, T: Real>(d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    non_empty(&d_fake, "fake")?;
    Ok(clamp_prob(d_fake).ln().mean().neg())
}

/// Plain-number form of [`adversarial_loss`].
pub fn adversarial_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let r = tape.constant(Tensor::new(&[d_real.len()], d_real.to_vec())?);
    let f = tape.constant(Tensor::new(&[d_fake.len()], d_fake.to_vec())?);
    Ok(adversarial_loss(r, f)?.item())
}

/// Mean squared error between `{0, 1}` targets and `sigmoid(logits)`.
pub fn reconstruction_loss<'t, T: Real>(targets: Var<'t, T>, logits: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(logits.sigmoid().sub(targets)?.square().mean())
}

pub fn total_loss(adv: f64, rec: f64, perc: f64, w: LossWeights) -> f64 {
    adv + w.lambda_rec * rec + w.lambda_perc * perc
}

/// [`total_loss`] on tape values.
pub fn total_loss_var<'t, T: Real>(adv: Var<'t, T>, rec: Var<'t, T>, perc: Var<'t, T>, w: LossWeights) -> Result<Var<'t, T>> {
    let rec = rec.scale(T::from_f64_lossy(w.lambda_rec));
    let perc = perc.scale(T::from_f64_lossy(w.lambda_perc));
    Ok(adv.add(rec)?.add(perc)?)
}

/// Fixed random convolutional feature extractor standing in for a
/// pretrained network. Tap 0 is the input itself; tap `l` is the output of
/// convolution `l` (after its ReLU).
#[derive(Clone, Debug)]
pub struct FeatureNet<T: Real> {
    store: ParamStore<T>,
    convs: Vec<(ParamId, usize, usize)>,
    taps: Vec<usize>,
}

impl<T: Real> FeatureNet<T> {
    /// Six 3x3/4x4 convolutions with ReLU, widths `w, w, 2w, 2w, 2w, 2w`,
    /// downsampling at convolutions 3 and 5, taps after 2, 4 and 6. Weight
    /// rows are orthonormalized Gaussian draws scaled by the ReLU gain.
    pub fn new(channels: usize, width: usize, seed: &SeedSplitter) -> Self {
        let mut rng = seed.substream(4, 0);
        let plan = [
            (channels, width, 3, 1, 1),
            (width, width, 3, 1, 1),
            (width, 2 * width, 4, 2, 1),
            (2 * width, 2 * width, 3, 1, 1),
            (2 * width, 2 * width, 4, 2, 1),
            (2 * width, 2 * width, 3, 1, 1),
        ];
        let mut store = ParamStore::new();
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, k, stride, pad))| {
                let w = orthogonal_rows(cout, cin * k * k, &mut rng);
                let id = store.push(
                    format!("feat{i}.weight"),
                    EntryKind::Buffer,
                    Tensor::new(&[cout, cin, k, k], w).expect("sized above"),
                );
                (id, stride, pad)
            })
            .collect();
        FeatureNet {
            store,
            convs,
            taps: vec![2, 4, 6],
        }
    }

    /// A network whose only tap is the input, making the perceptual loss a
    /// pixel-space MSE.
    pub fn identity() -> Self {
        FeatureNet {
            store: ParamStore::new(),
            convs: Vec::new(),
            taps: vec![0],
        }
    }

    pub fn zeroed(mut self) -> Self {
        self.store.map_values(|_, t| *t = Tensor::zeros(t.shape()));
        self
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Feature maps at each tap, in tap order.
    pub fn features<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let ctx = Ctx::new(tape, &self.store, false, Mode::Eval);
        let mut out = Vec::with_capacity(self.taps.len());
        if self.taps.contains(&0) {
            out.push(x);
        }
        let mut y = x;
        for (i, &(w, stride, pad)) in self.convs.iter().enumerate() {
            y = y.conv2d(ctx.var(w), stride, pad)?.relu();
            if self.taps.contains(&(i + 1)) {
                out.push(y);
            }
        }
        Ok(out)
    }
}

fn orthogonal_rows<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    // Gram-Schmidt within each block of `cols` rows; rows beyond the rank
    // are only normalized against their own block.
    for i in 0..rows {
        let start = i - i % cols;
        for j in start..i {
            let d: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = m.split_at_mut(i);
            tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= d * b);
        }
        let norm = m[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        m[i].iter_mut().for_each(|v| *v /= norm);
    }
    let gain = 2f64.sqrt();
    m.into_iter().flatten().map(|v| T::from_f64_lossy(v * gain)).collect()
}

/// `sum_l mean((phi_l(cover) - phi_l(stego))^2)` over the feature taps.
pub fn perceptual_loss<'t, T: Real>(f: &FeatureNet<T>, cover: Var<'t, T>, stego: Var<'t, T>) -> Result<Var<'t, T>> {
    if cover.shape() != stego.shape() {
        return Err(StegoError::DimensionMismatch(format!(
            "perceptual loss on {:?} vs {:?}",
            cover.shape(),
            stego.shape()
        )));
    }
    let tape = cover.tape();
    let fc = f.features(tape, cover)?;
    let fs = f.features(tape, stego)?;
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (a, b) in fc.into_iter().zip(fs) {
        total = total.add(a.sub(b)?.square().mean())?;
    }
    Ok(total)
}
