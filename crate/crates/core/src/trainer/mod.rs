//! Alternating discriminator / generator / extractor optimization.
//!
//! Each step draws one batch of cover crops and fresh uniform secrets and
//! runs three phases on it, in order:
//!
//! 1. the discriminator ascends `log D(x) + log(1 - D(G(s, x)))`;
//! 2. the generator descends the non-saturating adversarial term plus the
//!    weighted reconstruction and perceptual losses, with the discriminator,
//!    extractor and feature network frozen;
//! 3. the extractor descends the reconstruction loss on the stego images
//!    produced in phase 2.
//!
//! Only the network of the current phase changes, including its batch-norm
//! running statistics.

mod checkpoint;
mod config;
mod data;

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use stegan_tensor::nn::{BnUpdates, Ctx, Mode, ParamStore};
use stegan_tensor::optim::{Adam, AdamState};
use stegan_tensor::{SeedSplitter, Tape, Tensor};

pub use checkpoint::{write_atomic, Checkpoint, RngState, TraceRecord, FORMAT_VERSION, MAGIC};
pub use config::{hex, TrainConfig};
pub use data::{list_pngs, sample_batch, Batch, Dataset};

use crate::error::{Result, StegoError};
use crate::gan::{
    adversarial_loss, generator_adversarial_loss, perceptual_loss, reconstruction_loss, total_loss_var, Discriminator,
    Extractor, FeatureNet, GanArch, Generator,
};
use crate::media::{bits_to_plane, denormalize, frame, normalize, unframe, BitPayload, Image, SecretPlane};

/// Stream domain of the data-sampling generator.
const DATA_DOMAIN: u32 = 6;

type Update = (Vec<Tensor<f32>>, BnUpdates<f32>);

/// Networks, optimizer state and sampling state of one training run.
pub struct Trainer {
    config: TrainConfig,
    data: Dataset,
    pub g: Generator<f32>,
    pub d: Discriminator<f32>,
    pub e: Extractor<f32>,
    f: FeatureNet<f32>,
    opt_g: AdamState<f32>,
    opt_d: AdamState<f32>,
    opt_e: AdamState<f32>,
    rng: ChaCha8Rng,
    step: u64,
    cursor: u64,
    trace: Vec<TraceRecord>,
}

fn check_finite(value: f64, phase: &'static str, step: u64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(StegoError::NonFinite {
            phase,
            step,
            detail: format!("{what} = {value}"),
        })
    }
}

fn bit_accuracy(logits: &Tensor<f32>, targets: &Tensor<f32>) -> f64 {
    let hits = logits
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(&l, &t)| (l > 0.0) == (t > 0.5))
        .count();
    hits as f64 / logits.len().max(1) as f64
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        let seed = SeedSplitter::new(config.seed);
        let arch = config.arch();
        let g = Generator::new(arch, &seed)?;
        let d = Discriminator::new(arch.channels, arch.disc_width, config.crop, config.crop, &seed, 0)?;
        let e = Extractor::new(arch, &seed)?;
        let f = FeatureNet::new(arch.channels, config.feat_width, &seed);
        Ok(Trainer {
            opt_g: AdamState::for_store(&g.store),
            opt_d: AdamState::for_store(&d.store),
            opt_e: AdamState::for_store(&e.store),
            rng: seed.substream(DATA_DOMAIN, 0),
            g,
            d,
            e,
            f,
            config,
            data,
            step: 0,
            cursor: 0,
            trace: Vec::new(),
        })
    }

    /// Restores a run; the checkpoint must come from a config with the same hash.
    pub fn from_checkpoint(config: TrainConfig, data: Dataset, ck: &Checkpoint) -> Result<Self> {
        let expected = config.hash();
        if expected != ck.config_hash {
            return Err(StegoError::ConfigHashMismatch {
                expected: hex(&expected),
                found: hex(&ck.config_hash),
            });
        }
        let mut t = Trainer::new(config, data)?;
        t.g.store.load(&ck.group("G."))?;
        t.d.store.load(&ck.group("D."))?;
        t.e.store.load(&ck.group("E."))?;
        for (name, st) in &ck.optimizers {
            let (slot, store) = match name.as_str() {
                "G" => (&mut t.opt_g, &t.g.store),
                "D" => (&mut t.opt_d, &t.d.store),
                "E" => (&mut t.opt_e, &t.e.store),
                other => return Err(StegoError::Checkpoint(format!("unknown optimizer group {other:?}"))),
            };
            let fresh = AdamState::for_store(store);
            let shapes_match = st.m.len() == fresh.m.len()
                && st.v.len() == fresh.v.len()
                && st.m.iter().zip(&fresh.m).all(|(a, b)| a.shape() == b.shape());
            if !shapes_match {
                return Err(StegoError::Checkpoint(format!("optimizer group {name} does not match the network")));
            }
            *slot = st.clone();
        }
        t.rng = ck.rng.restore();
        t.step = ck.step;
        t.cursor = ck.cursor;
        t.trace = ck.trace.clone();
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = Vec::new();
        for (prefix, store) in [("G.", &self.g.store), ("D.", &self.d.store), ("E.", &self.e.store)] {
            params.extend(store.entries().iter().map(|e| (format!("{prefix}{}", e.name), e.value.clone())));
        }
        Checkpoint {
            config_hash: self.config.hash(),
            config_text: self.config.to_text(),
            step: self.step,
            cursor: self.cursor,
            rng: RngState::capture(&self.rng),
            params,
            optimizers: vec![
                ("G".into(), self.opt_g.clone()),
                ("D".into(), self.opt_d.clone()),
                ("E".into(), self.opt_e.clone()),
            ],
            trace: self.trace.clone(),
        }
    }

    /// Draws the next batch, advancing the data cursor and sampling generator.
    pub fn next_batch(&mut self) -> Result<Batch<f32>> {
        let c = &self.config;
        let b = sample_batch(&self.data, c.seed, self.cursor, c.batch, c.crop, c.bpp, &mut self.rng)?;
        self.cursor += c.batch as u64;
        Ok(b)
    }

    /// Generator output with batch statistics and no side effects.
    pub fn generate(&self, batch: &Batch<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.g.store, false, Mode::Train);
        let y = self.g.forward(
            &mut ctx,
            tape.constant(batch.covers.clone()),
            tape.constant(batch.secrets.clone()),
        )?;
        Ok(y.value())
    }

    /// Minimax objective value, discriminator accuracy and (when `train`) the update.
    fn d_pass(&self, batch: &Batch<f32>, stego: &Tensor<f32>, train: bool) -> Result<(f64, f64, Option<Update>)> {
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.d.store, train, Mode::Train);
        let real = self.d.forward(&mut ctx, tape.constant(batch.covers.clone()))?;
        let fake = self.d.forward(&mut ctx, tape.constant(stego.clone()))?;
        let n = (real.value().len() + fake.value().len()) as f64;
        let correct = real.value().data().iter().filter(|&&p| p > 0.5).count()
            + fake.value().data().iter().filter(|&&p| p <= 0.5).count();
        let value = adversarial_loss(real, fake)?;
        let update = if train {
            let grads = tape.backward(value.neg())?;
            Some((ctx.param_grads(&grads), ctx.into_bn_updates()))
        } else {
            None
        };
        Ok((value.item() as f64, correct as f64 / n, update))
    }

    /// Generator objective, its perceptual term, the stego batch and the update.
    fn g_pass(&self, batch: &Batch<f32>, train: bool) -> Result<(f64, f64, Tensor<f32>, Option<Update>)> {
        let tape = Tape::new();
        let mut gctx = Ctx::new(&tape, &self.g.store, train, Mode::Train);
        let covers = tape.constant(batch.covers.clone());
        let stego = self.g.forward(&mut gctx, covers, tape.constant(batch.secrets.clone()))?;
        let mut dctx = Ctx::new(&tape, &self.d.store, false, Mode::Train);
        let adv = generator_adversarial_loss(self.d.forward(&mut dctx, stego)?)?;
        let mut ectx = Ctx::new(&tape, &self.e.store, false, Mode::Train);
        let logits = self.e.forward(&mut ectx, stego)?;
        let rec = reconstruction_loss(tape.constant(batch.targets.clone()), logits)?;
        let perc = perceptual_loss(&self.f, covers, stego)?;
        let total = total_loss_var(adv, rec, perc, self.config.weights)?;
        let update = if train {
            let grads = tape.backward(total)?;
            Some((gctx.param_grads(&grads), gctx.into_bn_updates()))
        } else {
            None
        };
        Ok((total.item() as f64, perc.item() as f64, stego.value(), update))
    }

    /// Reconstruction loss, bit accuracy and the update.
    fn e_pass(&self, batch: &Batch<f32>, stego: &Tensor<f32>, train: bool) -> Result<(f64, f64, Option<Update>)> {
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.e.store, train, Mode::Train);
        let logits = self.e.forward(&mut ctx, tape.constant(stego.clone()))?;
        let acc = bit_accuracy(&logits.value(), &batch.targets);
        let rec = reconstruction_loss(tape.constant(batch.targets.clone()), logits)?;
        let update = if train {
            let grads = tape.backward(rec)?;
            Some((ctx.param_grads(&grads), ctx.into_bn_updates()))
        } else {
            None
        };
        Ok((rec.item() as f64, acc, update))
    }

    /// The discriminator's loss (negated minimax objective) on `batch` without updating.
    pub fn discriminator_loss(&self, batch: &Batch<f32>, stego: &Tensor<f32>) -> Result<f64> {
        Ok(-self.d_pass(batch, stego, false)?.0)
    }

    pub fn generator_loss(&self, batch: &Batch<f32>) -> Result<f64> {
        Ok(self.g_pass(batch, false)?.0)
    }

    pub fn extractor_loss(&self, batch: &Batch<f32>, stego: &Tensor<f32>) -> Result<f64> {
        Ok(self.e_pass(batch, stego, false)?.0)
    }

    fn apply(adam: &Adam, store: &mut ParamStore<f32>, state: &mut AdamState<f32>, update: Option<Update>) -> Result<()> {
        let (grads, bn) = update.expect("training pass returns an update");
        adam.step_store(store, &grads, state)?;
        bn.commit(store);
        Ok(())
    }

    fn adam(&self, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            ..Adam::default()
        }
    }

    /// Phase 1. Returns the minimax objective value and the discriminator accuracy before the update.
    pub fn phase_discriminator(&mut self, batch: &Batch<f32>, stego: &Tensor<f32>) -> Result<(f64, f64)> {
        let (value, acc, update) = self.d_pass(batch, stego, true)?;
        check_finite(value, "discriminator", self.step + 1, "adversarial loss")?;
        let adam = self.adam(self.config.lr_d);
        Self::apply(&adam, &mut self.d.store, &mut self.opt_d, update)?;
        Ok((value, acc))
    }

    /// Phase 2. Returns the generator objective, the perceptual term and the stego batch.
    pub fn phase_generator(&mut self, batch: &Batch<f32>) -> Result<(f64, f64, Tensor<f32>)> {
        let (total, perc, stego, update) = self.g_pass(batch, true)?;
        check_finite(total, "generator", self.step + 1, "generator loss")?;
        let adam = self.adam(self.config.lr_g);
        Self::apply(&adam, &mut self.g.store, &mut self.opt_g, update)?;
        Ok((total, perc, stego))
    }

    /// Phase 3. Returns the reconstruction loss and bit accuracy before the update.
    pub fn phase_extractor(&mut self, batch: &Batch<f32>, stego: &Tensor<f32>) -> Result<(f64, f64)> {
        let (rec, acc, update) = self.e_pass(batch, stego, true)?;
        check_finite(rec, "extractor", self.step + 1, "reconstruction loss")?;
        let adam = self.adam(self.config.lr_e);
        Self::apply(&adam, &mut self.e.store, &mut self.opt_e, update)?;
        Ok((rec, acc))
    }

    /// One full step on a freshly drawn batch.
    pub fn train_step(&mut self) -> Result<TraceRecord> {
        let batch = self.next_batch()?;
        self.train_step_on(&batch)
    }

    /// One full step on `batch`.
    pub fn train_step_on(&mut self, batch: &Batch<f32>) -> Result<TraceRecord> {
        let stego0 = self.generate(batch)?;
        let mut d = (0.0, 0.0);
        for i in 0..self.config.d_steps {
            let r = self.phase_discriminator(batch, &stego0)?;
            if i == 0 {
                d = r;
            }
        }
        let mut g = (0.0, 0.0, stego0);
        for i in 0..self.config.g_steps {
            let r = self.phase_generator(batch)?;
            if i == 0 {
                g = r;
            }
        }
        let mut e = (0.0, 0.0);
        for i in 0..self.config.e_steps {
            let r = self.phase_extractor(batch, &g.2)?;
            if i == 0 {
                e = r;
            }
        }
        self.step += 1;
        let rec = TraceRecord {
            step: self.step,
            l_adv: d.0,
            l_rec: e.0,
            l_perc: g.1,
            total: g.0,
            d_acc: d.1,
            e_bitacc: e.1,
        };
        self.trace.push(rec);
        Ok(rec)
    }

    /// True once extractor accuracy gained less than the tolerance over the
    /// last window, compared with the window before it.
    pub fn plateaued(&self) -> bool {
        let w = self.config.early_stop_window as usize;
        let n = self.trace.len();
        if !self.config.early_stop || n < 2 * w {
            return false;
        }
        let mean = |s: &[TraceRecord]| s.iter().map(|r| r.e_bitacc).sum::<f64>() / s.len() as f64;
        mean(&self.trace[n - w..]) - mean(&self.trace[n - 2 * w..n - w]) < self.config.early_stop_tol
    }

    /// Trains until the step budget (or a plateau), writing a checkpoint every
    /// `checkpoint_interval` steps and at the end when `out` is given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Checkpoint> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| StegoError::io(dir, e))?;
        }
        while self.step < self.config.steps {
            self.train_step()?;
            if let Some(dir) = out {
                if self.step % self.config.checkpoint_interval == 0 {
                    self.checkpoint().save(dir.join(format!("step_{:08}.sgf", self.step)))?;
                }
            }
            if self.plateaued() {
                break;
            }
        }
        let ck = self.checkpoint();
        if let Some(dir) = out {
            ck.save(dir.join("final.sgf"))?;
            write_trace_csv(dir.join("trace.csv"), &self.trace)?;
        }
        Ok(ck)
    }
}

/// Fresh run from `config`.
pub fn train_run(config: &TrainConfig, out: Option<&Path>) -> Result<(Checkpoint, Vec<TraceRecord>)> {
    let data = Dataset::load(&config.dataset, config.channels, config.crop)?;
    let mut t = Trainer::new(config.clone(), data)?;
    let ck = t.run(out)?;
    Ok((ck, t.trace))
}

/// Continues `ck` until `config.steps` total steps.
pub fn resume_run(config: &TrainConfig, ck: &Checkpoint, out: Option<&Path>) -> Result<(Checkpoint, Vec<TraceRecord>)> {
    let data = Dataset::load(&config.dataset, config.channels, config.crop)?;
    let mut t = Trainer::from_checkpoint(config.clone(), data, ck)?;
    let ck = t.run(out)?;
    Ok((ck, t.trace))
}

pub fn trace_csv(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r).map_err(|e| StegoError::Report(e.to_string()))?;
    }
    if trace.is_empty() {
        w.write_record(["step", "l_adv", "l_rec", "l_perc", "total", "d_acc", "e_bitacc"])
            .map_err(|e| StegoError::Report(e.to_string()))?;
    }
    w.into_inner().map_err(|e| StegoError::Report(e.to_string()))
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    write_atomic(path.as_ref(), &trace_csv(trace)?)
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| StegoError::Report(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| StegoError::Report(e.to_string())))
        .collect()
}

/// Generator and extractor restored from a checkpoint, for inference.
#[derive(Clone, Debug)]
pub struct StegoModel {
    pub config: TrainConfig,
    pub g: Generator<f32>,
    pub e: Extractor<f32>,
}

impl StegoModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::parse(&ck.config_text)?;
        if config.hash() != ck.config_hash {
            return Err(StegoError::ConfigHashMismatch {
                expected: hex(&config.hash()),
                found: hex(&ck.config_hash),
            });
        }
        let seed = SeedSplitter::new(config.seed);
        let mut g = Generator::new(config.arch(), &seed)?;
        let mut e = Extractor::new(config.arch(), &seed)?;
        g.store.load(&ck.group("G."))?;
        e.store.load(&ck.group("E."))?;
        Ok(StegoModel { config, g, e })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn arch(&self) -> GanArch {
        self.g.arch()
    }

    /// Raw carrier bits of `image` (header included).
    pub fn capacity(&self, image: &Image) -> usize {
        self.arch().planes * image.width() * image.height()
    }

    fn check_cover(&self, image: &Image) -> Result<()> {
        if image.channels() != self.arch().channels {
            return Err(StegoError::DimensionMismatch(format!(
                "model expects {} channels, image has {}",
                self.arch().channels,
                image.channels()
            )));
        }
        Ok(())
    }

    /// Hides a secret plane in `cover` (inference-mode batch norm, 8-bit output).
    pub fn embed_plane(&self, cover: &Image, plane: &SecretPlane) -> Result<Image> {
        self.check_cover(cover)?;
        let (w, h) = (cover.width(), cover.height());
        if plane.shape() != [self.arch().planes, h, w] {
            return Err(StegoError::DimensionMismatch(format!(
                "secret plane {:?} does not match cover {w}x{h} with {} planes",
                plane.shape(),
                self.arch().planes
            )));
        }
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.g.store, false, Mode::Eval);
        let c = normalize::<f32>(cover).reshape(&[1, cover.channels(), h, w])?;
        let s = plane.to_tensor::<f32>().reshape(&[1, plane.planes(), h, w])?;
        let y = self.g.forward(&mut ctx, tape.constant(c), tape.constant(s))?;
        denormalize(&y.value())
    }

    /// Extractor decision for every carrier position.
    pub fn extract_plane(&self, stego: &Image) -> Result<SecretPlane> {
        self.check_cover(stego)?;
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.e.store, false, Mode::Eval);
        let x = normalize::<f32>(stego).reshape(&[1, stego.channels(), stego.height(), stego.width()])?;
        let logits = self.e.forward(&mut ctx, tape.constant(x))?;
        SecretPlane::from_logits(&logits.value())
    }

    /// Frames `bits` with the length header and embeds them.
    pub fn embed(&self, cover: &Image, bits: &[u8]) -> Result<Image> {
        let framed = frame(bits);
        let plane = bits_to_plane(&framed, cover.height(), cover.width(), self.arch().planes)?;
        self.embed_plane(cover, &plane)
    }

    pub fn extract(&self, stego: &Image) -> Result<Vec<u8>> {
        unframe(self.extract_plane(stego)?.bits())
    }
}

pub fn embed_with_model(ck: &Checkpoint, cover: &Image, payload: &BitPayload) -> Result<Image> {
    StegoModel::from_checkpoint(ck)?.embed(cover, payload.bits())
}

pub fn extract_with_model(ck: &Checkpoint, stego: &Image) -> Result<Vec<u8>> {
    StegoModel::from_checkpoint(ck)?.extract(stego)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            crop: 16,
            batch: 2,
            steps: 3,
            gen_width: 2,
            disc_width: 2,
            ext_width: 3,
            feat_width: 2,
            checkpoint_interval: 2,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            (0..5)
                .map(|_| Image::from_fn(20, 20, 3, |x, y, c| ((x * 7 + y * 3 + c * 50) % 200) as u8 + rng.gen_range(0..40)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn phases_touch_only_their_network() {
        let mut t = Trainer::new(tiny_config(), tiny_data(1)).unwrap();
        let batch = t.next_batch().unwrap();
        let sums = |t: &Trainer| (t.g.store.checksum(), t.d.store.checksum(), t.e.store.checksum());
        let stego = t.generate(&batch).unwrap();
        let (g0, d0, e0) = sums(&t);
        t.phase_discriminator(&batch, &stego).unwrap();
        let (g1, d1, e1) = sums(&t);
        assert_eq!((g0, e0), (g1, e1));
        assert_ne!(d0, d1);
        let (_, _, stego) = t.phase_generator(&batch).unwrap();
        let (g2, d2, e2) = sums(&t);
        assert_eq!((d1, e1), (d2, e2));
        assert_ne!(g1, g2);
        t.phase_extractor(&batch, &stego).unwrap();
        let (g3, d3, e3) = sums(&t);
        assert_eq!((g2, d2), (g3, d3));
        assert_ne!(e2, e3);
    }

    #[test]
    fn tiny_learning_rate_does_not_increase_phase_losses() {
        let cfg = TrainConfig {
            lr_g: 1e-6,
            lr_d: 1e-6,
            lr_e: 1e-6,
            ..tiny_config()
        };
        let mut t = Trainer::new(cfg, tiny_data(2)).unwrap();
        let batch = t.next_batch().unwrap();
        let stego = t.generate(&batch).unwrap();
        let before = t.discriminator_loss(&batch, &stego).unwrap();
        t.phase_discriminator(&batch, &stego).unwrap();
        assert!(t.discriminator_loss(&batch, &stego).unwrap() <= before + 1e-6);

        let before = t.generator_loss(&batch).unwrap();
        let (_, _, stego) = t.phase_generator(&batch).unwrap();
        assert!(t.generator_loss(&batch).unwrap() <= before + 1e-6);

        let before = t.extractor_loss(&batch, &stego).unwrap();
        t.phase_extractor(&batch, &stego).unwrap();
        assert!(t.extractor_loss(&batch, &stego).unwrap() <= before + 1e-6);
    }

    #[test]
    fn runs_are_deterministic_and_resumable() {
        let cfg = TrainConfig {
            steps: 4,
            ..tiny_config()
        };
        let mut a = Trainer::new(cfg.clone(), tiny_data(3)).unwrap();
        let full = a.run(None).unwrap();
        let mut b = Trainer::new(cfg.clone(), tiny_data(3)).unwrap();
        assert_eq!(b.run(None).unwrap(), full);
        assert!(full.trace.iter().all(TraceRecord::all_finite));
        assert_eq!(full.trace.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

        let half_cfg = TrainConfig { steps: 2, ..cfg.clone() };
        let half = Trainer::new(half_cfg, tiny_data(3)).unwrap().run(None).unwrap();
        let bytes = half.to_bytes().unwrap();
        let restored = Checkpoint::from_bytes(&bytes).unwrap();
        let mut c = Trainer::from_checkpoint(cfg, tiny_data(3), &restored).unwrap();
        let resumed = c.run(None).unwrap();
        assert_eq!(resumed.to_bytes().unwrap(), full.to_bytes().unwrap());
    }

    #[test]
    fn zero_steps_is_initialization_and_hash_is_checked() {
        let cfg = TrainConfig { steps: 0, ..tiny_config() };
        let init = Trainer::new(cfg.clone(), tiny_data(4)).unwrap();
        let ck = Trainer::new(cfg.clone(), tiny_data(4)).unwrap().run(None).unwrap();
        assert_eq!(ck, init.checkpoint());
        let other = TrainConfig { seed: 1, ..cfg };
        assert!(matches!(
            Trainer::from_checkpoint(other, tiny_data(4), &ck),
            Err(StegoError::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn model_embeds_and_extracts_deterministically() {
        let ck = Trainer::new(tiny_config(), tiny_data(5)).unwrap().checkpoint();
        let model = StegoModel::from_checkpoint(&ck).unwrap();
        let cover = tiny_data(6).images()[0].crop(0, 0, 16, 16).unwrap();
        let payload = BitPayload::from_bits(vec![1, 0, 1, 1, 0]).unwrap();
        let a = embed_with_model(&ck, &cover, &payload).unwrap();
        let b = embed_with_model(&ck, &cover, &payload).unwrap();
        assert_eq!(a, b);
        assert!(a.same_dims(&cover));
        assert_eq!(model.extract_plane(&a).unwrap().shape(), [1, 16, 16]);
        let big = BitPayload::from_bits(vec![1; 16 * 16]).unwrap();
        assert!(matches!(embed_with_model(&ck, &cover, &big), Err(StegoError::CapacityExceeded { .. })));
        let odd = Image::filled(12, 16, 3, 9).unwrap();
        assert!(matches!(model.embed(&odd, &[1]), Err(StegoError::Extent { .. })));
    }

    #[test]
    fn trace_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let trace = vec![TraceRecord {
            step: 1,
            l_adv: -1.5,
            l_rec: 0.2,
            l_perc: 0.125,
            total: 3.0,
            d_acc: 0.5,
            e_bitacc: 0.625,
        }];
        write_trace_csv(&p, &trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,l_adv,l_rec,l_perc,total,d_acc,e_bitacc"));
        assert_eq!(read_trace_csv(&p).unwrap(), trace);
    }
}
