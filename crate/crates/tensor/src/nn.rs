//! Layers, parameter storage and forward contexts.
//!
//! Networks keep their weights in a [`ParamStore`]. For each forward pass the
//! store is bound onto a tape through a [`Ctx`], either as gradient-receiving
//! leaves (the network being trained) or as constants (frozen networks).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{ChannelStats, Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Negative slope used by every leaky ReLU in the workspace.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Learnable; updated by the optimizer.
    Param,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor<T>,
}

/// Index of an entry inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameters and buffers of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: EntryKind, value: Tensor<T>) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    /// Learnable parameters in store order.
    pub fn params(&self) -> impl Iterator<Item = &Entry<T>> {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Entry<T>> {
        self.entries.iter_mut().filter(|e| e.kind == EntryKind::Param)
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|e| e.value.len()).sum()
    }

    /// Replaces every entry's value, matching by name and shape.
    pub fn load(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        for e in &mut self.entries {
            let (_, v) = other.iter().find(|(n, _)| *n == e.name).ok_or_else(|| TensorError::InvalidArgument {
                op: "load",
                detail: format!("missing entry {}", e.name),
            })?;
            if v.shape() != e.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load",
                    lhs: e.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            e.value = v.clone();
        }
        Ok(())
    }

    pub fn map_values(&mut self, f: impl Fn(&str, &mut Tensor<T>)) {
        for e in &mut self.entries {
            f(&e.name, &mut e.value);
        }
    }

    /// FNV-1a over the bit patterns of every parameter; used to assert that
    /// a training phase left a network untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            for v in e.value.data() {
                let bits = v.to_f64().unwrap_or(f64::NAN).to_bits();
                for b in bits.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are observed for later commit.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward pass of one network over one tape.
pub struct Ctx<'s, 't, T: Real> {
    pub tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    vars: Vec<Var<'t, T>>,
    mode: Mode,
    observed: Vec<(BatchNorm, ChannelStats<T>)>,
}

impl<'s, 't, T: Real> Ctx<'s, 't, T> {
    /// Binds every entry of `store`; parameters receive gradients only when
    /// `trainable` is set.
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, trainable: bool, mode: Mode) -> Self {
        let vars = store
            .entries()
            .iter()
            .map(|e| {
                if trainable && e.kind == EntryKind::Param {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Ctx {
            tape,
            store,
            vars,
            mode,
            observed: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Gradients for every learnable parameter, in store order.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.store
            .entries()
            .iter()
            .zip(&self.vars)
            .filter(|(e, _)| e.kind == EntryKind::Param)
            .map(|(_, v)| grads.wrt(*v))
            .collect()
    }

    /// Batch-norm statistics observed in [`Mode::Train`], to be folded into
    /// the running averages with [`BnUpdates::commit`].
    pub fn into_bn_updates(self) -> BnUpdates<T> {
        BnUpdates(self.observed)
    }
}

#[must_use]
pub struct BnUpdates<T>(Vec<(BatchNorm, ChannelStats<T>)>);

impl<T: Real> BnUpdates<T> {
    /// Exponential moving average with momentum 0.1; the running variance
    /// uses the unbiased batch estimate.
    pub fn commit(self, store: &mut ParamStore<T>) {
        let mom = T::from_f64_lossy(BN_MOMENTUM);
        for (bn, stats) in self.0 {
            let n = stats.count as f64;
            let unbias = T::from_f64_lossy(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            for (r, &m) in store.get_mut(bn.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                *r = (T::one() - mom) * *r + mom * m;
            }
            for (r, &v) in store.get_mut(bn.running_var).data_mut().iter_mut().zip(&stats.var) {
                *r = (T::one() - mom) * *r + mom * v * unbias;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(T::from_f64_lossy(LEAKY_SLOPE)),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Declarative description of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Activation(Activation),
}

impl LayerSpec {
    /// Output extents for an `h x w` input, validating the stride/padding
    /// arithmetic.
    pub fn out_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let g = crate::kernels::ConvGeom::conv(in_ch, h, w, out_ch, kernel, kernel, stride, pad)?;
                Ok((g.ho, g.wo))
            }
            LayerSpec::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let g = crate::kernels::ConvGeom::transposed(in_ch, h, w, out_ch, kernel, kernel, stride, pad)?;
                Ok((g.h, g.w))
            }
            _ => Ok((h, w)),
        }
    }
}

/// Kaiming-uniform bound for leaky-ReLU fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    gain * (3.0 / fan_in.max(1) as f64).sqrt()
}

fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.conv2d(ctx.var(self.weight), self.stride, self.pad)?;
        match self.bias {
            Some(b) => y.bias_add(ctx.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.conv_transpose2d(ctx.var(self.weight), self.stride, self.pad)?;
        match self.bias {
            Some(b) => y.bias_add(ctx.var(b)),
            None => Ok(y),
        }
    }
}

/// `y = x W + b` with `W` stored `[inputs, outputs]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.flatten()?.matmul(ctx.var(self.weight))?.bias_add(ctx.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn forward<'t, T: Real>(&self, ctx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let eps = T::from_f64_lossy(BN_EPS);
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, eps)?;
                ctx.observed.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => {
                let store = ctx.store;
                x.batch_norm_eval(
                    gamma,
                    beta,
                    store.get(self.running_mean).data(),
                    store.get(self.running_var).data(),
                    eps,
                )
            }
        }
    }
}

/// A built layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    ConvTranspose(ConvTranspose2d),
    Dense(Dense),
    BatchNorm(BatchNorm),
    Activation(Activation),
}

impl Layer {
    pub fn forward<'t, T: Real>(&self, ctx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Layer::Conv(l) => l.forward(ctx, x),
            Layer::ConvTranspose(l) => l.forward(ctx, x),
            Layer::Dense(l) => l.forward(ctx, x),
            Layer::BatchNorm(l) => l.forward(ctx, x),
            Layer::Activation(a) => Ok(a.apply(x)),
        }
    }
}

/// Creates the parameters for `spec` under `prefix`. Convolution and dense
/// weights use Kaiming-uniform initialization with the leaky-ReLU gain; biases
/// start at zero, batch-norm scale at one and shift at zero.
pub fn build_layer<T: Real>(store: &mut ParamStore<T>, prefix: &str, spec: LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
    match spec {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            bias,
        } => {
            let bound = kaiming_bound(in_ch * kernel * kernel);
            let weight = store.push(
                format!("{prefix}.weight"),
                EntryKind::Param,
                uniform(&[out_ch, in_ch, kernel, kernel], bound, rng),
            );
            let bias = bias.then(|| store.push(format!("{prefix}.bias"), EntryKind::Param, Tensor::zeros(&[out_ch])));
            Layer::Conv(Conv2d {
                weight,
                bias,
                stride,
                pad,
            })
        }
        LayerSpec::ConvTranspose {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            bias,
        } => {
            let bound = kaiming_bound(out_ch * kernel * kernel);
            let weight = store.push(
                format!("{prefix}.weight"),
                EntryKind::Param,
                uniform(&[in_ch, out_ch, kernel, kernel], bound, rng),
            );
            let bias = bias.then(|| store.push(format!("{prefix}.bias"), EntryKind::Param, Tensor::zeros(&[out_ch])));
            Layer::ConvTranspose(ConvTranspose2d {
                weight,
                bias,
                stride,
                pad,
            })
        }
        LayerSpec::Dense { inputs, outputs } => {
            let bound = kaiming_bound(inputs);
            let weight = store.push(
                format!("{prefix}.weight"),
                EntryKind::Param,
                uniform(&[inputs, outputs], bound, rng),
            );
            let bias = store.push(format!("{prefix}.bias"), EntryKind::Param, Tensor::zeros(&[outputs]));
            Layer::Dense(Dense { weight, bias })
        }
        LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm {
            gamma: store.push(format!("{prefix}.gamma"), EntryKind::Param, Tensor::full(&[channels], T::one())),
            beta: store.push(format!("{prefix}.beta"), EntryKind::Param, Tensor::zeros(&[channels])),
            running_mean: store.push(format!("{prefix}.running_mean"), EntryKind::Buffer, Tensor::zeros(&[channels])),
            running_var: store.push(
                format!("{prefix}.running_var"),
                EntryKind::Buffer,
                Tensor::full(&[channels], T::one()),
            ),
        }),
        LayerSpec::Activation(a) => Layer::Activation(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSplitter;

    #[test]
    fn kaiming_bound_respects_fan_in() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SeedSplitter::new(1).stream(0);
        let spec = LayerSpec::Conv {
            in_ch: 4,
            out_ch: 8,
            kernel: 3,
            stride: 1,
            pad: 1,
            bias: true,
        };
        build_layer(&mut store, "c", spec, &mut rng);
        let bound = kaiming_bound(36);
        let w = store.by_name("c.weight").unwrap();
        assert_eq!(w.shape(), &[8, 4, 3, 3]);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound * 0.5));
        assert!(store.by_name("c.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut store = ParamStore::<f32>::new();
            let mut rng = SeedSplitter::new(9).substream(1, 0);
            build_layer(&mut store, "d", LayerSpec::Dense { inputs: 10, outputs: 3 }, &mut rng);
            store
        };
        assert_eq!(build().checksum(), build().checksum());
    }

    #[test]
    fn layer_spec_validates_extents() {
        let spec = LayerSpec::Conv {
            in_ch: 1,
            out_ch: 1,
            kernel: 4,
            stride: 2,
            pad: 1,
            bias: false,
        };
        assert_eq!(spec.out_extent(64, 32).unwrap(), (32, 16));
        assert!(spec.out_extent(65, 32).is_err());
        let t = LayerSpec::ConvTranspose {
            in_ch: 1,
            out_ch: 1,
            kernel: 4,
            stride: 2,
            pad: 1,
            bias: false,
        };
        assert_eq!(t.out_extent(8, 8).unwrap(), (16, 16));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SeedSplitter::new(1).stream(0);
        let Layer::BatchNorm(bn) = build_layer(&mut store, "bn", LayerSpec::BatchNorm { channels: 1 }, &mut rng) else {
            unreachable!()
        };
        let tape = Tape::new();
        let updates = {
            let mut ctx = Ctx::new(&tape, &store, true, Mode::Train);
            let x = tape.constant(Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
            bn.forward(&mut ctx, x).unwrap();
            ctx.into_bn_updates()
        };
        updates.commit(&mut store);
        // batch mean 2.5, unbiased variance 5/3
        assert!((store.get(bn.running_mean).data()[0] - 0.25).abs() < 1e-12);
        assert!((store.get(bn.running_var).data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
