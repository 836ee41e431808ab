//! Generator (U-Net), discriminator and extractor networks.

use rand_chacha::ChaCha8Rng;
use stegan_tensor::nn::{build_layer, Activation, Ctx, Layer, LayerSpec, ParamStore};
use stegan_tensor::{Real, SeedSplitter, Tensor, Var};

use crate::error::{Result, StegoError};

/// Number of stride-2 stages in the generator; extents must divide `2^DEPTH`.
pub const UNET_DEPTH: usize = 3;
/// Stride-2 stages in the discriminator.
pub const DISC_BLOCKS: usize = 4;
/// Convolutions in the extractor.
pub const EXTRACTOR_LAYERS: usize = 5;

/// Widths and channel counts shared by the three networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GanArch {
    /// Cover channels (1 or 3).
    pub channels: usize,
    /// Secret planes, i.e. bits per pixel.
    pub planes: usize,
    pub gen_width: usize,
    pub disc_width: usize,
    pub ext_width: usize,
}

impl Default for GanArch {
    fn default() -> Self {
        GanArch {
            channels: 3,
            planes: 1,
            gen_width: 32,
            disc_width: 32,
            ext_width: 32,
        }
    }
}

impl GanArch {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.channels, 1 | 3) {
            return Err(StegoError::InvalidParams(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.planes == 0 || self.gen_width == 0 || self.disc_width == 0 || self.ext_width == 0 {
            return Err(StegoError::InvalidParams("network widths and planes must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_extent(h: usize, w: usize, multiple: usize) -> Result<()> {
    for extent in [h, w] {
        if extent == 0 || extent % multiple != 0 {
            return Err(StegoError::Extent { extent, multiple });
        }
    }
    Ok(())
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel,
        stride,
        pad,
        bias: true,
    }
}

fn shape4(v: &Var<'_, impl Real>) -> Result<[usize; 4]> {
    match *v.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(StegoError::DimensionMismatch(format!("expected [N, C, H, W], got {s:?}"))),
    }
}

/// Conv (or transposed conv) followed by batch norm and an activation.
#[derive(Clone, Copy, Debug)]
struct Block {
    conv: Layer,
    bn: Option<Layer>,
    act: Activation,
}

impl Block {
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: LayerSpec,
        out_ch: usize,
        bn: bool,
        act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv = build_layer(store, &format!("{prefix}.conv"), spec, rng);
        let bn = bn.then(|| build_layer(store, &format!("{prefix}.bn"), LayerSpec::BatchNorm { channels: out_ch }, rng));
        Block { conv, bn, act }
    }

    fn forward<'t, T: Real>(&self, ctx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut y = self.conv.forward(ctx, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, y)?;
        }
        Ok(self.act.apply(y))
    }
}

/// U-Net generator. The secret planes are concatenated to the cover as extra
/// input channels. The output head sees the decoder features, the first
/// encoder features, the cover in pre-activation (`atanh`) space and the
/// secret, and ends in `tanh`.
#[derive(Clone, Debug)]
pub struct Generator<T: Real> {
    pub store: ParamStore<T>,
    arch: GanArch,
    stem: Block,
    down: Vec<Block>,
    up: Vec<Block>,
    head: Layer,
}

/// Cover values are clamped to this magnitude before `atanh`.
const ATANH_LIMIT: f64 = 0.999;

impl<T: Real> Generator<T> {
    /// Kaiming-initialized generator. The head's cover channels start as an
    /// identity map (centre tap 1) and its remaining weights are scaled by
    /// 0.1, so an untrained generator returns a lightly perturbed cover.
    pub fn new(arch: GanArch, seed: &SeedSplitter) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed.substream(1, 0);
        let mut store = ParamStore::new();
        let (c, p, b) = (arch.channels, arch.planes, arch.gen_width);
        let stem = Block::build(&mut store, "stem", conv(c + p, b, 3, 1, 1), b, false, Activation::LeakyRelu, &mut rng);
        let mut down = Vec::new();
        let mut width = b;
        for i in 0..UNET_DEPTH {
            let out = width * 2;
            down.push(Block::build(
                &mut store,
                &format!("down{i}"),
                conv(width, out, 4, 2, 1),
                out,
                true,
                Activation::LeakyRelu,
                &mut rng,
            ));
            width = out;
        }
        let mut up = Vec::new();
        for i in (0..UNET_DEPTH).rev() {
            // Input: the bottleneck, or the previous up-block concatenated with its skip.
            let in_ch = if i + 1 == UNET_DEPTH { width } else { 2 * (b << (i + 1)) };
            let out = b << i;
            up.push(Block::build(
                &mut store,
                &format!("up{i}"),
                LayerSpec::ConvTranspose {
                    in_ch,
                    out_ch: out,
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                    bias: true,
                },
                out,
                true,
                Activation::Relu,
                &mut rng,
            ));
        }
        let head_in = 2 * b + c + p;
        let head = build_layer(&mut store, "head", conv(head_in, c, 3, 1, 1), &mut rng);
        if let Layer::Conv(h) = head {
            let w = store.get_mut(h.weight);
            let tenth = T::from_f64_lossy(0.1);
            w.data_mut().iter_mut().for_each(|v| *v = *v * tenth);
            for ch in 0..c {
                let idx = ((ch * head_in + 2 * b + ch) * 3 + 1) * 3 + 1;
                w.data_mut()[idx] = T::one();
            }
        }
        Ok(Generator {
            store,
            arch,
            stem,
            down,
            up,
            head,
        })
    }

    pub fn arch(&self) -> GanArch {
        self.arch
    }

    /// `cover` is `[N, C, H, W]` in `[-1, 1]`, `secret` is `[N, planes, H, W]` in `{-1, +1}`.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'_, 't, T>, cover: Var<'t, T>, secret: Var<'t, T>) -> Result<Var<'t, T>> {
        let [n, c, h, w] = shape4(&cover)?;
        let [sn, sp, sh, sw] = shape4(&secret)?;
        if c != self.arch.channels || (sn, sp, sh, sw) != (n, self.arch.planes, h, w) {
            return Err(StegoError::DimensionMismatch(format!(
                "generator expects cover [N, {}, H, W] and secret [N, {}, H, W], got {:?} and {:?}",
                self.arch.channels,
                self.arch.planes,
                cover.shape(),
                secret.shape()
            )));
        }
        check_extent(h, w, 1 << UNET_DEPTH)?;
        let limit = ATANH_LIMIT;
        let pre = cover.with_value(|t| {
            t.map(|v| {
                let x = v.to_f64().unwrap_or(0.0).clamp(-limit, limit);
                T::from_f64_lossy(x.atanh())
            })
        });
        let pre = ctx.tape.constant(pre);

        let x = Var::concat_channels(&[cover, secret])?;
        let stem = self.stem.forward(ctx, x)?;
        let mut skips = vec![stem];
        let mut y = stem;
        for blk in &self.down {
            y = blk.forward(ctx, y)?;
            skips.push(y);
        }
        skips.pop();
        for blk in &self.up {
            y = blk.forward(ctx, y)?;
            let skip = skips.pop().expect("one skip per level");
            y = Var::concat_channels(&[y, skip])?;
        }
        let y = Var::concat_channels(&[y, pre, secret])?;
        Ok(self.head.forward(ctx, y)?.tanh())
    }
}

/// Strided conv classifier ending in a dense layer and a sigmoid; the output
/// is `P(cover)` per image, shape `[N, 1]`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    pub store: ParamStore<T>,
    channels: usize,
    extent: (usize, usize),
    blocks: Vec<Block>,
    dense: Layer,
}

impl<T: Real> Discriminator<T> {
    /// Built for `height x width` inputs (both divisible by 16).
    pub fn new(channels: usize, width_base: usize, height: usize, width: usize, seed: &SeedSplitter, stream: u32) -> Result<Self> {
        check_extent(height, width, 1 << DISC_BLOCKS)?;
        let mut rng = seed.substream(2, stream);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut in_ch = channels;
        for i in 0..DISC_BLOCKS {
            let out = width_base << i;
            blocks.push(Block::build(
                &mut store,
                &format!("block{i}"),
                conv(in_ch, out, 4, 2, 1),
                out,
                true,
                Activation::LeakyRelu,
                &mut rng,
            ));
            in_ch = out;
        }
        let feats = in_ch * (height >> DISC_BLOCKS) * (width >> DISC_BLOCKS);
        let dense = build_layer(&mut store, "dense", LayerSpec::Dense { inputs: feats, outputs: 1 }, &mut rng);
        Ok(Discriminator {
            store,
            channels,
            extent: (height, width),
            blocks,
            dense,
        })
    }

    pub fn extent(&self) -> (usize, usize) {
        self.extent
    }

    /// Pre-sigmoid scores, `[N, 1]`.
    pub fn logits<'t>(&self, ctx: &mut Ctx<'_, 't, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let [_, c, h, w] = shape4(&image)?;
        if c != self.channels || (h, w) != self.extent {
            return Err(StegoError::DimensionMismatch(format!(
                "discriminator built for [N, {}, {}, {}], got {:?}",
                self.channels,
                self.extent.0,
                self.extent.1,
                image.shape()
            )));
        }
        let mut y = image;
        for blk in &self.blocks {
            y = blk.forward(ctx, y)?;
        }
        Ok(self.dense.forward(ctx, y)?)
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'_, 't, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.logits(ctx, image)?.sigmoid())
    }
}

/// Five same-extent convolutions from the stego image to secret-plane logits.
#[derive(Clone, Debug)]
pub struct Extractor<T: Real> {
    pub store: ParamStore<T>,
    arch: GanArch,
    blocks: Vec<Block>,
}

impl<T: Real> Extractor<T> {
    pub fn new(arch: GanArch, seed: &SeedSplitter) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed.substream(3, 0);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut in_ch = arch.channels;
        for i in 0..EXTRACTOR_LAYERS {
            let last = i + 1 == EXTRACTOR_LAYERS;
            let out = if last { arch.planes } else { arch.ext_width };
            let act = if last { Activation::Identity } else { Activation::LeakyRelu };
            blocks.push(Block::build(&mut store, &format!("conv{i}"), conv(in_ch, out, 3, 1, 1), out, !last, act, &mut rng));
            in_ch = out;
        }
        Ok(Extractor { store, arch, blocks })
    }

    /// Logits `[N, planes, H, W]`; a bit decodes to 1 iff its logit is positive.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'_, 't, T>, stego: Var<'t, T>) -> Result<Var<'t, T>> {
        let [_, c, _, _] = shape4(&stego)?;
        if c != self.arch.channels {
            return Err(StegoError::DimensionMismatch(format!(
                "extractor expects {} channels, got {:?}",
                self.arch.channels,
                stego.shape()
            )));
        }
        let mut y = stego;
        for blk in &self.blocks {
            y = blk.forward(ctx, y)?;
        }
        Ok(y)
    }
}

/// Sets every entry of `store` whose name ends in `.weight` or `.bias` to zero.
pub fn zero_weights<T: Real>(store: &mut ParamStore<T>) {
    store.map_values(|name, t| {
        if name.ends_with(".weight") || name.ends_with(".bias") {
            *t = Tensor::zeros(t.shape());
        }
    });
}
