use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use stegan_tensor::{Real, Tensor};

use crate::error::{Result, StegoError};

/// 8-bit raster, row-major with interleaved channels (sRGB assumed).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(StegoError::UnsupportedFormat(format!("{channels} channels (expected 1 or 3)")));
        }
        if pixels.len() != width * height * channels {
            return Err(StegoError::DimensionMismatch(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// BT.601 luma for RGB, identity for grayscale.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match channels {
            1 => Ok(self.to_gray()),
            3 => Ok(self.to_rgb()),
            c => Err(StegoError::UnsupportedFormat(format!("{c} channels"))),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(StegoError::DimensionMismatch(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            pixels.extend_from_slice(&self.pixels[start..start + width * c]);
        }
        Image::new(width, height, c, pixels)
    }

    /// Offset of a centered `width x height` window.
    pub fn center_offset(&self, width: usize, height: usize) -> (usize, usize) {
        (
            self.width.saturating_sub(width) / 2,
            self.height.saturating_sub(height) / 2,
        )
    }

    /// Writes `patch` into this image at `(x0, y0)`.
    pub fn paste(&mut self, patch: &Image, x0: usize, y0: usize) -> Result<()> {
        if patch.channels != self.channels || x0 + patch.width > self.width || y0 + patch.height > self.height {
            return Err(StegoError::DimensionMismatch(format!(
                "cannot paste {}x{}x{} at +{x0}+{y0} into {}x{}x{}",
                patch.width, patch.height, patch.channels, self.width, self.height, self.channels
            )));
        }
        let c = self.channels;
        for y in 0..patch.height {
            let dst = ((y0 + y) * self.width + x0) * c;
            let src = y * patch.width * c;
            self.pixels[dst..dst + patch.width * c].copy_from_slice(&patch.pixels[src..src + patch.width * c]);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// PNG

/// Decodes an 8-bit, non-interlaced grayscale or RGB PNG.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    read_png(Cursor::new(bytes))
}

fn read_png<R: Read>(r: R) -> Result<Image> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| StegoError::Decode(e.to_string()))?;
    let info = reader.info();
    if info.interlaced {
        return Err(StegoError::UnsupportedFormat("interlaced PNG".into()));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(StegoError::UnsupportedFormat(format!(
            "bit depth {} (only 8-bit is supported)",
            info.bit_depth as u8
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(StegoError::UnsupportedFormat(format!(
                "color type {other:?} (only grayscale and RGB are supported)"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| StegoError::Decode(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Image::new(width, height, channels, buf)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_png(&mut out, image)?;
    Ok(out)
}

fn write_png<W: Write>(w: W, image: &Image) -> Result<()> {
    let mut enc = png::Encoder::new(w, image.width as u32, image.height as u32);
    enc.set_color(if image.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let err = |e: png::EncodingError| StegoError::Decode(e.to_string());
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(&image.pixels).map_err(err)?;
    writer.finish().map_err(err)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StegoError::io(path, e))?;
    read_png(std::io::BufReader::new(file))
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StegoError::io(path, e))?;
    write_png(BufWriter::new(file), image)
}

// ---------------------------------------------------------------------------
// Normalization

/// Maps pixels to `[-1, 1]` via `v = p / 127.5 - 1`; returns `[C, H, W]`.
pub fn normalize<T: Real>(image: &Image) -> Tensor<T> {
    let (w, h, c) = image.dims();
    let mut data = vec![T::zero(); w * h * c];
    for (i, &p) in image.pixels.iter().enumerate() {
        let ch = i % c;
        let pix = i / c;
        data[ch * w * h + pix] = T::from_f64_lossy(p as f64 / 127.5 - 1.0);
    }
    Tensor::new(&[c, h, w], data).expect("extent arithmetic")
}

/// Inverse of [`normalize`]: clamps to `[-1, 1]`, rescales, and rounds half
/// away from zero.
pub fn denormalize<T: Real>(tensor: &Tensor<T>) -> Result<Image> {
    let shape = tensor.shape();
    let (c, h, w) = match *shape {
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        _ => {
            return Err(StegoError::DimensionMismatch(format!(
                "expected [C, H, W] tensor, got {shape:?}"
            )))
        }
    };
    let mut pixels = vec![0u8; c * h * w];
    for ch in 0..c {
        for pix in 0..h * w {
            let v = tensor.data()[ch * h * w + pix].to_f64().unwrap_or(0.0);
            let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
            pixels[pix * c + ch] = ((v + 1.0) * 127.5).round() as u8;
        }
    }
    Image::new(w, h, c, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let img = Image::new(3, 1, 1, vec![0, 255, 128]).unwrap();
        let t = normalize::<f64>(&img);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((t.data()[2] - 0.00392156862745098).abs() < 1e-15);
    }

    #[test]
    fn normalize_round_trips_every_byte() {
        let img = Image::new(256, 1, 1, (0..=255).collect()).unwrap();
        assert_eq!(denormalize(&normalize::<f64>(&img)).unwrap(), img);
        assert_eq!(denormalize(&normalize::<f32>(&img)).unwrap(), img);
        let rgb = Image::from_fn(16, 16, 3, |x, y, c| ((x * 16 + y) as u8).wrapping_mul(c as u8 + 1)).unwrap();
        assert_eq!(denormalize(&normalize::<f32>(&rgb)).unwrap(), rgb);
    }

    #[test]
    fn normalize_is_planar() {
        let img = Image::new(2, 1, 3, vec![0, 255, 0, 255, 0, 255]).unwrap();
        let t = normalize::<f64>(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, 1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn denormalize_clamps() {
        let t = Tensor::<f64>::from_f64(&[1, 1, 2], &[-3.0, 7.0]).unwrap();
        assert_eq!(denormalize(&t).unwrap().pixels(), &[0, 255]);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 50 + y * 7 + c) as u8).unwrap();
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
        let gray = Image::from_fn(4, 4, 1, |x, y, _| (x * 60 + y) as u8).unwrap();
        assert_eq!(decode_png(&encode_png(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0x12, 0x34]).unwrap();
        }
        match decode_png(&out) {
            Err(StegoError::UnsupportedFormat(msg)) => assert!(msg.contains("bit depth 16"), "{msg}"),
            other => panic!("expected UnsupportedFormat, got {other:?}"),
        }
    }

    #[test]
    fn rgba_png_is_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3, 4]).unwrap();
        }
        assert!(matches!(decode_png(&out), Err(StegoError::UnsupportedFormat(_))));
    }

    #[test]
    fn crop_and_paste() {
        let img = Image::from_fn(6, 4, 1, |x, y, _| (y * 6 + x) as u8).unwrap();
        let c = img.crop(2, 1, 3, 2).unwrap();
        assert_eq!(c.pixels(), &[8, 9, 10, 14, 15, 16]);
        let mut blank = Image::filled(6, 4, 1, 0).unwrap();
        blank.paste(&c, 2, 1).unwrap();
        assert_eq!(blank.crop(2, 1, 3, 2).unwrap(), c);
        assert_eq!(img.center_offset(4, 2), (1, 1));
    }
}
