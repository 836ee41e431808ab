//! Secret payloads, their framing, and the plane codec that feeds them to the
//! generator.
//!
//! Bits are stored one per `u8` (0 or 1). A framed payload is a 32-bit
//! big-endian length prefix followed by the payload bits; carriers zero-pad
//! the remainder of their capacity.

use rand::Rng;
use stegan_tensor::{Real, Tensor};

use crate::error::{Result, StegoError};
use crate::media::Image;

/// Width of the length prefix in bits.
pub const HEADER_BITS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadMode {
    Bitstream,
    Image,
}

/// The secret data: a bit sequence, or the serialization of a secret image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPayload {
    bits: Vec<u8>,
    mode: PayloadMode,
    source: Option<Image>,
    bpp: usize,
}

impl BitPayload {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(StegoError::InvalidParams(format!("bit value {b} is not 0 or 1")));
        }
        Ok(BitPayload {
            bits,
            mode: PayloadMode::Bitstream,
            source: None,
            bpp: 1,
        })
    }

    /// Bytes serialized MSB-first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        BitPayload {
            bits: bytes_to_bits(bytes),
            mode: PayloadMode::Bitstream,
            source: None,
            bpp: 1,
        }
    }

    /// Row-major, MSB-first serialization of every pixel byte of `image`.
    pub fn from_image(image: &Image) -> Self {
        BitPayload {
            bits: bytes_to_bits(image.pixels()),
            mode: PayloadMode::Image,
            source: Some(image.clone()),
            bpp: 1,
        }
    }

    /// `len` uniform random bits.
    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        BitPayload {
            bits: (0..len).map(|_| rng.gen_range(0..=1u8)).collect(),
            mode: PayloadMode::Bitstream,
            source: None,
            bpp: 1,
        }
    }

    pub fn with_bpp(mut self, bpp: usize) -> Self {
        self.bpp = bpp;
        self
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn mode(&self) -> PayloadMode {
        self.mode
    }

    pub fn source(&self) -> Option<&Image> {
        self.source.as_ref()
    }

    pub fn bpp(&self) -> usize {
        self.bpp
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bits_to_bytes(&self.bits)
    }

    /// Framed bitstream (length prefix + payload).
    pub fn framed(&self) -> Vec<u8> {
        frame(&self.bits)
    }
}

/// MSB-first bit expansion.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

/// MSB-first packing; a trailing partial byte is zero-padded.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

/// Rebuilds an image from its MSB-first pixel serialization.
pub fn bits_to_image(bits: &[u8], width: usize, height: usize, channels: usize) -> Result<Image> {
    let need = width * height * channels * 8;
    if bits.len() != need {
        return Err(StegoError::LengthMismatch(bits.len(), need));
    }
    Image::new(width, height, channels, bits_to_bytes(bits))
}

/// Prefixes `bits` with its length as a 32-bit big-endian integer.
pub fn frame(bits: &[u8]) -> Vec<u8> {
    let len = u32::try_from(bits.len()).expect("payload longer than 2^32 bits");
    let mut out = Vec::with_capacity(HEADER_BITS + bits.len());
    out.extend((0..HEADER_BITS).rev().map(|i| ((len >> i) & 1) as u8));
    out.extend_from_slice(bits);
    out
}

/// Reads the length prefix from a carrier's bitstream and returns the payload.
pub fn unframe(stream: &[u8]) -> Result<Vec<u8>> {
    if stream.len() < HEADER_BITS {
        return Err(StegoError::MalformedHeader {
            declared: 0,
            capacity: 0,
        });
    }
    let declared = stream[..HEADER_BITS]
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
    let capacity = stream.len() - HEADER_BITS;
    if declared > capacity {
        return Err(StegoError::MalformedHeader { declared, capacity });
    }
    Ok(stream[HEADER_BITS..HEADER_BITS + declared].to_vec())
}

/// Number of payload bits a carrier of `capacity` raw bits can hold after framing.
pub fn framed_capacity(capacity: usize) -> usize {
    capacity.saturating_sub(HEADER_BITS)
}

/// Secret bits laid out as `[planes, H, W]` with 0 -> -1 and 1 -> +1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretPlane {
    planes: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl SecretPlane {
    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.planes, self.height, self.width]
    }

    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    /// Bits in plane-major, row-major order.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Signed `{-1, +1}` tensor fed to the generator.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&self.shape(), |i| if self.bits[i] == 1 { T::one() } else { -T::one() })
    }

    /// `{0, 1}` targets for the reconstruction loss.
    pub fn targets<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&self.shape(), |i| if self.bits[i] == 1 { T::one() } else { T::zero() })
    }

    /// Decodes extractor logits: bit is 1 iff logit > 0.
    pub fn from_logits<T: Real>(logits: &Tensor<T>) -> Result<Self> {
        let (planes, height, width) = match *logits.shape() {
            [p, h, w] | [1, p, h, w] => (p, h, w),
            ref s => {
                return Err(StegoError::DimensionMismatch(format!(
                    "expected [planes, H, W] logits, got {s:?}"
                )))
            }
        };
        Ok(SecretPlane {
            planes,
            height,
            width,
            bits: logits.data().iter().map(|&v| u8::from(v > T::zero())).collect(),
        })
    }

    /// Interprets a `{-1, +1}`-valued tensor (sign decides the bit).
    pub fn from_signed<T: Real>(tensor: &Tensor<T>) -> Result<Self> {
        Self::from_logits(tensor)
    }
}

/// Packs `bits` (zero-padded to capacity) into `[bpp, h, w]` planes.
pub fn bits_to_plane(bits: &[u8], height: usize, width: usize, bpp: usize) -> Result<SecretPlane> {
    let capacity = height * width * bpp;
    if bits.len() > capacity {
        return Err(StegoError::CapacityExceeded {
            needed: bits.len(),
            available: capacity,
        });
    }
    let mut padded = bits.to_vec();
    padded.resize(capacity, 0);
    Ok(SecretPlane {
        planes: bpp,
        height,
        width,
        bits: padded,
    })
}

/// First `n_bits` bits of `plane`.
pub fn plane_to_bits(plane: &SecretPlane, n_bits: usize) -> Result<Vec<u8>> {
    if n_bits > plane.capacity() {
        return Err(StegoError::CapacityExceeded {
            needed: n_bits,
            available: plane.capacity(),
        });
    }
    Ok(plane.bits[..n_bits].to_vec())
}

/// Fraction of mismatched positions.
pub fn bit_error_rate(sent: &[u8], received: &[u8]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(StegoError::LengthMismatch(sent.len(), received.len()));
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn plane_packing_example() {
        let plane = bits_to_plane(&[1, 0, 1, 0], 2, 2, 1).unwrap();
        assert_eq!(plane.to_tensor::<f64>().data(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(plane.shape(), [1, 2, 2]);
    }

    #[test]
    fn plane_capacity_error() {
        match bits_to_plane(&[1, 0, 1, 0, 1], 2, 2, 1) {
            Err(StegoError::CapacityExceeded { needed, available }) => assert_eq!((needed, available), (5, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plane_major_ordering() {
        // Second plane starts after H*W bits.
        let plane = bits_to_plane(&[0, 0, 0, 0, 1], 2, 2, 2).unwrap();
        let t = plane.to_tensor::<f32>();
        assert_eq!(t.shape(), &[2, 2, 2]);
        assert_eq!(t.data()[4], 1.0);
        assert_eq!(t.data()[5], -1.0);
    }

    #[test]
    fn logits_rule_and_round_trip() {
        let bits = vec![1, 1, 0, 1, 0, 0];
        let plane = bits_to_plane(&bits, 2, 3, 1).unwrap();
        let back = SecretPlane::from_signed(&plane.to_tensor::<f64>()).unwrap();
        assert_eq!(plane_to_bits(&back, 6).unwrap(), bits);
        let zero = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert_eq!(SecretPlane::from_logits(&zero).unwrap().bits(), &[0, 0, 0, 0]);
    }

    #[test]
    fn framing_round_trip_and_header_layout() {
        let f = frame(&[1, 0, 1]);
        assert_eq!(f.len(), 35);
        assert_eq!(&f[..32].iter().filter(|&&b| b == 1).count(), &2);
        assert_eq!(&f[30..32], &[1, 1]);
        let mut carrier = f.clone();
        carrier.resize(100, 0);
        assert_eq!(unframe(&carrier).unwrap(), vec![1, 0, 1]);
    }

    #[test]
    fn malformed_header_is_reported() {
        let mut stream = frame(&[]);
        stream[0] = 1; // 2^31 bits
        stream.resize(64, 0);
        assert!(matches!(
            unframe(&stream),
            Err(StegoError::MalformedHeader { declared: 2147483648, capacity: 32 })
        ));
    }

    #[test]
    fn byte_serialization_is_msb_first() {
        assert_eq!(bytes_to_bits(&[0b1000_0001]), vec![1, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(bits_to_bytes(&[1, 0, 1]), vec![0b1010_0000]);
        let p = BitPayload::from_bytes(b"hi");
        assert_eq!(p.to_bytes(), b"hi");
    }

    #[test]
    fn image_payload_serializes_pixels() {
        let img = Image::new(2, 1, 1, vec![255, 1]).unwrap();
        let p = BitPayload::from_image(&img);
        assert_eq!(p.mode(), PayloadMode::Image);
        assert_eq!(p.bits()[..8], [1; 8]);
        assert_eq!(p.bits()[8..], [0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(bits_to_image(p.bits(), 2, 1, 1).unwrap(), img);
    }

    #[test]
    fn ber_examples() {
        let a = [0, 1, 1, 0, 1, 0, 0, 1];
        assert_eq!(bit_error_rate(&a, &a).unwrap(), 0.0);
        let mut b = a;
        b[3] ^= 1;
        assert_eq!(bit_error_rate(&a, &b).unwrap(), 0.125);
        let c: Vec<u8> = a.iter().map(|v| v ^ 1).collect();
        assert_eq!(bit_error_rate(&a, &c).unwrap(), 1.0);
        assert!(matches!(bit_error_rate(&a, &a[..3]), Err(StegoError::LengthMismatch(8, 3))));
    }

    #[test]
    fn random_payload_is_seeded() {
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(BitPayload::random(64, &mut r1), BitPayload::random(64, &mut r2));
    }
}
