//! k-bit least-significant-bit substitution.
//!
//! Carrier bytes are visited in buffer order (row-major, R -> G -> B). Each
//! carrier takes `k` framed payload bits, the first bit of the group landing
//! in bit position `k - 1`. Carriers past the end of the framed payload are
//! left untouched.

use crate::error::{Result, StegoError};
use crate::media::{frame, unframe, Image, HEADER_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LsbParams {
    k: u8,
}

impl LsbParams {
    pub fn new(k: u8) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(StegoError::InvalidParams(format!("LSB k must be in 1..=4, got {k}")));
        }
        Ok(LsbParams { k })
    }

    pub fn k(&self) -> u8 {
        self.k
    }
}

/// Raw carrier capacity in bits (header included).
pub fn lsb_capacity(image: &Image, params: LsbParams) -> usize {
    image.pixels().len() * params.k as usize
}

pub fn lsb_embed(cover: &Image, payload: &[u8], params: LsbParams) -> Result<Image> {
    let framed = frame(payload);
    let available = lsb_capacity(cover, params);
    if framed.len() > available {
        return Err(StegoError::CapacityExceeded {
            needed: framed.len(),
            available,
        });
    }
    let k = params.k as usize;
    let mut stego = cover.clone();
    for (byte, group) in stego.pixels_mut().iter_mut().zip(framed.chunks(k)) {
        for (j, &bit) in group.iter().enumerate() {
            let pos = k - 1 - j;
            *byte = (*byte & !(1 << pos)) | ((bit & 1) << pos);
        }
    }
    Ok(stego)
}

fn low_bits(stego: &Image, k: usize, carriers: usize) -> impl Iterator<Item = u8> + '_ {
    stego.pixels()[..carriers]
        .iter()
        .flat_map(move |&b| (0..k).rev().map(move |pos| (b >> pos) & 1))
}

pub fn lsb_extract(stego: &Image, params: LsbParams) -> Result<Vec<u8>> {
    let k = params.k as usize;
    let capacity = lsb_capacity(stego, params);
    if capacity < HEADER_BITS {
        return Err(StegoError::MalformedHeader {
            declared: 0,
            capacity: 0,
        });
    }
    let header_carriers = HEADER_BITS.div_ceil(k);
    let header: Vec<u8> = low_bits(stego, k, header_carriers).take(HEADER_BITS).collect();
    let declared = header.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
    if declared > capacity - HEADER_BITS {
        return Err(StegoError::MalformedHeader {
            declared,
            capacity: capacity - HEADER_BITS,
        });
    }
    let total = HEADER_BITS + declared;
    let stream: Vec<u8> = low_bits(stego, k, total.div_ceil(k)).take(total).collect();
    unframe(&stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cover(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 3, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn bitwise_examples() {
        // Header of an empty payload is 32 zero bits; put the single payload
        // bit right after it in a 1-bit carrier.
        let mut img = Image::filled(33, 1, 1, 0).unwrap();
        img.pixels_mut()[32] = 8;
        let s = lsb_embed(&img, &[], LsbParams::new(1).unwrap()).unwrap();
        assert_eq!(s.pixels()[32], 8);

        let mut img = Image::filled(34, 1, 1, 0).unwrap();
        img.pixels_mut()[32] = 8;
        img.pixels_mut()[33] = 8;
        let s = lsb_embed(&img, &[1], LsbParams::new(1).unwrap()).unwrap();
        // header "...0001", then the payload bit lands in byte 32: 0b1000 -> 0b1001
        assert_eq!(s.pixels()[31], 1);
        assert_eq!(s.pixels()[32], 9);
        assert_eq!(s.pixels()[33], 8, "untouched past payload");

        let img = Image::filled(9, 1, 1, 255).unwrap();
        let s = lsb_embed(&img, &[0, 0, 0, 0], LsbParams::new(4).unwrap()).unwrap();
        assert_eq!(s.pixels()[8], 240);
        let mut img8 = Image::filled(9, 1, 1, 0).unwrap();
        img8.pixels_mut()[8] = 0b0000_1000;
        let s = lsb_embed(&img8, &[1, 0, 0, 1], LsbParams::new(4).unwrap()).unwrap();
        assert_eq!(s.pixels()[8], 0b0000_1001);
    }

    #[test]
    fn round_trip_and_fixed_point() {
        let c = cover(16, 16, 1);
        for k in 1..=4 {
            let p = LsbParams::new(k).unwrap();
            let bits: Vec<u8> = (0..300).map(|i| ((i * 7) % 3 == 0) as u8).collect();
            let s = lsb_embed(&c, &bits, p).unwrap();
            assert_eq!(lsb_extract(&s, p).unwrap(), bits);
            assert_eq!(lsb_embed(&s, &bits, p).unwrap(), s);
        }
    }

    #[test]
    fn only_low_bits_change() {
        let c = cover(32, 32, 2);
        for k in 1..=4u8 {
            let p = LsbParams::new(k).unwrap();
            let n = lsb_capacity(&c, p) - HEADER_BITS;
            let bits: Vec<u8> = (0..n).map(|i| (i % 5 < 2) as u8).collect();
            let s = lsb_embed(&c, &bits, p).unwrap();
            let mask = !((1u8 << k) - 1);
            assert!(c.pixels().iter().zip(s.pixels()).all(|(a, b)| a & mask == b & mask));
        }
    }

    #[test]
    fn capacity_and_header_errors() {
        let c = cover(4, 4, 3);
        let p = LsbParams::new(1).unwrap();
        match lsb_embed(&c, &vec![1; 17], p) {
            Err(StegoError::CapacityExceeded { needed, available }) => assert_eq!((needed, available), (49, 48)),
            other => panic!("{other:?}"),
        }
        let zeros = Image::filled(64, 64, 1, 0).unwrap();
        assert!(lsb_extract(&zeros, LsbParams::new(2).unwrap()).unwrap().is_empty());

        let mut forged = Image::filled(64, 64, 1, 0).unwrap();
        let declared: u32 = 1_000_000_000;
        for i in 0..32 {
            forged.pixels_mut()[i] = ((declared >> (31 - i)) & 1) as u8;
        }
        assert!(matches!(
            lsb_extract(&forged, p),
            Err(StegoError::MalformedHeader { declared: 1_000_000_000, .. })
        ));
        assert!(LsbParams::new(0).is_err());
        assert!(LsbParams::new(5).is_err());
    }
}
