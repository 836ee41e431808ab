//! Classical embedders: k-bit LSB substitution and block-DCT QIM.

mod dct;
mod lsb;

pub use dct::{
    dct8_forward, dct8_inverse, dct_capacity, dct_decode_bits, dct_embed, dct_extract, qim_decode, qim_embed, zigzag,
    Block, DctParams, BLOCK, MIN_DELTA,
};
pub use lsb::{lsb_capacity, lsb_embed, lsb_extract, LsbParams};
