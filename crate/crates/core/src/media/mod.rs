//! Images, PNG I/O, pixel normalization and the secret-payload codec.

mod image;
mod payload;

pub use image::{decode_png, denormalize, encode_png, load_image, normalize, save_image, Image};
pub use payload::{
    bit_error_rate, bits_to_bytes, bits_to_image, bits_to_plane, bytes_to_bits, frame, framed_capacity, plane_to_bits,
    unframe, BitPayload, PayloadMode, SecretPlane, HEADER_BITS,
};
