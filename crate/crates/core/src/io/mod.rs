//! Image emission and checkpoint persistence.

mod checkpoint;
mod image;

pub use checkpoint::{peek_dtype, Checkpoint, NamedTensor, OptimizerMeta, MAGIC, VERSION};
pub use image::{quantize, read_pgm, resize_nearest, write_attention_montage, write_pgm, write_ppm};
