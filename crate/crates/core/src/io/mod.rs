//! File formats and synthetic data.
//!
//! * PFM (`Pf` one channel, `PF` three channels): 32-bit floats, rows stored
//!   bottom-up, the sign of the scale line gives the byte order (negative
//!   means little-endian). Values widen to `f64` on read.
//! * PGM: binary `P5`, 8- or 16-bit samples scaled to `[0, 1]`.
//! * Sparse samples: CSV with header `row,col,value`, LF line endings.

pub mod pfm;
pub mod pgm;
pub mod samples;
pub mod synth;

pub use pfm::{
    read_affinity, read_pfm, read_volume_pfm, write_affinity, write_pfm, write_volume_pfm,
};
pub use pgm::{read_pgm, write_pgm};
pub use samples::{read_samples_csv, sample_sparse, write_samples_csv, SparseSample, SparseSamples};
pub use synth::{box_blur, coarse_estimate, make_scene, COARSE_RADIUS, nearest_fill, SyntheticScene};
