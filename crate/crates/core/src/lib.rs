//! Convolutional spatial propagation.
//!
//! Recurrent anisotropic diffusion over dense grids and volumes with guided
//! or learned per-pixel affinities, a sparse-sample-preserving completion
//! mode, pyramid pooling built from one-step propagation, soft-argmin
//! disparity regression, an explicit diffusion-matrix oracle, reverse-mode
//! gradients, and a scan-line baseline plus benchmark harness.

pub mod affinity;
pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod cspn2d;
pub mod cspn3d;
pub mod disparity;
pub mod error;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod pyramid;
pub mod spn;
mod stencil;
pub mod workers;

pub use affinity::{
    guided_affinity, kernel_offsets, normalize, stability_margin, AffinityField, GuidedParams,
    NormMode, NormalizedKernels,
};
pub use autodiff::{backward, forward_taped, gradcheck, train_toy, LearnConfig, Loss, Tape};
pub use bench::{run_bench, BenchConfig, BenchRecord, Operator};
pub use cspn2d::{complete_depth, run, step, step_with_sparse, PropagationConfig};
pub use cspn3d::{fuse_stack, run3, step3, AffinityField3, FusionKernels, NormalizedKernels3};
pub use disparity::{
    depth_metrics, l1_loss, soft_argmin, stereo_metrics, CostVolume, DepthMetrics, StereoMetrics,
};
pub use error::{CspnError, Result};
pub use grid::{swap_buffers, BinaryMask, DoubleBuffer, FeatureGrid, FeatureVolume};
pub use io::{make_scene, sample_sparse, SparseSample, SparseSamples, SyntheticScene};
pub use oracle::DiffusionSystem;
pub use pyramid::{acspp, build_pyramid_fused, cspp, spp_avg, PyramidMode, PyramidSpec};
pub use spn::{refine, scan, Direction, ScanWeights};
