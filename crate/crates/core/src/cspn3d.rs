//! Volumetric propagation over `depth × height × width` and the one-step
//! stack fusion that collapses the leading axis.
//!
//! Offsets are `(c, a, b)` with `c` on the leading (disparity or stack) axis;
//! channels stay a separate trailing axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{check_kernel_size, max_abs_row, normalize_taps, NormMode};
use crate::cspn2d::PropagationConfig;
use crate::error::{CspnError, Result};
use crate::grid::{FeatureGrid, FeatureVolume};
use crate::stencil::Stencil;
use crate::workers::Workers;

/// Neighbor offsets of a `k × k × k` cube, row-major over `(c, a, b)`,
/// center excluded.
pub fn kernel_offsets3(kernel_size: usize) -> Vec<[isize; 3]> {
    let r = (kernel_size / 2) as isize;
    let mut out = Vec::with_capacity(kernel_size.pow(3) - 1);
    for c in -r..=r {
        for a in -r..=r {
            for b in -r..=r {
                if c != 0 || a != 0 || b != 0 {
                    out.push([c, a, b]);
                }
            }
        }
    }
    out
}

/// Per-voxel raw kernels with `k³ − 1` neighbor taps and a raw center tap.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityField3 {
    dims: (usize, usize, usize, usize),
    kernel_size: usize,
    neighbors: Vec<f64>,
    center: Vec<f64>,
}

impl AffinityField3 {
    pub fn from_fn(
        depth: usize,
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let taps = kernel_size.pow(3) - 1;
        let mut neighbors = Vec::with_capacity(depth * height * width * channels * taps);
        for l in 0..depth {
            for i in 0..height {
                for j in 0..width {
                    for ch in 0..channels {
                        for t in 0..taps {
                            let v = f(l, i, j, ch, t);
                            if !v.is_finite() {
                                return Err(CspnError::invalid("non-finite raw affinity"));
                            }
                            neighbors.push(v);
                        }
                    }
                }
            }
        }
        Ok(AffinityField3 {
            dims: (depth, height, width, channels),
            kernel_size,
            neighbors,
            center: vec![0.0; depth * height * width * channels],
        })
    }

    pub fn random(
        depth: usize,
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Self::from_fn(depth, height, width, channels, kernel_size, |_, _, _, _, _| {
            rng.gen_range(-1.0..=1.0)
        })?;
        for c in f.center.iter_mut() {
            *c = rng.gen_range(-1.0..=1.0);
        }
        Ok(f)
    }

    pub fn uniform(depth: usize, height: usize, width: usize, channels: usize, kernel_size: usize) -> Result<Self> {
        Self::from_fn(depth, height, width, channels, kernel_size, |_, _, _, _, _| 1.0)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn taps(&self) -> usize {
        self.kernel_size.pow(3) - 1
    }
}

/// Normalized volumetric kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedKernels3 {
    dims: (usize, usize, usize, usize),
    kernel_size: usize,
    mode: NormMode,
    neighbors: Vec<f64>,
    center: Vec<f64>,
}

impl NormalizedKernels3 {
    pub fn identity(
        dims: (usize, usize, usize, usize),
        kernel_size: usize,
        mode: NormMode,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let n = dims.0 * dims.1 * dims.2 * dims.3;
        Ok(NormalizedKernels3 {
            dims,
            kernel_size,
            mode,
            neighbors: vec![0.0; n * (kernel_size.pow(3) - 1)],
            center: vec![1.0; n],
        })
    }

    /// Assembles kernels from normalized weights; lengths are checked.
    pub fn from_parts(
        dims: (usize, usize, usize, usize),
        kernel_size: usize,
        mode: NormMode,
        neighbors: Vec<f64>,
        center: Vec<f64>,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let n = dims.0 * dims.1 * dims.2 * dims.3;
        let taps = kernel_size.pow(3) - 1;
        if neighbors.len() != n * taps || center.len() != n {
            return Err(CspnError::shape((n * taps, n), (neighbors.len(), center.len())));
        }
        Ok(NormalizedKernels3 {
            dims,
            kernel_size,
            mode,
            neighbors,
            center,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn taps(&self) -> usize {
        self.kernel_size.pow(3) - 1
    }

    pub fn neighbor_weights(&self) -> &[f64] {
        &self.neighbors
    }

    pub fn center_weights(&self) -> &[f64] {
        &self.center
    }

    fn check_volume(&self, v: &FeatureVolume) -> Result<()> {
        if v.shape() == self.dims {
            Ok(())
        } else {
            Err(CspnError::shape(self.dims, v.shape()))
        }
    }
}

pub fn normalize3(raw: &AffinityField3, mode: NormMode) -> NormalizedKernels3 {
    let taps = raw.taps();
    let n = raw.center.len();
    let mut neighbors = vec![0.0; n * taps];
    let mut center = vec![0.0; n];
    for p in 0..n {
        center[p] = normalize_taps(
            mode,
            &raw.neighbors[p * taps..(p + 1) * taps],
            raw.center[p],
            &mut neighbors[p * taps..(p + 1) * taps],
        );
    }
    NormalizedKernels3 {
        dims: raw.dims,
        kernel_size: raw.kernel_size,
        mode,
        neighbors,
        center,
    }
}

pub fn stability_margin3(kern: &NormalizedKernels3) -> f64 {
    max_abs_row(&kern.neighbors, kern.taps())
}

fn step3_into(
    v_t: &FeatureVolume,
    v_0: &FeatureVolume,
    kern: &NormalizedKernels3,
    offsets: &[[isize; 3]],
    out: &mut FeatureVolume,
    workers: &Workers,
) {
    let stencil = Stencil {
        dims: kern.dims,
        offsets,
        weights: &kern.neighbors,
        center: &kern.center,
    };
    let src = if kern.mode.center_uses_current() { v_t } else { v_0 };
    stencil.apply(v_t.as_slice(), src.as_slice(), out.as_mut_slice(), workers);
}

/// One volumetric step with zero padding on all three axes.
pub fn step3(v_t: &FeatureVolume, v_0: &FeatureVolume, kern: &NormalizedKernels3) -> Result<FeatureVolume> {
    step3_with_workers(v_t, v_0, kern, &Workers::single())
}

pub fn step3_with_workers(
    v_t: &FeatureVolume,
    v_0: &FeatureVolume,
    kern: &NormalizedKernels3,
    workers: &Workers,
) -> Result<FeatureVolume> {
    kern.check_volume(v_t)?;
    kern.check_volume(v_0)?;
    let mut out = FeatureVolume::zeros(kern.dims.0, kern.dims.1, kern.dims.2, kern.dims.3);
    step3_into(v_t, v_0, kern, &kernel_offsets3(kern.kernel_size), &mut out, workers);
    Ok(out)
}

pub fn run3(v_0: &FeatureVolume, kern: &NormalizedKernels3, cfg: &PropagationConfig) -> Result<FeatureVolume> {
    kern.check_volume(v_0)?;
    let workers = cfg.workers()?;
    let offsets = kernel_offsets3(kern.kernel_size);
    let mut front = v_0.clone();
    let mut back = v_0.clone();
    for _ in 0..cfg.iterations {
        step3_into(&front, v_0, kern, &offsets, &mut back, &workers);
        std::mem::swap(&mut front, &mut back);
    }
    Ok(front)
}

/// Per-pixel positive `s × 3 × 3` weights summing to one, ordered
/// `(layer, a, b)` row-major. One kernel is shared by all channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionKernels {
    layers: usize,
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl FusionKernels {
    pub const TAPS_PER_LAYER: usize = 9;

    /// Normalizes raw weights by `|κ̂| / Σ|κ̂|`; an all-zero kernel becomes
    /// uniform.
    pub fn from_raw(layers: usize, height: usize, width: usize, raw: Vec<f64>) -> Result<Self> {
        let per = layers * Self::TAPS_PER_LAYER;
        if layers == 0 || raw.len() != height * width * per {
            return Err(CspnError::shape(height * width * per, raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(CspnError::invalid("non-finite fusion weight"));
        }
        let mut weights = raw;
        for k in weights.chunks_mut(per) {
            let s: f64 = k.iter().map(|v| v.abs()).sum();
            if s == 0.0 {
                k.fill(1.0 / per as f64);
            } else {
                k.iter_mut().for_each(|v| *v = v.abs() / s);
            }
        }
        Ok(FusionKernels {
            layers,
            height,
            width,
            weights,
        })
    }

    /// Accepts already normalized weights, checking positivity and unit sum.
    pub fn new(layers: usize, height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        let per = layers * Self::TAPS_PER_LAYER;
        if layers == 0 || weights.len() != height * width * per {
            return Err(CspnError::shape(height * width * per, weights.len()));
        }
        for (p, k) in weights.chunks(per).enumerate() {
            let s: f64 = k.iter().sum();
            if k.iter().any(|v| v.is_nan() || *v < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(CspnError::invalid(format!(
                    "fusion kernel at pixel {p} is not positive with unit sum"
                )));
            }
        }
        Ok(FusionKernels {
            layers,
            height,
            width,
            weights,
        })
    }

    pub fn uniform(layers: usize, height: usize, width: usize) -> Self {
        let per = layers * Self::TAPS_PER_LAYER;
        FusionKernels {
            layers,
            height,
            width,
            weights: vec![1.0 / per as f64; height * width * per],
        }
    }

    /// All weight on the center tap of `layer`.
    pub fn select(layers: usize, height: usize, width: usize, layer: usize) -> Self {
        let per = layers * Self::TAPS_PER_LAYER;
        let mut weights = vec![0.0; height * width * per];
        for k in weights.chunks_mut(per) {
            k[layer * Self::TAPS_PER_LAYER + 4] = 1.0;
        }
        FusionKernels {
            layers,
            height,
            width,
            weights,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn kernel(&self, i: usize, j: usize) -> &[f64] {
        let per = self.layers * Self::TAPS_PER_LAYER;
        let base = (i * self.width + j) * per;
        &self.weights[base..base + per]
    }
}

/// One-step 3D propagation with padding `[0, 1, 1]`: the stack axis is
/// consumed entirely, leaving a single `height × width` map.
///
/// `out(i,j) = Σ_l Σ_{a,b∈{-1,0,1}} κ(l,a,b)·stack(l, i-a, j-b)`
pub fn fuse_stack(stack: &FeatureVolume, kern: &FusionKernels) -> Result<FeatureGrid> {
    let (s, h, w, c) = stack.shape();
    if (kern.layers, kern.height, kern.width) != (s, h, w) {
        return Err(CspnError::shape(
            (kern.layers, kern.height, kern.width),
            (s, h, w),
        ));
    }
    Ok(FeatureGrid::from_fn(h, w, c, |i, j, ch| {
        let k = kern.kernel(i, j);
        let mut acc = 0.0;
        for l in 0..s {
            for a in -1isize..=1 {
                for b in -1isize..=1 {
                    let wt = k[l * 9 + ((a + 1) * 3 + (b + 1)) as usize];
                    acc += wt * stack.neighbor_read(l, i, j, [0, a, b], ch);
                }
            }
        }
        acc
    }))
}
