//! 2D convolutional spatial propagation.
//!
//! One step updates every pixel simultaneously from the previous iterate:
//!
//! ```text
//! H[t+1](i,j) = κ(0,0)·H[0](i,j) + Σ_{(a,b)≠0} κ(a,b)·H[t](i-a, j-b)
//! ```
//!
//! with zero padding. For [`NormMode::MovingCenter`] and
//! [`NormMode::PositiveAll`] the center term reads `H[t]` instead of `H[0]`.
//! The sparse variant overwrites sample pixels with their known values after
//! every step.

use crate::affinity::{NormMode, NormalizedKernels};
use crate::error::{CspnError, Result};
use crate::grid::{DoubleBuffer, FeatureGrid};
use crate::io::SparseSamples;
use crate::stencil::{planar_offsets, Stencil};
use crate::workers::{default_worker_count, Workers};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationConfig {
    pub iterations: usize,
    pub kernel_size: usize,
    /// Applied when kernels are normalized from raw affinities.
    pub mode: NormMode,
    pub worker_count: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            iterations: 24,
            kernel_size: 3,
            mode: NormMode::AbsSumAnchor,
            worker_count: default_worker_count(),
        }
    }
}

impl PropagationConfig {
    pub fn new(iterations: usize, mode: NormMode) -> Self {
        PropagationConfig {
            iterations,
            mode,
            ..Default::default()
        }
    }

    pub fn with_workers(mut self, worker_count: usize) -> Self {
        self.worker_count = worker_count;
        self
    }

    pub fn workers(&self) -> Result<Workers> {
        Workers::new(self.worker_count)
    }
}

/// Reusable operator bound to one kernel field.
pub struct Propagator<'a> {
    kern: &'a NormalizedKernels,
    offsets: Vec<[isize; 3]>,
}

impl<'a> Propagator<'a> {
    pub fn new(kern: &'a NormalizedKernels) -> Self {
        Propagator {
            kern,
            offsets: planar_offsets(kern.kernel_size(), 1),
        }
    }

    /// One step into `out`. Shapes are assumed checked.
    pub fn step_into(&self, h_t: &FeatureGrid, h_0: &FeatureGrid, out: &mut FeatureGrid, workers: &Workers) {
        let stencil = Stencil {
            dims: (1, self.kern.height(), self.kern.width(), self.kern.channels()),
            offsets: &self.offsets,
            weights: self.kern.neighbor_weights(),
            center: self.kern.center_weights(),
        };
        let center_src = if self.kern.mode().center_uses_current() {
            h_t
        } else {
            h_0
        };
        stencil.apply(h_t.as_slice(), center_src.as_slice(), out.as_mut_slice(), workers);
    }

    fn check(&self, h_t: &FeatureGrid, h_0: &FeatureGrid) -> Result<()> {
        self.kern.check_grid(h_t)?;
        self.kern.check_grid(h_0)
    }

    /// `iterations` steps anchored at `h_0`, optionally replacing sample
    /// pixels after each one. `h_0` is used as given.
    pub fn iterate(
        &self,
        h_0: &FeatureGrid,
        iterations: usize,
        sparse: Option<&SparseSamples>,
        workers: &Workers,
    ) -> FeatureGrid {
        let mut buf = DoubleBuffer::from_front(h_0.clone());
        for _ in 0..iterations {
            let (front, back) = buf.split();
            self.step_into(front, h_0, back, workers);
            if let Some(s) = sparse {
                s.replace_into(back);
            }
            buf.swap();
        }
        buf.into_front()
    }
}

/// One propagation step.
pub fn step(h_t: &FeatureGrid, h_0: &FeatureGrid, kern: &NormalizedKernels) -> Result<FeatureGrid> {
    step_with_workers(h_t, h_0, kern, &Workers::single())
}

pub fn step_with_workers(
    h_t: &FeatureGrid,
    h_0: &FeatureGrid,
    kern: &NormalizedKernels,
    workers: &Workers,
) -> Result<FeatureGrid> {
    let prop = Propagator::new(kern);
    prop.check(h_t, h_0)?;
    let mut out = FeatureGrid::zeros(h_t.height(), h_t.width(), h_t.channels());
    prop.step_into(h_t, h_0, &mut out, workers);
    Ok(out)
}

/// `cfg.iterations` steps from `h_0` with `h_0` as the anchor.
pub fn run(h_0: &FeatureGrid, kern: &NormalizedKernels, cfg: &PropagationConfig) -> Result<FeatureGrid> {
    let prop = Propagator::new(kern);
    prop.check(h_0, h_0)?;
    Ok(prop.iterate(h_0, cfg.iterations, None, &cfg.workers()?))
}

/// One step followed by overwriting every sample pixel with its value.
pub fn step_with_sparse(
    h_t: &FeatureGrid,
    h_0: &FeatureGrid,
    kern: &NormalizedKernels,
    sparse: &SparseSamples,
) -> Result<FeatureGrid> {
    sparse.check_grid(h_t)?;
    let mut out = step(h_t, h_0, kern)?;
    sparse.replace_into(&mut out);
    Ok(out)
}

/// Sparse-preserving completion: the samples are written into the initial
/// map, which then anchors `cfg.iterations` replacement steps. Sample pixels
/// in the result equal the sample values exactly.
pub fn complete_depth(
    depth_init: &FeatureGrid,
    sparse: &SparseSamples,
    kern: &NormalizedKernels,
    cfg: &PropagationConfig,
) -> Result<FeatureGrid> {
    if depth_init.channels() != 1 {
        return Err(CspnError::invalid("depth completion expects a single-channel map"));
    }
    sparse.check_grid(depth_init)?;
    let prop = Propagator::new(kern);
    prop.check(depth_init, depth_init)?;
    let mut h_0 = depth_init.clone();
    sparse.replace_into(&mut h_0);
    Ok(prop.iterate(&h_0, cfg.iterations, Some(sparse), &cfg.workers()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{normalize, AffinityField};
    use crate::io::SparseSample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> FeatureGrid {
        FeatureGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernels_return_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h0 = random_grid(4, 5, 1, &mut rng);
        let ht = random_grid(4, 5, 1, &mut rng);
        for mode in [NormMode::AbsSumAnchor, NormMode::PositiveNoCenter] {
            let k = NormalizedKernels::identity(4, 5, 1, 3, mode).unwrap();
            assert_eq!(step(&ht, &h0, &k).unwrap(), h0);
        }
        // Moving-center kernels hold the current iterate instead.
        let k = NormalizedKernels::identity(4, 5, 1, 3, NormMode::MovingCenter).unwrap();
        assert_eq!(step(&ht, &h0, &k).unwrap(), ht);
    }

    #[test]
    fn delta_spreads_uniformly() {
        let mut delta = FeatureGrid::zeros(3, 3, 1);
        delta.set(1, 1, 0, 1.0);
        let k = normalize(&AffinityField::uniform(3, 3, 1, 3).unwrap(), NormMode::AbsSumAnchor);
        let out = step(&delta, &delta, &k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if (i, j) == (1, 1) { 0.0 } else { 0.125 };
                assert_eq!(out.get(i, j, 0), expected);
            }
        }
    }

    #[test]
    fn positive_no_center_keeps_constant_interior() {
        let g = FeatureGrid::filled(5, 5, 1, 3.25);
        let k = normalize(&AffinityField::uniform(5, 5, 1, 3).unwrap(), NormMode::PositiveNoCenter);
        let out = step(&g, &g, &k).unwrap();
        for i in 1..4 {
            for j in 1..4 {
                assert!((out.get(i, j, 0) - 3.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn run_zero_and_two_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h0 = random_grid(5, 6, 2, &mut rng);
        let k = normalize(&AffinityField::random(5, 6, 2, 3, false, 3).unwrap(), NormMode::AbsSumAnchor);
        let cfg = PropagationConfig::new(0, NormMode::AbsSumAnchor).with_workers(1);
        assert_eq!(run(&h0, &k, &cfg).unwrap(), h0);
        let cfg = PropagationConfig::new(2, NormMode::AbsSumAnchor).with_workers(1);
        let manual = step(&step(&h0, &h0, &k).unwrap(), &h0, &k).unwrap();
        assert_eq!(run(&h0, &k, &cfg).unwrap(), manual);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let k = NormalizedKernels::identity(3, 3, 1, 3, NormMode::AbsSumAnchor).unwrap();
        let g = FeatureGrid::zeros(3, 4, 1);
        assert!(matches!(step(&g, &g, &k), Err(CspnError::ShapeMismatch { .. })));
    }

    #[test]
    fn sparse_replacement_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_grid(4, 5, 1, &mut rng);
        let k = normalize(&AffinityField::random(4, 5, 1, 3, false, 6).unwrap(), NormMode::AbsSumAnchor);

        let full = SparseSamples::from_dense(&FeatureGrid::from_fn(4, 5, 1, |i, j, _| 1.0 + (i * 5 + j) as f64));
        assert_eq!(step_with_sparse(&h, &h, &k, &full).unwrap(), full.to_dense());

        let empty = SparseSamples::empty(4, 5);
        assert_eq!(step_with_sparse(&h, &h, &k, &empty).unwrap(), step(&h, &h, &k).unwrap());

        let one = SparseSamples::new(4, 5, vec![SparseSample { row: 2, col: 3, value: 5.0 }]).unwrap();
        assert_eq!(step_with_sparse(&h, &h, &k, &one).unwrap().get(2, 3, 0), 5.0);
    }

    #[test]
    fn completion_of_exact_map_is_fixed_point() {
        let gt = FeatureGrid::filled(8, 8, 1, 2.5);
        let s = crate::io::sample_sparse(&gt, 6, 1).unwrap();
        let guide = FeatureGrid::filled(8, 8, 1, 0.3);
        let raw = crate::affinity::guided_affinity(&guide, 3, &Default::default()).unwrap();
        let k = normalize(&raw, NormMode::PositiveNoCenter);
        let out = complete_depth(&gt, &s, &k, &PropagationConfig::new(24, NormMode::PositiveNoCenter)).unwrap();
        assert!(out.max_abs_diff(&gt) < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h0 = random_grid(17, 13, 2, &mut rng);
        let k = normalize(&AffinityField::random(17, 13, 2, 5, false, 4).unwrap(), NormMode::MovingCenter);
        let base = run(&h0, &k, &PropagationConfig::new(6, NormMode::MovingCenter).with_workers(1)).unwrap();
        for w in [2, 8] {
            let other = run(&h0, &k, &PropagationConfig::new(6, NormMode::MovingCenter).with_workers(w)).unwrap();
            assert_eq!(base, other);
        }
    }

    fn mode_strategy() -> impl Strategy<Value = NormMode> {
        prop::sample::select(NormMode::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn anchored_non_expansion(mode in mode_strategy(), seed in any::<u64>(), k in prop::sample::select(vec![3usize, 5])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kern = normalize(&AffinityField::random(6, 7, 1, k, false, seed ^ 1).unwrap(), mode);
            let h0 = random_grid(6, 7, 1, &mut rng);
            let x = random_grid(6, 7, 1, &mut rng);
            let y = random_grid(6, 7, 1, &mut rng);
            let dx = step(&x, &h0, &kern).unwrap();
            let dy = step(&y, &h0, &kern).unwrap();
            prop_assert!(dx.max_abs_diff(&dy) <= x.max_abs_diff(&y) + 1e-12);
        }

        #[test]
        fn positive_no_center_min_max(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kern = normalize(&AffinityField::random(6, 6, 1, 3, false, seed).unwrap(), NormMode::PositiveNoCenter);
            let ht = random_grid(6, 6, 1, &mut rng);
            let out = step(&ht, &ht, &kern).unwrap();
            // Out-of-bounds taps read zero, so zero joins the value range.
            let lo = ht.min().min(0.0);
            let hi = ht.max().max(0.0);
            for v in out.as_slice() {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }
}
