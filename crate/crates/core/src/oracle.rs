//! Explicit matrix form of one propagation step,
//!
//! ```text
//! h[t+1] = A·h[t] + C·s,    s = h[0] (anchored modes) or h[t] (moving center)
//! ```
//!
//! where `A` holds the neighbor weights (zero diagonal), `C` is the diagonal
//! of center weights and the degree `λ = Σ_{a,b≠0} κ(a,b)` gives `C = I − D`
//! for the anchored modes. States are vectorized row-major over
//! `(layer, row, col, channel)`; neighbors falling outside the grid simply
//! have no entry in `A`. Rows of sample pixels become unit rows.
//!
//! Independent of the stencil code path; used as ground truth for it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{kernel_offsets, NormalizedKernels};
use crate::cspn3d::{kernel_offsets3, NormalizedKernels3};
use crate::error::{CspnError, Result};
use crate::io::SparseSamples;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSystem {
    n: usize,
    /// Sparse rows of `A` as `(column, weight)` lists, at most one entry per
    /// kernel tap.
    rows: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    center: Vec<f64>,
    center_uses_current: bool,
    anchor_mask: Option<Vec<bool>>,
}

struct Layout<'a> {
    dims: (usize, usize, usize, usize),
    offsets: Vec<[isize; 3]>,
    weights: &'a [f64],
    center: &'a [f64],
}

fn assemble(layout: Layout<'_>, center_uses_current: bool, mask: Option<Vec<bool>>) -> DiffusionSystem {
    let (d, h, w, c) = layout.dims;
    let n = d * h * w * c;
    let taps = layout.offsets.len();
    let mut rows = Vec::with_capacity(n);
    let mut degree = Vec::with_capacity(n);
    let mut center = Vec::with_capacity(n);
    for l in 0..d {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let p = ((l * h + i) * w + j) * c + ch;
                    if mask.as_ref().is_some_and(|m| m[p]) {
                        rows.push(vec![(p, 1.0)]);
                        degree.push(1.0);
                        center.push(0.0);
                        continue;
                    }
                    let wts = &layout.weights[p * taps..(p + 1) * taps];
                    let mut row = Vec::with_capacity(taps);
                    for (off, &wt) in layout.offsets.iter().zip(wts) {
                        let (nl, ni, nj) = (
                            l as isize - off[0],
                            i as isize - off[1],
                            j as isize - off[2],
                        );
                        if nl >= 0
                            && ni >= 0
                            && nj >= 0
                            && (nl as usize) < d
                            && (ni as usize) < h
                            && (nj as usize) < w
                        {
                            let q = ((nl as usize * h + ni as usize) * w + nj as usize) * c + ch;
                            row.push((q, wt));
                        }
                    }
                    rows.push(row);
                    degree.push(wts.iter().sum());
                    center.push(layout.center[p]);
                }
            }
        }
    }
    DiffusionSystem {
        n,
        rows,
        degree,
        center,
        center_uses_current,
        anchor_mask: mask,
    }
}

/// Builds the system for planar kernels, optionally turning every sample
/// pixel's rows (all channels) into unit rows.
pub fn build(kern: &NormalizedKernels, sparse: Option<&SparseSamples>) -> Result<DiffusionSystem> {
    let (h, w, c) = (kern.height(), kern.width(), kern.channels());
    let mask = match sparse {
        None => None,
        Some(s) => {
            if (s.height(), s.width()) != (h, w) {
                return Err(CspnError::shape((h, w), (s.height(), s.width())));
            }
            let m = s.mask();
            Some(
                (0..h * w * c)
                    .map(|p| m.as_slice()[p / c])
                    .collect(),
            )
        }
    };
    let layout = Layout {
        dims: (1, h, w, c),
        offsets: kernel_offsets(kern.kernel_size())
            .into_iter()
            .map(|(a, b)| [0, a, b])
            .collect(),
        weights: kern.neighbor_weights(),
        center: kern.center_weights(),
    };
    Ok(assemble(layout, kern.mode().center_uses_current(), mask))
}

pub fn build3(kern: &NormalizedKernels3) -> DiffusionSystem {
    let layout = Layout {
        dims: kern.shape(),
        offsets: kernel_offsets3(kern.kernel_size()),
        weights: kern.neighbor_weights(),
        center: kern.center_weights(),
    };
    assemble(layout, kern.mode().center_uses_current(), None)
}

impl DiffusionSystem {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    /// `λ` per state.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn anchor_mask(&self) -> Option<&[bool]> {
        self.anchor_mask.as_deref()
    }

    /// `y = A·x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(q, w)| w * x[q]).sum())
            .collect()
    }

    /// `y = Aᵀ·x`
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(q, w) in row {
                y[q] += w * x[r];
            }
        }
        y
    }

    /// `A·h_t + C·s` with `s` the anchor or the current iterate.
    pub fn step_dense(&self, h_t: &[f64], h_0: &[f64]) -> Result<Vec<f64>> {
        if h_t.len() != self.n || h_0.len() != self.n {
            return Err(CspnError::shape(self.n, (h_t.len(), h_0.len())));
        }
        let src = if self.center_uses_current { h_t } else { h_0 };
        let mut y = self.apply(h_t);
        for ((yv, c), s) in y.iter_mut().zip(&self.center).zip(src) {
            *yv += c * s;
        }
        Ok(y)
    }

    /// Largest absolute row sum of `A`, the Gershgorin disc radius bound.
    pub fn gershgorin_bound(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(_, w)| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Power-iteration estimate of the spectral radius of `A`.
    ///
    /// Tracks the `∞`-norm growth of `Aᵏx` from a seeded random start and
    /// returns its geometric mean over the second half of the run. Each
    /// growth factor is at most the largest absolute row sum, so the
    /// estimate never exceeds [`Self::gershgorin_bound`]; oscillating
    /// (complex or negative) dominant eigenvalues still converge because
    /// only the magnitude is averaged.
    pub fn spectral_radius(&self, iterations: usize, seed: u64) -> f64 {
        let iterations = iterations.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let burn_in = iterations / 2;
        let mut log_sum = 0.0;
        let mut counted = 0usize;
        let mut norm = inf_norm(&x);
        if norm == 0.0 {
            return 0.0;
        }
        for k in 0..iterations {
            let y = self.apply(&x);
            let next = inf_norm(&y);
            if next == 0.0 {
                return 0.0;
            }
            if k >= burn_in {
                log_sum += (next / norm).ln();
                counted += 1;
            }
            x = y.into_iter().map(|v| v / next).collect();
            norm = 1.0;
        }
        (log_sum / counted as f64).exp()
    }

    /// Spectral norm `‖A‖₂` by power iteration on `AᵀA`.
    ///
    /// Unlike the spectral radius this is not bounded by the row sums; column
    /// sums of `A` enter as well.
    pub fn operator_norm(&self, iterations: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sigma_sq = 0.0;
        for _ in 0..iterations.max(1) {
            let nx = two_norm(&x);
            if nx == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= nx);
            let y = self.apply_transpose(&self.apply(&x));
            sigma_sq = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            x = y;
        }
        sigma_sq.max(0.0).sqrt()
    }

    /// Dense copy of `A`, row-major.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(q, w) in row {
                m[r][q] += w;
            }
        }
        m
    }

    /// `A` as `row,col,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for (r, row) in self.rows.iter().enumerate() {
            for &(q, w) in row {
                out.push_str(&format!("{r},{q},{w:.17e}\n"));
            }
        }
        out
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn two_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{normalize, AffinityField, NormMode};
    use crate::cspn2d::{step, step_with_sparse};
    use crate::grid::FeatureGrid;
    use crate::io::{sample_sparse, SparseSample};

    #[test]
    fn one_by_two_grid() {
        // Pixel (0,0) reads (0,1) through offset (0,-1) = tap 3; pixel (0,1)
        // reads (0,0) through offset (0,1) = tap 4.
        let raw = AffinityField::from_fn(1, 2, 1, 3, |_, j, _, t| (j * 8 + t + 1) as f64).unwrap();
        let k = normalize(&raw, NormMode::AbsSumAnchor);
        let sys = build(&k, None).unwrap();
        let a = sys.dense();
        assert_eq!(a[0][0], 0.0);
        assert_eq!(a[1][1], 0.0);
        assert_eq!(a[0][1], k.weights(0, 0, 0)[3]);
        assert_eq!(a[1][0], k.weights(0, 1, 0)[4]);
        assert_eq!(sys.row(0).len(), 1);
    }

    #[test]
    fn identity_kernels_give_empty_matrix() {
        let k = NormalizedKernels::identity(3, 4, 1, 3, NormMode::AbsSumAnchor).unwrap();
        let sys = build(&k, None).unwrap();
        assert!(sys.dense().iter().flatten().all(|v| *v == 0.0));
        assert!(sys.degree().iter().all(|v| *v == 0.0));
        let h0: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let ht = vec![9.0; 12];
        assert_eq!(sys.step_dense(&ht, &h0).unwrap(), h0);
        assert_eq!(sys.spectral_radius(10, 1), 0.0);
    }

    #[test]
    fn sample_rows_are_unit_rows() {
        let k = normalize(&AffinityField::random(4, 4, 1, 3, false, 2).unwrap(), NormMode::AbsSumAnchor);
        let s = SparseSamples::new(4, 4, vec![SparseSample { row: 1, col: 2, value: 3.0 }]).unwrap();
        let sys = build(&k, Some(&s)).unwrap();
        let q = 4 + 2;
        assert_eq!(sys.row(q), &[(q, 1.0)]);
        assert_eq!(sys.degree()[q], 1.0);
        assert_eq!(sys.center()[q], 0.0);
    }

    #[test]
    fn degree_relation_for_anchor_mode() {
        let k = normalize(&AffinityField::random(5, 5, 2, 5, false, 3).unwrap(), NormMode::AbsSumAnchor);
        let sys = build(&k, None).unwrap();
        for (c, d) in sys.center().iter().zip(sys.degree()) {
            assert!((c - (1.0 - d)).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        let k = NormalizedKernels::identity(2, 2, 1, 3, NormMode::AbsSumAnchor).unwrap();
        let sys = build(&k, None).unwrap();
        assert!(sys.step_dense(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn dense_matches_stencil_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in NormMode::ALL {
            for &(h, w, c, k) in &[(6, 7, 1, 3), (3, 8, 2, 5), (1, 1, 1, 3)] {
                let kern = normalize(&AffinityField::random(h, w, c, k, false, rng.gen()).unwrap(), mode);
                let h0 = FeatureGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0));
                let ht = FeatureGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0));
                let sys = build(&kern, None).unwrap();
                let dense = sys.step_dense(ht.as_slice(), h0.as_slice()).unwrap();
                let conv = step(&ht, &h0, &kern).unwrap();
                for (a, b) in dense.iter().zip(conv.as_slice()) {
                    assert!((a - b).abs() <= 1e-12, "{mode} {h}x{w}x{c} k={k}");
                }
            }
        }
    }

    #[test]
    fn masked_states_stay_fixed() {
        let gt = FeatureGrid::from_fn(6, 6, 1, |i, j, _| 1.0 + (i * 6 + j) as f64 * 0.1);
        let s = sample_sparse(&gt, 7, 3).unwrap();
        let k = normalize(&AffinityField::random(6, 6, 1, 3, false, 5).unwrap(), NormMode::AbsSumAnchor);
        let sys = build(&k, Some(&s)).unwrap();
        let mut h0 = FeatureGrid::filled(6, 6, 1, 0.5);
        s.replace_into(&mut h0);
        let mut x = h0.as_slice().to_vec();
        let mut conv = h0.clone();
        for _ in 0..30 {
            x = sys.step_dense(&x, h0.as_slice()).unwrap();
            conv = step_with_sparse(&conv, &h0, &k, &s).unwrap();
        }
        for e in s.entries() {
            assert_eq!(x[e.row * 6 + e.col], e.value);
        }
        for (a, b) in x.iter().zip(conv.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_positive_kernels_leak_at_boundary() {
        let k = normalize(&AffinityField::uniform(5, 5, 1, 3).unwrap(), NormMode::PositiveNoCenter);
        let sys = build(&k, None).unwrap();
        let est = sys.spectral_radius(4000, 7);
        // Independent dense symmetric eigensolve.
        let a = sys.dense();
        let m = nalgebra::DMatrix::from_fn(25, 25, |r, c| a[r][c]);
        let eig = nalgebra::SymmetricEigen::new(m);
        let rho = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(rho < 1.0);
        assert!(est < 1.0);
        assert!((est - rho).abs() < 1e-6, "power {est} vs eigen {rho}");
    }

    #[test]
    fn spectral_radius_bounded_by_rows() {
        for seed in 0..20 {
            for mode in NormMode::ALL {
                let k = normalize(&AffinityField::random(6, 5, 1, 3, false, seed).unwrap(), mode);
                let sys = build(&k, None).unwrap();
                let est = sys.spectral_radius(300, seed);
                assert!(est <= sys.gershgorin_bound() + 1e-9);
                assert!(est <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn operator_norm_matches_svd() {
        let k = normalize(&AffinityField::random(4, 5, 1, 3, false, 9).unwrap(), NormMode::AbsSumAnchor);
        let sys = build(&k, None).unwrap();
        let a = sys.dense();
        let m = nalgebra::DMatrix::from_fn(20, 20, |r, c| a[r][c]);
        let sv = m.singular_values().max();
        assert!((sys.operator_norm(3000, 1) - sv).abs() < 1e-6);
    }

    #[test]
    fn csv_dump_lists_entries() {
        let k = normalize(&AffinityField::uniform(1, 2, 1, 3).unwrap(), NormMode::AbsSumAnchor);
        let csv = build(&k, None).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row,col,value");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1,"));
    }
}
