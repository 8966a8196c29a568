//! Spatial pyramid pooling and its one-step-propagation generalizations.
//!
//! * [`spp_avg`]: mean over each `h/p × w/q` window.
//! * [`cspp`]: one strided step whose window weights come from a positive,
//!   per-window normalized weight map.
//! * [`acspp`]: one full-resolution step with dilated taps.
//! * [`build_pyramid_fused`]: branches upsampled to the input size, stacked
//!   and collapsed by [`fuse_stack`].

use std::str::FromStr;

use crate::affinity::{normalize, AffinityField, NormMode};
use crate::cspn3d::{fuse_stack, FusionKernels};
use crate::error::{CspnError, Result};
use crate::grid::{FeatureGrid, FeatureVolume};
use crate::stencil::{planar_offsets, Stencil};
use crate::workers::Workers;

fn window(grid: &FeatureGrid, (p, q): (usize, usize)) -> Result<(usize, usize)> {
    let (h, w) = (grid.height(), grid.width());
    if p == 0 || q == 0 || h % p != 0 || w % q != 0 {
        return Err(CspnError::invalid(format!(
            "target {p}x{q} does not evenly divide {h}x{w}"
        )));
    }
    Ok((h / p, w / q))
}

/// Average pooling to `target = (p, q)`.
pub fn spp_avg(grid: &FeatureGrid, target: (usize, usize)) -> Result<FeatureGrid> {
    let (wh, ww) = window(grid, target)?;
    let n = (wh * ww) as f64;
    Ok(FeatureGrid::from_fn(target.0, target.1, grid.channels(), |r, c, ch| {
        let mut s = 0.0;
        for i in r * wh..(r + 1) * wh {
            for j in c * ww..(c + 1) * ww {
                s += grid.get(i, j, ch);
            }
        }
        s / n
    }))
}

/// Learned pooling: inside each window the weights are `|m| / Σ_window |m|`
/// from the single-channel `weight_map` (uniform when the window is all
/// zero), shared across feature channels.
pub fn cspp(grid: &FeatureGrid, weight_map: &FeatureGrid, target: (usize, usize)) -> Result<FeatureGrid> {
    let (wh, ww) = window(grid, target)?;
    if weight_map.channels() != 1 || weight_map.height() != grid.height() || weight_map.width() != grid.width() {
        return Err(CspnError::shape(
            (grid.height(), grid.width(), 1),
            weight_map.shape(),
        ));
    }
    Ok(FeatureGrid::from_fn(target.0, target.1, grid.channels(), |r, c, ch| {
        let rows = r * wh..(r + 1) * wh;
        let cols = c * ww..(c + 1) * ww;
        let mut total = 0.0;
        for i in rows.clone() {
            for j in cols.clone() {
                total += weight_map.get(i, j, 0).abs();
            }
        }
        let mut s = 0.0;
        for i in rows.clone() {
            for j in cols.clone() {
                let wgt = if total == 0.0 {
                    1.0 / (wh * ww) as f64
                } else {
                    weight_map.get(i, j, 0).abs() / total
                };
                s += wgt * grid.get(i, j, ch);
            }
        }
        s
    }))
}

/// One positive-normalized step whose taps are spaced `rate` pixels apart.
/// Output has the input's size. A single-channel affinity is shared by all
/// feature channels.
pub fn acspp(grid: &FeatureGrid, affinity: &AffinityField, rate: usize) -> Result<FeatureGrid> {
    if rate == 0 {
        return Err(CspnError::invalid("dilation rate must be at least 1"));
    }
    let (h, w, c) = grid.shape();
    if affinity.height() != h || affinity.width() != w || (affinity.channels() != 1 && affinity.channels() != c) {
        return Err(CspnError::shape(
            (h, w, c),
            (affinity.height(), affinity.width(), affinity.channels()),
        ));
    }
    let kern = normalize(affinity, NormMode::PositiveAll);
    let taps = kern.taps();
    let (weights, center) = if affinity.channels() == c {
        (kern.neighbor_weights().to_vec(), kern.center_weights().to_vec())
    } else {
        let mut nw = Vec::with_capacity(h * w * c * taps);
        let mut cw = Vec::with_capacity(h * w * c);
        for p in 0..h * w {
            for _ in 0..c {
                nw.extend_from_slice(&kern.neighbor_weights()[p * taps..(p + 1) * taps]);
                cw.push(kern.center_weights()[p]);
            }
        }
        (nw, cw)
    };
    let offsets = planar_offsets(affinity.kernel_size(), rate);
    let stencil = Stencil {
        dims: (1, h, w, c),
        offsets: &offsets,
        weights: &weights,
        center: &center,
    };
    let mut out = FeatureGrid::zeros(h, w, c);
    stencil.apply(grid.as_slice(), grid.as_slice(), out.as_mut_slice(), &Workers::single());
    Ok(out)
}

/// Nearest-neighbor upsampling by integer factors to `height × width`.
pub fn upsample_nearest(grid: &FeatureGrid, height: usize, width: usize) -> Result<FeatureGrid> {
    let (h, w) = (grid.height(), grid.width());
    if h == 0 || w == 0 || !height.is_multiple_of(h) || !width.is_multiple_of(w) {
        return Err(CspnError::invalid(format!(
            "cannot upsample {h}x{w} to {height}x{width} by integer factors"
        )));
    }
    let (fh, fw) = (height / h, width / w);
    Ok(FeatureGrid::from_fn(height, width, grid.channels(), |i, j, ch| {
        grid.get(i / fh, j / fw, ch)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidMode {
    /// Average pooling branches.
    Spp,
    /// Learned pooling branches.
    Cspp,
    /// Dilated branches with fixed uniform 3×3 taps.
    AsppLike,
    /// Dilated branches with learned taps.
    Acspp,
}

impl FromStr for PyramidMode {
    type Err = CspnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spp" => Ok(PyramidMode::Spp),
            "cspp" => Ok(PyramidMode::Cspp),
            "aspp" => Ok(PyramidMode::AsppLike),
            "acspp" => Ok(PyramidMode::Acspp),
            other => Err(CspnError::invalid(format!("unknown pyramid mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidSpec {
    pub mode: PyramidMode,
    /// Pooled sizes `(p, q)` for the pooling modes.
    pub targets: Vec<(usize, usize)>,
    /// Dilation rates for the dilated modes.
    pub rates: Vec<usize>,
}

impl PyramidSpec {
    pub fn pooling(mode: PyramidMode) -> Self {
        PyramidSpec {
            mode,
            targets: vec![(64, 64), (32, 32), (16, 16), (8, 8)],
            rates: Vec::new(),
        }
    }

    pub fn dilated(mode: PyramidMode) -> Self {
        PyramidSpec {
            mode,
            targets: Vec::new(),
            rates: vec![6, 12, 18, 24],
        }
    }

    pub fn levels(&self) -> usize {
        match self.mode {
            PyramidMode::Spp | PyramidMode::Cspp => self.targets.len(),
            PyramidMode::AsppLike | PyramidMode::Acspp => self.rates.len(),
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.levels() == 0 {
            return Err(CspnError::invalid("pyramid needs at least one level"));
        }
        for &(p, q) in &self.targets {
            if p == 0 || q == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(q) {
                return Err(CspnError::invalid(format!(
                    "target {p}x{q} does not evenly divide {height}x{width}"
                )));
            }
        }
        if self.rates.contains(&0) {
            return Err(CspnError::invalid("dilation rates must be positive"));
        }
        Ok(())
    }
}

/// Per-branch weights. Each list holds one entry shared by every level or
/// one entry per level.
#[derive(Clone, Debug, Default)]
pub struct BranchWeights {
    pub weight_maps: Vec<FeatureGrid>,
    pub affinities: Vec<AffinityField>,
}

fn pick<'a, T>(items: &'a [T], level: usize, what: &str) -> Result<&'a T> {
    match items.len() {
        0 => Err(CspnError::invalid(format!("missing {what}"))),
        1 => Ok(&items[0]),
        _ => items
            .get(level)
            .ok_or_else(|| CspnError::invalid(format!("no {what} for level {level}"))),
    }
}

/// Runs every pyramid branch at input resolution and collapses the stack of
/// branch outputs with one fusion step.
pub fn pyramid_branches(grid: &FeatureGrid, spec: &PyramidSpec, weights: &BranchWeights) -> Result<Vec<FeatureGrid>> {
    let (h, w) = (grid.height(), grid.width());
    spec.validate(h, w)?;
    (0..spec.levels())
        .map(|level| match spec.mode {
            PyramidMode::Spp => upsample_nearest(&spp_avg(grid, spec.targets[level])?, h, w),
            PyramidMode::Cspp => {
                let map = pick(&weights.weight_maps, level, "weight map")?;
                upsample_nearest(&cspp(grid, map, spec.targets[level])?, h, w)
            }
            PyramidMode::AsppLike => {
                let uniform = AffinityField::uniform(h, w, 1, 3)?.with_center(vec![1.0; h * w])?;
                acspp(grid, &uniform, spec.rates[level])
            }
            PyramidMode::Acspp => {
                let aff = pick(&weights.affinities, level, "affinity")?;
                acspp(grid, aff, spec.rates[level])
            }
        })
        .collect()
}

pub fn build_pyramid_fused(
    grid: &FeatureGrid,
    spec: &PyramidSpec,
    weights: &BranchWeights,
    fusion: &FusionKernels,
) -> Result<FeatureGrid> {
    let branches = pyramid_branches(grid, spec, weights)?;
    fuse_stack(&FeatureVolume::stack(&branches)?, fusion)
}
