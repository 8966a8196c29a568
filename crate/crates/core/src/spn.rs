//! Four-direction scan-line propagation with three-way connections.
//!
//! Along the scan axis each line depends on the previously *output* line, so
//! the recurrence is serial in that direction; only the positions within a
//! line can be computed in parallel.

use crate::affinity::AffinityField;
use crate::error::{CspnError, Result};
use crate::grid::FeatureGrid;
use crate::workers::Workers;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn horizontal(self) -> bool {
        matches!(self, Direction::LeftToRight | Direction::RightToLeft)
    }

    /// `(scan length, line length)` for an `h × w` image.
    fn extents(self, h: usize, w: usize) -> (usize, usize) {
        if self.horizontal() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Image coordinates of position `s` on scan line `t`.
    fn pixel(self, t: usize, s: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Direction::LeftToRight => (s, t),
            Direction::RightToLeft => (s, w - 1 - t),
            Direction::TopToBottom => (t, s),
            Direction::BottomToTop => (h - 1 - t, s),
        }
    }

    /// Kernel offset `(a, b)` that reaches the previous line at lateral
    /// displacement `d ∈ {-1, 0, 1}`.
    fn tap_offset(self, d: isize) -> (isize, isize) {
        match self {
            Direction::LeftToRight => (-d, 1),
            Direction::RightToLeft => (-d, -1),
            Direction::TopToBottom => (1, -d),
            Direction::BottomToTop => (-1, -d),
        }
    }
}

/// Three weights per pixel per direction onto the previous scan line, for
/// lateral displacements `-1, 0, +1`. Stored in each direction's own line
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanWeights {
    height: usize,
    width: usize,
    weights: [Vec<f64>; 4],
}

impl ScanWeights {
    pub fn zeros(height: usize, width: usize) -> Self {
        ScanWeights {
            height,
            width,
            weights: std::array::from_fn(|_| vec![0.0; height * width * 3]),
        }
    }

    /// Builds weights from `f(direction, row, col) -> [w₋₁, w₀, w₊₁]`.
    /// Rejects any pixel whose absolute weights sum above one.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(Direction, usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut out = Self::zeros(height, width);
        for dir in Direction::ALL {
            let (len_t, len_s) = dir.extents(height, width);
            for t in 0..len_t {
                for s in 0..len_s {
                    let (i, j) = dir.pixel(t, s, height, width);
                    let w = f(dir, i, j);
                    let mass: f64 = w.iter().map(|v| v.abs()).sum();
                    if !w.iter().all(|v| v.is_finite()) || mass > 1.0 + 1e-12 {
                        return Err(CspnError::invalid(format!(
                            "scan weights at ({i}, {j}) for {dir:?} have absolute mass {mass}"
                        )));
                    }
                    let base = (t * len_s + s) * 3;
                    out.weights[dir.index()][base..base + 3].copy_from_slice(&w);
                }
            }
        }
        Ok(out)
    }

    /// Projects a raw affinity field onto the three taps each direction uses,
    /// normalizes their absolute values to `strength`, and keeps the rest on
    /// the center. Only the radius-one ring of the kernel is consulted.
    pub fn from_affinity(raw: &AffinityField, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(CspnError::invalid("strength must lie in [0, 1]"));
        }
        let k = raw.kernel_size() as isize;
        let r = k / 2;
        let tap = |a: isize, b: isize| -> usize {
            let lin = ((a + r) * k + (b + r)) as usize;
            let mid = (k * k / 2) as usize;
            if lin > mid {
                lin - 1
            } else {
                lin
            }
        };
        Self::from_fn(raw.height(), raw.width(), |dir, i, j| {
            let taps = raw.raw(i, j, 0);
            let vals = [-1isize, 0, 1].map(|d| {
                let (a, b) = dir.tap_offset(d);
                taps[tap(a, b)].abs()
            });
            let s: f64 = vals.iter().sum();
            if s == 0.0 {
                [0.0; 3]
            } else {
                vals.map(|v| strength * v / s)
            }
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, dir: Direction, i: usize, j: usize) -> [f64; 3] {
        let (_, len_s) = dir.extents(self.height, self.width);
        let (t, s) = match dir {
            Direction::LeftToRight => (j, i),
            Direction::RightToLeft => (self.width - 1 - j, i),
            Direction::TopToBottom => (i, j),
            Direction::BottomToTop => (self.height - 1 - i, j),
        };
        let base = (t * len_s + s) * 3;
        let w = &self.weights[dir.index()][base..base + 3];
        [w[0], w[1], w[2]]
    }
}

/// One directional pass: the first line is copied, then
/// `out(s, t) = (1 − Σw)·h(s, t) + Σ_d w_d·out(s + d, t − 1)`.
pub fn scan(h: &FeatureGrid, weights: &ScanWeights, dir: Direction) -> Result<FeatureGrid> {
    scan_with_workers(h, weights, dir, &Workers::single())
}

pub fn scan_with_workers(
    h: &FeatureGrid,
    weights: &ScanWeights,
    dir: Direction,
    workers: &Workers,
) -> Result<FeatureGrid> {
    let (height, width, c) = h.shape();
    if (weights.height, weights.width) != (height, width) {
        return Err(CspnError::shape(
            (weights.height, weights.width),
            (height, width),
        ));
    }
    let (len_t, len_s) = dir.extents(height, width);
    let line = len_s * c;
    // Gather into line-major order.
    let mut input = vec![0.0; len_t * line];
    for t in 0..len_t {
        for s in 0..len_s {
            let (i, j) = dir.pixel(t, s, height, width);
            for ch in 0..c {
                input[t * line + s * c + ch] = h.get(i, j, ch);
            }
        }
    }
    let mut out = vec![0.0; len_t * line];
    if len_t > 0 {
        out[..line].copy_from_slice(&input[..line]);
    }
    let wts = &weights.weights[dir.index()];
    let chunk = len_s.div_ceil(workers.count()).max(1) * c;
    for t in 1..len_t {
        let (done, rest) = out.split_at_mut(t * line);
        let prev = &done[(t - 1) * line..];
        let cur_in = &input[t * line..(t + 1) * line];
        let cur_w = &wts[t * len_s * 3..(t + 1) * len_s * 3];
        workers.for_each_line(&mut rest[..line], chunk, |k, part| {
            let s0 = k * chunk / c;
            for (off, v) in part.iter_mut().enumerate() {
                let s = s0 + off / c;
                let ch = off % c;
                let w = &cur_w[s * 3..s * 3 + 3];
                let mut acc = (1.0 - (w[0] + w[1] + w[2])) * cur_in[s * c + ch];
                for (d, wd) in w.iter().enumerate() {
                    let ns = s as isize + d as isize - 1;
                    if ns >= 0 && (ns as usize) < len_s {
                        acc += wd * prev[ns as usize * c + ch];
                    }
                }
                *v = acc;
            }
        });
    }
    // Scatter back to image order.
    let mut result = FeatureGrid::zeros(height, width, c);
    for t in 0..len_t {
        for s in 0..len_s {
            let (i, j) = dir.pixel(t, s, height, width);
            for ch in 0..c {
                result.set(i, j, ch, out[t * line + s * c + ch]);
            }
        }
    }
    Ok(result)
}

/// Mean of the four directional passes.
pub fn refine(h: &FeatureGrid, weights: &ScanWeights) -> Result<FeatureGrid> {
    refine_with_workers(h, weights, &Workers::single())
}

pub fn refine_with_workers(h: &FeatureGrid, weights: &ScanWeights, workers: &Workers) -> Result<FeatureGrid> {
    let mut acc = FeatureGrid::zeros(h.height(), h.width(), h.channels());
    for dir in Direction::ALL {
        let pass = scan_with_workers(h, weights, dir, workers)?;
        for (a, p) in acc.as_mut_slice().iter_mut().zip(pass.as_slice()) {
            *a += p;
        }
    }
    acc.as_mut_slice().iter_mut().for_each(|v| *v *= 0.25);
    Ok(acc)
}
