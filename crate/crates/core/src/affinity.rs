//! Raw transformation kernels and their normalization.
//!
//! A kernel of odd size `k` has `k² − 1` neighbor taps stored in row-major
//! offset order with the center skipped: for `k = 3` the order is
//! `(-1,-1) (-1,0) (-1,1) (0,-1) (0,1) (1,-1) (1,0) (1,1)`. Offset `(a, b)`
//! at pixel `(i, j)` weights the value at `(i - a, j - b)`.
//!
//! The raw center tap is stored separately. Only the modes that normalize
//! over all `k²` entries ([`NormMode::MovingCenter`], [`NormMode::PositiveAll`])
//! read it; it defaults to zero.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CspnError, Result};
use crate::grid::FeatureGrid;

/// Kernel normalization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Signed neighbors divided by their absolute sum; the center weight
    /// `1 − Σκ` multiplies the initial field.
    AbsSumAnchor,
    /// Absolute neighbors divided by their sum; no center weight.
    PositiveNoCenter,
    /// Signed weights over all `k²` taps rescaled to unit absolute mass;
    /// the center weight multiplies the current field.
    MovingCenter,
    /// Absolute weights over all `k²` taps divided by their sum.
    PositiveAll,
}

impl NormMode {
    pub const ALL: [NormMode; 4] = [
        NormMode::AbsSumAnchor,
        NormMode::PositiveNoCenter,
        NormMode::MovingCenter,
        NormMode::PositiveAll,
    ];

    /// Whether the center weight multiplies the current iterate rather than
    /// the initial field.
    pub fn center_uses_current(self) -> bool {
        matches!(self, NormMode::MovingCenter | NormMode::PositiveAll)
    }

    pub fn name(self) -> &'static str {
        match self {
            NormMode::AbsSumAnchor => "abs-anchor",
            NormMode::PositiveNoCenter => "positive-no-center",
            NormMode::MovingCenter => "moving-center",
            NormMode::PositiveAll => "positive-all",
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormMode {
    type Err = CspnError;

    fn from_str(s: &str) -> Result<Self> {
        NormMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CspnError::invalid(format!("unknown normalization mode '{s}'")))
    }
}

/// Neighbor offsets `(a, b)` of a `k × k` window, row-major, center excluded.
pub fn kernel_offsets(kernel_size: usize) -> Vec<(isize, isize)> {
    let r = (kernel_size / 2) as isize;
    let mut out = Vec::with_capacity(kernel_size * kernel_size - 1);
    for a in -r..=r {
        for b in -r..=r {
            if a != 0 || b != 0 {
                out.push((a, b));
            }
        }
    }
    out
}

pub(crate) fn check_kernel_size(kernel_size: usize) -> Result<()> {
    if kernel_size < 3 || kernel_size.is_multiple_of(2) {
        Err(CspnError::invalid(format!(
            "kernel size must be odd and at least 3, got {kernel_size}"
        )))
    } else {
        Ok(())
    }
}

/// Per-pixel raw kernels `κ̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityField {
    height: usize,
    width: usize,
    channels: usize,
    kernel_size: usize,
    neighbors: Vec<f64>,
    center: Vec<f64>,
}

impl AffinityField {
    /// `neighbors` holds `k² − 1` taps per pixel per channel, laid out
    /// `[i][j][ch][tap]`.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        neighbors: Vec<f64>,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let taps = kernel_size * kernel_size - 1;
        let expected = height * width * channels * taps;
        if neighbors.len() != expected {
            return Err(CspnError::shape(expected, neighbors.len()));
        }
        if neighbors.iter().any(|v| !v.is_finite()) {
            return Err(CspnError::invalid("non-finite raw affinity"));
        }
        Ok(AffinityField {
            height,
            width,
            channels,
            kernel_size,
            neighbors,
            center: vec![0.0; height * width * channels],
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let taps = kernel_size * kernel_size - 1;
        let mut neighbors = Vec::with_capacity(height * width * channels * taps);
        for i in 0..height {
            for j in 0..width {
                for ch in 0..channels {
                    for t in 0..taps {
                        neighbors.push(f(i, j, ch, t));
                    }
                }
            }
        }
        Self::new(height, width, channels, kernel_size, neighbors)
    }

    /// Same raw value on every tap.
    pub fn uniform(height: usize, width: usize, channels: usize, kernel_size: usize) -> Result<Self> {
        Self::from_fn(height, width, channels, kernel_size, |_, _, _, _| 1.0)
    }

    /// Raw taps drawn uniformly from `[-1, 1]` (or `[0, 1]` when
    /// `positive`), center taps included.
    pub fn random(
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        positive: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = if positive { 0.0 } else { -1.0 };
        let mut field =
            Self::from_fn(height, width, channels, kernel_size, |_, _, _, _| rng.gen_range(lo..=1.0))?;
        for c in field.center.iter_mut() {
            *c = rng.gen_range(lo..=1.0);
        }
        Ok(field)
    }

    /// Replaces the raw center taps (`height·width·channels` values).
    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        if center.len() != self.center.len() {
            return Err(CspnError::shape(self.center.len(), center.len()));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(CspnError::invalid("non-finite raw center affinity"));
        }
        self.center = center;
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size - 1
    }

    pub fn raw(&self, i: usize, j: usize, ch: usize) -> &[f64] {
        let t = self.taps();
        let base = ((i * self.width + j) * self.channels + ch) * t;
        &self.neighbors[base..base + t]
    }

    pub fn raw_center(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.center[(i * self.width + j) * self.channels + ch]
    }

    pub fn neighbors(&self) -> &[f64] {
        &self.neighbors
    }

    pub fn neighbors_mut(&mut self) -> &mut [f64] {
        &mut self.neighbors
    }

    pub fn centers(&self) -> &[f64] {
        &self.center
    }

    pub fn centers_mut(&mut self) -> &mut [f64] {
        &mut self.center
    }

    /// The same field with every raw entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> AffinityField {
        let mut out = self.clone();
        out.neighbors.iter_mut().for_each(|v| *v *= factor);
        out.center.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

/// Normalized kernels: `k² − 1` neighbor weights plus a center weight per
/// pixel and channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedKernels {
    height: usize,
    width: usize,
    channels: usize,
    kernel_size: usize,
    mode: NormMode,
    neighbors: Vec<f64>,
    center: Vec<f64>,
}

impl NormalizedKernels {
    /// Assembles kernels from already normalized weights. Only lengths and
    /// finiteness are checked.
    pub fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        mode: NormMode,
        neighbors: Vec<f64>,
        center: Vec<f64>,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let taps = kernel_size * kernel_size - 1;
        let n = height * width * channels;
        if neighbors.len() != n * taps {
            return Err(CspnError::shape(n * taps, neighbors.len()));
        }
        if center.len() != n {
            return Err(CspnError::shape(n, center.len()));
        }
        if neighbors.iter().chain(&center).any(|v| !v.is_finite()) {
            return Err(CspnError::invalid("non-finite kernel weight"));
        }
        Ok(NormalizedKernels {
            height,
            width,
            channels,
            kernel_size,
            mode,
            neighbors,
            center,
        })
    }

    /// Center weight 1, neighbors 0 everywhere.
    pub fn identity(
        height: usize,
        width: usize,
        channels: usize,
        kernel_size: usize,
        mode: NormMode,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let n = height * width * channels;
        Ok(NormalizedKernels {
            height,
            width,
            channels,
            kernel_size,
            mode,
            neighbors: vec![0.0; n * (kernel_size * kernel_size - 1)],
            center: vec![1.0; n],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size - 1
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn weights(&self, i: usize, j: usize, ch: usize) -> &[f64] {
        let t = self.taps();
        let base = ((i * self.width + j) * self.channels + ch) * t;
        &self.neighbors[base..base + t]
    }

    pub fn center(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.center[(i * self.width + j) * self.channels + ch]
    }

    pub fn neighbor_weights(&self) -> &[f64] {
        &self.neighbors
    }

    pub fn center_weights(&self) -> &[f64] {
        &self.center
    }

    pub(crate) fn check_grid(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.shape() == (self.height, self.width, self.channels) {
            Ok(())
        } else {
            Err(CspnError::shape(
                (self.height, self.width, self.channels),
                grid.shape(),
            ))
        }
    }
}

/// Normalizes one tap set. Writes neighbor weights into `out` and returns
/// the center weight. A zero denominator yields the identity kernel.
pub(crate) fn normalize_taps(mode: NormMode, raw: &[f64], raw_center: f64, out: &mut [f64]) -> f64 {
    let nbr_abs: f64 = raw.iter().map(|v| v.abs()).sum();
    match mode {
        NormMode::AbsSumAnchor => {
            if nbr_abs == 0.0 {
                out.fill(0.0);
                return 1.0;
            }
            let mut s = 0.0;
            for (o, r) in out.iter_mut().zip(raw) {
                *o = r / nbr_abs;
                s += *o;
            }
            1.0 - s
        }
        NormMode::PositiveNoCenter => {
            if nbr_abs == 0.0 {
                out.fill(0.0);
                return 1.0;
            }
            for (o, r) in out.iter_mut().zip(raw) {
                *o = r.abs() / nbr_abs;
            }
            0.0
        }
        NormMode::MovingCenter => {
            let total = nbr_abs + raw_center.abs();
            if total == 0.0 {
                out.fill(0.0);
                return 1.0;
            }
            let mut s = 0.0;
            let mut abs_mass = 0.0;
            for (o, r) in out.iter_mut().zip(raw) {
                *o = r / total;
                s += *o;
                abs_mass += o.abs();
            }
            let center = 1.0 - s;
            abs_mass += center.abs();
            for o in out.iter_mut() {
                *o /= abs_mass;
            }
            center / abs_mass
        }
        NormMode::PositiveAll => {
            let total = nbr_abs + raw_center.abs();
            if total == 0.0 {
                out.fill(0.0);
                return 1.0;
            }
            for (o, r) in out.iter_mut().zip(raw) {
                *o = r.abs() / total;
            }
            raw_center.abs() / total
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Reverse-mode derivative of [`normalize_taps`]. Given upstream gradients on
/// the neighbor weights and the center weight, writes the gradient with
/// respect to the raw neighbors into `grad_raw` and returns the gradient with
/// respect to the raw center. `|x|` has subgradient 0 at `x = 0`.
pub(crate) fn normalize_taps_vjp(
    mode: NormMode,
    raw: &[f64],
    raw_center: f64,
    grad_w: &[f64],
    grad_center: f64,
    grad_raw: &mut [f64],
) -> f64 {
    let nbr_abs: f64 = raw.iter().map(|v| v.abs()).sum();
    match mode {
        NormMode::AbsSumAnchor => {
            if nbr_abs == 0.0 {
                grad_raw.fill(0.0);
                return 0.0;
            }
            // w_o = r_o / S, center = 1 - Σ w_o
            let dot: f64 = raw
                .iter()
                .zip(grad_w)
                .map(|(r, g)| r * (g - grad_center))
                .sum();
            for ((gr, r), g) in grad_raw.iter_mut().zip(raw).zip(grad_w) {
                *gr = (g - grad_center) / nbr_abs - sign(*r) * dot / (nbr_abs * nbr_abs);
            }
            0.0
        }
        NormMode::PositiveNoCenter => {
            if nbr_abs == 0.0 {
                grad_raw.fill(0.0);
                return 0.0;
            }
            let dot: f64 = raw.iter().zip(grad_w).map(|(r, g)| r.abs() * g).sum();
            for ((gr, r), g) in grad_raw.iter_mut().zip(raw).zip(grad_w) {
                *gr = sign(*r) * (g / nbr_abs - dot / (nbr_abs * nbr_abs));
            }
            0.0
        }
        NormMode::PositiveAll => {
            let total = nbr_abs + raw_center.abs();
            if total == 0.0 {
                grad_raw.fill(0.0);
                return 0.0;
            }
            let dot: f64 = raw
                .iter()
                .zip(grad_w)
                .map(|(r, g)| r.abs() * g)
                .sum::<f64>()
                + raw_center.abs() * grad_center;
            let t2 = total * total;
            for ((gr, r), g) in grad_raw.iter_mut().zip(raw).zip(grad_w) {
                *gr = sign(*r) * (g / total - dot / t2);
            }
            sign(raw_center) * (grad_center / total - dot / t2)
        }
        NormMode::MovingCenter => {
            let total = nbr_abs + raw_center.abs();
            if total == 0.0 {
                grad_raw.fill(0.0);
                return 0.0;
            }
            // p_o = r_o / total, p_c = 1 - Σ p_o, w = p / T with T = Σ|p|.
            let p: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let p_center = 1.0 - p.iter().sum::<f64>();
            let mass: f64 = p.iter().map(|v| v.abs()).sum::<f64>() + p_center.abs();
            let gp_dot: f64 =
                p.iter().zip(grad_w).map(|(pv, g)| pv * g).sum::<f64>() + p_center * grad_center;
            let gp_center = grad_center / mass - sign(p_center) * gp_dot / (mass * mass);
            // Fold the center's dependence on p_o back into the neighbors.
            let gp: Vec<f64> = p
                .iter()
                .zip(grad_w)
                .map(|(pv, g)| g / mass - sign(*pv) * gp_dot / (mass * mass) - gp_center)
                .collect();
            let dot: f64 = raw.iter().zip(&gp).map(|(r, g)| r * g).sum();
            let t2 = total * total;
            for ((gr, r), g) in grad_raw.iter_mut().zip(raw).zip(&gp) {
                *gr = g / total - sign(*r) * dot / t2;
            }
            -sign(raw_center) * dot / t2
        }
    }
}

/// Normalizes every pixel's kernel under `mode`.
pub fn normalize(raw: &AffinityField, mode: NormMode) -> NormalizedKernels {
    let taps = raw.taps();
    let n = raw.height * raw.width * raw.channels;
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
    NormalizedKernels {
        height: raw.height,
        width: raw.width,
        channels: raw.channels,
        kernel_size: raw.kernel_size,
        mode,
        neighbors,
        center,
    }
}

/// Largest per-pixel absolute neighbor mass `Σ_{a,b≠0} |κ(a,b)|`, which is
/// the Gershgorin row bound of the propagation matrix.
pub fn stability_margin(kern: &NormalizedKernels) -> f64 {
    max_abs_row(kern.neighbor_weights(), kern.taps())
}

pub(crate) fn max_abs_row(weights: &[f64], taps: usize) -> f64 {
    if taps == 0 {
        return 0.0;
    }
    weights
        .chunks(taps)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Parameters of the spatial/color RBF affinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidedParams {
    /// Spatial scale of the bilateral (appearance) term.
    pub theta_alpha: f64,
    /// Intensity scale of the bilateral term.
    pub theta_beta: f64,
    /// Spatial scale of the smoothness term.
    pub theta_gamma: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for GuidedParams {
    fn default() -> Self {
        GuidedParams {
            theta_alpha: 20.0,
            theta_beta: 20.0,
            theta_gamma: 3.0,
            w1: 1.0,
            w2: 1.0,
        }
    }
}

impl GuidedParams {
    /// Edge-preserving setting for guides in `[0, 1]`: a narrow color
    /// bandwidth and no color-blind smoothing term.
    pub fn edge_aware() -> Self {
        GuidedParams {
            theta_beta: 0.05,
            w2: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_alpha", self.theta_alpha),
            ("theta_beta", self.theta_beta),
            ("theta_gamma", self.theta_gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CspnError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.w1.is_finite() || !self.w2.is_finite() || self.w1 < 0.0 || self.w2 < 0.0 {
            return Err(CspnError::invalid("RBF weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// Raw affinity between two pixels `spatial_sq` apart (squared distance)
    /// whose guide values differ by `color_sq` (squared distance).
    pub fn kernel(&self, spatial_sq: f64, color_sq: f64) -> f64 {
        let appearance = (-spatial_sq / (2.0 * self.theta_alpha * self.theta_alpha)
            - color_sq / (2.0 * self.theta_beta * self.theta_beta))
            .exp();
        let smooth = (-spatial_sq / (2.0 * self.theta_gamma * self.theta_gamma)).exp();
        self.w1 * appearance + self.w2 * smooth
    }
}

/// Builds a single-channel raw affinity field from a guide image with the
/// spatial/color RBF kernel. Taps whose neighbor lies outside the image are
/// set to zero so that normalization redistributes their mass inward.
pub fn guided_affinity(
    guide: &FeatureGrid,
    kernel_size: usize,
    params: &GuidedParams,
) -> Result<AffinityField> {
    check_kernel_size(kernel_size)?;
    params.validate()?;
    if guide.channels() != 1 && guide.channels() != 3 {
        return Err(CspnError::invalid(format!(
            "guide must have 1 or 3 channels, got {}",
            guide.channels()
        )));
    }
    let offsets = kernel_offsets(kernel_size);
    let (h, w) = (guide.height(), guide.width());
    AffinityField::from_fn(h, w, 1, kernel_size, |i, j, _, t| {
        let (a, b) = offsets[t];
        let r = i as isize - a;
        let c = j as isize - b;
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            return 0.0;
        }
        let (r, c) = (r as usize, c as usize);
        let color_sq: f64 = (0..guide.channels())
            .map(|ch| {
                let d = guide.get(i, j, ch) - guide.get(r, c, ch);
                d * d
            })
            .sum();
        params.kernel((a * a + b * b) as f64, color_sq)
    })
}
