//! Soft-argmin disparity regression, the masked L1 loss and evaluation
//! metrics. Every reduction uses [`pairwise_sum`] so results do not depend
//! on how pixels were split across workers.

use crate::error::{CspnError, Result};
use crate::grid::{BinaryMask, FeatureGrid, FeatureVolume};

/// Per-pixel matching costs for disparities `0..=max_disparity`, stored
/// disparity-major (`d, i, j`).
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    max_disparity: usize,
    height: usize,
    width: usize,
    costs: Vec<f64>,
}

impl CostVolume {
    pub fn new(max_disparity: usize, height: usize, width: usize, costs: Vec<f64>) -> Result<Self> {
        if max_disparity == 0 {
            return Err(CspnError::invalid("max disparity must be at least 1"));
        }
        let n = (max_disparity + 1) * height * width;
        if costs.len() != n {
            return Err(CspnError::shape(n, costs.len()));
        }
        if let Some(k) = costs.iter().position(|v| !v.is_finite()) {
            return Err(CspnError::invalid(format!("non-finite cost at index {k}")));
        }
        Ok(CostVolume {
            max_disparity,
            height,
            width,
            costs,
        })
    }

    pub fn from_fn(
        max_disparity: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut costs = Vec::with_capacity((max_disparity + 1) * height * width);
        for d in 0..=max_disparity {
            for i in 0..height {
                for j in 0..width {
                    costs.push(f(d, i, j));
                }
            }
        }
        Self::new(max_disparity, height, width, costs)
    }

    /// Reads a single-channel volume whose layers are the disparity bins.
    pub fn from_volume(vol: &FeatureVolume) -> Result<Self> {
        if vol.channels() != 1 || vol.depth() < 2 {
            return Err(CspnError::invalid(format!(
                "cost volume needs one channel and at least two bins, got {:?}",
                vol.shape()
            )));
        }
        Self::new(vol.depth() - 1, vol.height(), vol.width(), vol.as_slice().to_vec())
    }

    pub fn to_volume(&self) -> FeatureVolume {
        FeatureVolume::from_vec(self.bins(), self.height, self.width, 1, self.costs.clone())
            .expect("cost volume holds finite values")
    }

    pub fn max_disparity(&self) -> usize {
        self.max_disparity
    }

    pub fn bins(&self) -> usize {
        self.max_disparity + 1
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cost(&self, d: usize, i: usize, j: usize) -> f64 {
        self.costs[(d * self.height + i) * self.width + j]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn pixel_costs(&self, p: usize) -> impl Iterator<Item = f64> + '_ {
        let plane = self.height * self.width;
        (0..self.bins()).map(move |d| self.costs[d * plane + p])
    }

    /// Softmax of the negated costs at pixel `p`, max-shifted.
    fn weights(&self, p: usize) -> Vec<f64> {
        let top = self.pixel_costs(p).map(|c| -c).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.pixel_costs(p).map(|c| (-c - top).exp()).collect();
        let z = pairwise_sum(&e);
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Sums by recursive halving. The result depends only on the slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// `d̂ = Σ_d d · softmax(−c)_d` per pixel.
pub fn soft_argmin(vol: &CostVolume) -> FeatureGrid {
    let values = (0..vol.height * vol.width)
        .map(|p| {
            let terms: Vec<f64> = vol.weights(p).iter().enumerate().map(|(d, w)| d as f64 * w).collect();
            pairwise_sum(&terms)
        })
        .collect();
    FeatureGrid::from_vec(vol.height, vol.width, 1, values).expect("softmax output is finite")
}

/// Gradient of `Σ grad_out · soft_argmin(vol)` with respect to the costs,
/// laid out like [`CostVolume::costs`].
pub fn soft_argmin_vjp(vol: &CostVolume, grad_out: &FeatureGrid) -> Result<Vec<f64>> {
    let plane = vol.height * vol.width;
    if grad_out.shape() != (vol.height, vol.width, 1) {
        return Err(CspnError::shape((vol.height, vol.width, 1), grad_out.shape()));
    }
    let mut grad = vec![0.0; vol.costs.len()];
    for p in 0..plane {
        let w = vol.weights(p);
        let terms: Vec<f64> = w.iter().enumerate().map(|(d, s)| d as f64 * s).collect();
        let mean = pairwise_sum(&terms);
        let g = grad_out.as_slice()[p];
        for (d, s) in w.iter().enumerate() {
            grad[d * plane + p] = -g * s * (d as f64 - mean);
        }
    }
    Ok(grad)
}

/// Values of `f(pred, gt)` over the valid pixels of two single-channel grids.
fn masked(
    pred: &FeatureGrid,
    gt: &FeatureGrid,
    valid: &BinaryMask,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    if pred.channels() != 1 {
        return Err(CspnError::shape((gt.height(), gt.width(), 1), pred.shape()));
    }
    pred.check_shape(gt)?;
    valid.check_grid(gt)?;
    let out: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .zip(valid.as_slice())
        .filter(|(_, &v)| v)
        .map(|((&p, &g), _)| f(p, g))
        .collect();
    if out.is_empty() {
        return Err(CspnError::invalid("valid mask selects no pixels"));
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

fn percent(flags: impl Iterator<Item = bool>, n: usize) -> f64 {
    100.0 * flags.filter(|&f| f).count() as f64 / n as f64
}

/// Mean absolute error over the valid pixels.
pub fn l1_loss(pred: &FeatureGrid, gt: &FeatureGrid, valid: &BinaryMask) -> Result<f64> {
    Ok(mean(&masked(pred, gt, valid, |p, g| (p - g).abs())?))
}

pub const DELTA_THRESHOLDS: [f64; 6] = [1.02, 1.05, 1.10, 1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub rel: f64,
    /// `(threshold, percent)` for each of [`DELTA_THRESHOLDS`].
    pub deltas: Vec<(f64, f64)>,
}

impl DepthMetrics {
    pub fn delta(&self, threshold: f64) -> Option<f64> {
        self.deltas.iter().find(|(t, _)| *t == threshold).map(|&(_, p)| p)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("name,value\nrmse,{}\nrel,{}\n", self.rmse, self.rel);
        for (t, p) in &self.deltas {
            s.push_str(&format!("delta_{t:.4},{p}\n"));
        }
        s
    }
}

fn check_positive(pred: &FeatureGrid, gt: &FeatureGrid, valid: &BinaryMask, need_pred: bool) -> Result<()> {
    for ((&p, &g), &v) in pred.as_slice().iter().zip(gt.as_slice()).zip(valid.as_slice()) {
        if v && (g <= 0.0 || (need_pred && p <= 0.0)) {
            return Err(CspnError::invalid(format!(
                "non-positive value on the valid set (pred {p}, gt {g})"
            )));
        }
    }
    Ok(())
}

pub fn depth_metrics(pred: &FeatureGrid, gt: &FeatureGrid, valid: &BinaryMask) -> Result<DepthMetrics> {
    let sq = masked(pred, gt, valid, |p, g| (p - g) * (p - g))?;
    check_positive(pred, gt, valid, true)?;
    let rel = masked(pred, gt, valid, |p, g| (g - p).abs() / g)?;
    let ratio = masked(pred, gt, valid, |p, g| (g / p).max(p / g))?;
    Ok(DepthMetrics {
        rmse: mean(&sq).sqrt(),
        rel: mean(&rel),
        deltas: DELTA_THRESHOLDS
            .iter()
            .map(|&t| (t, percent(ratio.iter().map(|&r| r < t), ratio.len())))
            .collect(),
    })
}

pub const OUTLIER_THRESHOLDS: [f64; 4] = [2.0, 3.0, 4.0, 5.0];

#[derive(Clone, Debug, PartialEq)]
pub struct StereoMetrics {
    pub epe: f64,
    /// `(pixels, percent)` for each of [`OUTLIER_THRESHOLDS`].
    pub outliers: Vec<(f64, f64)>,
    pub kitti15: f64,
}

impl StereoMetrics {
    pub fn outlier_rate(&self, pixels: f64) -> Option<f64> {
        self.outliers.iter().find(|(t, _)| *t == pixels).map(|&(_, p)| p)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("name,value\nepe,{}\n", self.epe);
        for (t, p) in &self.outliers {
            s.push_str(&format!("outlier_{t}px,{p}\n"));
        }
        s.push_str(&format!("kitti15,{}\n", self.kitti15));
        s
    }
}

pub fn stereo_metrics(pred: &FeatureGrid, gt: &FeatureGrid, valid: &BinaryMask) -> Result<StereoMetrics> {
    let err = masked(pred, gt, valid, |p, g| (p - g).abs())?;
    check_positive(pred, gt, valid, false)?;
    let gts = masked(pred, gt, valid, |_, g| g)?;
    let n = err.len();
    Ok(StereoMetrics {
        epe: mean(&err),
        outliers: OUTLIER_THRESHOLDS
            .iter()
            .map(|&t| (t, percent(err.iter().map(|&e| e > t), n)))
            .collect(),
        kitti15: percent(err.iter().zip(&gts).map(|(&e, &g)| e > 3.0 && e > 0.05 * g), n),
    })
}
