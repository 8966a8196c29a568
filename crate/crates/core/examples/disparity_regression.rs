// Regresses disparities from a synthetic cost volume and scores them with
// the stereo and depth metrics.

use cspn::{depth_metrics, soft_argmin, stereo_metrics, BinaryMask, CostVolume, FeatureGrid, Result};

pub struct Regression {
    pub epe: f64,
    pub kitti15: f64,
    pub depth_rmse: f64,
}

pub fn run_example() -> Result<Regression> {
    let (h, w, max_d) = (16, 24, 32);
    let truth = FeatureGrid::from_fn(h, w, 1, |i, j, _| 2.0 + 0.5 * (i + j) as f64);
    let vol = CostVolume::from_fn(max_d, h, w, |d, i, j| {
        let t = truth.get(i, j, 0);
        4.0 * (d as f64 - t).powi(2)
    })?;
    let pred = soft_argmin(&vol);
    let valid = BinaryMask::new(h, w, true);
    let stereo = stereo_metrics(&pred, &truth, &valid)?;
    let depth = depth_metrics(&pred, &truth, &valid)?;
    Ok(Regression {
        epe: stereo.epe,
        kitti15: stereo.kitti15,
        depth_rmse: depth.rmse,
    })
}

fn main() -> Result<()> {
    let r = run_example()?;
    println!("EPE {:.2e} px, KITTI-2015 outliers {:.2}%, RMSE {:.2e}", r.epe, r.kitti15, r.depth_rmse);
    Ok(())
}
