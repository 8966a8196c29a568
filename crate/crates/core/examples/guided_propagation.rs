// Smooths a noisy map with guided affinities and reports the error against
// ground truth for each normalization mode.

use cspn::{guided_affinity, normalize, run, FeatureGrid, GuidedParams, NormMode, PropagationConfig, Result};

pub fn rmse(a: &FeatureGrid, b: &FeatureGrid) -> f64 {
    let sq: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
    (sq / a.len() as f64).sqrt()
}

/// `(None, noisy RMSE)` first, then one entry per mode.
pub fn run_example() -> Result<Vec<(Option<NormMode>, f64)>> {
    let scene = cspn::make_scene(48, 64, 6, 11)?;
    let noisy = FeatureGrid::from_fn(48, 64, 1, |i, j, _| {
        scene.depth_gt.get(i, j, 0) + 0.3 * (((i * 7 + j * 13) % 5) as f64 - 2.0)
    });
    let raw = guided_affinity(&scene.guide, 3, &GuidedParams::edge_aware())?.with_center(vec![1.0; 48 * 64])?;
    let mut out = vec![(None, rmse(&noisy, &scene.depth_gt))];
    for mode in NormMode::ALL {
        let smoothed = run(&noisy, &normalize(&raw, mode), &PropagationConfig::new(16, mode))?;
        out.push((Some(mode), rmse(&smoothed, &scene.depth_gt)));
    }
    Ok(out)
}

fn main() -> Result<()> {
    for (mode, err) in run_example()? {
        let name = mode.map_or("noisy input".to_string(), |m| m.to_string());
        println!("{name:>20}: RMSE {err:.4}");
    }
    Ok(())
}
