use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::samples::SparseSamples;
use crate::error::{CspnError, Result};
use crate::grid::FeatureGrid;

/// A guide image with an edge-aligned piecewise-constant depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub guide: FeatureGrid,
    pub depth_gt: FeatureGrid,
}

/// Voronoi scene with `regions` cells. Each cell gets a depth drawn from
/// `[0.5, 10]` m (rounded to `f32` so the map survives PFM storage) and its
/// own guide intensity from an evenly spaced ladder.
pub fn make_scene(height: usize, width: usize, regions: usize, seed: u64) -> Result<SyntheticScene> {
    if regions == 0 || regions > height * width {
        return Err(CspnError::invalid(format!(
            "regions must be in 1..={} for a {height}x{width} scene",
            height * width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<(f64, f64)> = rand::seq::index::sample(&mut rng, height * width, regions)
        .into_iter()
        .map(|p| ((p / width) as f64, (p % width) as f64))
        .collect();
    let mut depths: Vec<f64> = Vec::with_capacity(regions);
    while depths.len() < regions {
        let d = rng.gen_range(0.5f64..=10.0) as f32 as f64;
        if !depths.contains(&d) {
            depths.push(d);
        }
    }
    let mut levels: Vec<f64> = (0..regions)
        .map(|r| (r as f64 + 0.5) / regions as f64)
        .collect();
    levels.shuffle(&mut rng);

    let mut label = vec![0usize; height * width];
    for i in 0..height {
        for j in 0..width {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (r, &(si, sj)) in sites.iter().enumerate() {
                let d = (i as f64 - si).powi(2) + (j as f64 - sj).powi(2);
                if d < best_d {
                    best_d = d;
                    best = r;
                }
            }
            label[i * width + j] = best;
        }
    }
    let guide = FeatureGrid::from_fn(height, width, 1, |i, j, _| levels[label[i * width + j]]);
    let depth_gt = FeatureGrid::from_fn(height, width, 1, |i, j, _| depths[label[i * width + j]]);
    Ok(SyntheticScene { guide, depth_gt })
}

/// Nearest-sample interpolation: every pixel takes the value of the closest
/// sample (ties go to the earlier sample). The usual cheap initial depth
/// estimate before refinement.
pub fn nearest_fill(samples: &SparseSamples) -> Result<FeatureGrid> {
    if samples.is_empty() {
        return Err(CspnError::invalid("nearest fill needs at least one sample"));
    }
    let entries = samples.entries();
    Ok(FeatureGrid::from_fn(samples.height(), samples.width(), 1, |i, j, _| {
        let mut best = 0;
        let mut best_d = usize::MAX;
        for (k, e) in entries.iter().enumerate() {
            let d = e.row.abs_diff(i).pow(2) + e.col.abs_diff(j).pow(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        entries[best].value
    }))
}

/// Mean over the `(2r+1)²` window clipped to the image, per channel.
pub fn box_blur(grid: &FeatureGrid, radius: usize) -> FeatureGrid {
    let (h, w, c) = grid.shape();
    FeatureGrid::from_fn(h, w, c, |i, j, ch| {
        let rows = i.saturating_sub(radius)..(i + radius + 1).min(h);
        let cols = j.saturating_sub(radius)..(j + radius + 1).min(w);
        let n = rows.len() * cols.len();
        let mut s = 0.0;
        for r in rows {
            for q in cols.clone() {
                s += grid.get(r, q, ch);
            }
        }
        s / n as f64
    })
}

/// Default blur radius for [`coarse_estimate`].
pub const COARSE_RADIUS: usize = 3;

/// Stand-in for a coarse network prediction: the nearest-sample fill
/// smoothed by a box blur, so it neither honors the samples nor keeps
/// depth edges sharp.
pub fn coarse_estimate(samples: &SparseSamples, radius: usize) -> Result<FeatureGrid> {
    Ok(box_blur(&nearest_fill(samples)?, radius))
}
