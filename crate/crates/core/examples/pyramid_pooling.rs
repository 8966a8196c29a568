// Runs the four pyramid variants on the same map and fuses each pyramid
// into a single map.

use cspn::pyramid::BranchWeights;
use cspn::{
    build_pyramid_fused, AffinityField, FeatureGrid, FusionKernels, PyramidMode, PyramidSpec, Result,
};

pub fn run_example() -> Result<Vec<(PyramidMode, f64)>> {
    let (h, w) = (32, 48);
    let grid = FeatureGrid::from_fn(h, w, 1, |i, j, _| (i as f64 * 0.1).sin() + (j as f64 * 0.05).cos());
    let weights = BranchWeights {
        weight_maps: vec![FeatureGrid::from_fn(h, w, 1, |i, j, _| 1.0 + ((i + j) % 3) as f64)],
        affinities: vec![AffinityField::random(h, w, 1, 3, true, 4)?],
    };
    let specs = [
        PyramidSpec { mode: PyramidMode::Spp, targets: vec![(16, 24), (8, 12), (4, 6)], rates: vec![] },
        PyramidSpec { mode: PyramidMode::Cspp, targets: vec![(16, 24), (8, 12), (4, 6)], rates: vec![] },
        PyramidSpec { mode: PyramidMode::AsppLike, targets: vec![], rates: vec![1, 2, 4] },
        PyramidSpec { mode: PyramidMode::Acspp, targets: vec![], rates: vec![1, 2, 4] },
    ];
    specs
        .iter()
        .map(|spec| {
            let fused = build_pyramid_fused(&grid, spec, &weights, &FusionKernels::uniform(spec.levels(), h, w))?;
            Ok((spec.mode, fused.sum() / fused.len() as f64))
        })
        .collect()
}

fn main() -> Result<()> {
    for (mode, mean) in run_example()? {
        println!("{mode:?}: fused mean {mean:.5}");
    }
    Ok(())
}
