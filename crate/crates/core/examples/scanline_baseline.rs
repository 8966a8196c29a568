// Refines a map with the four-direction scan-line baseline and with CSPN
// from the same raw affinities.

use cspn::{normalize, refine, run, AffinityField, FeatureGrid, NormMode, PropagationConfig, Result, ScanWeights};

pub struct Baseline {
    pub spn_change: f64,
    pub cspn_change: f64,
}

pub fn run_example() -> Result<Baseline> {
    let (h, w) = (24, 32);
    let grid = FeatureGrid::from_fn(h, w, 1, |i, j, _| if (i / 6 + j / 8) % 2 == 0 { 1.0 } else { 0.0 });
    let raw = AffinityField::random(h, w, 1, 3, true, 8)?;
    let spn = refine(&grid, &ScanWeights::from_affinity(&raw, 0.9)?)?;
    let mode = NormMode::PositiveNoCenter;
    let cspn = run(&grid, &normalize(&raw, mode), &PropagationConfig::new(8, mode))?;
    Ok(Baseline {
        spn_change: spn.max_abs_diff(&grid),
        cspn_change: cspn.max_abs_diff(&grid),
    })
}

fn main() -> Result<()> {
    let b = run_example()?;
    println!("scan-line refine max change {:.4}", b.spn_change);
    println!("CSPN, 8 steps   max change {:.4}", b.cspn_change);
    Ok(())
}
