// Builds the explicit diffusion matrix of a random kernel field, checks the
// stencil step against it and prints the stability quantities.

use cspn::oracle::build;
use cspn::{normalize, stability_margin, step, AffinityField, FeatureGrid, NormMode, Result};

pub struct OracleSummary {
    pub step_error: f64,
    pub margin: f64,
    pub gershgorin: f64,
    pub spectral_radius: f64,
    pub operator_norm: f64,
}

pub fn run_example() -> Result<OracleSummary> {
    let raw = AffinityField::random(6, 7, 1, 3, false, 5)?;
    let kern = normalize(&raw, NormMode::AbsSumAnchor);
    let sys = build(&kern, None)?;
    let h_t = FeatureGrid::from_fn(6, 7, 1, |i, j, _| ((i * 3 + j) % 4) as f64);
    let h_0 = FeatureGrid::from_fn(6, 7, 1, |i, j, _| (i as f64 - j as f64) * 0.25);
    let stencil = step(&h_t, &h_0, &kern)?;
    let dense = sys.step_dense(h_t.as_slice(), h_0.as_slice())?;
    let step_error = stencil.as_slice().iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(OracleSummary {
        step_error,
        margin: stability_margin(&kern),
        gershgorin: sys.gershgorin_bound(),
        spectral_radius: sys.spectral_radius(400, 1),
        operator_norm: sys.operator_norm(400, 1),
    })
}

fn main() -> Result<()> {
    let s = run_example()?;
    println!("stencil vs matrix max error {:.3e}", s.step_error);
    println!("stability margin            {:.6}", s.margin);
    println!("Gershgorin row bound        {:.6}", s.gershgorin);
    println!("spectral radius             {:.6}", s.spectral_radius);
    println!("operator 2-norm             {:.6}", s.operator_norm);
    Ok(())
}
