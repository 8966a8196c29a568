// Compares reverse-mode gradients of the propagation with central finite
// differences for every normalization mode.

use cspn::{gradcheck, NormMode, Result};

pub fn run_example() -> Result<Vec<(NormMode, f64)>> {
    NormMode::ALL
        .into_iter()
        .map(|mode| Ok((mode, gradcheck((5, 4), 3, 3, mode, 2)?.max_rel_err())))
        .collect()
}

fn main() -> Result<()> {
    for (mode, err) in run_example()? {
        println!("{mode:>20}: max relative error {err:.2e}");
    }
    Ok(())
}
