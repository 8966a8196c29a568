// Writes a scene as PFM, PGM and samples CSV, then reads everything back.

use cspn::io::{read_pfm, read_pgm, read_samples_csv, write_pfm, write_pgm, write_samples_csv};
use cspn::{make_scene, sample_sparse, Result};

pub fn run_example(dir: &std::path::Path) -> Result<bool> {
    let scene = make_scene(20, 30, 4, 1)?;
    let samples = sample_sparse(&scene.depth_gt, 25, 2)?;
    write_pfm(&scene.depth_gt, dir.join("gt.pfm"))?;
    write_pgm(&scene.guide, dir.join("guide.pgm"), 255)?;
    write_samples_csv(&samples, dir.join("samples.csv"))?;
    let depth = read_pfm(dir.join("gt.pfm"))?;
    let guide = read_pgm(dir.join("guide.pgm"))?;
    let back = read_samples_csv(dir.join("samples.csv"), (20, 30))?;
    Ok(depth == scene.depth_gt && guide.same_shape(&scene.guide) && back == samples)
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("cspn-file-formats");
    std::fs::create_dir_all(&dir)?;
    println!("round trip exact: {}", run_example(&dir)?);
    Ok(())
}
