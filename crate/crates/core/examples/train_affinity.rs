// Learns per-pixel affinities for completion of one synthetic scene by
// gradient descent and prints the loss curve.

use cspn::{make_scene, sample_sparse, train_toy, LearnConfig, NormMode, PropagationConfig, Result};

pub fn run_example() -> Result<Vec<f64>> {
    let scene = make_scene(48, 48, 6, 3)?;
    let samples = sample_sparse(&scene.depth_gt, 120, 4)?;
    let cfg = LearnConfig { steps: 40, ..Default::default() };
    let prop = PropagationConfig::new(12, NormMode::PositiveNoCenter);
    Ok(train_toy(&scene, &samples, &cfg, &prop)?.history)
}

fn main() -> Result<()> {
    let history = run_example()?;
    for (step, loss) in history.iter().enumerate().step_by(5) {
        println!("step {step:>3}: L1 {loss:.5}");
    }
    Ok(())
}
