// Times the three operators at two worker counts and prints the CSV.

use cspn::bench::to_csv;
use cspn::{run_bench, BenchConfig, BenchRecord, Result};

pub fn run_example() -> Result<Vec<BenchRecord>> {
    let cfg = BenchConfig {
        sizes: vec![(96, 128)],
        workers: vec![1, 2],
        repeats: 3,
        ..Default::default()
    };
    run_bench(&cfg)
}

fn main() -> Result<()> {
    print!("{}", to_csv(&run_example()?));
    Ok(())
}
