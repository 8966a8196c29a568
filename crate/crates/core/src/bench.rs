//! Wall-clock harness for the propagation operators.
//!
//! Each configuration runs once to warm up, then `repeats` timed times; the
//! median is reported together with a checksum of the output so worker-count
//! determinism can be checked from the CSV alone.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{normalize, AffinityField, NormMode};
use crate::cspn2d::Propagator;
use crate::cspn3d::{normalize3, step3_with_workers, AffinityField3};
use crate::disparity::pairwise_sum;
use crate::error::{CspnError, Result};
use crate::grid::{FeatureGrid, FeatureVolume};
use crate::spn::{refine_with_workers, ScanWeights};
use crate::workers::Workers;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    CspnStep,
    Cspn3dStep,
    SpnSweep,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::CspnStep, Operator::Cspn3dStep, Operator::SpnSweep];

    pub fn name(self) -> &'static str {
        match self {
            Operator::CspnStep => "cspn_step",
            Operator::Cspn3dStep => "cspn3d_step",
            Operator::SpnSweep => "spn_sweep",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = CspnError;

    fn from_str(s: &str) -> Result<Self> {
        Operator::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| CspnError::invalid(format!("unknown operator '{s}'")))
    }
}

/// Parses `WxH` into `(height, width)`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || CspnError::invalid(format!("size '{s}' is not of the form WxH"));
    let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.parse().map_err(|_| bad())?;
    let h: usize = h.parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub operator: Operator,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub iterations: usize,
    pub workers: usize,
    /// Median of the timed repeats, in seconds.
    pub wall_time: f64,
    pub repeats: usize,
    pub checksum: f64,
}

pub const CSV_HEADER: &str = "operator,height,width,k,iters,workers,wall_time_s,repeats,checksum";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.9},{},{:.17e}",
            self.operator,
            self.height,
            self.width,
            self.kernel_size,
            self.iterations,
            self.workers,
            self.wall_time,
            self.repeats,
            self.checksum
        )
    }
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub operators: Vec<Operator>,
    /// `(height, width)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub kernels: Vec<usize>,
    pub iterations: Vec<usize>,
    pub workers: Vec<usize>,
    pub repeats: usize,
    /// Number of layers for the 3D operator.
    pub depth3d: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            operators: Operator::ALL.to_vec(),
            sizes: vec![(768, 1024)],
            kernels: vec![3],
            iterations: vec![1],
            workers: vec![1],
            repeats: 5,
            depth3d: 4,
            seed: 0,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `run` (which returns the output values) and summarizes it.
fn measure(repeats: usize, mut run: impl FnMut() -> Vec<f64>) -> (f64, f64) {
    let checksum = pairwise_sum(&run());
    let times = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(run());
            t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)
        })
        .collect();
    (median(times), checksum)
}

fn random_grid(h: usize, w: usize, seed: u64) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureGrid::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.0..1.0))
}

/// Times one configuration.
#[allow(clippy::too_many_arguments)]
pub fn bench_one(
    op: Operator,
    (height, width): (usize, usize),
    kernel_size: usize,
    iterations: usize,
    worker_count: usize,
    repeats: usize,
    depth3d: usize,
    seed: u64,
) -> Result<BenchRecord> {
    if repeats < 3 {
        return Err(CspnError::invalid("at least 3 repeats are required"));
    }
    let workers = Workers::new(worker_count)?;
    let (wall_time, checksum) = match op {
        Operator::CspnStep => {
            let h0 = random_grid(height, width, seed);
            let raw = AffinityField::random(height, width, 1, kernel_size, false, seed + 1)?;
            let kern = normalize(&raw, NormMode::AbsSumAnchor);
            let prop = Propagator::new(&kern);
            measure(repeats, || prop.iterate(&h0, iterations, None, &workers).into_vec())
        }
        Operator::Cspn3dStep => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v0 = FeatureVolume::from_fn(depth3d, height, width, 1, |_, _, _, _| rng.gen_range(0.0..1.0));
            let raw = AffinityField3::random(depth3d, height, width, 1, kernel_size, seed + 1)?;
            let kern = normalize3(&raw, NormMode::AbsSumAnchor);
            measure(repeats, || {
                let mut v = v0.clone();
                for _ in 0..iterations {
                    v = step3_with_workers(&v, &v0, &kern, &workers).expect("shapes checked");
                }
                v.as_slice().to_vec()
            })
        }
        Operator::SpnSweep => {
            let h0 = random_grid(height, width, seed);
            let raw = AffinityField::random(height, width, 1, 3, true, seed + 1)?;
            let weights = ScanWeights::from_affinity(&raw, 0.9)?;
            measure(repeats, || {
                let mut h = h0.clone();
                for _ in 0..iterations {
                    h = refine_with_workers(&h, &weights, &workers).expect("shapes checked");
                }
                h.into_vec()
            })
        }
    };
    Ok(BenchRecord {
        operator: op,
        height,
        width,
        kernel_size,
        iterations,
        workers: worker_count,
        wall_time,
        repeats,
        checksum,
    })
}

/// Runs the full cartesian product of the configuration.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &op in &cfg.operators {
        for &size in &cfg.sizes {
            for &k in &cfg.kernels {
                for &iters in &cfg.iterations {
                    for &w in &cfg.workers {
                        out.push(bench_one(op, size, k, iters, w, cfg.repeats, cfg.depth3d, cfg.seed)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `time(1 worker) / time(workers)` for matching records, if both exist.
pub fn speedup(records: &[BenchRecord], op: Operator, size: (usize, usize), workers: usize) -> Option<f64> {
    let time = |w: usize| {
        records
            .iter()
            .find(|r| r.operator == op && (r.height, r.width) == size && r.workers == w)
            .map(|r| r.wall_time)
    };
    Some(time(1)? / time(workers)?)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("1024x768").unwrap(), (768, 1024));
        assert_eq!(parse_size("8X4").unwrap(), (4, 8));
        for bad in ["1024", "x768", "0x5", "axb", "10x-3"] {
            assert!(parse_size(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn operator_names_round_trip() {
        for op in Operator::ALL {
            assert_eq!(op.name().parse::<Operator>().unwrap(), op);
        }
        assert!("spn".parse::<Operator>().is_err());
    }

    #[test]
    fn checksums_invariant_across_workers() {
        let cfg = BenchConfig {
            sizes: vec![(24, 32)],
            kernels: vec![3, 5],
            iterations: vec![2],
            workers: vec![1, 4],
            repeats: 3,
            depth3d: 3,
            ..Default::default()
        };
        let records = run_bench(&cfg).unwrap();
        assert_eq!(records.len(), 3 * 2 * 2);
        for pair in records.chunks(2) {
            assert_eq!(pair[0].checksum.to_bits(), pair[1].checksum.to_bits());
            assert!(pair.iter().all(|r| r.wall_time > 0.0 && r.repeats == 3));
        }
        let csv = to_csv(&records);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 13);
        assert!(speedup(&records, Operator::CspnStep, (24, 32), 4).is_some());
    }

    #[test]
    fn too_few_repeats() {
        assert!(bench_one(Operator::CspnStep, (4, 4), 3, 1, 1, 2, 2, 0).is_err());
    }

    #[test]
    fn median_and_fit() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let line: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, 2.0 * k as f64 + 1.0)).collect();
        assert!((linear_r2(&line) - 1.0).abs() < 1e-12);
    }
}
