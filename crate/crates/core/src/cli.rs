//! Command-line front end. Every command reads and writes PFM/PGM/CSV files
//! and is a pure function of its flags and inputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::affinity::{guided_affinity, normalize, AffinityField, GuidedParams, NormMode};
use crate::autodiff::{gradcheck, train_toy, LearnConfig, Loss};
use crate::bench::{parse_size, run_bench, to_csv, BenchConfig, Operator};
use crate::cspn2d::{complete_depth, run, PropagationConfig};
use crate::cspn3d::FusionKernels;
use crate::disparity::{depth_metrics, soft_argmin, stereo_metrics, CostVolume};
use crate::error::{CspnError, Result};
use crate::grid::{BinaryMask, FeatureGrid};
use crate::io::{
    coarse_estimate, make_scene, read_affinity, read_pfm, read_pgm, read_samples_csv, read_volume_pfm,
    sample_sparse, write_affinity, write_pfm, write_pgm, write_samples_csv, COARSE_RADIUS,
};
use crate::pyramid::{build_pyramid_fused, BranchWeights, PyramidMode, PyramidSpec};
use crate::workers::{default_worker_count, WORKERS_ENV};

#[derive(Debug, Parser)]
#[command(name = "cspn", version, about = "Convolutional spatial propagation tools")]
pub struct Cli {
    /// Worker threads for the parallel operators.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run N propagation steps over a map.
    Propagate(PropagateArgs),
    /// Sparse-preserving depth completion.
    Complete(CompleteArgs),
    /// Pyramid pooling followed by one fusion step.
    Pool(PoolArgs),
    /// Soft-argmin disparity regression over a stacked cost volume.
    Regress(RegressArgs),
    /// Depth or stereo metrics as a name,value CSV.
    Metrics(MetricsArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Learn per-pixel affinities on a synthetic scene.
    TrainToy(TrainToyArgs),
    /// Time the propagation operators.
    Bench(BenchArgs),
    /// Write a synthetic scene: ground truth, guide, samples, initial map.
    MakeScene(MakeSceneArgs),
}

#[derive(Debug, Args)]
pub struct GuideArgs {
    #[arg(long, default_value_t = GuidedParams::edge_aware().theta_alpha)]
    pub theta_alpha: f64,
    #[arg(long, default_value_t = GuidedParams::edge_aware().theta_beta)]
    pub theta_beta: f64,
    #[arg(long, default_value_t = GuidedParams::edge_aware().theta_gamma)]
    pub theta_gamma: f64,
    #[arg(long, default_value_t = GuidedParams::edge_aware().w1)]
    pub w1: f64,
    #[arg(long, default_value_t = GuidedParams::edge_aware().w2)]
    pub w2: f64,
}

impl GuideArgs {
    fn params(&self) -> GuidedParams {
        GuidedParams {
            theta_alpha: self.theta_alpha,
            theta_beta: self.theta_beta,
            theta_gamma: self.theta_gamma,
            w1: self.w1,
            w2: self.w2,
        }
    }
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Guide image (PGM) for guided affinities.
    #[arg(long, conflicts_with = "affinity")]
    pub guide: Option<PathBuf>,
    /// Raw affinity stack written by this tool.
    #[arg(long, required_unless_present = "guide")]
    pub affinity: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 24)]
    pub iters: usize,
    #[arg(long, default_value_t = NormMode::AbsSumAnchor)]
    pub mode: NormMode,
    #[command(flatten)]
    pub guided: GuideArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub guide: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 24)]
    pub iters: usize,
    #[arg(long, default_value_t = NormMode::AbsSumAnchor)]
    pub mode: NormMode,
    #[command(flatten)]
    pub guided: GuideArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// One of spp, cspp, aspp, acspp.
    #[arg(long, default_value = "spp")]
    pub mode: PyramidMode,
    /// Pooled sizes as WxH for the pooling modes.
    #[arg(long, value_delimiter = ',', default_value = "64x64,32x32,16x16,8x8")]
    pub targets: Vec<String>,
    /// Dilation rates for the dilated modes.
    #[arg(long, value_delimiter = ',', default_value = "6,12,18,24")]
    pub rates: Vec<usize>,
    /// Single-channel weight map (PFM) shared by all cspp levels.
    #[arg(long)]
    pub weight_map: Option<PathBuf>,
    /// Raw affinity stack shared by all acspp levels.
    #[arg(long)]
    pub affinity: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Single-channel PFM with the cost planes stacked top to bottom.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub max_disparity: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricsKind {
    Depth,
    Stereo,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth; pixels with non-positive values are ignored.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricsKind::Depth)]
    pub kind: MetricsKind,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub height: usize,
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = NormMode::AbsSumAnchor)]
    pub mode: NormMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub regions: usize,
    /// Number of sparse samples.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = LearnConfig::default().step_size)]
    pub step_size: f64,
    #[arg(long, default_value_t = Loss::L1)]
    pub loss: Loss,
    #[arg(long, default_value_t = NormMode::PositiveNoCenter)]
    pub mode: NormMode,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 24)]
    pub iters: usize,
    /// Loss history CSV (step,loss).
    #[arg(long)]
    pub out: PathBuf,
    /// Where to store the learned raw affinities.
    #[arg(long)]
    pub affinity_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024x768")]
    pub sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub kernels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub iters: Vec<usize>,
    /// Worker counts to sweep; defaults to the global worker count.
    #[arg(long = "worker-counts", value_delimiter = ',')]
    pub worker_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "cspn_step,cspn3d_step,spn_sweep")]
    pub operators: Vec<Operator>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeSceneArgs {
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub regions: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives gt.pfm, guide.pgm, samples.csv and init.pfm.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn single_channel(grid: FeatureGrid, what: &str) -> Result<FeatureGrid> {
    if grid.channels() != 1 {
        return Err(CspnError::invalid(format!("{what} must have one channel")));
    }
    Ok(grid)
}

fn load_affinity(
    guide: Option<&Path>,
    affinity: Option<&Path>,
    k: usize,
    params: &GuidedParams,
) -> Result<AffinityField> {
    match (guide, affinity) {
        (_, Some(path)) => read_affinity(path),
        (Some(path), None) => guided_affinity(&read_pgm(path)?, k, params),
        (None, None) => Err(CspnError::invalid("either --guide or --affinity is required")),
    }
}

/// Executes one parsed command line.
pub fn run_cli(cli: Cli) -> Result<()> {
    let workers = cli.workers.unwrap_or_else(default_worker_count);
    let prop = |iters: usize, k: usize, mode: NormMode| PropagationConfig {
        iterations: iters,
        kernel_size: k,
        mode,
        worker_count: workers,
    };
    match cli.command {
        Command::Propagate(a) => {
            let input = read_pfm(&a.input)?;
            let raw = load_affinity(a.guide.as_deref(), a.affinity.as_deref(), a.k, &a.guided.params())?;
            let kern = normalize(&raw, a.mode);
            let out = run(&input, &kern, &prop(a.iters, a.k, a.mode))?;
            write_pfm(&out, &a.out)
        }
        Command::Complete(a) => {
            let depth = single_channel(read_pfm(&a.depth)?, "depth map")?;
            let guide = read_pgm(&a.guide)?;
            let samples = read_samples_csv(&a.samples, (depth.height(), depth.width()))?;
            let raw = guided_affinity(&guide, a.k, &a.guided.params())?;
            let kern = normalize(&raw, a.mode);
            let out = complete_depth(&depth, &samples, &kern, &prop(a.iters, a.k, a.mode))?;
            write_pfm(&out, &a.out)
        }
        Command::Pool(a) => {
            let input = read_pfm(&a.input)?;
            let spec = match a.mode {
                PyramidMode::Spp | PyramidMode::Cspp => PyramidSpec {
                    mode: a.mode,
                    targets: a.targets.iter().map(|s| parse_size(s)).collect::<Result<_>>()?,
                    rates: Vec::new(),
                },
                PyramidMode::AsppLike | PyramidMode::Acspp => PyramidSpec {
                    mode: a.mode,
                    targets: Vec::new(),
                    rates: a.rates.clone(),
                },
            };
            let weights = BranchWeights {
                weight_maps: a.weight_map.as_deref().map(read_pfm).transpose()?.into_iter().collect(),
                affinities: a.affinity.as_deref().map(read_affinity).transpose()?.into_iter().collect(),
            };
            let fusion = FusionKernels::uniform(spec.levels(), input.height(), input.width());
            let out = build_pyramid_fused(&input, &spec, &weights, &fusion)?;
            write_pfm(&out, &a.out)
        }
        Command::Regress(a) => {
            let vol = read_volume_pfm(&a.cost, a.max_disparity + 1)?;
            let out = soft_argmin(&CostVolume::from_volume(&vol)?);
            write_pfm(&out, &a.out)
        }
        Command::Metrics(a) => {
            let pred = single_channel(read_pfm(&a.pred)?, "prediction")?;
            let gt = single_channel(read_pfm(&a.gt)?, "ground truth")?;
            let valid = BinaryMask::positive(&gt);
            let csv = match a.kind {
                MetricsKind::Depth => depth_metrics(&pred, &gt, &valid)?.to_csv(),
                MetricsKind::Stereo => stereo_metrics(&pred, &gt, &valid)?.to_csv(),
            };
            match a.out {
                Some(path) => write_text(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Gradcheck(a) => {
            let report = gradcheck((a.height, a.width), a.k, a.iters, a.mode, a.seed)?;
            match a.out {
                Some(path) => write_text(&path, &report.to_csv()),
                None => {
                    print!("{}", report.to_csv());
                    Ok(())
                }
            }
        }
        Command::TrainToy(a) => {
            let scene = make_scene(a.height, a.width, a.regions, a.seed)?;
            let samples = sample_sparse(&scene.depth_gt, a.samples, a.seed.wrapping_add(1))?;
            let cfg = LearnConfig {
                step_size: a.step_size,
                steps: a.steps,
                loss: a.loss,
                mode: a.mode,
                seed: a.seed,
                ..Default::default()
            };
            let outcome = train_toy(&scene, &samples, &cfg, &prop(a.iters, a.k, a.mode))?;
            write_text(&a.out, &outcome.history_csv())?;
            if let Some(path) = a.affinity_out {
                write_affinity(&outcome.affinity, path)?;
            }
            Ok(())
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                operators: a.operators,
                sizes: a.sizes.iter().map(|s| parse_size(s)).collect::<Result<_>>()?,
                kernels: a.kernels,
                iterations: a.iters,
                workers: if a.worker_counts.is_empty() {
                    vec![workers]
                } else {
                    a.worker_counts
                },
                repeats: a.repeats,
                seed: a.seed,
                ..Default::default()
            };
            write_text(&a.out, &to_csv(&run_bench(&cfg)?))
        }
        Command::MakeScene(a) => {
            let scene = make_scene(a.height, a.width, a.regions, a.seed)?;
            let samples = sample_sparse(&scene.depth_gt, a.samples, a.seed.wrapping_add(1))?;
            fs::create_dir_all(&a.out_dir).map_err(|source| CspnError::File {
                path: a.out_dir.clone(),
                source,
            })?;
            write_pfm(&scene.depth_gt, a.out_dir.join("gt.pfm"))?;
            write_pgm(&scene.guide, a.out_dir.join("guide.pgm"), u16::MAX)?;
            write_samples_csv(&samples, a.out_dir.join("samples.csv"))?;
            write_pfm(&coarse_estimate(&samples, COARSE_RADIUS)?, a.out_dir.join("init.pfm"))
        }
    }
}
