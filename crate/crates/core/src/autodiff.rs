//! Reverse-mode gradients of the recurrent propagation with respect to the
//! raw affinities and the initial field, a finite-difference checker, and a
//! plain gradient-descent trainer for per-pixel affinities.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{
    guided_affinity, kernel_offsets, normalize, normalize_taps_vjp, AffinityField, GuidedParams, NormMode,
    NormalizedKernels,
};
use crate::cspn2d::{PropagationConfig, Propagator};
use crate::disparity::pairwise_sum;
use crate::error::{CspnError, Result};
use crate::grid::FeatureGrid;
use crate::io::{coarse_estimate, SparseSamples, SyntheticScene, COARSE_RADIUS};
use crate::workers::Workers;

/// Everything the backward pass needs from one forward run.
#[derive(Clone, Debug)]
pub struct Tape {
    raw: AffinityField,
    kern: NormalizedKernels,
    /// The anchor after sample replacement.
    anchor: FeatureGrid,
    /// Iterates `H[0] .. H[N-1]`, the inputs of each step.
    snapshots: Vec<FeatureGrid>,
    sparse: Option<SparseSamples>,
    worker_count: usize,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn kernels(&self) -> &NormalizedKernels {
        &self.kern
    }
}

/// Runs `cfg.iterations` steps with kernels normalized from `raw` under
/// `cfg.mode`, recording each step's input. With `sparse`, samples are
/// written into `h_0` first and again after every step, exactly as
/// [`crate::cspn2d::complete_depth`] does.
pub fn forward_taped(
    h_0: &FeatureGrid,
    raw: &AffinityField,
    cfg: &PropagationConfig,
    sparse: Option<&SparseSamples>,
) -> Result<(FeatureGrid, Tape)> {
    let kern = normalize(raw, cfg.mode);
    kern.check_grid(h_0)?;
    let mut anchor = h_0.clone();
    if let Some(s) = sparse {
        s.check_grid(h_0)?;
        s.replace_into(&mut anchor);
    }
    let workers = cfg.workers()?;
    let prop = Propagator::new(&kern);
    let mut snapshots = Vec::with_capacity(cfg.iterations);
    let mut x = anchor.clone();
    for _ in 0..cfg.iterations {
        let mut next = FeatureGrid::zeros(x.height(), x.width(), x.channels());
        prop.step_into(&x, &anchor, &mut next, &workers);
        if let Some(s) = sparse {
            s.replace_into(&mut next);
        }
        snapshots.push(std::mem::replace(&mut x, next));
    }
    let tape = Tape {
        raw: raw.clone(),
        kern,
        anchor,
        snapshots,
        sparse: sparse.cloned(),
        worker_count: cfg.worker_count,
    };
    Ok((x, tape))
}

fn zero_samples(grid: &mut FeatureGrid, sparse: Option<&SparseSamples>) {
    if let Some(s) = sparse {
        for e in s.entries() {
            for ch in 0..grid.channels() {
                grid.set(e.row, e.col, ch, 0.0);
            }
        }
    }
}

/// Gradients of `⟨grad_out, output⟩` with respect to `h_0` and the raw
/// affinities (neighbors and center) of the recorded run.
pub fn backward(tape: &Tape, grad_out: &FeatureGrid) -> Result<(FeatureGrid, AffinityField)> {
    let kern = &tape.kern;
    kern.check_grid(grad_out)?;
    let workers = Workers::new(tape.worker_count)?;
    let (h, w, c) = grad_out.shape();
    let k = kern.kernel_size();
    let taps = kern.taps();
    let offsets = kernel_offsets(k);
    let moving = kern.mode().center_uses_current();
    let nw = kern.neighbor_weights();
    let cw = kern.center_weights();
    let sparse = tape.sparse.as_ref();

    let mut g = grad_out.clone();
    let mut grad_w = vec![0.0; h * w * c * taps];
    let mut grad_c = vec![0.0; h * w * c];
    let mut grad_anchor = FeatureGrid::zeros(h, w, c);
    let inside = |i: isize, j: isize| i >= 0 && j >= 0 && i < h as isize && j < w as isize;

    for x in tape.snapshots.iter().rev() {
        zero_samples(&mut g, sparse);
        let center_src = if moving { x } else { &tape.anchor };
        let (gs, xs, cs) = (g.as_slice(), x.as_slice(), center_src.as_slice());

        // Weight gradients: each pixel owns its own taps.
        workers.for_each_line(&mut grad_w, w * c * taps, |i, row| {
            for j in 0..w {
                for ch in 0..c {
                    let p = (i * w + j) * c + ch;
                    let gv = gs[p];
                    let base = (j * c + ch) * taps;
                    for (t, &(a, b)) in offsets.iter().enumerate() {
                        let (ni, nj) = (i as isize - a, j as isize - b);
                        if inside(ni, nj) {
                            row[base + t] += gv * xs[(ni as usize * w + nj as usize) * c + ch];
                        }
                    }
                }
            }
        });
        for ((gc, &gv), &src) in grad_c.iter_mut().zip(gs).zip(cs) {
            *gc += gv * src;
        }
        if !moving {
            for ((ga, &gv), &cwt) in grad_anchor.as_mut_slice().iter_mut().zip(gs).zip(cw) {
                *ga += gv * cwt;
            }
        }

        // Input gradient, gathered: pixel q feeds pixel q + o through tap o.
        let mut prev = FeatureGrid::zeros(h, w, c);
        workers.for_each_line(prev.as_mut_slice(), w * c, |i, row| {
            for j in 0..w {
                for ch in 0..c {
                    let q = (i * w + j) * c + ch;
                    let mut acc = if moving { gs[q] * cw[q] } else { 0.0 };
                    for (t, &(a, b)) in offsets.iter().enumerate() {
                        let (pi, pj) = (i as isize + a, j as isize + b);
                        if inside(pi, pj) {
                            let p = (pi as usize * w + pj as usize) * c + ch;
                            acc += gs[p] * nw[p * taps + t];
                        }
                    }
                    row[j * c + ch] = acc;
                }
            }
        });
        g = prev;
    }
    for (ga, gv) in grad_anchor.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *ga += gv;
    }
    zero_samples(&mut grad_anchor, sparse);

    let raw = &tape.raw;
    let mut grad_raw = vec![0.0; raw.neighbors().len()];
    let mut grad_raw_center = vec![0.0; raw.centers().len()];
    for p in 0..h * w * c {
        let span = p * taps..(p + 1) * taps;
        grad_raw_center[p] = normalize_taps_vjp(
            kern.mode(),
            &raw.neighbors()[span.clone()],
            raw.centers()[p],
            &grad_w[span.clone()],
            grad_c[p],
            &mut grad_raw[span],
        );
    }
    let grad_field = AffinityField::new(h, w, c, k, grad_raw)?.with_center(grad_raw_center)?;
    Ok((grad_anchor, grad_field))
}

/// Largest errors between analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub max_abs_err_h0: f64,
    pub max_rel_err_h0: f64,
    pub max_abs_err_raw: f64,
    pub max_rel_err_raw: f64,
    pub coordinates: usize,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_h0.max(self.max_rel_err_raw)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "name,value\nmax_abs_err_h0,{}\nmax_rel_err_h0,{}\nmax_abs_err_raw,{}\nmax_rel_err_raw,{}\ncoordinates,{}\n",
            self.max_abs_err_h0, self.max_rel_err_h0, self.max_abs_err_raw, self.max_rel_err_raw, self.coordinates
        )
    }
}

pub const GRADCHECK_EPS: f64 = 1e-6;
/// Raw affinities closer to zero than this sit too near the `|·|` kink for
/// central differences and are resampled.
pub const KINK_GUARD: f64 = 1e-3;

fn relative(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

fn dot(a: &FeatureGrid, b: &FeatureGrid) -> f64 {
    let prod: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    pairwise_sum(&prod)
}

/// Compares [`backward`] with central differences of `⟨grad_out, output⟩`
/// for every coordinate of `h_0` and of the raw affinities.
pub fn gradcheck_inputs(
    h_0: &FeatureGrid,
    raw: &AffinityField,
    grad_out: &FeatureGrid,
    cfg: &PropagationConfig,
    sparse: Option<&SparseSamples>,
) -> Result<GradcheckReport> {
    let (_, tape) = forward_taped(h_0, raw, cfg, sparse)?;
    let (g_h0, g_raw) = backward(&tape, grad_out)?;
    let loss = |h: &FeatureGrid, r: &AffinityField| -> Result<f64> {
        Ok(dot(grad_out, &forward_taped(h, r, cfg, sparse)?.0))
    };
    let eps = GRADCHECK_EPS;
    let mut report = GradcheckReport::default();
    let note = |analytic: f64, fd: f64, abs: &mut f64, rel: &mut f64| {
        *abs = abs.max((analytic - fd).abs());
        *rel = rel.max(relative(analytic, fd));
    };

    for k in 0..h_0.len() {
        let mut up = h_0.clone();
        let mut dn = h_0.clone();
        up.as_mut_slice()[k] += eps;
        dn.as_mut_slice()[k] -= eps;
        let fd = (loss(&up, raw)? - loss(&dn, raw)?) / (2.0 * eps);
        note(g_h0.as_slice()[k], fd, &mut report.max_abs_err_h0, &mut report.max_rel_err_h0);
        report.coordinates += 1;
    }
    let n_nbr = raw.neighbors().len();
    for k in 0..n_nbr + raw.centers().len() {
        let bump = |delta: f64| {
            let mut r = raw.clone();
            if k < n_nbr {
                r.neighbors_mut()[k] += delta;
            } else {
                r.centers_mut()[k - n_nbr] += delta;
            }
            r
        };
        let fd = (loss(h_0, &bump(eps))? - loss(h_0, &bump(-eps))?) / (2.0 * eps);
        let analytic = if k < n_nbr {
            g_raw.neighbors()[k]
        } else {
            g_raw.centers()[k - n_nbr]
        };
        note(analytic, fd, &mut report.max_abs_err_raw, &mut report.max_rel_err_raw);
        report.coordinates += 1;
    }
    Ok(report)
}

/// Gradient check on random inputs of size `height × width`. Raw affinities
/// are signed for the signed modes and resampled until every value is at
/// least [`KINK_GUARD`] away from zero.
pub fn gradcheck(
    (height, width): (usize, usize),
    kernel_size: usize,
    iterations: usize,
    mode: NormMode,
    seed: u64,
) -> Result<GradcheckReport> {
    if height * width > 64 {
        return Err(CspnError::invalid("gradcheck is limited to 8x8 grids"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_0 = FeatureGrid::from_fn(height, width, 1, |_, _, _| rng.gen_range(-1.0..1.0));
    let grad_out = FeatureGrid::from_fn(height, width, 1, |_, _, _| rng.gen_range(-1.0..1.0));
    let signed = matches!(mode, NormMode::AbsSumAnchor | NormMode::MovingCenter);
    let draw = |rng: &mut ChaCha8Rng| loop {
        let v: f64 = if signed {
            rng.gen_range(-1.0..1.0)
        } else {
            rng.gen_range(0.0..1.0)
        };
        if v.abs() >= KINK_GUARD {
            return v;
        }
    };
    let raw = AffinityField::from_fn(height, width, 1, kernel_size, |_, _, _, _| draw(&mut rng))?;
    let centers = (0..height * width).map(|_| draw(&mut rng)).collect();
    let raw = raw.with_center(centers)?;
    let cfg = PropagationConfig::new(iterations, mode).with_workers(1);
    gradcheck_inputs(&h_0, &raw, &grad_out, &cfg, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    L1,
    L2,
}

impl FromStr for Loss {
    type Err = CspnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Loss::L1),
            "l2" | "L2" => Ok(Loss::L2),
            other => Err(CspnError::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::L1 => "l1",
            Loss::L2 => "l2",
        })
    }
}

impl Loss {
    /// Mean loss over all pixels.
    pub fn value(self, pred: &FeatureGrid, gt: &FeatureGrid) -> Result<f64> {
        pred.check_shape(gt)?;
        let terms: Vec<f64> = pred
            .as_slice()
            .iter()
            .zip(gt.as_slice())
            .map(|(p, g)| match self {
                Loss::L1 => (p - g).abs(),
                Loss::L2 => (p - g) * (p - g),
            })
            .collect();
        Ok(pairwise_sum(&terms) / pred.len() as f64)
    }

    /// Gradient of [`Loss::value`] with respect to `pred`; the L1
    /// subgradient at zero error is zero.
    pub fn gradient(self, pred: &FeatureGrid, gt: &FeatureGrid) -> Result<FeatureGrid> {
        pred.check_shape(gt)?;
        let n = pred.len() as f64;
        let (h, w, c) = pred.shape();
        FeatureGrid::from_vec(
            h,
            w,
            c,
            pred.as_slice()
                .iter()
                .zip(gt.as_slice())
                .map(|(p, g)| {
                    let d = p - g;
                    match self {
                        Loss::L1 if d == 0.0 => 0.0,
                        Loss::L1 => d.signum() / n,
                        Loss::L2 => 2.0 * d / n,
                    }
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub step_size: f64,
    pub steps: usize,
    pub loss: Loss,
    pub mode: NormMode,
    /// Recorded with runs; the command line derives scenes and samples from it.
    pub seed: u64,
    /// Parameters of the guided initialization.
    pub guided: GuidedParams,
    /// Box-blur radius of the coarse initial map (see [`coarse_estimate`]).
    pub init_blur: usize,
    /// Stop early once the loss falls below this fraction of the first loss.
    pub stop_ratio: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            step_size: 200.0,
            steps: 300,
            loss: Loss::L1,
            mode: NormMode::PositiveNoCenter,
            seed: 0,
            guided: GuidedParams::edge_aware(),
            init_blur: COARSE_RADIUS,
            stop_ratio: None,
        }
    }
}

impl LearnConfig {
    fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(CspnError::invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub affinity: AffinityField,
    /// Loss before each update, then the final loss: `steps + 1` entries
    /// unless training stopped early.
    pub history: Vec<f64>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (k, v) in self.history.iter().enumerate() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// Learns per-pixel raw affinities for sparse-preserving completion of
/// `scene` from `sparse`, starting from the guided affinity of the scene's
/// guide and the coarse initial map.
pub fn train_toy(
    scene: &SyntheticScene,
    sparse: &SparseSamples,
    cfg: &LearnConfig,
    prop: &PropagationConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = coarse_estimate(sparse, cfg.init_blur)?;
    init.check_shape(&scene.depth_gt)?;
    let mut raw = guided_affinity(&scene.guide, prop.kernel_size, &cfg.guided)?;
    let prop = PropagationConfig { mode: cfg.mode, ..*prop };
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (out, tape) = forward_taped(&init, &raw, &prop, Some(sparse))?;
        let value = cfg.loss.value(&out, &scene.depth_gt)?;
        if !value.is_finite() {
            return Err(CspnError::Diverged { step });
        }
        history.push(value);
        let reached = cfg.stop_ratio.is_some_and(|r| value < r * history[0]);
        if step == cfg.steps || reached {
            break;
        }
        let grad_out = cfg.loss.gradient(&out, &scene.depth_gt)?;
        let (_, grad) = backward(&tape, &grad_out)?;
        for (r, g) in raw.neighbors_mut().iter_mut().zip(grad.neighbors()) {
            *r -= cfg.step_size * g;
        }
        for (r, g) in raw.centers_mut().iter_mut().zip(grad.centers()) {
            *r -= cfg.step_size * g;
        }
        if raw.neighbors().iter().chain(raw.centers()).any(|v| !v.is_finite()) {
            return Err(CspnError::Diverged { step });
        }
    }
    Ok(TrainOutcome { affinity: raw, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cspn2d::{complete_depth, run};
    use crate::io::{make_scene, nearest_fill, sample_sparse};
    use crate::oracle::build;

    fn random_inputs(h: usize, w: usize, c: usize, seed: u64) -> (FeatureGrid, AffinityField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = FeatureGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0));
        (h0, AffinityField::random(h, w, c, 3, false, seed + 1).unwrap())
    }

    #[test]
    fn zero_iterations() {
        let (h0, raw) = random_inputs(4, 3, 1, 1);
        let cfg = PropagationConfig::new(0, NormMode::AbsSumAnchor).with_workers(1);
        let (out, tape) = forward_taped(&h0, &raw, &cfg, None).unwrap();
        assert_eq!(out, h0);
        assert!(tape.is_empty());
        let g = FeatureGrid::from_fn(4, 3, 1, |i, j, _| (i * 3 + j) as f64);
        let (gh, gr) = backward(&tape, &g).unwrap();
        assert_eq!(gh, g);
        assert!(gr.neighbors().iter().chain(gr.centers()).all(|&v| v == 0.0));
    }

    #[test]
    fn primal_matches_untaped_runs() {
        for mode in NormMode::ALL {
            let (h0, raw) = random_inputs(6, 5, 2, 3);
            let cfg = PropagationConfig::new(7, mode).with_workers(2);
            let (out, tape) = forward_taped(&h0, &raw, &cfg, None).unwrap();
            assert_eq!(tape.len(), 7);
            assert_eq!(out, run(&h0, &normalize(&raw, mode), &cfg).unwrap());
        }
        let scene = make_scene(10, 12, 3, 4).unwrap();
        let s = sample_sparse(&scene.depth_gt, 15, 5).unwrap();
        let init = nearest_fill(&s).unwrap();
        let raw = guided_affinity(&scene.guide, 3, &GuidedParams::default()).unwrap();
        let cfg = PropagationConfig::new(5, NormMode::PositiveNoCenter).with_workers(1);
        let (out, _) = forward_taped(&init, &raw, &cfg, Some(&s)).unwrap();
        assert_eq!(out, complete_depth(&init, &s, &normalize(&raw, cfg.mode), &cfg).unwrap());
    }

    #[test]
    fn single_identity_step_passes_gradient_through() {
        let raw = AffinityField::from_fn(3, 4, 1, 3, |_, _, _, _| 0.0).unwrap();
        let h0 = FeatureGrid::filled(3, 4, 1, 2.0);
        let g = FeatureGrid::from_fn(3, 4, 1, |i, j, _| (i + 2 * j) as f64 - 1.5);
        let cfg = PropagationConfig::new(1, NormMode::AbsSumAnchor).with_workers(1);
        let (_, tape) = forward_taped(&h0, &raw, &cfg, None).unwrap();
        assert_eq!(backward(&tape, &g).unwrap().0, g);
    }

    #[test]
    fn one_step_jacobian_is_oracle_transpose() {
        for mode in [NormMode::PositiveNoCenter, NormMode::MovingCenter] {
            let raw = AffinityField::uniform(4, 5, 1, 3).unwrap();
            let kern = normalize(&raw, mode);
            let sys = build(&kern, None).unwrap();
            let dense = sys.dense();
            let n = 20;
            let h0 = FeatureGrid::zeros(4, 5, 1);
            let cfg = PropagationConfig::new(1, mode).with_workers(1);
            let (_, tape) = forward_taped(&h0, &raw, &cfg, None).unwrap();
            for r in 0..n {
                let mut e = vec![0.0; n];
                e[r] = 1.0;
                let g = FeatureGrid::from_vec(4, 5, 1, e).unwrap();
                let (gh, _) = backward(&tape, &g).unwrap();
                for (q, &entry) in dense[r].iter().enumerate() {
                    // Jacobian of one step from h0 (used both as iterate and anchor).
                    let mut expect = entry;
                    if q == r {
                        expect += sys.center()[r];
                    }
                    assert!((gh.as_slice()[q] - expect).abs() < 1e-14, "{mode} r={r} q={q}");
                }
            }
        }
    }

    #[test]
    fn gradcheck_all_modes() {
        for mode in NormMode::ALL {
            for n in [1, 3] {
                let report = gradcheck((5, 4), 3, n, mode, 7 + n as u64).unwrap();
                assert!(report.max_rel_err() <= 1e-5, "{mode} N={n}: {report:?}");
            }
        }
        let r = gradcheck((3, 3), 5, 2, NormMode::AbsSumAnchor, 2).unwrap();
        assert!(r.max_rel_err() <= 1e-5);
        assert!(gradcheck((9, 9), 3, 1, NormMode::AbsSumAnchor, 0).is_err());
    }

    #[test]
    fn gradcheck_with_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h0 = FeatureGrid::from_fn(5, 4, 1, |_, _, _| rng.gen_range(0.5..2.0));
        let raw = AffinityField::from_fn(5, 4, 1, 3, |_, _, _, _| rng.gen_range(0.01..1.0)).unwrap();
        let g = FeatureGrid::from_fn(5, 4, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let s = sample_sparse(&h0, 4, 3).unwrap();
        let cfg = PropagationConfig::new(3, NormMode::PositiveNoCenter).with_workers(1);
        let report = gradcheck_inputs(&h0, &raw, &g, &cfg, Some(&s)).unwrap();
        assert!(report.max_rel_err() <= 1e-5, "{report:?}");

        let (_, tape) = forward_taped(&h0, &raw, &cfg, Some(&s)).unwrap();
        let (gh, _) = backward(&tape, &g).unwrap();
        for e in s.entries() {
            assert_eq!(gh.get(e.row, e.col, 0), 0.0);
        }
    }

    #[test]
    fn directional_derivative_matches_reverse_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (h0, raw) = random_inputs(5, 5, 1, 31);
        let u = FeatureGrid::from_fn(5, 5, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let v_h = FeatureGrid::from_fn(5, 5, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let v_r: Vec<f64> = raw.neighbors().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = PropagationConfig::new(4, NormMode::AbsSumAnchor).with_workers(1);
        let (_, tape) = forward_taped(&h0, &raw, &cfg, None).unwrap();
        let (gh, gr) = backward(&tape, &u).unwrap();
        let reverse = dot(&gh, &v_h)
            + gr.neighbors().iter().zip(&v_r).map(|(a, b)| a * b).sum::<f64>();
        let at = |s: f64| {
            let h = FeatureGrid::from_fn(5, 5, 1, |i, j, c| h0.get(i, j, c) + s * v_h.get(i, j, c));
            let mut r = raw.clone();
            for (x, d) in r.neighbors_mut().iter_mut().zip(&v_r) {
                *x += s * d;
            }
            dot(&u, &forward_taped(&h, &r, &cfg, None).unwrap().0)
        };
        let eps = 1e-6;
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        assert!(relative(reverse, fd) <= 1e-5, "reverse {reverse} fd {fd}");
    }

    #[test]
    fn constant_scene_stays_at_zero_loss() {
        let scene = make_scene(16, 16, 1, 2).unwrap();
        let s = sample_sparse(&scene.depth_gt, 20, 3).unwrap();
        let cfg = LearnConfig {
            steps: 5,
            ..Default::default()
        };
        let prop = PropagationConfig::new(4, cfg.mode).with_workers(1);
        let out = train_toy(&scene, &s, &cfg, &prop).unwrap();
        assert_eq!(out.history.len(), 6);
        assert!(out.history.iter().all(|&l| l < 1e-12));
        assert!(out.history_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn training_reduces_loss_on_small_scene() {
        let scene = make_scene(24, 24, 4, 8).unwrap();
        let s = sample_sparse(&scene.depth_gt, 30, 9).unwrap();
        let cfg = LearnConfig {
            steps: 40,
            ..Default::default()
        };
        let prop = PropagationConfig::new(8, cfg.mode).with_workers(1);
        let out = train_toy(&scene, &s, &cfg, &prop).unwrap();
        assert!(out.history.last().unwrap() < &out.history[0], "{:?}", out.history);
    }

    #[test]
    fn early_stop_at_ratio() {
        let scene = make_scene(24, 24, 4, 8).unwrap();
        let s = sample_sparse(&scene.depth_gt, 30, 9).unwrap();
        let cfg = LearnConfig {
            steps: 200,
            stop_ratio: Some(0.9),
            ..Default::default()
        };
        let prop = PropagationConfig::new(8, cfg.mode).with_workers(1);
        let out = train_toy(&scene, &s, &cfg, &prop).unwrap();
        let last = *out.history.last().unwrap();
        assert!(out.history.len() < 201 && last < 0.9 * out.history[0]);
        assert!(out.history[..out.history.len() - 1].iter().all(|&l| l >= 0.9 * out.history[0]));
    }

    #[test]
    fn invalid_step_size() {
        let scene = make_scene(8, 8, 2, 1).unwrap();
        let s = sample_sparse(&scene.depth_gt, 5, 1).unwrap();
        let cfg = LearnConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(train_toy(&scene, &s, &cfg, &PropagationConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        let mut scene = make_scene(12, 12, 3, 4).unwrap();
        let s = sample_sparse(&scene.depth_gt, 10, 5).unwrap();
        let (i, j) = (0..12)
            .flat_map(|i| (0..12).map(move |j| (i, j)))
            .find(|&(i, j)| !s.mask().get(i, j))
            .unwrap();
        scene.depth_gt.set(i, j, 0, 1e300);
        let cfg = LearnConfig {
            steps: 3,
            loss: Loss::L2,
            ..Default::default()
        };
        let err = train_toy(&scene, &s, &cfg, &PropagationConfig::new(2, cfg.mode)).unwrap_err();
        assert!(matches!(err, CspnError::Diverged { step: 0 }), "{err}");
    }
}
