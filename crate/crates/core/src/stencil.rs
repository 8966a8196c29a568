//! One Jacobi step of a per-voxel weighted stencil over a `d × h × w × c`
//! block. The 2D operator is the `d = 1` case with planar offsets.

use crate::workers::Workers;

pub(crate) struct Stencil<'a> {
    /// `(depth, height, width, channels)`
    pub dims: (usize, usize, usize, usize),
    /// Offsets `(c, a, b)`; tap `t` at voxel `p` reads `p - offsets[t]`.
    pub offsets: &'a [[isize; 3]],
    /// `offsets.len()` weights per voxel per channel.
    pub weights: &'a [f64],
    /// One center weight per voxel per channel.
    pub center: &'a [f64],
}

impl Stencil<'_> {
    /// `out[p] = center[p]·center_src[p] + Σ_t weights[p][t]·x[p - offsets[t]]`,
    /// zero outside the block.
    pub fn apply(&self, x: &[f64], center_src: &[f64], out: &mut [f64], workers: &Workers) {
        let (d, h, w, c) = self.dims;
        let taps = self.offsets.len();
        debug_assert_eq!(x.len(), d * h * w * c);
        debug_assert_eq!(out.len(), x.len());
        workers.for_each_line(out, w * c, |line, row| {
            let l = line / h;
            let i = line % h;
            for j in 0..w {
                for ch in 0..c {
                    let p = ((l * h + i) * w + j) * c + ch;
                    let mut acc = self.center[p] * center_src[p];
                    let wts = &self.weights[p * taps..(p + 1) * taps];
                    for (off, wt) in self.offsets.iter().zip(wts) {
                        let nl = l as isize - off[0];
                        let ni = i as isize - off[1];
                        let nj = j as isize - off[2];
                        if nl < 0
                            || ni < 0
                            || nj < 0
                            || nl >= d as isize
                            || ni >= h as isize
                            || nj >= w as isize
                        {
                            continue;
                        }
                        let q = ((nl as usize * h + ni as usize) * w + nj as usize) * c + ch;
                        acc += wt * x[q];
                    }
                    row[j * c + ch] = acc;
                }
            }
        });
    }
}

pub(crate) fn planar_offsets(kernel_size: usize, dilation: usize) -> Vec<[isize; 3]> {
    crate::affinity::kernel_offsets(kernel_size)
        .into_iter()
        .map(|(a, b)| [0, a * dilation as isize, b * dilation as isize])
        .collect()
}
