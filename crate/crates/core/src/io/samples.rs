use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CspnError, Result};
use crate::grid::{BinaryMask, FeatureGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseSample {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Known values at a sparse set of pixels. A pixel is valid exactly when it
/// carries a sample; every stored value is finite and strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSamples {
    height: usize,
    width: usize,
    entries: Vec<SparseSample>,
}

impl SparseSamples {
    pub fn new(height: usize, width: usize, entries: Vec<SparseSample>) -> Result<Self> {
        let mut seen = BinaryMask::new(height, width, false);
        for (idx, e) in entries.iter().enumerate() {
            validate_entry(height, width, e, &seen).map_err(|message| CspnError::Validation {
                line: idx + 1,
                message,
            })?;
            seen.set(e.row, e.col, true);
        }
        Ok(SparseSamples {
            height,
            width,
            entries,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SparseSamples {
            height,
            width,
            entries: Vec::new(),
        }
    }

    /// Every pixel of channel 0 of `grid` with a positive value.
    pub fn from_dense(grid: &FeatureGrid) -> Self {
        let mut entries = Vec::new();
        for i in 0..grid.height() {
            for j in 0..grid.width() {
                let v = grid.get(i, j, 0);
                if v > 0.0 {
                    entries.push(SparseSample {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        SparseSamples {
            height: grid.height(),
            width: grid.width(),
            entries,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entries(&self) -> &[SparseSample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Validity indicator `m(i, j)`.
    pub fn mask(&self) -> BinaryMask {
        let mut m = BinaryMask::new(self.height, self.width, false);
        for e in &self.entries {
            m.set(e.row, e.col, true);
        }
        m
    }

    /// Dense map holding the sample values and zero elsewhere.
    pub fn to_dense(&self) -> FeatureGrid {
        let mut g = FeatureGrid::zeros(self.height, self.width, 1);
        for e in &self.entries {
            g.set(e.row, e.col, 0, e.value);
        }
        g
    }

    pub(crate) fn check_grid(&self, grid: &FeatureGrid) -> Result<()> {
        if self.height == grid.height() && self.width == grid.width() {
            Ok(())
        } else {
            Err(CspnError::shape(
                (self.height, self.width),
                (grid.height(), grid.width()),
            ))
        }
    }

    /// Writes each sample value into every channel of `grid`.
    pub fn replace_into(&self, grid: &mut FeatureGrid) {
        for e in &self.entries {
            for ch in 0..grid.channels() {
                grid.set(e.row, e.col, ch, e.value);
            }
        }
    }
}

fn validate_entry(
    height: usize,
    width: usize,
    e: &SparseSample,
    seen: &BinaryMask,
) -> std::result::Result<(), String> {
    if e.row >= height || e.col >= width {
        return Err(format!(
            "coordinate ({}, {}) outside {height}x{width}",
            e.row, e.col
        ));
    }
    if !e.value.is_finite() || e.value <= 0.0 {
        return Err(format!("value {} must be finite and positive", e.value));
    }
    if seen.get(e.row, e.col) {
        return Err(format!("duplicate coordinate ({}, {})", e.row, e.col));
    }
    Ok(())
}

/// Reads `row,col,value` CSV. Errors name the offending 1-based line
/// (the header is line 1).
pub fn read_samples_csv(path: impl AsRef<Path>, shape: (usize, usize)) -> Result<SparseSamples> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_samples_csv(&text, shape)
}

pub fn parse_samples_csv(text: &str, (height, width): (usize, usize)) -> Result<SparseSamples> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "row,col,value" => {}
        _ => {
            return Err(CspnError::Validation {
                line: 1,
                message: "expected header 'row,col,value'".into(),
            })
        }
    }
    let mut seen = BinaryMask::new(height, width, false);
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CspnError::Validation {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let row: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad row '{}'", fields[0])))?;
        let col: usize = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad col '{}'", fields[1])))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad value '{}'", fields[2])))?;
        let e = SparseSample { row, col, value };
        validate_entry(height, width, &e, &seen).map_err(bad)?;
        seen.set(row, col, true);
        entries.push(e);
    }
    Ok(SparseSamples {
        height,
        width,
        entries,
    })
}

pub fn format_samples_csv(samples: &SparseSamples) -> String {
    let mut out = String::from("row,col,value\n");
    for e in &samples.entries {
        out.push_str(&format!("{},{},{:.16e}\n", e.row, e.col, e.value));
    }
    out
}

pub fn write_samples_csv(samples: &SparseSamples, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(format_samples_csv(samples).as_bytes())?;
    Ok(())
}

/// Draws `count` distinct pixels uniformly without replacement among those
/// with positive ground truth and copies their values. Output is sorted by
/// `(row, col)`.
pub fn sample_sparse(depth_gt: &FeatureGrid, count: usize, seed: u64) -> Result<SparseSamples> {
    let candidates: Vec<(usize, usize)> = (0..depth_gt.height())
        .flat_map(|i| (0..depth_gt.width()).map(move |j| (i, j)))
        .filter(|&(i, j)| depth_gt.get(i, j, 0) > 0.0)
        .collect();
    if count > candidates.len() {
        return Err(CspnError::invalid(format!(
            "requested {count} samples but only {} pixels have positive depth",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), count).into_vec();
    picked.sort_unstable();
    let entries = picked
        .into_iter()
        .map(|idx| {
            let (row, col) = candidates[idx];
            SparseSample {
                row,
                col,
                value: depth_gt.get(row, col, 0),
            }
        })
        .collect();
    Ok(SparseSamples {
        height: depth_gt.height(),
        width: depth_gt.width(),
        entries,
    })
}
