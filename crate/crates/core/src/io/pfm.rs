use std::fs;
use std::path::{Path, PathBuf};

use crate::affinity::{kernel_offsets, AffinityField};
use crate::error::{CspnError, Result};
use crate::grid::{FeatureGrid, FeatureVolume};

fn parse_err(offset: usize, message: impl Into<String>) -> CspnError {
    CspnError::Parse {
        offset,
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Returns the line starting at `*pos` (without the newline) and advances
/// past it.
fn header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|n| start + n)
        .ok_or_else(|| parse_err(start, "unterminated header line"))?;
    *pos = end + 1;
    std::str::from_utf8(&bytes[start..end])
        .map(str::trim)
        .map_err(|_| parse_err(start, "header is not ASCII"))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut pos = 0;
    let channels = match header_line(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(parse_err(0, format!("bad magic '{other}'"))),
    };
    let dims_at = pos;
    let dims = header_line(bytes, &mut pos)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(parse_err(dims_at, format!("expected 'width height', got '{dims}'")));
    }
    let width: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(dims_at, format!("bad width '{}'", parts[0])))?;
    let height: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(dims_at, format!("bad height '{}'", parts[1])))?;
    if width == 0 || height == 0 {
        return Err(parse_err(dims_at, "zero dimension"));
    }
    let scale_at = pos;
    let scale_text = header_line(bytes, &mut pos)?;
    let scale: f64 = scale_text
        .parse()
        .map_err(|_| parse_err(scale_at, format!("bad scale '{scale_text}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(scale_at, "scale must be finite and non-zero"));
    }
    let little = scale < 0.0;

    let count = width * height * channels;
    let need = count * 4;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(parse_err(
            pos + payload.len(),
            format!("truncated payload: need {need} bytes, have {}", payload.len()),
        ));
    }
    let mut values = vec![0.0; count];
    for (k, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(parse_err(pos + 4 * k, "non-finite sample"));
        }
        // Rows are stored bottom-up.
        let file_row = k / (width * channels);
        let rest = k % (width * channels);
        let row = height - 1 - file_row;
        values[row * width * channels + rest] = v as f64;
    }
    FeatureGrid::from_vec(height, width, channels, values)
}

pub fn encode_pfm(grid: &FeatureGrid) -> Result<Vec<u8>> {
    let (h, w, c) = grid.shape();
    let magic = match c {
        1 => "Pf",
        3 => "PF",
        _ => {
            return Err(CspnError::invalid(format!(
                "PFM stores 1 or 3 channels, grid has {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * c * 4);
    for row in (0..h).rev() {
        for j in 0..w {
            for ch in 0..c {
                let v = grid.get(row, j, ch) as f32;
                if !v.is_finite() {
                    return Err(CspnError::invalid(format!(
                        "value at ({row}, {j}, {ch}) does not fit in f32"
                    )));
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    decode_pfm(&read_file(path.as_ref())?)
}

/// Writes little-endian PFM. Values are narrowed to `f32`.
pub fn write_pfm(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(grid)?)
}

/// Stores a volume as a single-channel PFM of `depth` planes stacked
/// top-to-bottom (plane 0 on top).
pub fn write_volume_pfm(vol: &FeatureVolume, path: impl AsRef<Path>) -> Result<()> {
    if vol.channels() != 1 {
        return Err(CspnError::invalid("volume PFM stores single-channel volumes"));
    }
    let flat = FeatureGrid::from_vec(
        vol.depth() * vol.height(),
        vol.width(),
        1,
        vol.as_slice().to_vec(),
    )?;
    write_pfm(&flat, path)
}

pub fn read_volume_pfm(path: impl AsRef<Path>, depth: usize) -> Result<FeatureVolume> {
    let flat = read_pfm(path)?;
    if flat.channels() != 1 || depth == 0 || flat.height() % depth != 0 {
        return Err(CspnError::invalid(format!(
            "{}-row single-channel image cannot hold {depth} planes",
            flat.height()
        )));
    }
    FeatureVolume::from_vec(
        depth,
        flat.height() / depth,
        flat.width(),
        1,
        flat.into_vec(),
    )
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Dumps raw affinities as a stacked single-channel PFM with one plane per
/// `(tap, channel)` pair, the center tap last, plus a text sidecar
/// (`<path>.txt`) listing the plane order.
pub fn write_affinity(field: &AffinityField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c, k) = (field.height(), field.width(), field.channels(), field.kernel_size());
    let mut offsets = kernel_offsets(k);
    offsets.push((0, 0));
    let planes = offsets.len() * c;
    let taps = field.taps();
    let mut values = Vec::with_capacity(planes * h * w);
    let mut header = format!("kernel_size {k}\nchannels {c}\nheight {h}\nwidth {w}\nplane,a,b,channel\n");
    for (t, &(a, b)) in offsets.iter().enumerate() {
        for ch in 0..c {
            header.push_str(&format!("{},{a},{b},{ch}\n", t * c + ch));
            for i in 0..h {
                for j in 0..w {
                    values.push(if t < taps {
                        field.raw(i, j, ch)[t]
                    } else {
                        field.raw_center(i, j, ch)
                    });
                }
            }
        }
    }
    write_pfm(&FeatureGrid::from_vec(planes * h, w, 1, values)?, path)?;
    write_file(&sidecar(path), header.as_bytes())
}

pub fn read_affinity(path: impl AsRef<Path>) -> Result<AffinityField> {
    let path = path.as_ref();
    let meta = String::from_utf8(read_file(&sidecar(path))?)
        .map_err(|_| CspnError::invalid("affinity sidecar is not UTF-8"))?;
    let get = |key: &str| -> Result<usize> {
        meta.lines()
            .find_map(|l| l.strip_prefix(key).map(str::trim))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CspnError::invalid(format!("affinity sidecar lacks '{key}'")))
    };
    let (k, c, h, w) = (get("kernel_size")?, get("channels")?, get("height")?, get("width")?);
    let stack = read_pfm(path)?;
    let taps = k * k - 1;
    if stack.width() != w || stack.height() != (taps + 1) * c * h {
        return Err(CspnError::shape((taps + 1) * c * h, stack.height()));
    }
    let plane = |t: usize, ch: usize, i: usize, j: usize| stack.get((t * c + ch) * h + i, j, 0);
    let field = AffinityField::from_fn(h, w, c, k, |i, j, ch, t| plane(t, ch, i, j))?;
    let mut center = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                center.push(plane(taps, ch, i, j));
            }
        }
    }
    field.with_center(center)
}
