use std::fs;
use std::path::Path;

use crate::error::{CspnError, Result};
use crate::grid::FeatureGrid;

fn parse_err(offset: usize, message: impl Into<String>) -> CspnError {
    CspnError::Parse {
        offset,
        message: message.into(),
    }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(start, "unexpected end of header"));
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let (at, tok) = token(bytes, pos)?;
    tok.parse()
        .map_err(|_| parse_err(at, format!("bad {what} '{tok}'")))
}

/// Decodes binary `P5`, scaling samples to `[0, 1]` by `maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut pos = 0;
    let (_, magic) = token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(parse_err(0, format!("bad magic '{magic}'")));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < need {
        return Err(parse_err(
            pos + payload.len(),
            format!("truncated raster: need {need} bytes, have {}", payload.len()),
        ));
    }
    let scale = maxval as f64;
    let mut values = Vec::with_capacity(width * height);
    for k in 0..width * height {
        let v = if bps == 1 {
            payload[k] as usize
        } else {
            u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as usize
        };
        if v > maxval {
            return Err(parse_err(pos + k * bps, format!("sample {v} exceeds maxval")));
        }
        values.push(v as f64 / scale);
    }
    FeatureGrid::from_vec(height, width, 1, values)
}

pub fn encode_pgm(grid: &FeatureGrid, maxval: u16) -> Result<Vec<u8>> {
    if grid.channels() != 1 {
        return Err(CspnError::invalid("PGM stores single-channel images"));
    }
    if maxval == 0 {
        return Err(CspnError::invalid("maxval must be positive"));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let m = maxval as f64;
    for &v in grid.as_slice() {
        let q = (v.clamp(0.0, 1.0) * m).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&bytes)
}

/// Writes `P5` with values clamped to `[0, 1]` and quantized to `maxval`.
pub fn write_pgm(grid: &FeatureGrid, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(grid, maxval)?).map_err(|source| CspnError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p5(w: usize, h: usize, maxval: usize, data: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn uniform_white() {
        let g = decode_pgm(&p5(8, 8, 255, &[255; 64])).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn mid_gray() {
        let g = decode_pgm(&p5(1, 1, 255, &[128])).unwrap();
        assert!((g.get(0, 0, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_pgm(&p5(1, 1, 0, &[0])).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(&p5(2, 2, 255, &[1, 2])).is_err());
        assert!(decode_pgm(&p5(1, 1, 70000, &[0, 0])).is_err());
    }

    #[test]
    fn comments_and_sixteen_bit() {
        let mut b = b"P5\n# guide\n2 1\n65535\n".to_vec();
        b.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let g = decode_pgm(&b).unwrap();
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert!((g.get(0, 1, 0) - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_within_quantization() {
        let g = FeatureGrid::from_fn(5, 6, 1, |i, j, _| ((i * 6 + j) as f64 / 29.0).sin().abs());
        for maxval in [255u16, 1023, 65535] {
            let back = decode_pgm(&encode_pgm(&g, maxval).unwrap()).unwrap();
            assert!(back.max_abs_diff(&g) <= 0.5 / maxval as f64 + 1e-12);
        }
    }
}
