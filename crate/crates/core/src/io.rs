//! File formats: PGM/PPM images, `DPTH` depth grids, `HMAP` heatmaps and tracked-point lists.
//!
//! Float grids share one layout: a 4-byte magic, `u32` width, `u32` height
//! (little endian), then `width * height` little-endian `f32` values, row-major.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::geometry::{Grid, ImageBuffer, Vector2};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const HEATMAP_MAGIC: &[u8; 4] = b"HMAP";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

/// Binary PNM encoding: `P5` for one channel, `P6` for three, maxval 255.
pub fn encode_pnm(image: &ImageBuffer) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

/// ASCII PNM encoding (`P2` / `P3`).
pub fn encode_pnm_ascii(image: &ImageBuffer) -> String {
    let magic = if image.channels() == 1 { "P2" } else { "P3" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height());
    let per_row = image.width() * image.channels();
    for row in image.data().chunks(per_row.max(1)) {
        let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any of `P2`, `P3`, `P5`, `P6`.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer, FormatError> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, FormatError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("unexpected end of PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token(bytes)?;
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        other => return Err(malformed(format!("unsupported PNM magic {other:?}"))),
    };
    let parse = |s: String| -> Result<usize, FormatError> {
        s.parse::<usize>()
            .map_err(|_| malformed(format!("bad PNM number {s:?}")))
    };
    let width = parse(next_token(bytes)?)?;
    let height = parse(next_token(bytes)?)?;
    let maxval = parse(next_token(bytes)?)?;
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval} unsupported (expected 255)")));
    }
    let n = width * height * channels;
    let data: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| malformed("truncated PNM raster"))?;
        raster.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let s = parse(next_token(bytes)?)?;
            if s > 255 {
                return Err(malformed("PNM sample exceeds maxval"));
            }
            v.push(s as f64 / 255.0);
        }
        v
    };
    ImageBuffer::new(width, height, channels, data).map_err(|e| malformed(e.to_string()))
}

pub fn write_pnm(path: &Path, image: &ImageBuffer) -> Result<(), FormatError> {
    std::fs::write(path, encode_pnm(image))?;
    Ok(())
}

pub fn read_pnm(path: &Path) -> Result<ImageBuffer, FormatError> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn encode_float_grid(magic: &[u8; 4], grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + grid.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_float_grid(magic: &[u8; 4], mut bytes: &[u8]) -> Result<Grid, FormatError> {
    let mut header = [0u8; 12];
    bytes
        .read_exact(&mut header)
        .map_err(|_| malformed("truncated grid header"))?;
    if &header[0..4] != magic {
        return Err(malformed(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&header[0..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let n = width * height;
    if bytes.len() != n * 4 {
        return Err(malformed(format!(
            "expected {} payload bytes, found {}",
            n * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Grid::from_vec(width, height, data).map_err(|e| malformed(e.to_string()))
}

pub fn write_float_grid(path: &Path, magic: &[u8; 4], grid: &Grid) -> Result<(), FormatError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_float_grid(magic, grid))?;
    Ok(())
}

pub fn read_float_grid(path: &Path, magic: &[u8; 4]) -> Result<Grid, FormatError> {
    decode_float_grid(magic, &std::fs::read(path)?)
}

/// Parses tracked tool positions: one `u v` pair per line. Blank lines and `#` comments are skipped.
pub fn parse_points(reader: impl BufRead) -> Result<Vec<Vector2<f64>>, FormatError> {
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut field = || -> Result<f64, FormatError> {
            it.next()
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("line {}: expected \"u v\"", lineno + 1)))
        };
        let u = field()?;
        let v = field()?;
        if it.next().is_some() {
            return Err(malformed(format!("line {}: trailing fields", lineno + 1)));
        }
        points.push(Vector2::new(u, v));
    }
    Ok(points)
}

pub fn read_points(path: &Path) -> Result<Vec<Vector2<f64>>, FormatError> {
    let f = std::fs::File::open(path)?;
    parse_points(std::io::BufReader::new(f))
}

pub fn format_points(points: &[Vector2<f64>]) -> String {
    points
        .iter()
        .map(|p| format!("{} {}\n", p.x, p.y))
        .collect()
}
