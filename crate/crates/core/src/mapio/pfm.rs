//! Portable float maps.
//!
//! Layout: `Pf` (one channel) or `PF` (three channels), a line with width
//! and height, a scale line `-1.0` (negative means little-endian), then
//! `f32` samples with rows stored bottom-up. Invalid pixels are written as
//! NaN; on reading, a pixel is valid when all its channels are finite.

use std::path::Path;

use nalgebra::Vector2;

use crate::curvature::CurvatureMap;
use crate::geom::{EquirectGrid, FloatMap, Map, Vec3, Vec3Map};
use crate::{Error, Result};

/// Raw PFM contents with rows top-down.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode_pfm(img: &PfmImage) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::format("PFM", format!("unsupported channel count {c}"))),
    };
    let row_len = img.width * img.channels;
    if img.data.len() != row_len * img.height {
        return Err(Error::ShapeMismatch(format!(
            "PFM payload has {} samples, expected {}",
            img.data.len(),
            row_len * img.height
        )));
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for row in img.data.chunks_exact(row_len.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Next whitespace-delimited header token; consumes exactly one trailing
/// whitespace byte.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos >= bytes.len() {
        return Err(Error::format("PFM", "truncated header"));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format("PFM", "non-ASCII header"))?;
    *pos += 1;
    Ok(tok)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::format("PFM", format!("bad magic {m:?}"))),
    };
    let dim = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(bytes, pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format("PFM", format!("bad {what} {t:?}")))
    };
    let width = dim(&mut pos, "width")?;
    let height = dim(&mut pos, "height")?;
    let scale_tok = token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::format("PFM", format!("bad scale {scale_tok:?}")))?;
    if scale >= 0.0 {
        return Err(Error::format(
            "PFM",
            format!("scale {scale_tok} marks big-endian data, only little-endian (negative scale) is supported"),
        ));
    }
    let row_len = width * channels;
    let expected = row_len
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("PFM", "dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::format(
            "PFM",
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut data = Vec::with_capacity(row_len * height);
    for row in payload.chunks_exact(row_len * 4).rev() {
        data.extend(
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

fn write_image(path: &Path, img: &PfmImage) -> Result<()> {
    std::fs::write(path, encode_pfm(img)?).map_err(|e| Error::io(path, e))
}

fn pixels<T>(map: &Map<T>, channels: impl Fn(&T) -> [f32; 3], n: usize) -> Vec<f32> {
    let mut data = Vec::with_capacity(map.grid().len() * n);
    for (v, &m) in map.values().iter().zip(map.mask()) {
        let c = if m { channels(v) } else { [f32::NAN; 3] };
        data.extend_from_slice(&c[..n]);
    }
    data
}

pub fn scalar_to_pfm(map: &FloatMap) -> PfmImage {
    PfmImage {
        width: map.grid().width(),
        height: map.grid().height(),
        channels: 1,
        data: pixels(map, |&v| [v as f32, 0.0, 0.0], 1),
    }
}

pub fn vec3_to_pfm(map: &Vec3Map) -> PfmImage {
    PfmImage {
        width: map.grid().width(),
        height: map.grid().height(),
        channels: 3,
        data: pixels(map, |v| [v.x as f32, v.y as f32, v.z as f32], 3),
    }
}

/// Curvature maps are stored as `(κ1, κ2, 0)`.
pub fn curvature_to_pfm(map: &CurvatureMap) -> PfmImage {
    PfmImage {
        width: map.grid().width(),
        height: map.grid().height(),
        channels: 3,
        data: pixels(map, |k| [k.x as f32, k.y as f32, 0.0], 3),
    }
}

fn image_grid(img: &PfmImage) -> Result<EquirectGrid> {
    EquirectGrid::from_dims(img.width, img.height)
}

pub fn pfm_to_scalar(img: &PfmImage) -> Result<FloatMap> {
    if img.channels != 1 {
        return Err(Error::format("PFM", "expected a single-channel (Pf) map"));
    }
    let grid = image_grid(img)?;
    let mask = img.data.iter().map(|v| v.is_finite()).collect();
    let values = img
        .data
        .iter()
        .map(|&v| if v.is_finite() { v as f64 } else { 0.0 })
        .collect();
    Map::new(grid, values, mask)
}

fn triples(img: &PfmImage) -> Result<(EquirectGrid, Vec<[f64; 3]>, Vec<bool>)> {
    if img.channels != 3 {
        return Err(Error::format("PFM", "expected a three-channel (PF) map"));
    }
    let grid = image_grid(img)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut mask = Vec::with_capacity(grid.len());
    for c in img.data.chunks_exact(3) {
        let ok = c.iter().all(|v| v.is_finite());
        mask.push(ok);
        values.push(if ok {
            [c[0] as f64, c[1] as f64, c[2] as f64]
        } else {
            [0.0; 3]
        });
    }
    Ok((grid, values, mask))
}

pub fn pfm_to_vec3(img: &PfmImage) -> Result<Vec3Map> {
    let (grid, values, mask) = triples(img)?;
    Map::new(
        grid,
        values.into_iter().map(|[x, y, z]| Vec3::new(x, y, z)).collect(),
        mask,
    )
}

pub fn pfm_to_curvature(img: &PfmImage) -> Result<CurvatureMap> {
    let (grid, values, mask) = triples(img)?;
    Map::new(
        grid,
        values.into_iter().map(|[a, b, _]| Vector2::new(a, b)).collect(),
        mask,
    )
}

pub fn write_scalar_pfm(path: &Path, map: &FloatMap) -> Result<()> {
    write_image(path, &scalar_to_pfm(map))
}

pub fn write_vec3_pfm(path: &Path, map: &Vec3Map) -> Result<()> {
    write_image(path, &vec3_to_pfm(map))
}

pub fn write_curvature_pfm(path: &Path, map: &CurvatureMap) -> Result<()> {
    write_image(path, &curvature_to_pfm(map))
}

pub fn read_scalar_pfm(path: &Path) -> Result<FloatMap> {
    pfm_to_scalar(&read_pfm(path)?)
}

pub fn read_vec3_pfm(path: &Path) -> Result<Vec3Map> {
    pfm_to_vec3(&read_pfm(path)?)
}

pub fn read_curvature_pfm(path: &Path) -> Result<CurvatureMap> {
    pfm_to_curvature(&read_pfm(path)?)
}
