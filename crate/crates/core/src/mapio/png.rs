//! PNG images: 8-bit RGB, 8-bit masks, 16-bit labels and label palettes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::geom::{EquirectGrid, Map, Vec3, Vec3Map};
use crate::segmentation::LabelMap;
use crate::{Error, Result};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format("PNG", e.to_string())
}

fn write_raw(path: &Path, grid: &EquirectGrid, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    write_sized(path, grid.width(), grid.height(), color, depth, data)
}

fn write_sized(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let (w, h) = match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::InvalidInput(format!("cannot write a {width}x{height} PNG"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(data).map_err(png_err)?;
    w.finish().map_err(png_err)
}

struct Raw {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn read_raw(path: &Path) -> Result<Raw> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(info.buffer_size());
    Ok(Raw {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Raw {
    fn grid(&self) -> Result<EquirectGrid> {
        EquirectGrid::from_dims(self.width, self.height)
    }
}

/// Writes a `width × height` image of colours in `[0, 1]`, row-major.
pub fn write_rgb_image(path: &Path, width: usize, height: usize, rgb: &[Vec3]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} colours for a {width}x{height} image",
            rgb.len()
        )));
    }
    let data: Vec<u8> = rgb.iter().flat_map(|c| [to_u8(c.x), to_u8(c.y), to_u8(c.z)]).collect();
    write_sized(path, width, height, ColorType::Rgb, BitDepth::Eight, &data)
}

/// Reads 8-bit RGB or RGBA (alpha dropped) as `(width, height, colours)`.
pub fn read_rgb_image(path: &Path) -> Result<(usize, usize, Vec<Vec3>)> {
    let raw = read_raw(path)?;
    let stride = match (raw.color, raw.depth) {
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (ColorType::Rgba, BitDepth::Eight) => 4,
        (c, d) => return Err(Error::format("PNG", format!("expected 8-bit RGB, got {c:?} at {d:?}"))),
    };
    let values = raw
        .data
        .chunks_exact(stride)
        .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
        .collect();
    Ok((raw.width, raw.height, values))
}

/// Writes colours in `[0, 1]`; invalid pixels are black.
pub fn write_rgb_png(path: &Path, rgb: &Vec3Map) -> Result<()> {
    let data: Vec<Vec3> = rgb
        .values()
        .iter()
        .zip(rgb.mask())
        .map(|(c, &m)| if m { *c } else { Vec3::zeros() })
        .collect();
    write_rgb_image(path, rgb.grid().width(), rgb.grid().height(), &data)
}

pub fn read_rgb_png(path: &Path) -> Result<Vec3Map> {
    let (w, h, values) = read_rgb_image(path)?;
    Map::from_values(EquirectGrid::from_dims(w, h)?, values)
}

/// 8-bit grey mask: 255 valid, 0 invalid.
pub fn write_mask_png(path: &Path, grid: &EquirectGrid, mask: &[bool]) -> Result<()> {
    if mask.len() != grid.len() {
        return Err(Error::ShapeMismatch("mask size".into()));
    }
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_raw(path, grid, ColorType::Grayscale, BitDepth::Eight, &data)
}

/// Any non-zero grey value is valid.
pub fn read_mask_png(path: &Path) -> Result<(EquirectGrid, Vec<bool>)> {
    let raw = read_raw(path)?;
    let bytes = match (raw.color, raw.depth) {
        (ColorType::Grayscale, BitDepth::Eight) => 1,
        (ColorType::Grayscale, BitDepth::Sixteen) => 2,
        (c, d) => {
            return Err(Error::format(
                "PNG",
                format!("expected a grey mask, got {c:?} at {d:?}"),
            ))
        }
    };
    let mask = raw
        .data
        .chunks_exact(bytes)
        .map(|p| p.iter().any(|&b| b != 0))
        .collect();
    Ok((raw.grid()?, mask))
}

/// 16-bit grey label image.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut data = Vec::with_capacity(labels.labels().len() * 2);
    for &l in labels.labels() {
        let l = u16::try_from(l).map_err(|_| Error::InvalidInput(format!("label {l} does not fit in 16 bits")))?;
        data.extend(l.to_be_bytes());
    }
    write_raw(path, labels.grid(), ColorType::Grayscale, BitDepth::Sixteen, &data)
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let raw = read_raw(path)?;
    let labels = match (raw.color, raw.depth) {
        (ColorType::Grayscale, BitDepth::Sixteen) => raw
            .data
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as u32)
            .collect(),
        (ColorType::Grayscale, BitDepth::Eight) => raw.data.iter().map(|&b| b as u32).collect(),
        (c, d) => {
            return Err(Error::format(
                "PNG",
                format!("expected grey labels, got {c:?} at {d:?}"),
            ))
        }
    };
    LabelMap::new(raw.grid()?, labels)
}

/// Distinct, deterministic colour per label; label 0 is black.
pub fn palette_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    // Golden-angle hue walk at fixed saturation and value.
    let h = (label as f64 * 137.507_764_05).rem_euclid(360.0) / 60.0;
    let (s, v) = (0.65, 0.9);
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [to_u8(r + m), to_u8(g + m), to_u8(b + m)]
}

/// Colour-coded label visualisation.
pub fn write_label_palette_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let data: Vec<u8> = labels.labels().iter().flat_map(|&l| palette_color(l)).collect();
    write_raw(path, labels.grid(), ColorType::Rgb, BitDepth::Eight, &data)
}
