//! Triangle mesh export: Wavefront OBJ with vertex colours and binary PLY.

use std::fmt::Write as _;
use std::path::Path;

use crate::geom::Vec3;
use crate::icosphere::ScaledMesh;
use crate::{Error, Result};

/// Plain indexed triangle mesh; colours are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub colors: Option<Vec<Vec3>>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Keeps valid vertices and the faces between them, reindexed.
    pub fn from_scaled(mesh: &ScaledMesh) -> Self {
        let positions = mesh.positions();
        let mut remap = vec![u32::MAX; positions.len()];
        let mut out = Vec::new();
        let mut colors = mesh.colors.as_ref().map(|_| Vec::new());
        for (i, p) in positions.iter().enumerate() {
            if let Some(p) = p {
                remap[i] = out.len() as u32;
                out.push(*p);
                if let (Some(dst), Some(src)) = (colors.as_mut(), mesh.colors.as_ref()) {
                    dst.push(src[i].unwrap_or_else(Vec3::zeros));
                }
            }
        }
        let faces = mesh
            .valid_faces()
            .into_iter()
            .map(|f| f.map(|i| remap[i as usize]))
            .collect();
        Self {
            positions: out,
            colors,
            faces,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(c) = &self.colors {
            if c.len() != self.positions.len() {
                return Err(Error::ShapeMismatch("one colour per vertex".into()));
            }
        }
        let n = self.positions.len() as u32;
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::InvalidInput("face index out of range".into()));
        }
        Ok(())
    }
}

pub fn encode_obj(mesh: &TriMesh) -> Result<String> {
    mesh.validate()?;
    let mut s = String::new();
    for (i, p) in mesh.positions.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                writeln!(s, "v {} {} {} {} {} {}", p.x, p.y, p.z, c.x, c.y, c.z)
            }
            None => writeln!(s, "v {} {} {}", p.x, p.y, p.z),
        }
        .expect("writing to a String");
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).expect("writing to a String");
    }
    Ok(s)
}

/// Parses `v` and triangular `f` records; other records are ignored. Face
/// entries may carry `/vt/vn` suffixes.
pub fn decode_obj(text: &str) -> Result<TriMesh> {
    let bad = |line: usize, what: &str| Error::format("OBJ", format!("line {line}: {what}"));
    let mut positions = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| bad(line_no, "bad number")))
                    .collect::<Result<_>>()?;
                match nums.len() {
                    3 => {}
                    6 => colors.push(Vec3::new(nums[3], nums[4], nums[5])),
                    _ => return Err(bad(line_no, "vertex needs 3 or 6 numbers")),
                }
                positions.push(Vec3::new(nums[0], nums[1], nums[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<u32>()
                            .ok()
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| bad(line_no, "bad face index"))
                    })
                    .collect::<Result<_>>()?;
                let [a, b, c] = idx[..] else {
                    return Err(bad(line_no, "only triangles are supported"));
                };
                faces.push([a, b, c]);
            }
            _ => {}
        }
    }
    let colors = match colors.len() {
        0 => None,
        n if n == positions.len() => Some(colors),
        _ => return Err(Error::format("OBJ", "vertex colours on some vertices only")),
    };
    let mesh = TriMesh {
        positions,
        colors,
        faces,
    };
    mesh.validate().map_err(|e| Error::format("OBJ", e.to_string()))?;
    Ok(mesh)
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    std::fs::write(path, encode_obj(mesh)?).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_obj(&text)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary little-endian PLY: double positions, optional uchar colours and
/// `uchar`-counted `int` face lists.
pub fn encode_ply(mesh: &TriMesh) -> Result<Vec<u8>> {
    mesh.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    writeln!(header, "element vertex {}", mesh.positions.len()).expect("writing to a String");
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    writeln!(header, "element face {}", mesh.faces.len()).expect("writing to a String");
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    for (i, p) in mesh.positions.iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(c) = &mesh.colors {
            out.extend([to_u8(c[i].x), to_u8(c[i].y), to_u8(c[i].z)]);
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::format("PLY", format!("unknown property type {s:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, ty: Scalar) -> Result<f64> {
        let end = self.pos + ty.size();
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("PLY", "truncated body"))?;
        self.pos = end;
        Ok(ty.read(b))
    }
}

pub fn decode_ply(bytes: &[u8]) -> Result<TriMesh> {
    let bad = |r: &str| Error::format("PLY", r.to_string());
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("non-ASCII header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props: Vec<(String, Scalar)> = Vec::new();
    let mut face_list: Option<(Scalar, Scalar)> = None;
    let mut current = "";
    let mut format_ok = false;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", f, _] => return Err(bad(&format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                current = "vertex";
                n_vertices = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
            }
            ["element", "face", n] => {
                current = "face";
                n_faces = Some(n.parse::<usize>().map_err(|_| bad("bad face count"))?);
            }
            ["element", e, _] => return Err(bad(&format!("unsupported element {e}"))),
            ["property", "list", count, index, _] if current == "face" => {
                face_list = Some((Scalar::parse(count)?, Scalar::parse(index)?));
            }
            ["property", ty, name] if current == "vertex" => vertex_props.push((name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(bad(&format!("unsupported header line {line:?}"))),
        }
    }
    if !format_ok {
        return Err(bad("missing format line"));
    }
    let n_vertices = n_vertices.ok_or_else(|| bad("missing vertex element"))?;
    let n_faces = n_faces.unwrap_or(0);
    let find = |name: &str| vertex_props.iter().position(|(n, _)| n == name);
    let xyz = [find("x"), find("y"), find("z")];
    let [Some(xi), Some(yi), Some(zi)] = xyz else {
        return Err(bad("vertex element lacks x, y, z"));
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(bad("partial vertex colour")),
    };
    if n_faces > 0 && face_list.is_none() {
        return Err(bad("face element lacks a vertex index list"));
    }

    let mut cur = Cursor {
        bytes: &bytes[end + marker.len()..],
        pos: 0,
    };
    let mut positions = Vec::with_capacity(n_vertices);
    let mut colors = rgb.map(|_| Vec::with_capacity(n_vertices));
    let mut row = vec![0.0; vertex_props.len()];
    for _ in 0..n_vertices {
        for (slot, (_, ty)) in row.iter_mut().zip(&vertex_props) {
            *slot = cur.take(*ty)?;
        }
        positions.push(Vec3::new(row[xi], row[yi], row[zi]));
        if let (Some(c), Some([r, g, b])) = (colors.as_mut(), rgb) {
            let scale = |k: usize| {
                if vertex_props[k].1 == Scalar::U8 {
                    row[k] / 255.0
                } else {
                    row[k]
                }
            };
            c.push(Vec3::new(scale(r), scale(g), scale(b)));
        }
    }
    let mut faces = Vec::with_capacity(n_faces);
    if let Some((count_ty, index_ty)) = face_list {
        for _ in 0..n_faces {
            if cur.take(count_ty)? != 3.0 {
                return Err(bad("only triangles are supported"));
            }
            let mut f = [0u32; 3];
            for v in &mut f {
                let i = cur.take(index_ty)?;
                if !(i >= 0.0 && i < n_vertices as f64) {
                    return Err(bad("face index out of range"));
                }
                *v = i as u32;
            }
            faces.push(f);
        }
    }
    if cur.pos != cur.bytes.len() {
        return Err(bad("trailing bytes after body"));
    }
    Ok(TriMesh {
        positions,
        colors,
        faces,
    })
}

pub fn write_ply(path: &Path, mesh: &TriMesh) -> Result<()> {
    std::fs::write(path, encode_ply(mesh)?).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes)
}
