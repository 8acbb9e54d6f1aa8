//! Binary little-endian PLY export and import of Gaussian fields.
//!
//! Vertex properties, all `float` except the colors:
//! `x y z`, `red green blue` (uchar, color seen along +z), `opacity`
//! (activated), `scale_0..2` (log scale), `rot_0..3` (quaternion `w x y z`).

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::color::sh::SH_C0;
use crate::color::ColorModel;
use crate::error::{Error, Result};
use crate::field::{logit, ColorMode, GaussianField, GaussianPrimitive};

#[derive(Debug, Clone, PartialEq)]
pub struct PlyVertex {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub opacity: f64,
    pub rgb: Option<[u8; 3]>,
}

const FLOATS: [&str; 11] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

pub fn write_ply(field: &GaussianField, model: &ColorModel, path: &Path) -> Result<()> {
    let colors = if field.is_empty() {
        Vec::new()
    } else {
        model.colors_along(field, &Vector3::z())?
    };
    let mut out = Vec::new();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment gsdepth gaussian field\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property float opacity\n\
         property float scale_0\nproperty float scale_1\nproperty float scale_2\n\
         property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
         end_header\n",
        field.len()
    );
    out.write_all(header.as_bytes()).expect("vec write");
    for (p, c) in field.primitives().iter().zip(&colors) {
        let f = |out: &mut Vec<u8>, v: f64| out.write_f32::<LittleEndian>(v as f32).expect("vec write");
        for v in p.center.iter() {
            f(&mut out, *v);
        }
        for v in c.iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        f(&mut out, p.opacity());
        for v in p.log_scale.iter().chain(p.rotation.iter()) {
            f(&mut out, *v);
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    U8,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "uchar" | "uint8" => Some(Scalar::U8),
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            _ => None,
        }
    }

    fn read(self, r: &mut &[u8]) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

pub fn read_ply(path: &Path) -> Result<Vec<PlyVertex>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    let bad = |msg: String| Error::Ply { path: path.into(), msg };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let end = b"end_header\n";
    let header_len = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| bad("missing end_header".into()))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..header_len]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", f, _] => return Err(bad(format!("unsupported format {f}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", other, _] => return Err(bad(format!("unsupported element {other}"))),
            ["property", "list", ..] => return Err(bad("list properties are not supported".into())),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unsupported property type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|(n, _)| n == name);
    let mut idx = [0usize; 11];
    for (slot, name) in idx.iter_mut().zip(FLOATS) {
        *slot = col(name).ok_or_else(|| bad(format!("missing property {name}")))?;
    }
    let rgb_idx = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut body = &bytes[header_len..];
    let mut row = vec![0.0; props.len()];
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        for (slot, (_, ty)) in row.iter_mut().zip(&props) {
            *slot = ty.read(&mut body).map_err(|_| bad(format!("truncated at vertex {i}")))?;
        }
        let v = |k: usize| row[idx[k]];
        out.push(PlyVertex {
            center: Vector3::new(v(0), v(1), v(2)),
            opacity: v(3),
            log_scale: Vector3::new(v(4), v(5), v(6)),
            rotation: Vector4::new(v(7), v(8), v(9), v(10)),
            rgb: rgb_idx.map(|c| [row[c[0]] as u8, row[c[1]] as u8, row[c[2]] as u8]),
        });
    }
    Ok(out)
}

/// Builds a degree-0 SH field from imported vertices (gray where no color).
pub fn field_from_vertices(vertices: &[PlyVertex]) -> Result<GaussianField> {
    let prims = vertices
        .iter()
        .map(|v| {
            let rgb = v.rgb.map_or(Vector3::repeat(0.5), |c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0);
            GaussianPrimitive {
                center: v.center,
                log_scale: v.log_scale,
                rotation: v.rotation,
                opacity_logit: logit(v.opacity.clamp(1e-6, 1.0 - 1e-6)),
                color: ((rgb - Vector3::repeat(0.5)) / SH_C0).iter().copied().collect(),
            }
        })
        .collect();
    GaussianField::from_primitives(ColorMode::Sh(0), prims)
}
