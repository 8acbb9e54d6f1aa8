//! PNG, PFM and camera-JSON I/O, and the on-disk dataset layout.
//!
//! ```text
//! <dir>/cameras.json
//! <dir>/images/<name>.png
//! <dir>/depth/<name>.mono.pfm   (optional)
//! <dir>/depth/<name>.gt.pfm     (optional)
//! ```
//!
//! Depth maps hold distance to the camera center, not z-depth.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Dataset, View};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::raster::{DepthMap, ImageBuffer};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let c = img.rgb[i];
        *px = image::Rgb([quantize(c.x), quantize(c.y), quantize(c.z)]);
    }
    ensure_parent(path)?;
    buf.save(path).map_err(|e| Error::Image {
        path: path.into(),
        msg: e.to_string(),
    })
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.into(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = img
        .pixels()
        .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
        .collect();
    Ok(ImageBuffer { width: w, height: h, rgb })
}

/// Rounds an image to the 8-bit grid a PNG round trip produces.
pub fn quantize_image(img: &ImageBuffer) -> ImageBuffer {
    ImageBuffer {
        width: img.width,
        height: img.height,
        rgb: img.rgb.iter().map(|c| c.map(|v| quantize(v) as f64 / 255.0)).collect(),
    }
}

/// Rounds a depth map to the 32-bit floats a PFM stores.
pub fn quantize_depth(d: &DepthMap) -> DepthMap {
    let mut out = d.clone();
    out.depth.iter_mut().for_each(|v| *v = *v as f32 as f64);
    out.accum_alpha.fill(1.0);
    out
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    Ok(())
}

/// Single-channel little-endian PFM, rows bottom to top.
pub fn write_pfm(d: &DepthMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut out = Vec::with_capacity(32 + 4 * d.len());
    write!(out, "Pf\n{} {}\n-1.0\n", d.width, d.height).expect("vec write");
    for y in (0..d.height).rev() {
        for x in 0..d.width {
            out.write_f32::<LittleEndian>(d.depth[y * d.width + x] as f32).expect("vec write");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    let bad = |msg: &str| Error::Pfm {
        path: path.into(),
        msg: msg.into(),
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    match next_line(&mut r)?.as_str() {
        "Pf" => {}
        "PF" => return Err(bad("three-channel PFM is not a depth map")),
        _ => return Err(bad("missing Pf header")),
    }
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|v| v.parse::<usize>());
    let (w, h) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) if w > 0 && h > 0 => (w, h),
        _ => return Err(bad("bad dimensions line")),
    };
    let scale: f64 = next_line(&mut r)?.parse().map_err(|_| bad("bad scale line"))?;
    if scale >= 0.0 {
        return Err(bad("big-endian PFM (positive scale) is not supported"));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != 4 * w * h {
        return Err(bad(&format!("expected {} bytes of data, found {}", 4 * w * h, raw.len())));
    }
    let mut cur = std::io::Cursor::new(raw);
    let mut depth = vec![0.0; w * h];
    for y in (0..h).rev() {
        for x in 0..w {
            depth[y * w + x] = cur.read_f32::<LittleEndian>().expect("length checked") as f64;
        }
    }
    DepthMap::from_depth(w, h, depth)
}

/// One camera as stored in `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4×4 world-to-camera matrix.
    pub world_to_camera: Vec<f64>,
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_camera: c.world_to_camera_row_major().to_vec(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let m: [f64; 16] = self
            .world_to_camera
            .as_slice()
            .try_into()
            .map_err(|_| Error::InvalidCamera(format!("world_to_camera has {} entries, expected 16", self.world_to_camera.len())))?;
        if m[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidCamera("last row of world_to_camera must be 0 0 0 1".into()));
        }
        Camera::from_row_major(self.fx, self.fy, self.cx, self.cy, self.width, self.height, &m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewRecord {
    name: String,
    split: String,
    #[serde(flatten)]
    camera: CameraRecord,
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mono_depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_depth: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetRecord {
    bounds: Aabb,
    views: Vec<ViewRecord>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    read_json::<CameraRecord>(path)?.to_camera()
}

pub fn write_camera(cam: &Camera, path: &Path) -> Result<()> {
    write_json(&CameraRecord::from_camera(cam), path)
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut views = Vec::new();
    for (split, list) in [("train", &ds.train), ("test", &ds.test)] {
        for v in list {
            let image = format!("images/{}.png", v.name);
            write_png(&v.image, &dir.join(&image))?;
            let mono_depth = match &v.mono_depth {
                Some(d) => {
                    let rel = format!("depth/{}.mono.pfm", v.name);
                    write_pfm(d, &dir.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            let gt_depth = match &v.gt_depth {
                Some(d) => {
                    let rel = format!("depth/{}.gt.pfm", v.name);
                    write_pfm(d, &dir.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            views.push(ViewRecord {
                name: v.name.clone(),
                split: split.into(),
                camera: CameraRecord::from_camera(&v.camera),
                image,
                mono_depth,
                gt_depth,
            });
        }
    }
    write_json(
        &DatasetRecord {
            bounds: ds.bounds,
            views,
        },
        &dir.join("cameras.json"),
    )
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let rec: DatasetRecord = read_json(&dir.join("cameras.json"))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in rec.views {
        let camera = v.camera.to_camera()?;
        let image = read_png(&dir.join(&v.image))?;
        let load_depth = |rel: &Option<String>| -> Result<Option<DepthMap>> {
            rel.as_ref().map(|r| read_pfm(&dir.join(r))).transpose()
        };
        let view = View {
            name: v.name,
            image,
            camera,
            mono_depth: load_depth(&v.mono_depth)?,
            gt_depth: load_depth(&v.gt_depth)?,
        };
        match v.split.as_str() {
            "train" => train.push(view),
            "test" => test.push(view),
            other => return Err(Error::InvalidConfig(format!("unknown split {other:?} for view {}", view.name))),
        }
    }
    let ds = Dataset {
        train,
        test,
        bounds: rec.bounds,
    };
    ds.validate()?;
    Ok(ds)
}
