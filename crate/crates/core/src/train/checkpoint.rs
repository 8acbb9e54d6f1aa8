//! Versioned binary snapshots of a [`TrainState`]. The layout is
//! described in `docs/checkpoint.md`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::{DensifyStats, Moments, OptimizerState, TrainConfig, TrainState};
use crate::color::{ColorModel, NeuralColorRenderer};
use crate::error::{Error, Result};
use crate::field::{Aabb, ColorMode, GaussianField, GaussianPrimitive};

pub const MAGIC: &[u8; 8] = b"GSDCKPT\0";
pub const VERSION: u32 = 1;

type W = Vec<u8>;

fn put_f64s(w: &mut W, v: &[f64]) {
    w.write_u64::<LittleEndian>(v.len() as u64).expect("vec write");
    for x in v {
        w.write_f64::<LittleEndian>(*x).expect("vec write");
    }
}

fn put_moments(w: &mut W, m: &Moments) {
    put_f64s(w, &m.m);
    put_f64s(w, &m.v);
}

/// Serializes `state` into the checkpoint byte layout.
pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut w: W = Vec::new();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LittleEndian>(VERSION).expect("vec write");
    w.extend_from_slice(&state.config.hash());
    w.write_u64::<LittleEndian>(state.iter as u64).expect("vec write");
    w.write_f64::<LittleEndian>(state.extent).expect("vec write");
    let cfg = serde_json::to_vec(&state.config).expect("config is always serializable");
    w.write_u64::<LittleEndian>(cfg.len() as u64).expect("vec write");
    w.extend_from_slice(&cfg);

    let (tag, deg) = match state.field.color_mode() {
        ColorMode::Sh(d) => (0u8, d),
        ColorMode::Neural => (1u8, 0),
    };
    w.push(tag);
    w.push(deg);
    w.write_u64::<LittleEndian>(state.field.len() as u64).expect("vec write");
    for p in state.field.primitives() {
        for x in p.center.iter().chain(p.log_scale.iter()).chain(p.rotation.iter()) {
            w.write_f64::<LittleEndian>(*x).expect("vec write");
        }
        w.write_f64::<LittleEndian>(p.opacity_logit).expect("vec write");
        for x in &p.color {
            w.write_f64::<LittleEndian>(*x).expect("vec write");
        }
    }

    match &state.model {
        ColorModel::Sh => w.push(0),
        ColorModel::Neural(n) => {
            w.push(1);
            for x in n.encoder.bounds.min.iter().chain(n.encoder.bounds.max.iter()) {
                w.write_f64::<LittleEndian>(*x).expect("vec write");
            }
            put_f64s(&mut w, &n.encoder.tables);
            put_f64s(&mut w, &n.mlp.params);
        }
    }

    let o = &state.optimizer;
    w.write_u64::<LittleEndian>(o.step).expect("vec write");
    for m in [&o.center, &o.scale, &o.rotation, &o.opacity, &o.color, &o.tables, &o.mlp] {
        put_moments(&mut w, m);
    }
    put_f64s(&mut w, &state.densify.accum);
    for c in &state.densify.count {
        w.write_u32::<LittleEndian>(*c).expect("vec write");
    }

    w.extend_from_slice(&state.rng.get_seed());
    w.write_u64::<LittleEndian>(state.rng.get_stream()).expect("vec write");
    w.write_u128::<LittleEndian>(state.rng.get_word_pos()).expect("vec write");

    let digest: [u8; 32] = Sha256::digest(&w).into();
    w.extend_from_slice(&digest);
    w
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(|_| bad("truncated"))
    }
    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LittleEndian>().map_err(|_| bad("truncated"))
    }
    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LittleEndian>().map_err(|_| bad("truncated"))
    }
    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LittleEndian>().map_err(|_| bad("truncated"))
    }
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(b)
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.0.len() {
            return Err(bad(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn moments(&mut self, len: usize) -> Result<Moments> {
        let m = Moments {
            m: self.f64s()?,
            v: self.f64s()?,
        };
        if m.m.len() != len || m.v.len() != len {
            return Err(bad(format!("optimizer buffer has {} entries, expected {len}", m.m.len())));
        }
        Ok(m)
    }
}

/// Parses checkpoint bytes back into a [`TrainState`].
pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader(&body[MAGIC.len()..]);
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version} (expected {VERSION})")));
    }
    let hash = r.bytes(32)?;
    let iter = r.u64()? as usize;
    let extent = r.f64()?;
    let n = r.len()?;
    let config: TrainConfig = serde_json::from_slice(&r.bytes(n)?).map_err(|e| bad(format!("config: {e}")))?;
    if config.hash().as_slice() != hash {
        return Err(bad("config hash does not match stored config"));
    }

    let mode = match (r.u8()?, r.u8()?) {
        (0, d) if d <= 3 => ColorMode::Sh(d),
        (1, _) => ColorMode::Neural,
        (t, d) => return Err(bad(format!("unknown color mode tag {t}/{d}"))),
    };
    let count = r.len()?;
    let k = mode.feature_dim();
    let mut prims = Vec::with_capacity(count);
    for _ in 0..count {
        let center = r.vec3()?;
        let log_scale = r.vec3()?;
        let rotation = Vector4::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let opacity_logit = r.f64()?;
        let color = (0..k).map(|_| r.f64()).collect::<Result<_>>()?;
        prims.push(GaussianPrimitive {
            center,
            log_scale,
            rotation,
            opacity_logit,
            color,
        });
    }
    let field = GaussianField::from_primitives(mode, prims)?;

    let model = match r.u8()? {
        0 => ColorModel::Sh,
        1 => {
            let bounds = Aabb::new(r.vec3()?, r.vec3()?);
            let mut n = NeuralColorRenderer::new(config.hash_grid, config.mlp, bounds, 0)?;
            let tables = r.f64s()?;
            let mlp = r.f64s()?;
            let (t, m) = n.params_mut();
            if tables.len() != t.len() || mlp.len() != m.len() {
                return Err(bad("neural parameter sizes do not match the stored config"));
            }
            *t = tables;
            *m = mlp;
            ColorModel::Neural(Box::new(n))
        }
        t => return Err(bad(format!("unknown color model tag {t}"))),
    };
    model.check(&field)?;

    let (nt, nm) = model.neural().map_or((0, 0), |n| (n.encoder.tables.len(), n.mlp.params.len()));
    let step = r.u64()?;
    let optimizer = OptimizerState {
        step,
        center: r.moments(3 * count)?,
        scale: r.moments(3 * count)?,
        rotation: r.moments(4 * count)?,
        opacity: r.moments(count)?,
        color: r.moments(k * count)?,
        tables: r.moments(nt)?,
        mlp: r.moments(nm)?,
    };
    let accum = r.f64s()?;
    if accum.len() != count {
        return Err(bad("densify statistics do not match the primitive count"));
    }
    let counts = (0..count).map(|_| r.u32()).collect::<Result<_>>()?;

    let seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.0.read_u128::<LittleEndian>().map_err(|_| bad("truncated"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    if !r.0.is_empty() {
        return Err(bad(format!("{} trailing bytes", r.0.len())));
    }

    Ok(TrainState {
        config,
        field,
        model,
        iter,
        extent,
        optimizer,
        densify: DensifyStats { accum, count: counts },
        rng,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
