use std::path::Path;

use nalgebra::Matrix4;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::scene::{Camera, Extrinsics, Gaussian, GaussianSet, Intrinsics, ATTRIBUTES, LAYERS};

pub const MAGIC: &[u8; 4] = b"SHRP";
pub const VERSION: u16 = 1;
/// magic, version, count, grid w/h/layers, scale max, camera (4 intrinsics,
/// width, height, 16 extrinsic entries row-major).
pub const HEADER_LEN: usize = 4 + 2 + 8 + 3 * 4 + 8 + 4 * 8 + 2 * 4 + 16 * 8;
pub const RECORD_LEN: usize = ATTRIBUTES * 4;

/// A Gaussian set together with the camera whose frame its positions use.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatFile {
    pub set: GaussianSet,
    pub camera: Camera,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.at..self.at + N].try_into().unwrap();
        self.at += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

impl SplatFile {
    /// Attributes are stored as `f32`; the set is written as given, so
    /// reading back yields [`GaussianSet::quantized_f32`] of it.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let set = &self.set;
        if set.gaussians.len() != set.count() {
            return Err(Error::DimensionMismatch(format!(
                "{} gaussians for a {}x{}x{} grid",
                set.gaussians.len(),
                LAYERS,
                set.grid_h,
                set.grid_w
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * set.gaussians.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(set.gaussians.len() as u64).to_le_bytes());
        for v in [set.grid_w, set.grid_h, LAYERS] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&set.scale_max.to_le_bytes());
        let k = self.camera.intrinsics;
        for v in [k.fx, k.fy, k.cx, k.cy] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.camera.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.camera.height as u32).to_le_bytes());
        let e = self.camera.extrinsics.matrix();
        for r in 0..4 {
            for c in 0..4 {
                out.extend_from_slice(&e[(r, c)].to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), HEADER_LEN);
        for g in &set.gaussians {
            for v in g.to_array() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(bad("not a splat file (bad magic or truncated header)".into()));
        }
        let mut r = Reader { bytes, at: 4 };
        let version = r.u16();
        if version != VERSION {
            return Err(bad(format!("unsupported splat format version {version}")));
        }
        let count = r.u64();
        let (gw, gh, layers) = (r.u32() as u64, r.u32() as u64, r.u32() as u64);
        if layers != LAYERS as u64 {
            return Err(bad(format!("expected {LAYERS} layers, got {layers}")));
        }
        if gw.checked_mul(gh).and_then(|v| v.checked_mul(layers)) != Some(count) {
            return Err(bad(format!("count {count} does not match a {layers}x{gh}x{gw} grid")));
        }
        let expected = (count as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
        if bytes.len() as u128 != expected {
            return Err(bad(format!("file is {} bytes, expected {expected}", bytes.len())));
        }
        let scale_max = r.f64();
        let intrinsics = Intrinsics::new(r.f64(), r.f64(), r.f64(), r.f64());
        let (width, height) = (r.u32() as usize, r.u32() as usize);
        let mut e = Matrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                e[(i, j)] = r.f64();
            }
        }
        let extrinsics = Extrinsics::new(e).map_err(|err| bad(err.to_string()))?;
        let gaussians = (0..count)
            .map(|_| Gaussian::from_array(&std::array::from_fn(|_| r.f32() as f64)))
            .collect();
        Ok(Self {
            set: GaussianSet {
                grid_w: gw as usize,
                grid_h: gh as usize,
                scale_max,
                gaussians,
            },
            camera: Camera::new(intrinsics, extrinsics, width, height),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }
}
