//! MEGS2 compact binary format.
//!
//! ```text
//! magic    "MEGS2\0"            6 bytes
//! version  u16                  2 bytes
//! count    u32                  4 bytes
//! per primitive:
//!   position 3, rotation 4, scale 3, opacity 1, diffuse 3   14 x f32
//!   lobe count                                              u8
//!   per lobe: axis 3, sharpness 1, amplitude 3              7 x f32
//! ```
//!
//! Everything is little-endian. Values are stored activated, and axes are
//! written normalized.

use super::{GaussianPrimitive, Scene, SgLobe, DEFAULT_MAX_LOBES};
use crate::error::{Error, Result};

pub const COMPACT_MAGIC: &[u8; 6] = b"MEGS2\0";
pub const COMPACT_VERSION: u16 = 1;
const HEADER_LEN: usize = 12;

pub fn write_compact(scene: &Scene) -> Result<Vec<u8>> {
    scene.require_sg()?;
    let count = u32::try_from(scene.len())
        .map_err(|_| Error::Format("too many primitives for a u32 count".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + scene.len() * 57 + scene.lobe_count() * 28);
    out.extend_from_slice(COMPACT_MAGIC);
    out.extend_from_slice(&COMPACT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (i, p) in scene.primitives.iter().enumerate() {
        let n_lobes = u8::try_from(p.lobes.len())
            .map_err(|_| Error::Format(format!("primitive {i} has more than 255 lobes")))?;
        let fixed = p
            .position
            .iter()
            .chain(&p.rotation)
            .chain(&p.scale)
            .chain(std::iter::once(&p.opacity))
            .chain(&p.diffuse);
        for v in fixed {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(n_lobes);
        for lobe in &p.lobes {
            let axis = normalized_f32(lobe.axis);
            for v in axis
                .iter()
                .chain(std::iter::once(&lobe.sharpness))
                .chain(&lobe.amplitude)
            {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Axes already unit length within 1e-6 are written unchanged, so rewriting
/// a file read back from disk reproduces it byte for byte.
fn normalized_f32(axis: [f32; 3]) -> [f32; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if (n - 1.0).abs() <= 1e-6 || n == 0.0 {
        axis
    } else {
        axis.map(|c| c / n)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s<const N: usize>(&mut self, what: &str) -> Result<[f32; N]> {
        let raw = self.take(4 * N, what)?;
        let mut out = [0.0; N];
        for (o, chunk) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(out)
    }
}

pub fn read_compact(bytes: &[u8]) -> Result<Scene> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(6, "magic")?;
    if magic != COMPACT_MAGIC {
        return Err(Error::Format("bad magic, not a MEGS2 file".into()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != COMPACT_VERSION {
        return Err(Error::Format(format!("unsupported MEGS2 version {version}")));
    }
    let count = u32::from_le_bytes(cur.take(4, "primitive count")?.try_into().unwrap()) as usize;
    // Every primitive needs at least 57 bytes; reject impossible counts before allocating.
    if count > (bytes.len() - HEADER_LEN) / 57 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            what: format!("{count} declared primitives"),
        });
    }
    let mut primitives = Vec::with_capacity(count);
    let mut max_lobes = DEFAULT_MAX_LOBES;
    for i in 0..count {
        let what = format!("primitive {i}");
        let f: [f32; 14] = cur.f32s(&what)?;
        let n_lobes = cur.take(1, &what)?[0] as usize;
        max_lobes = max_lobes.max(n_lobes);
        let mut lobes = Vec::with_capacity(n_lobes);
        for j in 0..n_lobes {
            let l: [f32; 7] = cur.f32s(&format!("lobe {j} of primitive {i}"))?;
            lobes.push(SgLobe::new([l[0], l[1], l[2]], l[3], [l[4], l[5], l[6]]));
        }
        primitives.push(GaussianPrimitive {
            position: [f[0], f[1], f[2]],
            rotation: [f[3], f[4], f[5], f[6]],
            scale: [f[7], f[8], f[9]],
            opacity: f[10],
            diffuse: [f[11], f[12], f[13]],
            lobes,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last primitive",
            bytes.len() - cur.pos
        )));
    }
    Ok(Scene::new_sg(primitives, max_lobes))
}
