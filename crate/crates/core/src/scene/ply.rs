//! Ingestion of splat scenes stored in the common 3DGS PLY layout.
//!
//! Only `binary_little_endian` payloads are accepted. The vertex element must
//! carry `x y z`, `opacity`, `scale_0..2`, `rot_0..3` and `f_dc_0..2`; the
//! optional `f_rest_*` block determines the SH degree (0, 9, 24 or 45 values).
//! Logit opacities go through the logistic function, log-scales are
//! exponentiated and quaternions are normalized. SH coefficients are kept as
//! stored.

use std::collections::HashMap;

use super::{ColorModel, GaussianPrimitive, Scene};
use crate::error::{Error, Result};
use crate::sg::{ShBlock, SH_C0};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    /// `None` marks a list property, which we cannot size without decoding.
    properties: Vec<(String, Option<ScalarType>)>,
}

impl Element {
    fn stride(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|(_, t)| t.map(ScalarType::size))
            .sum()
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("PLY header has no end_header line".into()))?;
    let mut body_start = end + END.len();
    match bytes.get(body_start) {
        Some(b'\n') => body_start += 1,
        Some(b'\r') if bytes.get(body_start + 1) == Some(&b'\n') => body_start += 2,
        _ => {
            return Err(Error::Truncated {
                offset: body_start,
                what: "newline after end_header".into(),
            })
        }
    }
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("PLY header is not valid text".into()))?;
    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing 'ply' magic line".into()));
    }
    let mut format_seen = false;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => format_seen = true,
            ["format", other, ..] => {
                return Err(Error::UnsupportedEncoding(format!(
                    "PLY format '{other}', only binary_little_endian is supported"
                )))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count in '{line}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?;
                el.properties.push((name.to_string(), None));
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?;
                el.properties.push((name.to_string(), Some(ty)));
            }
            _ => return Err(Error::Format(format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_seen {
        return Err(Error::Format("PLY header has no format line".into()));
    }
    Ok((elements, body_start))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn parse_ply(bytes: &[u8]) -> Result<Scene> {
    let (elements, mut offset) = parse_header(bytes)?;
    let mut vertex = None;
    for el in &elements {
        let stride = el.stride();
        if el.name == "vertex" {
            vertex = Some((el, stride.ok_or_else(|| {
                Error::Format("list properties on the vertex element are not supported".into())
            })?));
            break;
        }
        let stride = stride.ok_or_else(|| {
            Error::Format(format!("cannot skip list-valued element '{}'", el.name))
        })?;
        offset += stride * el.count;
    }
    let (vertex, stride) = vertex.ok_or_else(|| Error::Format("no vertex element".into()))?;

    let mut layout: HashMap<&str, (usize, ScalarType)> = HashMap::new();
    let mut at = 0;
    for (name, ty) in &vertex.properties {
        let ty = ty.expect("vertex stride checked above");
        layout.insert(name.as_str(), (at, ty));
        at += ty.size();
    }
    let field = |name: &str| -> Result<(usize, ScalarType)> {
        layout
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing required vertex property '{name}'")))
    };
    let fields = |names: &[&str]| -> Result<Vec<(usize, ScalarType)>> {
        names.iter().map(|n| field(n)).collect()
    };
    let pos = fields(&["x", "y", "z"])?;
    let opacity = field("opacity")?;
    let scale = fields(&["scale_0", "scale_1", "scale_2"])?;
    let rot = fields(&["rot_0", "rot_1", "rot_2", "rot_3"])?;
    let dc = fields(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let n_rest = (0..).take_while(|i| layout.contains_key(format!("f_rest_{i}").as_str())).count();
    let degree = match n_rest {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => {
            return Err(Error::Format(format!(
                "{n} f_rest properties do not match an SH degree up to 3"
            )))
        }
    };
    let rest: Vec<(usize, ScalarType)> = (0..n_rest)
        .map(|i| field(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let per_channel = n_rest / 3;

    let needed = vertex.count.checked_mul(stride).and_then(|n| n.checked_add(offset));
    if needed.is_none_or(|n| n > bytes.len()) {
        let complete = (bytes.len().saturating_sub(offset)) / stride.max(1);
        return Err(Error::Truncated {
            offset: offset + complete * stride,
            what: format!("vertex {complete} of {}", vertex.count),
        });
    }

    let mut primitives = Vec::with_capacity(vertex.count);
    let mut sh_blocks = Vec::with_capacity(vertex.count);
    for i in 0..vertex.count {
        let rec = &bytes[offset + i * stride..offset + (i + 1) * stride];
        let get = |(o, t): (usize, ScalarType)| t.read(&rec[o..]);
        let q: Vec<f64> = rot.iter().map(|&f| get(f)).collect();
        let qn = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        let rotation = if qn > 0.0 {
            [q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn].map(|c| c as f32)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        let f_dc = [get(dc[0]), get(dc[1]), get(dc[2])];
        let mut coefficients = vec![f_dc.map(|c| c as f32)];
        for k in 0..per_channel {
            coefficients.push([
                get(rest[k]) as f32,
                get(rest[per_channel + k]) as f32,
                get(rest[2 * per_channel + k]) as f32,
            ]);
        }
        sh_blocks.push(ShBlock::new(degree, coefficients)?);
        let scale = [get(scale[0]), get(scale[1]), get(scale[2])]
            .map(|s| (s.exp() as f32).max(f32::MIN_POSITIVE));
        let opacity = (sigmoid(get(opacity)) as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON);
        primitives.push(GaussianPrimitive {
            position: [get(pos[0]), get(pos[1]), get(pos[2])].map(|c| c as f32),
            rotation,
            scale,
            opacity,
            diffuse: f_dc.map(|c| (0.5 + SH_C0 * c) as f32),
            lobes: Vec::new(),
        });
    }
    let mut scene = Scene {
        primitives,
        color_model: ColorModel::Sh { degree },
        sh: Some(sh_blocks),
        provenance: Default::default(),
    };
    scene
        .provenance
        .insert("source_format".into(), "ply".into());
    Ok(scene)
}
