//! Minimal NRRD: three-dimensional, attached data, uint8/int16/int32/float32,
//! raw or gzip, little-endian, axis-aligned diagonal space directions in a
//! RAS or LPS space.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::grid::{AxisCode, Geometry, Orientation, VolumeGrid, VoxelData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NrrdEncoding {
    #[default]
    Raw,
    Gzip,
}

fn unsupported(field: &str, detail: impl Into<String>) -> Error {
    Error::UnsupportedNrrd {
        field: field.to_string(),
        detail: detail.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    U8,
    I16,
    I32,
    F32,
}

impl Kind {
    fn parse(s: &str) -> Result<Kind> {
        Ok(match s {
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => Kind::U8,
            "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => Kind::I16,
            "int" | "signed int" | "int32" | "int32_t" => Kind::I32,
            "float" => Kind::F32,
            other => return Err(unsupported("type", format!("element type `{other}`"))),
        })
    }

    fn width(self) -> usize {
        match self {
            Kind::U8 => 1,
            Kind::I16 => 2,
            Kind::I32 | Kind::F32 => 4,
        }
    }
}

/// World (RAS) axis and sign of each NRRD space axis.
fn space_axes(space: &str) -> Result<[f64; 3]> {
    match space {
        "right-anterior-superior" | "RAS" => Ok([1.0, 1.0, 1.0]),
        "left-posterior-superior" | "LPS" => Ok([-1.0, -1.0, 1.0]),
        other => Err(unsupported("space", format!("`{other}` (expected RAS or LPS)"))),
    }
}

fn parse_vector(field: &str, s: &str) -> Result<[f64; 3]> {
    let t = s.trim();
    let inner = t
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| unsupported(field, format!("expected a vector, got `{t}`")))?;
    let v: Vec<f64> = inner
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| unsupported(field, format!("bad number in `{t}`")))?;
    <[f64; 3]>::try_from(v).map_err(|_| unsupported(field, format!("`{t}` must have three components")))
}

fn parse_triple<T: std::str::FromStr>(field: &str, s: &str) -> Result<[T; 3]> {
    let v: Vec<T> = s
        .split_whitespace()
        .map(|x| x.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| unsupported(field, format!("cannot parse `{s}`")))?;
    <[T; 3]>::try_from(v).map_err(|_| unsupported(field, format!("`{s}` must have three entries")))
}

/// Fields that carry no geometry we need and are safe to ignore.
const IGNORED: &[&str] = &[
    "content",
    "kinds",
    "space units",
    "units",
    "labels",
    "centers",
    "centerings",
    "min",
    "max",
    "old min",
    "oldmin",
    "old max",
    "oldmax",
    "sample units",
    "measurement frame",
];

/// Parses an in-memory NRRD file.
pub fn parse_nrrd(bytes: &[u8]) -> Result<VolumeGrid> {
    let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| unsupported("magic", "no header"))?;
    let magic = String::from_utf8_lossy(&bytes[..magic_end]);
    let magic = magic.trim_end();
    if !(magic.starts_with("NRRD000") && magic.len() == 8) {
        return Err(unsupported("magic", format!("`{magic}` is not an NRRD header")));
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut pos = magic_end + 1;
    loop {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| unsupported("header", "missing blank line before data"))?;
        let line = String::from_utf8_lossy(&rest[..end]);
        let line = line.trim_end_matches('\r');
        pos += end + 1;
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') || line.contains(":=") {
            continue;
        }
        let (k, v) = line
            .split_once(": ")
            .ok_or_else(|| unsupported("header", format!("malformed line `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }

    for key in fields.keys() {
        let known = matches!(
            key.as_str(),
            "type" | "dimension" | "sizes" | "encoding" | "endian" | "space" | "space dimension" | "space directions"
                | "space origin" | "spacings" | "byte skip" | "line skip"
        );
        if !known && !IGNORED.contains(&key.as_str()) {
            return Err(unsupported(key, "not supported"));
        }
    }
    let get = |k: &str| fields.get(k).map(String::as_str);
    let require = |k: &str| get(k).ok_or_else(|| unsupported(k, "required field missing"));

    let dim = require("dimension")?;
    if dim != "3" {
        return Err(unsupported("dimension", format!("{dim} (only 3 is supported)")));
    }
    for skip in ["byte skip", "line skip"] {
        if get(skip).is_some_and(|v| v != "0") {
            return Err(unsupported(skip, "non-zero skips are not supported"));
        }
    }
    let kind = Kind::parse(require("type")?)?;
    let sizes: [usize; 3] = parse_triple("sizes", require("sizes")?)?;
    let encoding = match require("encoding")? {
        "raw" => NrrdEncoding::Raw,
        "gzip" | "gz" => NrrdEncoding::Gzip,
        other => return Err(unsupported("encoding", format!("`{other}`"))),
    };
    match get("endian") {
        Some("little") => {}
        None if kind.width() == 1 => {}
        None => return Err(unsupported("endian", "required for multi-byte types")),
        Some(other) => return Err(unsupported("endian", format!("`{other}` (only little)"))),
    }

    let (spacing, origin, orientation) = match get("space") {
        Some(space) => {
            let flip = space_axes(space)?;
            if get("space dimension").is_some() {
                return Err(unsupported("space dimension", "use `space` instead"));
            }
            let dirs = require("space directions")?;
            let vecs: Vec<&str> = dirs.split(')').map(str::trim).filter(|s| !s.is_empty()).collect();
            if vecs.len() != 3 {
                return Err(unsupported("space directions", format!("expected three vectors in `{dirs}`")));
            }
            let mut spacing = [0.0; 3];
            let mut codes = [AxisCode::R; 3];
            for (k, v) in vecs.iter().enumerate() {
                let d = parse_vector("space directions", &format!("{v})"))?;
                for (a, &c) in d.iter().enumerate() {
                    if a != k && c != 0.0 {
                        return Err(unsupported("space directions", "non-diagonal direction matrix; reorient upstream"));
                    }
                }
                if !(d[k].abs() > 0.0) {
                    return Err(unsupported("space directions", format!("axis {k} has zero length")));
                }
                spacing[k] = d[k].abs();
                codes[k] = AxisCode::from_axis(k, d[k] * flip[k] > 0.0);
            }
            let o = match get("space origin") {
                Some(s) => parse_vector("space origin", s)?,
                None => [0.0; 3],
            };
            (spacing, [o[0] * flip[0], o[1] * flip[1], o[2] * flip[2]], Orientation::new(codes)?)
        }
        None => {
            let spacing = match get("spacings") {
                Some(s) => parse_triple("spacings", s)?,
                None => [1.0; 3],
            };
            (spacing, [0.0; 3], Orientation::RAS)
        }
    };
    let geometry = Geometry::new(sizes, spacing, origin, orientation)?;

    let payload = &bytes[pos..];
    let n = geometry.voxel_count();
    let need = n * kind.width();
    let raw: Vec<u8> = match encoding {
        NrrdEncoding::Raw => payload.to_vec(),
        NrrdEncoding::Gzip => {
            let mut out = Vec::with_capacity(need);
            GzDecoder::new(payload)
                .read_to_end(&mut out)
                .map_err(|e| unsupported("encoding", format!("gzip payload: {e}")))?;
            out
        }
    };
    if raw.len() != need {
        return Err(unsupported("sizes", format!("payload has {} bytes, expected {need}", raw.len())));
    }
    let data = match kind {
        Kind::U8 => VoxelData::U8(raw),
        Kind::I16 => VoxelData::I16(raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()),
        Kind::I32 => VoxelData::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
        Kind::F32 => VoxelData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
    };
    VolumeGrid::new(geometry, data)
}

fn payload(data: &VoxelData) -> Vec<u8> {
    match data {
        VoxelData::U8(v) => v.clone(),
        VoxelData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        VoxelData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        VoxelData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

/// Serializes a grid in RAS space. Grids whose axes are permuted relative to
/// the world axes must be reoriented first.
pub fn encode_nrrd(grid: &VolumeGrid, encoding: NrrdEncoding) -> Result<Vec<u8>> {
    let g = grid.geometry();
    let mut dirs = Vec::with_capacity(3);
    for (k, code) in g.orientation.codes().iter().enumerate() {
        if code.world_axis() != k {
            return Err(unsupported(
                "space directions",
                format!("orientation {} is not diagonal; reorient before writing", g.orientation),
            ));
        }
        let mut d = [0.0; 3];
        d[k] = code.sign() * g.spacing[k];
        dirs.push(format!("({:?},{:?},{:?})", d[0], d[1], d[2]));
    }
    let f = super::fmt_f64;
    let mut out = format!(
        "NRRD0004\n# written by spinecycle\ntype: {}\ndimension: 3\nspace: right-anterior-superior\nsizes: {} {} {}\nspace directions: {}\nkinds: domain domain domain\nendian: little\nencoding: {}\nspace origin: ({},{},{})\n\n",
        match grid.data() {
            VoxelData::U8(_) => "uint8",
            VoxelData::I16(_) => "int16",
            VoxelData::I32(_) => "int32",
            VoxelData::F32(_) => "float",
        },
        g.sizes[0],
        g.sizes[1],
        g.sizes[2],
        dirs.join(" "),
        match encoding {
            NrrdEncoding::Raw => "raw",
            NrrdEncoding::Gzip => "gzip",
        },
        f(g.origin[0]),
        f(g.origin[1]),
        f(g.origin[2]),
    )
    .into_bytes();
    let body = payload(grid.data());
    match encoding {
        NrrdEncoding::Raw => out.extend_from_slice(&body),
        NrrdEncoding::Gzip => {
            let mut enc = GzEncoder::new(out, Compression::fast());
            enc.write_all(&body).map_err(|e| unsupported("encoding", e.to_string()))?;
            out = enc.finish().map_err(|e| unsupported("encoding", e.to_string()))?;
        }
    }
    Ok(out)
}

pub fn read_nrrd(path: &Path) -> Result<VolumeGrid> {
    parse_nrrd(&read_file(path)?).map_err(|e| match e {
        Error::UnsupportedNrrd { field, detail } => Error::UnsupportedNrrd {
            field,
            detail: format!("{detail} (in {})", path.display()),
        },
        other => other,
    })
}

pub fn write_nrrd(grid: &VolumeGrid, path: &Path, encoding: NrrdEncoding) -> Result<()> {
    let bytes = encode_nrrd(grid, encoding)?;
    write_atomic(path, |w| w.write_all(&bytes))
}
