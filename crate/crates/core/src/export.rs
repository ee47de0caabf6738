//! Field persistence: a lossless native format and the 3DGS-convention
//! binary PLY read by common splat viewers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::surfel::{GaussianField, GaussianSurfel};
use crate::Vec3;

/// Zeroth-order spherical-harmonic basis constant, at the precision splat
/// tools write it.
pub const SH_C0: f64 = 0.282095;

pub const PLY_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

const FIELD_MAGIC: [u8; 8] = *b"SURF1\0\0\0";

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One PLY vertex record, in file order.
pub fn splat_record(s: &GaussianSurfel) -> [f32; 17] {
    let n = s.normal();
    let q = s.rotation.quaternion();
    let dc = s.color.map(|c| (c - 0.5) / SH_C0);
    [
        s.position.x,
        s.position.y,
        s.position.z,
        n.x,
        n.y,
        n.z,
        dc[0],
        dc[1],
        dc[2],
        logit(s.opacity),
        s.scale.x.ln(),
        s.scale.y.ln(),
        s.scale.z.ln(),
        q.w,
        q.i,
        q.j,
        q.k,
    ]
    .map(|v| v as f32)
}

/// Inverse of [`splat_record`]; the normal columns are ignored.
pub fn surfel_from_record(r: &[f32; 17]) -> GaussianSurfel {
    let v = r.map(f64::from);
    GaussianSurfel {
        position: Vec3::new(v[0], v[1], v[2]),
        rotation: UnitQuaternion::from_quaternion(Quaternion::new(v[13], v[14], v[15], v[16])),
        scale: Vec3::new(v[10].exp(), v[11].exp(), v[12].exp()),
        opacity: sigmoid(v[9]),
        color: [v[6], v[7], v[8]].map(|d| d * SH_C0 + 0.5),
    }
}

pub fn write_ply(path: &Path, field: &GaussianField) -> Result<()> {
    if field.is_empty() {
        return Err(Error::Validation("refusing to export an empty field".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", field.len());
    for p in PLY_PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    let mut body = Vec::with_capacity(header.len() + field.len() * 68);
    body.extend_from_slice(header.as_bytes());
    for s in field.surfels() {
        for v in splat_record(s) {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&body).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Parse a PLY written by [`write_ply`] (the property list must match
/// exactly).
pub fn read_ply(path: &Path) -> Result<Vec<[f32; 17]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |line: usize, msg: &str| Error::Format { path: path.display().to_string(), line, msg: msg.into() };
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(bad(lines.len() + 1, "unexpected end of header"));
        }
        let line = line.trim_end().to_string();
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(bad(1, "missing ply magic"));
    }
    if lines.get(1).map(String::as_str) != Some("format binary_little_endian 1.0") {
        return Err(bad(2, "expected binary_little_endian 1.0"));
    }
    let count: usize = lines
        .get(2)
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad(3, "expected `element vertex <count>`"))?;
    let props: Vec<&str> = lines[3..lines.len() - 1].iter().map(String::as_str).collect();
    let expected: Vec<String> = PLY_PROPERTIES.iter().map(|p| format!("property float {p}")).collect();
    if props != expected {
        return Err(bad(4, "vertex properties do not follow the splat layout"));
    }
    let mut data = Vec::new();
    reader.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    if data.len() != count * 68 {
        return Err(Error::Decode(format!("{}: expected {} payload bytes, found {}", path.display(), count * 68, data.len())));
    }
    Ok(data
        .chunks_exact(68)
        .map(|rec| std::array::from_fn(|i| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes"))))
        .collect())
}

/// Lossless field dump: magic, surfel count, then per surfel 14 f64 values
/// (position, rotation w x y z, scale, opacity, color) and the u32 source view.
pub fn write_field(path: &Path, field: &GaussianField) -> Result<()> {
    let mut body = Vec::with_capacity(16 + field.len() * 116);
    body.extend_from_slice(&FIELD_MAGIC);
    body.extend_from_slice(&(field.len() as u64).to_le_bytes());
    for (s, &view) in field.surfels().iter().zip(field.provenance()) {
        let q = s.rotation.quaternion();
        let values = [
            s.position.x, s.position.y, s.position.z, q.w, q.i, q.j, q.k, s.scale.x, s.scale.y, s.scale.z, s.opacity,
            s.color[0], s.color[1], s.color[2],
        ];
        for v in values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        body.extend_from_slice(&view.to_le_bytes());
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<GaussianField> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode = |msg: &str| Error::Decode(format!("{}: {msg}", path.display()));
    if data.len() < 16 || data[..8] != FIELD_MAGIC {
        return Err(decode("not a surfel field file"));
    }
    let count = u64::from_le_bytes(data[8..16].try_into().expect("8 bytes")) as usize;
    let payload = &data[16..];
    if Some(payload.len()) != count.checked_mul(116) {
        return Err(decode("truncated or oversized payload"));
    }
    let mut surfels = Vec::with_capacity(count);
    let mut provenance = Vec::with_capacity(count);
    for rec in payload.chunks_exact(116) {
        let v: [f64; 14] = std::array::from_fn(|i| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().expect("8 bytes")));
        let s = GaussianSurfel {
            position: Vec3::new(v[0], v[1], v[2]),
            rotation: UnitQuaternion::new_unchecked(Quaternion::new(v[3], v[4], v[5], v[6])),
            scale: Vec3::new(v[7], v[8], v[9]),
            opacity: v[10],
            color: [v[11], v[12], v[13]],
        };
        s.validate()?;
        surfels.push(s);
        provenance.push(u32::from_le_bytes(rec[112..116].try_into().expect("4 bytes")));
    }
    GaussianField::from_parts(surfels, provenance)
}

/// Load a field from either the native format or a splat PLY (by extension).
pub fn load_field(path: &Path) -> Result<GaussianField> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        let surfels: Vec<GaussianSurfel> = read_ply(path)?.iter().map(surfel_from_record).collect();
        let n = surfels.len();
        GaussianField::from_parts(surfels, vec![0; n])
    } else {
        read_field(path)
    }
}
