//! Binary little-endian PLY in the common splat layout.
//!
//! Per vertex: `x y z`, `f_dc_0..2`, `f_rest_*` (channel-major, as written by
//! most splatting tools), `opacity` (logit), `scale_0..2` (log) and
//! `rot_0..3` (w, x, y, z). Scenes are written as `double` by default so a
//! save/load round trip is bit-exact; `float` files are read as well.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::Primitive3D;
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyScalar {
    F32,
    #[default]
    F64,
}

impl PlyScalar {
    fn keyword(self) -> &'static str {
        match self {
            PlyScalar::F32 => "float",
            PlyScalar::F64 => "double",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Self::I8 => r.read_i8()? as f64,
            Self::U8 => r.read_u8()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: ScalarType,
}

/// Header of the `vertex` element; other elements must come after it.
#[derive(Debug, Clone)]
struct Header {
    count: usize,
    props: Vec<Property>,
}

impl Header {
    fn index(&self, name: &str, path: &Path) -> Result<usize> {
        self.props
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::parse(path, format!("missing property {name}")))
    }
}

fn read_header(r: &mut impl BufRead, path: &Path) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, "unexpected end of header"));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::parse(path, "missing ply magic"));
    }
    let mut header: Option<Header> = None;
    let mut in_vertex = false;
    let mut format_ok = false;
    loop {
        next(&mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::parse(path, format!("unsupported format {fmt} (expected binary_little_endian)")));
                }
                format_ok = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad element count {count:?}")))?;
                if *name == "vertex" {
                    if header.is_some() {
                        return Err(Error::parse(path, "duplicate vertex element"));
                    }
                    header = Some(Header { count, props: Vec::new() });
                    in_vertex = true;
                } else {
                    if header.is_none() {
                        return Err(Error::parse(path, format!("element {name} before vertex is not supported")));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(path, "list properties on vertex are not supported"));
            }
            ["property", ty, name] => {
                if in_vertex {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| Error::parse(path, format!("property {name}: unknown type {ty}")))?;
                    header.as_mut().expect("vertex seen").props.push(Property {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            ["property", ..] => {}
            _ => return Err(Error::parse(path, format!("malformed header line {:?}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(Error::parse(path, "missing format line"));
    }
    header.ok_or_else(|| Error::parse(path, "missing vertex element"))
}

fn read_rows(r: &mut impl Read, header: &Header, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let mut row = Vec::with_capacity(header.props.len());
        for p in &header.props {
            let v = p
                .ty
                .read(r)
                .map_err(|_| Error::parse(path, format!("truncated data at vertex {i}, property {}", p.name)))?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn property_names(sh_len: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].iter().map(|s| s.to_string()).collect();
    for i in 0..3 * (sh_len - 1) {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

fn row_of(p: &Primitive3D) -> Vec<f64> {
    let rest = p.sh.len() - 1;
    let mut row = vec![p.mean.x, p.mean.y, p.mean.z, p.sh[0].x, p.sh[0].y, p.sh[0].z];
    for ch in 0..3 {
        for k in 0..rest {
            row.push(p.sh[k + 1][ch]);
        }
    }
    row.push(p.opacity_logit);
    row.extend(p.log_scale.iter());
    row.extend(p.rotation.iter());
    row
}

pub fn save_ply(path: &Path, prims: &[Primitive3D]) -> Result<()> {
    save_ply_as(path, prims, PlyScalar::F64)
}

pub fn save_ply_as(path: &Path, prims: &[Primitive3D], scalar: PlyScalar) -> Result<()> {
    let sh_len = prims.first().map_or(1, |p| p.sh.len());
    if let Some(bad) = prims.iter().position(|p| p.sh.len() != sh_len) {
        return Err(Error::config(format!(
            "primitive {bad} has {} SH coefficients, expected {sh_len}",
            prims[bad].sh.len()
        )));
    }
    if sh::degree_for(sh_len).is_none() {
        return Err(Error::config(format!("{sh_len} SH coefficients is not a full band count")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", prims.len());
    for name in property_names(sh_len) {
        header.push_str(&format!("property {} {name}\n", scalar.keyword()));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for p in prims {
        for v in row_of(p) {
            match scalar {
                PlyScalar::F32 => w.write_f32::<LittleEndian>(v as f32),
                PlyScalar::F64 => w.write_f64::<LittleEndian>(v),
            }
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_ply(path: &Path) -> Result<Vec<Primitive3D>> {
    let mut r = open(path)?;
    let header = read_header(&mut r, path)?;
    let rest_count = header.props.iter().filter(|p| p.name.starts_with("f_rest_")).count();
    if rest_count % 3 != 0 {
        return Err(Error::parse(path, format!("f_rest count {rest_count} is not a multiple of 3")));
    }
    let sh_len = 1 + rest_count / 3;
    if sh::degree_for(sh_len).is_none() {
        return Err(Error::parse(path, format!("f_rest count {rest_count} does not form full SH bands")));
    }
    let idx = property_names(sh_len)
        .iter()
        .map(|n| header.index(n, path))
        .collect::<Result<Vec<_>>>()?;
    let rows = read_rows(&mut r, &header, path)?;
    let rest = sh_len - 1;
    Ok(rows
        .iter()
        .map(|row| {
            let v: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
            let mut shc = vec![Vector3::new(v[3], v[4], v[5]); sh_len];
            for k in 0..rest {
                shc[k + 1] = Vector3::new(v[6 + k], v[6 + rest + k], v[6 + 2 * rest + k]);
            }
            let o = 6 + 3 * rest;
            Primitive3D {
                mean: Vector3::new(v[0], v[1], v[2]),
                sh: shc,
                opacity_logit: v[o],
                log_scale: Vector3::new(v[o + 1], v[o + 2], v[o + 3]),
                rotation: Vector4::new(v[o + 4], v[o + 5], v[o + 6], v[o + 7]),
            }
        })
        .collect())
}

/// A seed point with an optional color in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPoint {
    pub position: Vector3<f64>,
    pub color: Option<Vector3<f64>>,
}

/// Reads `x y z` and, when present, `red green blue` (8-bit or float).
pub fn load_points(path: &Path) -> Result<Vec<SeedPoint>> {
    let mut r = open(path)?;
    let header = read_header(&mut r, path)?;
    let xyz = ["x", "y", "z"]
        .iter()
        .map(|n| header.index(n, path))
        .collect::<Result<Vec<_>>>()?;
    let rgb: Option<Vec<(usize, ScalarType)>> = ["red", "green", "blue"]
        .iter()
        .map(|n| header.props.iter().position(|p| &p.name == n).map(|i| (i, header.props[i].ty)))
        .collect();
    let rows = read_rows(&mut r, &header, path)?;
    Ok(rows
        .iter()
        .map(|row| SeedPoint {
            position: Vector3::new(row[xyz[0]], row[xyz[1]], row[xyz[2]]),
            color: rgb.as_ref().map(|c| {
                Vector3::from_fn(|k, _| {
                    let (i, ty) = c[k];
                    match ty {
                        ScalarType::F32 | ScalarType::F64 => row[i],
                        ScalarType::U8 => row[i] / 255.0,
                        _ => row[i] / 65535.0,
                    }
                })
            }),
        })
        .collect())
}

/// Writes seed points as `float x y z` plus `uchar red green blue`.
pub fn save_points(path: &Path, points: &[SeedPoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    w.write_all(header.as_bytes()).map_err(io)?;
    for p in points {
        for v in p.position.iter() {
            w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
        }
        let c = p.color.unwrap_or(Vector3::new(0.5, 0.5, 0.5));
        for v in c.iter() {
            w.write_u8(super::png::quantize(*v)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
