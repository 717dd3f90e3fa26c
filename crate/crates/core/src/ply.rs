//! Reader and writer for binary little-endian splat PLY files, and a plain
//! colored point-cloud exporter.
//!
//! Files store log-scales, a logit peak opacity and an unnormalized
//! `(w, x, y, z)` quaternion. In memory the opacity is a mass attached to a
//! normalized density, so loading multiplies the peak by
//! `(2 pi)^(3/2) |Sigma|^(1/2)` and saving divides it back out.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::{Gaussian, SplatModel};

/// Zeroth-order SH basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Peak opacities are clamped into `[MIN_PEAK, 1 - MIN_PEAK]` before the logit.
pub const MIN_PEAK: f64 = 1e-6;

const REQUIRED: [&str; 13] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2",
];

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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|(_, t)| t.size()).sum()
    }
}

/// What the header says about the vertex block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyHeaderInfo {
    pub vertex_count: usize,
    pub property_names: Vec<String>,
    pub binary_little_endian: bool,
}

impl PlyHeaderInfo {
    /// Number of `f_rest_*` properties.
    pub fn rest_count(&self) -> usize {
        self.property_names
            .iter()
            .filter(|n| n.starts_with("f_rest_"))
            .count()
    }

    /// SH degree implied by the `f_rest_*` count, if it is a valid one.
    pub fn sh_degree(&self) -> Option<u8> {
        let rest = self.rest_count();
        (0u8..=3).find(|&l| {
            let k = l as usize + 1;
            3 * (k * k - 1) == rest
        })
    }
}

struct Header {
    elements: Vec<Element>,
    binary_little_endian: bool,
}

fn read_header<R: BufRead>(reader: &mut R, path: &Path) -> Result<Header> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::io(path, e))?;
        Ok(n > 0)
    };

    if !next_line(reader, &mut line)? || line.trim_end() != "ply" {
        return Err(Error::format(path, "missing `ply` magic line"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format = None;
    loop {
        if !next_line(reader, &mut line)? {
            return Err(Error::format(path, "header ended before `end_header`"));
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                let kind = words.next().unwrap_or("");
                let version = words.next().unwrap_or("");
                if version != "1.0" {
                    return Err(Error::format(
                        path,
                        format!("unsupported PLY version `{version}`"),
                    ));
                }
                format = Some(kind.to_string());
            }
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::format(path, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::format(path, format!("element `{name}` has no valid count"))
                    })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, "property before any element"))?;
                let ty = words.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::format(
                        path,
                        format!("list property in element `{}` is not supported", element.name),
                    ));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::format(path, format!("unknown property type `{ty}`")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::format(path, "property without a name"))?;
                element.properties.push((name.to_string(), ty));
            }
            Some(other) => {
                return Err(Error::format(path, format!("unexpected header keyword `{other}`")));
            }
        }
    }
    let format = format.ok_or_else(|| Error::format(path, "missing `format` line"))?;
    Ok(Header {
        elements,
        binary_little_endian: format == "binary_little_endian",
    })
}

/// Parses only the header of a splat PLY.
pub fn read_header_info(path: impl AsRef<Path>) -> Result<PlyHeaderInfo> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_header(&mut BufReader::new(file), path)?;
    header_info(&header, path)
}

fn header_info(header: &Header, path: &Path) -> Result<PlyHeaderInfo> {
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(path, "no `vertex` element"))?;
    Ok(PlyHeaderInfo {
        vertex_count: vertex.count,
        property_names: vertex.properties.iter().map(|(n, _)| n.clone()).collect(),
        binary_little_endian: header.binary_little_endian,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SplatModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file), path)
}

/// Reads a splat model from any buffered source; `path` is only used in diagnostics.
pub fn read_model<R: BufRead>(mut reader: R, path: &Path) -> Result<SplatModel> {
    let header = read_header(&mut reader, path)?;
    if !header.binary_little_endian {
        return Err(Error::format(
            path,
            "only `binary_little_endian 1.0` splat files are supported",
        ));
    }
    let info = header_info(&header, path)?;
    let vertex_index = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .expect("checked by header_info");
    let vertex = &header.elements[vertex_index];

    let find = |name: &str| -> Result<(usize, ScalarType)> {
        let mut offset = 0;
        for (n, t) in &vertex.properties {
            if n == name {
                return Ok((offset, *t));
            }
            offset += t.size();
        }
        Err(Error::format(path, format!("missing vertex property `{name}`")))
    };
    for name in REQUIRED.iter().chain(std::iter::once(&"rot_3")) {
        find(name)?;
    }
    let rest = info.rest_count();
    let sh_degree = info.sh_degree().ok_or_else(|| {
        Error::format(
            path,
            format!("{rest} f_rest properties do not match any SH degree in [0, 3]"),
        )
    })?;

    let mut columns: Vec<(&str, usize, ScalarType)> = Vec::new();
    let fixed = [
        "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
        "rot_3", "f_dc_0", "f_dc_1", "f_dc_2",
    ];
    for name in fixed {
        let (off, ty) = find(name)?;
        columns.push((name, off, ty));
    }
    let rest_names: Vec<String> = (0..rest).map(|i| format!("f_rest_{i}")).collect();
    for name in &rest_names {
        let (off, ty) = find(name)?;
        columns.push((name.as_str(), off, ty));
    }

    // skip elements stored before the vertex block
    for e in &header.elements[..vertex_index] {
        let mut skip = vec![0u8; e.stride() * e.count];
        reader
            .read_exact(&mut skip)
            .map_err(|err| Error::io(path, err))?;
    }

    let stride = vertex.stride();
    let mut bytes = vec![0u8; stride * vertex.count];
    reader.read_exact(&mut bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(
                path,
                format!("file is truncated: expected {} vertices", vertex.count),
            )
        } else {
            Error::io(path, e)
        }
    })?;

    let mut gaussians = Vec::with_capacity(vertex.count);
    let mut values = vec![0.0f64; columns.len()];
    for (v, record) in bytes.chunks_exact(stride.max(1)).take(vertex.count).enumerate() {
        for (slot, (name, off, ty)) in values.iter_mut().zip(&columns) {
            let value = ty.read(&record[*off..]);
            if !value.is_finite() {
                return Err(Error::Value {
                    path: path.to_path_buf(),
                    vertex: v,
                    property: name.to_string(),
                    value: value as f32,
                });
            }
            *slot = value;
        }
        let g = gaussian_from_record(&values).map_err(|e| Error::Value {
            path: path.to_path_buf(),
            vertex: v,
            property: e.to_string(),
            value: f32::NAN,
        })?;
        gaussians.push(g);
    }
    SplatModel::new(gaussians, sh_degree)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(2 pi)^(3/2) |Sigma|^(1/2)`: mass of a unit-peak Gaussian with these scales.
pub fn peak_to_mass_factor(scales: &Vector3<f64>) -> f64 {
    (2.0 * PI).powf(1.5) * scales.product()
}

fn gaussian_from_record(v: &[f64]) -> Result<Gaussian> {
    let position = Vector3::new(v[0], v[1], v[2]);
    let scales = Vector3::new(v[4].exp(), v[5].exp(), v[6].exp());
    let q = Quaternion::new(v[7], v[8], v[9], v[10]);
    if !(q.norm() > 0.0) {
        return Err(Error::InvalidGaussian("rotation quaternion has zero norm".into()));
    }
    let rotation = UnitQuaternion::from_quaternion(q);
    let mass = sigmoid(v[3]) * peak_to_mass_factor(&scales);
    let sh = v[11..].to_vec();
    Gaussian::new(position, rotation, scales, mass, sh)
}

/// Summary of a save.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveStats {
    /// Splats whose peak opacity fell outside `[MIN_PEAK, 1 - MIN_PEAK]`.
    pub clamped_opacities: usize,
}

pub fn save_model(m: &SplatModel, path: impl AsRef<Path>) -> Result<SaveStats> {
    let path = path.as_ref();
    m.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let stats = write_model(m, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(stats)
}

pub fn write_model<W: Write>(m: &SplatModel, w: &mut W) -> std::io::Result<SaveStats> {
    let k = m.sh_degree as usize + 1;
    let rest = 3 * (k * k - 1);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", m.len()));
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.extend(
        [
            "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut stats = SaveStats::default();
    let mut record: Vec<f32> = Vec::with_capacity(names.len());
    for g in &m.gaussians {
        record.clear();
        record.extend(g.position.iter().map(|&v| v as f32));
        record.extend([0.0f32; 3]);
        record.extend(g.sh_coeffs.iter().map(|&v| v as f32));
        let peak = g.opacity_mass / peak_to_mass_factor(&g.scales);
        let clamped = peak.clamp(MIN_PEAK, 1.0 - MIN_PEAK);
        if clamped != peak {
            stats.clamped_opacities += 1;
        }
        record.push(logit(clamped) as f32);
        record.extend(g.scales.iter().map(|s| s.ln() as f32));
        let q = g.rotation.quaternion();
        record.extend([q.w as f32, q.i as f32, q.j as f32, q.k as f32]);
        for v in &record {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(stats)
}

/// 8-bit color of a splat's DC term.
pub fn dc_color(g: &Gaussian) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let v = (0.5 + SH_C0 * g.sh_coeffs[c]).clamp(0.0, 1.0);
        *out = (v * 255.0).round() as u8;
    }
    rgb
}

/// One point per splat at its mean, colored by the DC term.
pub fn export_points(m: &SplatModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_points(m, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_points<W: Write>(m: &SplatModel, w: &mut W) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        m.len()
    )?;
    for g in &m.gaussians {
        for v in g.position.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.write_all(&dc_color(g))?;
    }
    Ok(())
}
