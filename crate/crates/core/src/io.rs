//! File formats: PLY point clouds, headerless float32 arrays, JSON reports.
//!
//! PLY files written here always have the layout
//!
//! ```text
//! ply
//! format {ascii|binary_little_endian} 1.0
//! element vertex N
//! property float x
//! property float y
//! property float z
//! property float flow_x      (optional, with flow_y, flow_z)
//! property float flow_y
//! property float flow_z
//! property int label         (optional)
//! end_header
//! ```
//!
//! Coordinates are float32 on disk and widened to f64 on read. The reader
//! also accepts other scalar property types, comment lines and extra
//! elements (list properties only after the vertex element). Unknown vertex
//! properties are skipped with a warning.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Location;
use crate::{Error, FlowField, FlowMetrics, PointCloud, Result, SolveReport, SolverConfig, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

impl std::str::FromStr for PlyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(PlyFormat::Ascii),
            "binary" | "binary_little_endian" => Ok(PlyFormat::BinaryLittleEndian),
            other => Err(Error::invalid(format!("unknown PLY format '{other}'"))),
        }
    }
}

impl std::fmt::Display for PlyFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary",
        })
    }
}

/// Contents of a vertex PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub cloud: PointCloud,
    pub flow: Option<FlowField>,
    pub labels: Option<Vec<i32>>,
}

impl PlyData {
    /// Flow field, or an error naming `what` when the file carried none.
    pub fn require_flow(&self, what: &str) -> Result<&FlowField> {
        self.flow
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{what} has no flow_x/flow_y/flow_z properties")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    X,
    Y,
    Z,
    FlowX,
    FlowY,
    FlowZ,
    Label,
    Skip,
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: Scalar,
    role: Role,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    has_list: bool,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Lines consumed, for ascii error locations.
    lines: usize,
    /// Bytes consumed, for binary error locations.
    bytes: usize,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut lines = 0;
    let mut bytes = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        let got = r.read_line(&mut line)?;
        if got == 0 {
            return Err(Error::parse(Location::Line(lines + 1), "unexpected end of header"));
        }
        lines += 1;
        bytes += got;
        let at = Location::Line(lines);
        let text = line.trim_end_matches(['\n', '\r']);
        let mut words = text.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if lines == 1 {
            if text != "ply" {
                return Err(Error::parse(at, "missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                let kind = words.next().unwrap_or("");
                let version = words.next().unwrap_or("");
                if version != "1.0" {
                    return Err(Error::parse(at, format!("unsupported PLY version '{version}'")));
                }
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(at, format!("unsupported format '{other}'")));
                    }
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(at, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(at, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(at, "property before any element"))?;
                let ty_name = words.next().unwrap_or("");
                if ty_name == "list" {
                    // Only readable when the element follows the vertex rows.
                    el.has_list = true;
                    continue;
                }
                let ty = Scalar::parse(ty_name)
                    .ok_or_else(|| Error::parse(at, format!("unknown property type '{ty_name}'")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(at, "property without name"))?
                    .to_string();
                let role = if el.name == "vertex" {
                    match name.as_str() {
                        "x" => Role::X,
                        "y" => Role::Y,
                        "z" => Role::Z,
                        "flow_x" => Role::FlowX,
                        "flow_y" => Role::FlowY,
                        "flow_z" => Role::FlowZ,
                        "label" => Role::Label,
                        _ => Role::Skip,
                    }
                } else {
                    Role::Skip
                };
                if el.props.iter().any(|p| p.name == name) {
                    return Err(Error::parse(at, format!("duplicate property '{name}'")));
                }
                el.props.push(Property { name, ty, role });
            }
            "end_header" => break,
            other => return Err(Error::parse(at, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(Location::Line(lines), "missing format line"))?;
    Ok(Header {
        format,
        elements,
        lines,
        bytes,
    })
}

/// Accumulates vertex rows and validates them.
struct VertexSink {
    has_flow: bool,
    has_label: bool,
    points: Vec<Vec3>,
    flow: Vec<Vec3>,
    labels: Vec<i32>,
}

impl VertexSink {
    fn new(el: &Element, at: Location) -> Result<Self> {
        let has = |r: Role| el.props.iter().any(|p| p.role == r);
        if !(has(Role::X) && has(Role::Y) && has(Role::Z)) {
            return Err(Error::parse(at, "vertex element lacks x, y, z properties"));
        }
        let flow_count = [Role::FlowX, Role::FlowY, Role::FlowZ]
            .iter()
            .filter(|&&r| has(r))
            .count();
        if flow_count != 0 && flow_count != 3 {
            return Err(Error::parse(at, "flow properties must come as flow_x, flow_y, flow_z"));
        }
        for p in &el.props {
            if p.role == Role::Skip {
                log::warn!("skipping unknown vertex property '{}'", p.name);
            }
            if p.role == Role::Label && p.ty.is_float() {
                return Err(Error::parse(at, "label property must be an integer type"));
            }
        }
        Ok(Self {
            has_flow: flow_count == 3,
            has_label: has(Role::Label),
            points: Vec::with_capacity(el.count),
            flow: Vec::with_capacity(if flow_count == 3 { el.count } else { 0 }),
            labels: Vec::new(),
        })
    }

    fn push(&mut self, el: &Element, values: &[f64], at: Location) -> Result<()> {
        let mut p = Vec3::zeros();
        let mut f = Vec3::zeros();
        let mut label = 0;
        for (prop, &v) in el.props.iter().zip(values) {
            match prop.role {
                Role::X => p.x = v,
                Role::Y => p.y = v,
                Role::Z => p.z = v,
                Role::FlowX => f.x = v,
                Role::FlowY => f.y = v,
                Role::FlowZ => f.z = v,
                Role::Label => label = v as i32,
                Role::Skip => {}
            }
        }
        if !(p.iter().all(|c| c.is_finite()) && f.iter().all(|c| c.is_finite())) {
            return Err(Error::parse(at, "non-finite vertex value"));
        }
        self.points.push(p);
        if self.has_flow {
            self.flow.push(f);
        }
        if self.has_label {
            self.labels.push(label);
        }
        Ok(())
    }

    fn finish(self, at: Location) -> Result<PlyData> {
        let cloud = PointCloud::new(self.points).map_err(|e| Error::parse(at, e.to_string()))?;
        Ok(PlyData {
            cloud,
            flow: self.has_flow.then(|| FlowField::from_vec_unchecked(self.flow)),
            labels: self.has_label.then_some(self.labels),
        })
    }
}

fn parse_ascii_value(tok: &str, ty: Scalar) -> Option<f64> {
    if ty == Scalar::F32 {
        tok.parse::<f32>().ok().map(f64::from)
    } else if ty == Scalar::F64 {
        tok.parse::<f64>().ok()
    } else {
        tok.parse::<i64>().ok().map(|v| v as f64)
    }
}

/// Parse a PLY document from a buffered reader.
pub fn read_ply_from<R: BufRead>(mut r: R) -> Result<PlyData> {
    let header = read_header(&mut r)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(Location::Line(header.lines), "no vertex element"))?;
    if let Some(el) = header.elements[..=vertex_pos].iter().find(|e| e.has_list) {
        return Err(Error::parse(
            Location::Line(header.lines),
            format!("list properties are not supported before vertex data (element '{}')", el.name),
        ));
    }
    let vertex = &header.elements[vertex_pos];
    let mut sink = VertexSink::new(vertex, Location::Line(header.lines))?;

    match header.format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            let mut lineno = header.lines;
            let mut values = Vec::new();
            for el in &header.elements[..=vertex_pos] {
                for _ in 0..el.count {
                    line.clear();
                    lineno += 1;
                    let at = Location::Line(lineno);
                    if r.read_line(&mut line)? == 0 {
                        return Err(Error::parse(
                            at,
                            format!("file ends before {} '{}' rows were read", el.count, el.name),
                        ));
                    }
                    values.clear();
                    for (i, tok) in line.split_whitespace().enumerate() {
                        let prop = el
                            .props
                            .get(i)
                            .ok_or_else(|| Error::parse(at, "too many values on row"))?;
                        let v = parse_ascii_value(tok, prop.ty)
                            .ok_or_else(|| Error::parse(at, format!("cannot parse '{tok}' as {:?}", prop.ty)))?;
                        values.push(v);
                    }
                    if values.len() != el.props.len() {
                        return Err(Error::parse(
                            at,
                            format!("expected {} values, found {}", el.props.len(), values.len()),
                        ));
                    }
                    if el.name == "vertex" {
                        sink.push(el, &values, at)?;
                    }
                }
            }
            sink.finish(Location::Line(lineno))
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offset = header.bytes;
            let mut values = Vec::new();
            let mut buf = Vec::new();
            for el in &header.elements[..=vertex_pos] {
                let row_size: usize = el.props.iter().map(|p| p.ty.size()).sum();
                buf.resize(row_size, 0);
                for _ in 0..el.count {
                    let at = Location::Byte(offset);
                    r.read_exact(&mut buf).map_err(|e| {
                        if e.kind() == std::io::ErrorKind::UnexpectedEof {
                            Error::parse(
                                at,
                                format!("file ends before {} '{}' rows were read", el.count, el.name),
                            )
                        } else {
                            Error::Io(e)
                        }
                    })?;
                    values.clear();
                    let mut pos = 0;
                    for p in &el.props {
                        values.push(p.ty.decode_le(&buf[pos..pos + p.ty.size()]));
                        pos += p.ty.size();
                    }
                    if el.name == "vertex" {
                        sink.push(el, &values, at)?;
                    }
                    offset += row_size;
                }
            }
            sink.finish(Location::Byte(offset))
        }
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyData> {
    read_ply_from(BufReader::new(File::open(path)?))
}

/// Serialize points with optional flow and labels.
pub fn write_ply_to<W: Write>(
    mut w: W,
    cloud: &PointCloud,
    flow: Option<&FlowField>,
    labels: Option<&[i32]>,
    format: PlyFormat,
) -> Result<()> {
    let n = cloud.len();
    if let Some(f) = flow {
        crate::cloud::check_len(n, f.len())?;
    }
    if let Some(l) = labels {
        crate::cloud::check_len(n, l.len())?;
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(w, "ply\nformat {fmt} 1.0\nelement vertex {n}\n")?;
    w.write_all(b"property float x\nproperty float y\nproperty float z\n")?;
    if flow.is_some() {
        w.write_all(b"property float flow_x\nproperty float flow_y\nproperty float flow_z\n")?;
    }
    if labels.is_some() {
        w.write_all(b"property int label\n")?;
    }
    w.write_all(b"end_header\n")?;

    for i in 0..n {
        let mut row: [f32; 6] = [0.0; 6];
        let p = cloud.points()[i];
        row[..3].copy_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
        let width = if let Some(f) = flow {
            let v = f.vectors()[i];
            row[3..].copy_from_slice(&[v.x as f32, v.y as f32, v.z as f32]);
            6
        } else {
            3
        };
        match format {
            PlyFormat::Ascii => {
                for (k, v) in row[..width].iter().enumerate() {
                    if k > 0 {
                        w.write_all(b" ")?;
                    }
                    write!(w, "{v}")?;
                }
                if let Some(l) = labels {
                    write!(w, " {}", l[i])?;
                }
                w.write_all(b"\n")?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in &row[..width] {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(l) = labels {
                    w.write_all(&l[i].to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    flow: Option<&FlowField>,
    labels: Option<&[i32]>,
    format: PlyFormat,
) -> Result<()> {
    write_ply_to(BufWriter::new(File::create(path)?), cloud, flow, labels, format)
}

/// Row-major float32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl RawArray {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Interpret a 3-column array as points (or flow vectors), widened to f64.
    pub fn to_vec3(&self) -> Result<Vec<Vec3>> {
        if self.cols != 3 {
            return Err(Error::invalid(format!("expected 3 columns, found {}", self.cols)));
        }
        Ok((0..self.rows)
            .map(|i| {
                let r = self.row(i);
                Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64)
            })
            .collect())
    }
}

/// Decode a headerless little-endian float32 array. When `rows` is `None`
/// it is inferred from the byte length.
pub fn decode_raw_f32(bytes: &[u8], rows: Option<usize>, cols: usize) -> Result<RawArray> {
    if cols == 0 {
        return Err(Error::invalid("cols must be >= 1"));
    }
    let row_bytes = cols * 4;
    if !bytes.len().is_multiple_of(row_bytes) {
        return Err(Error::parse(
            Location::Byte(bytes.len() - bytes.len() % row_bytes),
            format!("length {} is not a multiple of {row_bytes} bytes", bytes.len()),
        ));
    }
    let found = bytes.len() / row_bytes;
    let rows = rows.unwrap_or(found);
    if rows == 0 {
        return Err(Error::EmptyCloud);
    }
    if found != rows {
        return Err(Error::parse(
            Location::Byte(bytes.len()),
            format!("expected {rows} rows ({} bytes), file holds {found}", rows * row_bytes),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(Location::Byte(i * 4), "non-finite value"));
    }
    Ok(RawArray { rows, cols, data })
}

pub fn read_raw_f32(path: impl AsRef<Path>, rows: Option<usize>, cols: usize) -> Result<RawArray> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_raw_f32(&bytes, rows, cols)
}

pub fn encode_raw_f32(array: &RawArray) -> Result<Vec<u8>> {
    if array.data.len() != array.rows * array.cols {
        return Err(Error::LengthMismatch {
            expected: array.rows * array.cols,
            found: array.data.len(),
        });
    }
    if array.rows == 0 {
        return Err(Error::EmptyCloud);
    }
    Ok(array.data.iter().flat_map(|v| v.to_le_bytes()).collect())
}

pub fn write_raw_f32(path: impl AsRef<Path>, array: &RawArray) -> Result<()> {
    std::fs::write(path, encode_raw_f32(array)?)?;
    Ok(())
}

/// Narrow 3-vectors to a float32 array.
pub fn vec3_to_raw(vectors: &[Vec3]) -> RawArray {
    RawArray {
        rows: vectors.len(),
        cols: 3,
        data: vectors
            .iter()
            .flat_map(|v| [v.x as f32, v.y as f32, v.z as f32])
            .collect(),
    }
}

pub fn read_raw_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    PointCloud::new(read_raw_f32(path, None, 3)?.to_vec3()?)
}

/// Metrics plus solver summary, serialized with a fixed key order.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub epe: Option<f64>,
    pub acc5: Option<f64>,
    pub acc10: Option<f64>,
    pub angle_err: Option<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub final_energy: f64,
    pub config: SolverConfig,
}

impl MetricsReport {
    pub fn new(metrics: Option<&FlowMetrics>, report: &SolveReport, config: &SolverConfig) -> Self {
        Self {
            epe: metrics.map(|m| m.epe),
            acc5: metrics.map(|m| m.acc5),
            acc10: metrics.map(|m| m.acc10),
            angle_err: metrics.map(|m| m.angle_err),
            iterations: report.iterations_run,
            wall_time_s: report.wall_time,
            final_energy: report.final_energy.total,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_metrics_json(
    path: impl AsRef<Path>,
    metrics: Option<&FlowMetrics>,
    report: &SolveReport,
    config: &SolverConfig,
) -> Result<()> {
    std::fs::write(path, MetricsReport::new(metrics, report, config).to_json()?)?;
    Ok(())
}
