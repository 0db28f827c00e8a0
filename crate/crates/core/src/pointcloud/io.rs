//! PLY, OBJ and XYZN-text point cloud readers.

use std::path::Path;

use nalgebra::Vector3;

use super::{estimate_normals_raw, PointCloud, PointCloudError};
use crate::mesh::parse_obj;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Obj,
    /// Whitespace separated `x y z nx ny nz` per line, `#` comments.
    Xyzn,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "ply" => Some(Self::Ply),
            "obj" => Some(Self::Obj),
            "xyzn" | "xyz" | "txt" => Some(Self::Xyzn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Neighbour count for normal estimation when the file has none.
    /// `None` makes missing normals an error.
    pub estimate_normals: Option<usize>,
}

pub fn load_point_cloud(
    path: &Path,
    format: Option<CloudFormat>,
    opts: LoadOptions,
) -> Result<PointCloud, PointCloudError> {
    let format = format.or_else(|| CloudFormat::from_path(path)).ok_or_else(|| {
        PointCloudError::MalformedFile(format!("cannot infer format of {}", path.display()))
    })?;
    let bytes = std::fs::read(path).map_err(|source| PointCloudError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_point_cloud(&bytes, format, opts)
}

pub fn parse_point_cloud(
    bytes: &[u8],
    format: CloudFormat,
    opts: LoadOptions,
) -> Result<PointCloud, PointCloudError> {
    let (positions, normals) = match format {
        CloudFormat::Xyzn => parse_xyzn(bytes)?,
        CloudFormat::Ply => parse_ply(bytes)?,
        CloudFormat::Obj => parse_obj_cloud(bytes, opts)?,
    };
    if positions.is_empty() {
        return Err(PointCloudError::EmptyCloud);
    }
    let normals = match normals {
        Some(n) => n,
        None => match opts.estimate_normals {
            Some(k) => estimate_normals_raw(&positions, k)?,
            None => return Err(PointCloudError::MissingNormals),
        },
    };
    PointCloud::new(positions, normals)
}

type Parsed = (Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>);

fn parse_xyzn(bytes: &[u8]) -> Result<Parsed, PointCloudError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| PointCloudError::MalformedFile(format!("not UTF-8: {e}")))?;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| PointCloudError::MalformedFile(format!("line {}: {e}", lineno + 1)))?;
        let has_n = match vals.len() {
            3 => false,
            6 => true,
            n => {
                return Err(PointCloudError::MalformedFile(format!(
                    "line {}: expected 3 or 6 values, got {n}",
                    lineno + 1
                )))
            }
        };
        if *with_normals.get_or_insert(has_n) != has_n {
            return Err(PointCloudError::MalformedFile(format!(
                "line {}: inconsistent column count",
                lineno + 1
            )));
        }
        positions.push(Vector3::new(vals[0], vals[1], vals[2]));
        if has_n {
            normals.push(Vector3::new(vals[3], vals[4], vals[5]));
        }
    }
    Ok((positions, with_normals.unwrap_or(false).then_some(normals)))
}

fn parse_obj_cloud(bytes: &[u8], opts: LoadOptions) -> Result<Parsed, PointCloudError> {
    let text = String::from_utf8_lossy(bytes);
    let obj = parse_obj(&text, "obj").map_err(|e| PointCloudError::MalformedFile(e.to_string()))?;
    let n = obj.positions.len();
    let mut normals: Vec<Option<Vector3<f64>>> = vec![None; n];
    let face_refs = obj.faces.iter().flatten().any(|c| c.1.is_some());
    if face_refs {
        for &(v, vn) in obj.faces.iter().flatten() {
            if let Some(vn) = vn {
                let acc = normals[v].get_or_insert_with(Vector3::zeros);
                *acc += obj.normals[vn];
            }
        }
    } else if obj.normals.len() == n {
        normals = obj.normals.iter().copied().map(Some).collect();
    }
    if n > 0 && normals.iter().all(Option::is_some) {
        return Ok((obj.positions, Some(normals.into_iter().flatten().collect())));
    }
    if opts.estimate_normals.is_some() && !obj.faces.is_empty() {
        // derive from faces; vertices not on any face fall back to PCA
        let derived = obj.to_mesh().vertex_normals();
        if derived.iter().all(Option::is_some) {
            return Ok((obj.positions, Some(derived.into_iter().flatten().collect())));
        }
    }
    Ok((obj.positions, None))
}

#[derive(Debug, Clone, Copy)]
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

    fn read_le(self, b: &[u8]) -> f64 {
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

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn bad(msg: impl Into<String>) -> PointCloudError {
    PointCloudError::MalformedFile(msg.into())
}

fn parse_ply(bytes: &[u8]) -> Result<Parsed, PointCloudError> {
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| bad("PLY without end_header"))?;
    let mut body_start = header_end + 10;
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("PLY header not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ..] => binary = Some(false),
            ["format", "binary_little_endian", ..] => binary = Some(true),
            ["format", other, ..] => return Err(bad(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", cnt, item, _name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let c = Scalar::parse(cnt).ok_or_else(|| bad(format!("bad type {cnt}")))?;
                let i = Scalar::parse(item).ok_or_else(|| bad(format!("bad type {item}")))?;
                el.props.push(Property::List(c, i));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let t = Scalar::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), t));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| bad("PLY format line missing"))?;
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("PLY without vertex element"))?;
    let col = |name: &str| {
        elements[vertex]
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
    };
    let xyz = [col("x"), col("y"), col("z")];
    if xyz.iter().any(Option::is_none) {
        return Err(bad("vertex element lacks x/y/z"));
    }
    let nxyz = [col("nx"), col("ny"), col("nz")];
    let has_normals = nxyz.iter().all(Option::is_some);

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(elements[vertex].count);
    if binary {
        let mut off = body_start;
        let take = |off: &mut usize, t: Scalar| -> Result<f64, PointCloudError> {
            let end = *off + t.size();
            if end > bytes.len() {
                return Err(bad("PLY body truncated"));
            }
            let v = t.read_le(&bytes[*off..end]);
            *off = end;
            Ok(v)
        };
        for (ei, el) in elements.iter().enumerate() {
            for _ in 0..el.count {
                let mut row = Vec::with_capacity(el.props.len());
                for p in &el.props {
                    match *p {
                        Property::Scalar(_, t) => row.push(take(&mut off, t)?),
                        Property::List(c, item) => {
                            let n = take(&mut off, c)? as usize;
                            for _ in 0..n {
                                take(&mut off, item)?;
                            }
                            row.push(f64::NAN);
                        }
                    }
                }
                if ei == vertex {
                    rows.push(row);
                }
            }
        }
    } else {
        let body = std::str::from_utf8(&bytes[body_start.min(bytes.len())..])
            .map_err(|_| bad("ASCII PLY body not UTF-8"))?;
        let mut lines = body.lines().filter(|l| !l.trim().is_empty());
        for (ei, el) in elements.iter().enumerate() {
            for _ in 0..el.count {
                let line = lines.next().ok_or_else(|| bad("PLY body truncated"))?;
                if ei != vertex {
                    continue;
                }
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("PLY value: {e}")))?;
                if vals.len() < el.props.len() {
                    return Err(bad("PLY vertex row too short"));
                }
                rows.push(vals);
            }
        }
    }
    let get = |row: &[f64], idx: [Option<usize>; 3]| {
        Vector3::new(row[idx[0].unwrap()], row[idx[1].unwrap()], row[idx[2].unwrap()])
    };
    let positions = rows.iter().map(|r| get(r, xyz)).collect();
    let normals = has_normals.then(|| rows.iter().map(|r| get(r, nxyz)).collect());
    Ok((positions, normals))
}
