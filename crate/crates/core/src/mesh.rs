//! Triangle meshes: OBJ/STL loading, primitive tessellation, area queries.

use std::path::Path;

use nalgebra::{Isometry3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh {what}: {msg}")]
    Malformed { what: String, msg: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
}

/// Indexed triangle mesh, coordinates in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
        }
    }

    pub fn corners(&self, tri: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Cross product of the two edges; norm is twice the area.
    pub fn face_cross(&self, tri: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, tri: usize) -> f64 {
        0.5 * self.face_cross(tri).norm()
    }

    /// Unit face normal, or `None` for a degenerate triangle.
    pub fn face_normal(&self, tri: usize) -> Option<Vector3<f64>> {
        let n = self.face_cross(tri);
        let len = n.norm();
        (len > 0.0 && len.is_finite()).then(|| n / len)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.face_area(t)).sum()
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| iso.transform_point(&(*v).into()).coords)
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn scaled(&self, scale: &Vector3<f64>) -> Self {
        let mut out = Self {
            vertices: self.vertices.iter().map(|v| v.component_mul(scale)).collect(),
            triangles: self.triangles.clone(),
        };
        // mirror scaling flips winding
        if scale.x * scale.y * scale.z < 0.0 {
            for t in &mut out.triangles {
                t.swap(1, 2);
            }
        }
        out
    }

    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
    }

    /// Area-weighted vertex normals. Vertices touching no valid face get `None`.
    pub fn vertex_normals(&self) -> Vec<Option<Vector3<f64>>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_cross(t);
            for &v in &self.triangles[t] {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                (len > 0.0).then(|| n / len)
            })
            .collect()
    }

    /// Axis-aligned box centered at the origin with full side lengths `size`.
    pub fn cuboid(size: Vector3<f64>) -> Self {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        // outward winding
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3], // -z
            [4, 5, 6],
            [5, 7, 6], // +z
            [0, 1, 4],
            [1, 5, 4], // -y
            [2, 6, 3],
            [3, 6, 7], // +y
            [0, 4, 2],
            [2, 4, 6], // -x
            [1, 3, 5],
            [3, 7, 5], // +x
        ];
        Self::new(vertices, triangles)
    }

    /// Closed cylinder along z, centered at the origin.
    pub fn cylinder(radius: f64, length: f64, segments: usize) -> Self {
        let segments = segments.max(3);
        let hz = 0.5 * length;
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for i in 0..segments {
            let a = std::f64::consts::TAU * i as f64 / segments as f64;
            let (s, c) = a.sin_cos();
            vertices.push(Vector3::new(radius * c, radius * s, -hz));
            vertices.push(Vector3::new(radius * c, radius * s, hz));
        }
        let bottom = vertices.len();
        vertices.push(Vector3::new(0.0, 0.0, -hz));
        let top = vertices.len();
        vertices.push(Vector3::new(0.0, 0.0, hz));
        let mut triangles = Vec::with_capacity(4 * segments);
        for i in 0..segments {
            let j = (i + 1) % segments;
            let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            triangles.push([b0, b1, t1]);
            triangles.push([b0, t1, t0]);
            triangles.push([bottom, b1, b0]);
            triangles.push([top, t0, t1]);
        }
        Self::new(vertices, triangles)
    }

    /// UV sphere centered at the origin.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
        for i in 1..stacks {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(
                    radius
                        * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                );
            }
        }
        let south = vertices.len();
        vertices.push(Vector3::new(0.0, 0.0, -radius));
        let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
            triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        Self::new(vertices, triangles)
    }
}

/// Raw OBJ content. Faces are fan-triangulated; each corner keeps its
/// optional `vn` reference.
#[derive(Debug, Clone, Default)]
pub struct ObjData {
    pub positions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub faces: Vec<[(usize, Option<usize>); 3]>,
}

impl ObjData {
    pub fn to_mesh(&self) -> TriMesh {
        TriMesh::new(
            self.positions.clone(),
            self.faces.iter().map(|f| [f[0].0, f[1].0, f[2].0]).collect(),
        )
    }
}

fn malformed(what: &str, msg: impl Into<String>) -> MeshError {
    MeshError::Malformed {
        what: what.to_string(),
        msg: msg.into(),
    }
}

fn parse_floats<'a>(
    tokens: impl Iterator<Item = &'a str>,
    n: usize,
    what: &str,
    line: usize,
) -> Result<Vector3<f64>, MeshError> {
    let vals: Vec<f64> = tokens
        .take(n)
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| malformed(what, format!("line {line}: {e}")))?;
    if vals.len() < n || vals.iter().any(|v| !v.is_finite()) {
        return Err(malformed(what, format!("line {line}: expected {n} finite numbers")));
    }
    Ok(Vector3::new(vals[0], vals[1], vals[2]))
}

fn resolve_index(tok: &str, count: usize, what: &str, line: usize) -> Result<usize, MeshError> {
    let raw: i64 = tok
        .parse()
        .map_err(|_| malformed(what, format!("line {line}: bad index {tok:?}")))?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(malformed(what, format!("line {line}: index {raw} out of range")));
    }
    Ok(idx as usize)
}

pub fn parse_obj(text: &str, what: &str) -> Result<ObjData, MeshError> {
    let mut data = ObjData::default();
    // faces may reference normals declared later, resolve after the scan
    let mut raw_faces: Vec<(usize, Vec<(String, Option<String>)>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => data.positions.push(parse_floats(tokens, 3, what, line_no)?),
            Some("vn") => data.normals.push(parse_floats(tokens, 3, what, line_no)?),
            Some("f") => {
                let corners: Vec<(String, Option<String>)> = tokens
                    .map(|t| {
                        let mut parts = t.split('/');
                        let v = parts.next().unwrap_or("").to_string();
                        let _vt = parts.next();
                        let vn = parts.next().filter(|s| !s.is_empty()).map(str::to_string);
                        (v, vn)
                    })
                    .collect();
                if corners.len() < 3 {
                    return Err(malformed(what, format!("line {line_no}: face with < 3 vertices")));
                }
                raw_faces.push((line_no, corners));
            }
            _ => {}
        }
    }
    for (line_no, corners) in raw_faces {
        let mut resolved = Vec::with_capacity(corners.len());
        for (v, vn) in corners {
            let vi = resolve_index(&v, data.positions.len(), what, line_no)?;
            let ni = vn
                .map(|n| resolve_index(&n, data.normals.len(), what, line_no))
                .transpose()?;
            resolved.push((vi, ni));
        }
        for k in 1..resolved.len() - 1 {
            data.faces.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Ok(data)
}

/// Parses ASCII or binary STL.
pub fn parse_stl(bytes: &[u8], what: &str) -> Result<TriMesh, MeshError> {
    let looks_ascii = bytes.starts_with(b"solid")
        && std::str::from_utf8(bytes).is_ok_and(|s| s.contains("facet"));
    if looks_ascii {
        let text = std::str::from_utf8(bytes).map_err(|e| malformed(what, e.to_string()))?;
        let mut mesh = TriMesh::default();
        let mut corner = Vec::with_capacity(3);
        for (lineno, line) in text.lines().enumerate() {
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("vertex") => corner.push(parse_floats(tokens, 3, what, lineno + 1)?),
                Some("endfacet") => {
                    if corner.len() != 3 {
                        return Err(malformed(what, format!("line {}: facet without 3 vertices", lineno + 1)));
                    }
                    let base = mesh.vertices.len();
                    mesh.vertices.append(&mut corner);
                    mesh.triangles.push([base, base + 1, base + 2]);
                }
                _ => {}
            }
        }
        return Ok(mesh);
    }
    if bytes.len() < 84 {
        return Err(malformed(what, "binary STL shorter than header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() < 84 + count * 50 {
        return Err(malformed(what, format!("binary STL truncated, expected {count} facets")));
    }
    let mut mesh = TriMesh::default();
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    for i in 0..count {
        let base = 84 + i * 50 + 12;
        let vbase = mesh.vertices.len();
        for c in 0..3 {
            let o = base + c * 12;
            mesh.vertices
                .push(Vector3::new(f32_at(o), f32_at(o + 4), f32_at(o + 8)));
        }
        mesh.triangles.push([vbase, vbase + 1, vbase + 2]);
    }
    Ok(mesh)
}

/// Loads an OBJ or STL triangle mesh, dispatching on extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let what = path.display().to_string();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = std::fs::read(path).map_err(|source| MeshError::Io {
        path: what.clone(),
        source,
    })?;
    match ext.as_str() {
        "obj" => {
            let text = String::from_utf8_lossy(&bytes);
            Ok(parse_obj(&text, &what)?.to_mesh())
        }
        "stl" => parse_stl(&bytes, &what),
        other => Err(MeshError::UnsupportedFormat(other.to_string())),
    }
}
