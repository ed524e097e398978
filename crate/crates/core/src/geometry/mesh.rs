//! Triangle meshes: OBJ / ASCII PLY I/O and surface sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::pointcloud::PointCloud;
use super::vec3::{self, Vec3};
use crate::error::{Result, TuvfError};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> TuvfError {
    TuvfError::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

impl TriMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * vec3::norm(vec3::cross(vec3::sub(pb, pa), vec3::sub(pc, pa)))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        vec3::normalize(vec3::cross(vec3::sub(pb, pa), vec3::sub(pc, pa)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() || self.vertices.is_empty() {
            return Err(TuvfError::invalid("mesh has no faces"));
        }
        for f in &self.faces {
            if f.iter().any(|&i| i >= self.vertices.len()) {
                return Err(TuvfError::invalid(format!("face {f:?} references a missing vertex")));
            }
        }
        Ok(())
    }

    pub fn parse_obj(text: &str, source: &str) -> Result<TriMesh> {
        let mut mesh = TriMesh::default();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let coords: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|_| parse_err(source, line_no, format!("bad coordinate `{s}`"))))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(parse_err(source, line_no, "vertex needs three coordinates"));
                    }
                    mesh.vertices.push([coords[0], coords[1], coords[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|tok| {
                            let head = tok.split('/').next().unwrap_or("");
                            let i: i64 = head
                                .parse()
                                .map_err(|_| parse_err(source, line_no, format!("bad face index `{tok}`")))?;
                            let n = mesh.vertices.len() as i64;
                            let resolved = if i < 0 { n + i } else { i - 1 };
                            if resolved < 0 || resolved >= n {
                                return Err(parse_err(source, line_no, format!("face index {i} out of range")));
                            }
                            Ok(resolved as usize)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(parse_err(source, line_no, format!("only triangles are supported, got {} vertices", idx.len())));
                    }
                    mesh.faces.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn to_ply(&self) -> String {
        let mut s = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.faces.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
        s
    }

    /// Loads `.obj` or `.ply` by extension.
    pub fn load(path: &Path) -> Result<TriMesh> {
        let text = fs::read_to_string(path).map_err(|e| TuvfError::io(path, e))?;
        let source = path.display().to_string();
        let mesh = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => TriMesh::parse_obj(&text, &source)?,
            Some("ply") => {
                let ply = parse_ply(&text, &source)?;
                if ply.faces.is_empty() {
                    return Err(parse_err(&source, 1, "PLY file has no faces"));
                }
                TriMesh {
                    vertices: ply.points,
                    faces: ply.faces,
                }
            }
            _ => return Err(TuvfError::invalid(format!("unsupported mesh format: {source}"))),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj()).map_err(|e| TuvfError::io(path, e))
    }
}

/// Contents of an ASCII PLY file.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[usize; 3]>,
}

pub fn parse_ply(text: &str, source: &str) -> Result<PlyData> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(parse_err(source, 1, "missing `ply` magic"));
    }
    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    let mut props: Vec<String> = Vec::new();
    let mut current = "";
    let mut header_end = None;
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(parse_err(source, ln + 1, format!("only ascii PLY is supported, got {fmt}")))
            }
            ["element", "vertex", n] => {
                current = "vertex";
                n_vertex = n.parse().map_err(|_| parse_err(source, ln + 1, "bad vertex count"))?;
            }
            ["element", "face", n] => {
                current = "face";
                n_face = n.parse().map_err(|_| parse_err(source, ln + 1, "bad face count"))?;
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => props.push(name.to_string()),
            ["end_header"] => {
                header_end = Some(ln);
                break;
            }
            _ => {}
        }
    }
    if header_end.is_none() {
        return Err(parse_err(source, 1, "missing end_header"));
    }
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(parse_err(source, 1, "vertex element lacks x/y/z"));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let mut out = PlyData {
        normals: normal_cols.map(|_| Vec::with_capacity(n_vertex)),
        ..Default::default()
    };
    for _ in 0..n_vertex {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(source, 0, "truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| parse_err(source, ln + 1, format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(parse_err(source, ln + 1, "too few vertex properties"));
        }
        out.points.push([vals[ix], vals[iy], vals[iz]]);
        if let (Some([a, b, c]), Some(n)) = (normal_cols, out.normals.as_mut()) {
            n.push([vals[a], vals[b], vals[c]]);
        }
    }
    for _ in 0..n_face {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(source, 0, "truncated face list"))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| parse_err(source, ln + 1, format!("bad index `{s}`"))))
            .collect::<Result<_>>()?;
        if vals.first() != Some(&3) || vals.len() != 4 {
            return Err(parse_err(source, ln + 1, "only triangles are supported"));
        }
        if vals[1..].iter().any(|&i| i >= n_vertex) {
            return Err(parse_err(source, ln + 1, "face index out of range"));
        }
        out.faces.push([vals[1], vals[2], vals[3]]);
    }
    Ok(out)
}

/// Point cloud (with normals when present) as ASCII PLY.
pub fn cloud_to_ply(cloud: &PointCloud) -> String {
    let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n", cloud.len());
    if cloud.normals.is_some() {
        s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = &cloud.normals {
            let _ = write!(s, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        s.push('\n');
    }
    s
}

pub fn load_cloud_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| TuvfError::io(path, e))?;
    let ply = parse_ply(&text, &path.display().to_string())?;
    Ok(PointCloud {
        points: ply.points,
        normals: ply.normals,
    })
}

/// Area-weighted surface samples carrying face normals.
///
/// Faces are chosen by systematic sampling of the cumulative area (one random
/// offset, `n` evenly spaced positions), so each face receives within one
/// sample of its expected count; positions inside a face are uniform.
pub fn sample_mesh_surface(mesh: &TriMesh, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    mesh.validate()?;
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return Err(TuvfError::invalid("mesh has zero surface area"));
    }
    let offset: f64 = rng.random();
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut face = 0;
    for i in 0..n {
        let target = (i as f64 + offset) / n as f64 * total;
        while face + 1 < cdf.len() && cdf[face] <= target {
            face += 1;
        }
        let [a, b, c] = mesh.faces[face];
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        points.push([
            u * pa[0] + v * pb[0] + w * pc[0],
            u * pa[1] + v * pb[1] + w * pc[1],
            u * pa[2] + v * pb[2] + w * pc[2],
        ]);
        normals.push(mesh.face_normal(face));
    }
    PointCloud::with_normals(points, normals)
}

/// Closed surface from a grid over polar angle `t ∈ [0, π]` and azimuth
/// `a ∈ [0, 2π)`; `f(t, a)` gives the point. Rings `1..rings` are interior,
/// the poles are single vertices. Faces wind outward when `f` follows the
/// usual spherical orientation.
pub fn polar_mesh(rings: usize, segments: usize, f: impl Fn(f64, f64) -> Vec3) -> TriMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![f(0.0, 0.0)];
    for r in 1..rings {
        let t = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(f(t, a));
        }
    }
    vertices.push(f(PI, 0.0));
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriMesh { vertices, faces }
}

/// Axis-aligned cube with side `size` centred at the origin (12 triangles).
pub fn cube_mesh(size: f64) -> TriMesh {
    let h = size / 2.0;
    let vertices = (0..8)
        .map(|i| [if i & 1 == 0 { -h } else { h }, if i & 2 == 0 { -h } else { h }, if i & 4 == 0 { -h } else { h }])
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    TriMesh { vertices, faces }
}
