//! Wavefront OBJ for building meshes. Parts are written as groups named
//! after [`Part::name`]; faces outside a known group are tagged from their normal.

use std::fmt::Write as _;
use std::path::Path;

use damagescan_core::Point3;

use crate::error::{Error, Result};
use crate::mesh::{Part, TriangleMesh};

pub fn to_obj_string(mesh: &TriangleMesh, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "o {name}");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for part in Part::ALL {
        let tris: Vec<&[u32; 3]> = mesh
            .triangles
            .iter()
            .zip(&mesh.parts)
            .filter(|(_, p)| **p == part)
            .map(|(t, _)| t)
            .collect();
        if tris.is_empty() {
            continue;
        }
        let _ = writeln!(s, "g {}", part.name());
        for t in tris {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh, name: &str) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh, name)).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&s).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

/// Polygons are fan-triangulated; texture and normal indices are ignored.
pub fn parse_obj(s: &str) -> std::result::Result<TriangleMesh, String> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut tags: Vec<Option<Part>> = Vec::new();
    let mut group: Option<Part> = None;
    for (ln, line) in s.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| format!("line {}: bad coordinate `{t}`", ln + 1))
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(format!("line {}: vertex needs three coordinates", ln + 1));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let n = vertices.len() as i64;
                let idx: Vec<u32> = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or_default();
                        let i: i64 = head
                            .parse()
                            .map_err(|_| format!("line {}: bad index `{t}`", ln + 1))?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(format!("line {}: index {head} out of range", ln + 1));
                        }
                        Ok(i as u32)
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs three vertices", ln + 1));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                    tags.push(group);
                }
            }
            Some("g") | Some("usemtl") => group = tok.next().and_then(Part::from_name),
            _ => {}
        }
    }
    let mut mesh =
        TriangleMesh::with_inferred_parts(vertices, triangles).map_err(|e| e.to_string())?;
    for (p, t) in mesh.parts.iter_mut().zip(tags) {
        if let Some(t) = t {
            *p = t;
        }
    }
    Ok(mesh)
}
