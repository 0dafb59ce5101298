//! ASCII PLY for point clouds with per-vertex attributes.
//!
//! Vertices carry `x y z` as doubles, an optional `int building_id` (-1 for
//! unlabelled points) and one double per attribute column. The epoch is stored
//! as `comment epoch=pre|post`; other comments are kept as free text.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cloud::{Epoch, Point3, PointCloud};
use crate::error::{Error, Result};

const BUILDING_ID: &str = "building_id";

/// A cloud plus the free-text header comments that accompanied it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyDocument {
    pub cloud: PointCloud,
    pub comments: Vec<String>,
}

pub fn write_ply(path: &Path, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(&mut w, cloud, comments)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(
    w: &mut W,
    cloud: &PointCloud,
    comments: &[String],
) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "comment epoch={}", cloud.epoch().tag())?;
    for c in comments {
        for line in c.lines() {
            writeln!(w, "comment {line}")?;
        }
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    let ids = cloud.building_ids();
    if ids.is_some() {
        writeln!(w, "property int {BUILDING_ID}")?;
    }
    let attrs: Vec<(&str, &[f64])> = cloud.attributes().collect();
    for (name, _) in &attrs {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;
    let mut line = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{} {} {}", p.x, p.y, p.z);
        if let Some(ids) = ids {
            let _ = write!(line, " {}", ids[i].map_or(-1, i64::from));
        }
        for (_, col) in &attrs {
            let _ = write!(line, " {}", col[i]);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PlyDocument> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(BufReader::new(file)).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

enum Column {
    X,
    Y,
    Z,
    BuildingId,
    Attr(usize),
}

pub fn read_ply_from<R: BufRead>(reader: R) -> Result<PlyDocument> {
    let bad = |m: String| Error::Parse(m);
    let mut lines = reader.lines();
    let mut next = || -> Result<Option<String>> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::Parse(format!("read failed: {e}")))
    };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing `ply` magic".into()));
    }
    let mut epoch = Epoch::PreEvent;
    let mut comments = Vec::new();
    let mut n_vertices: Option<usize> = None;
    let mut in_vertex = false;
    let mut columns = Vec::new();
    let mut attr_names = Vec::new();
    loop {
        let line = next()?.ok_or_else(|| bad("header ends before `end_header`".into()))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad("only ascii PLY is supported".into()));
                }
            }
            Some("comment") => {
                let text = line.trim_start()["comment".len()..].trim().to_string();
                if let Some(tag) = text.strip_prefix("epoch=") {
                    epoch = tag.parse()?;
                } else {
                    comments.push(text);
                }
            }
            Some("element") => {
                let name = tok.next().unwrap_or_default();
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(format!("bad element line `{line}`")))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    n_vertices = Some(count);
                } else if count > 0 {
                    return Err(bad(format!("unsupported element `{name}`")));
                }
            }
            Some("property") if in_vertex => {
                let ty = tok
                    .next()
                    .ok_or_else(|| bad(format!("bad property line `{line}`")))?;
                if ty == "list" {
                    return Err(bad("list properties are not supported".into()));
                }
                let name = tok
                    .next()
                    .ok_or_else(|| bad(format!("bad property line `{line}`")))?;
                columns.push(match name {
                    "x" => Column::X,
                    "y" => Column::Y,
                    "z" => Column::Z,
                    BUILDING_ID => Column::BuildingId,
                    other => {
                        attr_names.push(other.to_string());
                        Column::Attr(attr_names.len() - 1)
                    }
                });
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => {
                return Err(bad(format!(
                    "unexpected header line starting with `{other}`"
                )))
            }
        }
    }
    let n = n_vertices.ok_or_else(|| bad("no vertex element".into()))?;
    for c in [Column::X, Column::Y, Column::Z] {
        let want = std::mem::discriminant(&c);
        if !columns.iter().any(|k| std::mem::discriminant(k) == want) {
            return Err(bad("vertex element lacks x, y or z".into()));
        }
    }
    let has_ids = columns.iter().any(|c| matches!(c, Column::BuildingId));
    let mut points = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(if has_ids { n } else { 0 });
    let mut attrs: Vec<Vec<f64>> = vec![Vec::with_capacity(n); attr_names.len()];
    for row in 0..n {
        let line = next()?.ok_or_else(|| bad(format!("file truncated at vertex {row} of {n}")))?;
        let mut p = [0.0; 3];
        let mut tok = line.split_whitespace();
        for c in &columns {
            let t = tok
                .next()
                .ok_or_else(|| bad(format!("vertex {row} has too few values")))?;
            let v: f64 = t
                .parse()
                .map_err(|_| bad(format!("vertex {row}: bad number `{t}`")))?;
            match c {
                Column::X => p[0] = v,
                Column::Y => p[1] = v,
                Column::Z => p[2] = v,
                Column::BuildingId => ids.push(if v < 0.0 { None } else { Some(v as u32) }),
                Column::Attr(k) => attrs[*k].push(v),
            }
        }
        points.push(Point3::new(p[0], p[1], p[2]));
    }
    let mut cloud = PointCloud::from_points(points, epoch)?;
    if has_ids {
        cloud.set_building_ids(ids)?;
    }
    for (name, col) in attr_names.into_iter().zip(attrs) {
        cloud.set_attribute(name, col)?;
    }
    Ok(PlyDocument { cloud, comments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        let mut c = PointCloud::from_points(
            vec![
                Point3::new(0.1, -2.5, 3.0),
                Point3::new(1e-17, 7.0, 1.0 / 3.0),
            ],
            Epoch::PostEvent,
        )
        .unwrap();
        c.set_building_ids(vec![Some(4), None]).unwrap();
        c.set_attribute("f_planarity_100", vec![0.25, f64::NAN])
            .unwrap();
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_ply_to(&mut buf, &c, &["config_hash=abc".into()]).unwrap();
        let doc = read_ply_from(buf.as_slice()).unwrap();
        assert_eq!(doc.comments, vec!["config_hash=abc".to_string()]);
        let r = doc.cloud;
        assert_eq!(r.epoch(), Epoch::PostEvent);
        assert_eq!(r.points(), c.points());
        assert_eq!(r.building_ids(), c.building_ids());
        let a = r.attribute("f_planarity_100").unwrap();
        assert_eq!(a[0], 0.25);
        assert!(a[1].is_nan());
    }

    #[test]
    fn truncated_body() {
        let mut buf = Vec::new();
        write_ply_to(&mut buf, &sample(), &[]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let cut = &s[..s.trim_end().rfind('\n').unwrap()];
        assert!(matches!(
            read_ply_from(cut.as_bytes()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn binary_rejected() {
        let s = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(read_ply_from(s.as_bytes()), Err(Error::Parse(_))));
    }
}
