//! ASCII OFF and OBJ readers and writers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PlanarMesh, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};

/// Raw contents of a mesh file before validation.
#[derive(Clone, Debug, Default)]
pub struct RawMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    /// Per-vertex texture coordinates, when the file carries them.
    pub uv: Option<Vec<Point2>>,
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, found {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite number {tok:?}")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("expected a non-negative integer, found {tok:?}")))
}

/// Parses ASCII OFF text.
pub fn read_off(text: &str) -> Result<RawMesh> {
    // Tokens with their line numbers, comments stripped.
    let mut tokens = text.lines().enumerate().flat_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        l.split_whitespace().map(move |t| (i + 1, t))
    });
    let (line, head) = tokens.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let mut counts = Vec::with_capacity(3);
    if head != "OFF" {
        return Err(Error::parse(line, format!("expected OFF header, found {head:?}")));
    }
    for _ in 0..3 {
        let (l, t) = tokens
            .next()
            .ok_or_else(|| Error::parse(line, "missing element counts"))?;
        counts.push(parse_usize(t, l)?);
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of file while reading {what}")))
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0; 3];
        for c in &mut p {
            let (l, t) = next("vertices")?;
            *c = parse_f64(t, l)?;
        }
        vertices.push(p);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, t) = next("faces")?;
        let k = parse_usize(t, l)?;
        if k != 3 {
            return Err(Error::parse(
                l,
                format!("only triangles are supported, found a {k}-gon"),
            ));
        }
        let mut f = [0usize; 3];
        for c in &mut f {
            let (l, t) = next("faces")?;
            *c = parse_usize(t, l)?;
        }
        faces.push(f);
    }
    Ok(RawMesh {
        vertices,
        faces,
        uv: None,
    })
}

fn obj_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("bad index {tok:?}")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(Error::parse(line, "OBJ indices are 1-based; found 0"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::parse(line, format!("index {i} out of range")));
    }
    Ok(idx as usize)
}

/// Parses ASCII OBJ text. Texture coordinates are kept when every face
/// corner references one and each vertex is given a single uv.
pub fn read_obj(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut tex: Vec<Point2> = Vec::new();
    let mut faces = Vec::new();
    let mut corner_tex: Vec<[Option<usize>; 3]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("");
        let mut it = l.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let t = it
                        .next()
                        .ok_or_else(|| Error::parse(line, "vertex needs 3 coordinates"))?;
                    *c = parse_f64(t, line)?;
                }
                vertices.push(p);
            }
            Some("vt") => {
                let mut p = [0.0; 2];
                for c in &mut p {
                    let t = it.next().ok_or_else(|| Error::parse(line, "vt needs 2 coordinates"))?;
                    *c = parse_f64(t, line)?;
                }
                tex.push(p);
            }
            Some("f") => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(Error::parse(
                        line,
                        format!("only triangles are supported, found {} corners", corners.len()),
                    ));
                }
                let mut f = [0usize; 3];
                let mut t = [None; 3];
                for k in 0..3 {
                    let mut parts = corners[k].split('/');
                    f[k] = obj_index(parts.next().unwrap_or(""), vertices.len(), line)?;
                    t[k] = match parts.next() {
                        Some(s) if !s.is_empty() => Some(obj_index(s, tex.len(), line)?),
                        _ => None,
                    };
                }
                faces.push(f);
                corner_tex.push(t);
            }
            _ => {}
        }
    }

    let mut uv = None;
    if !tex.is_empty() && corner_tex.iter().all(|t| t.iter().all(Option::is_some)) {
        let mut assigned: HashMap<usize, usize> = HashMap::new();
        for (f, t) in faces.iter().zip(&corner_tex) {
            for k in 0..3 {
                let ti = t[k].unwrap();
                if let Some(&prev) = assigned.get(&f[k]) {
                    if tex[prev] != tex[ti] {
                        return Err(Error::parse(
                            0,
                            format!(
                                "vertex {} has more than one texture coordinate (seams are not supported)",
                                f[k] + 1
                            ),
                        ));
                    }
                } else {
                    assigned.insert(f[k], ti);
                }
            }
        }
        if assigned.len() == vertices.len() {
            uv = Some((0..vertices.len()).map(|v| tex[assigned[&v]]).collect());
        } else if tex.len() == vertices.len() {
            uv = Some(tex);
        }
    }
    Ok(RawMesh { vertices, faces, uv })
}

fn read_raw(path: &Path) -> Result<RawMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("off") => read_off(&text),
        Some("obj") => read_obj(&text),
        _ if text.trim_start().starts_with("OFF") => read_off(&text),
        _ => read_obj(&text),
    }
}

/// Loads and validates an OFF or OBJ mesh.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let raw = read_raw(path.as_ref())?;
    TriMesh::new(raw.vertices, raw.faces)
}

/// Loads a planar mesh. OBJ texture coordinates become the uv; without
/// them the uv are the vertex (x, y).
pub fn load_planar(path: impl AsRef<Path>) -> Result<PlanarMesh> {
    let raw = read_raw(path.as_ref())?;
    let uv = raw
        .uv
        .unwrap_or_else(|| raw.vertices.iter().map(|p| [p[0], p[1]]).collect());
    PlanarMesh::new(TriMesh::new(raw.vertices, raw.faces)?, uv)
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt_f64(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

fn save(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn off_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.vertex_count(), mesh.face_count());
    for p in mesh.vertices() {
        fmt_f64(&mut s, p[0]);
        s.push(' ');
        fmt_f64(&mut s, p[1]);
        s.push(' ');
        fmt_f64(&mut s, p[2]);
        s.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    save(path.as_ref(), off_string(mesh))
}

fn obj_string(mesh: &TriMesh, uv: Option<&[Point2]>) -> String {
    let mut s = String::new();
    for p in mesh.vertices() {
        s.push_str("v ");
        fmt_f64(&mut s, p[0]);
        s.push(' ');
        fmt_f64(&mut s, p[1]);
        s.push(' ');
        fmt_f64(&mut s, p[2]);
        s.push('\n');
    }
    if let Some(uv) = uv {
        for p in uv {
            s.push_str("vt ");
            fmt_f64(&mut s, p[0]);
            s.push(' ');
            fmt_f64(&mut s, p[1]);
            s.push('\n');
        }
    }
    for f in mesh.faces() {
        let [a, b, c] = [f[0] + 1, f[1] + 1, f[2] + 1];
        if uv.is_some() {
            let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}

pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    save(path.as_ref(), obj_string(mesh, None))
}

/// Writes the 3D vertices as `v` lines and the uv as matching `vt` lines.
pub fn write_planar_obj(mesh: &PlanarMesh, path: impl AsRef<Path>) -> Result<()> {
    save(path.as_ref(), obj_string(&mesh.base, Some(&mesh.uv)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE_OFF: &str = "OFF\n# unit square\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n";

    #[test]
    fn off_square() {
        let raw = read_off(SQUARE_OFF).unwrap();
        assert_eq!(raw.vertices.len(), 4);
        assert_eq!(raw.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_is_one_based_and_keeps_uv() {
        let text = "v 0 0 1\nv 1 0 2\nv 0 1 3\nvt 0.1 0.2\nvt 0.3 0.4\nvt 0.5 0.6\nf 1/1 2/2 3/3\n";
        let raw = read_obj(text).unwrap();
        assert_eq!(raw.faces, vec![[0, 1, 2]]);
        assert_eq!(raw.uv.unwrap()[2], [0.5, 0.6]);
        let neg = read_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(neg.faces, vec![[0, 1, 2]]);
        assert!(neg.uv.is_none());
    }

    #[test]
    fn rejects_quads_and_garbage() {
        assert!(read_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").is_err());
        assert!(read_off("OFF\n1 0 0\n0 x 0\n").is_err());
        assert!(read_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn writers_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let pts = [[0.1, 1.0 / 3.0], [1.0, std::f64::consts::PI], [-2.5e-17, 1.0]];
        let mesh = TriMesh::from_planar(&pts, vec![[0, 1, 2]]).unwrap();
        let planar = PlanarMesh::new(mesh.clone(), vec![[0.0, 0.0], [1e-300, 0.5], [0.25, 0.7]]).unwrap();
        write_off(&mesh, dir.path().join("a.off")).unwrap();
        write_planar_obj(&planar, dir.path().join("b.obj")).unwrap();
        let a = load_mesh(dir.path().join("a.off")).unwrap();
        let b = load_planar(dir.path().join("b.obj")).unwrap();
        assert_eq!(a.vertices(), mesh.vertices());
        assert_eq!(b.base.vertices(), mesh.vertices());
        assert_eq!(b.uv, planar.uv);
        assert_eq!(b.faces(), mesh.faces());
    }
}
