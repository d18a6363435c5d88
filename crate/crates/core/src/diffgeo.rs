//! Discrete mean curvature and its rasterization over a disk parameterization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{add3, cross3, dot3, norm3, scale3, sub3, Point3};
use crate::mesh::{FaceLocator, PlanarMesh, TriMesh};
use crate::spectral::node_coordinate;

/// Per-vertex signed mean curvature and unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    pub h: Vec<f64>,
    pub normals: Option<Vec<Point3>>,
}

impl CurvatureField {
    pub fn new(h: Vec<f64>) -> Self {
        CurvatureField { h, normals: None }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Values affinely rescaled to `[0, 1]`; a constant field maps to 0.
    pub fn rescaled(&self) -> Vec<f64> {
        rescale(&self.h, 1.0)
    }

    /// `vertex,h` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex,h\n");
        for (v, h) in self.h.iter().enumerate() {
            let _ = writeln!(s, "{v},{h:.16e}");
        }
        s
    }
}

/// Affine map of `values` onto `[0, top]`, `min -> 0`, `max -> top`.
pub fn rescale(values: &[f64], top: f64) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / range * top).clamp(0.0, top))
        .collect()
}

/// Area-weighted vertex normals, normalized.
pub fn vertex_normals(mesh: &TriMesh) -> Result<Vec<Point3>> {
    let p = mesh.vertices();
    let mut n = vec![[0.0; 3]; p.len()];
    for f in mesh.faces() {
        let c = cross3(sub3(p[f[1]], p[f[0]]), sub3(p[f[2]], p[f[0]]));
        for &v in f {
            n[v] = add3(n[v], c);
        }
    }
    n.iter()
        .enumerate()
        .map(|(v, x)| {
            let l = norm3(*x);
            if l > 0.0 {
                Ok(scale3(*x, 1.0 / l))
            } else {
                Err(Error::ZeroAreaVertex(v))
            }
        })
        .collect()
}

/// Cotangent mean-curvature normal with mixed Voronoi areas. The sign is
/// positive where the curvature normal agrees with the vertex normal (a
/// sphere with outward faces has `H = 1 / r`). Boundary vertices take the
/// value of the nearest already assigned neighbor, working inward-out.
pub fn mean_curvature(mesh: &TriMesh) -> Result<CurvatureField> {
    let p = mesh.vertices();
    let nv = p.len();
    let mut lap = vec![[0.0; 3]; nv];
    let mut area = vec![0.0; nv];
    for f in mesh.faces() {
        let x = [p[f[0]], p[f[1]], p[f[2]]];
        let e = |a: usize, b: usize| sub3(x[b], x[a]);
        let twice = norm3(cross3(e(0, 1), e(0, 2)));
        if twice == 0.0 {
            continue;
        }
        let mut cot = [0.0; 3];
        let mut obtuse = None;
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let d = dot3(e(k, a), e(k, b));
            cot[k] = d / twice;
            if d < 0.0 {
                obtuse = Some(k);
            }
        }
        let fa = 0.5 * twice;
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            // Edge (a, b) is opposite corner k.
            let w = cot[k];
            let d = sub3(x[a], x[b]);
            lap[f[a]] = add3(lap[f[a]], scale3(d, w));
            lap[f[b]] = add3(lap[f[b]], scale3(d, -w));
            area[f[k]] += match obtuse {
                None => {
                    let lab = dot3(e(k, a), e(k, a));
                    let lac = dot3(e(k, b), e(k, b));
                    (lab * cot[b] + lac * cot[a]) / 8.0
                }
                Some(o) if o == k => fa / 2.0,
                Some(_) => fa / 4.0,
            };
        }
    }
    let normals = vertex_normals(mesh)?;
    let mut h = vec![0.0; nv];
    let mut assigned = vec![false; nv];
    for v in 0..nv {
        if mesh.is_boundary(v) {
            continue;
        }
        if !(area[v] > 0.0) {
            return Err(Error::ZeroAreaVertex(v));
        }
        // lap / (2A) is the mean-curvature normal 2 H n.
        let k = scale3(lap[v], 1.0 / (2.0 * area[v]));
        let mag = 0.5 * norm3(k);
        h[v] = if dot3(k, normals[v]) < 0.0 { -mag } else { mag };
        assigned[v] = true;
    }
    if !assigned.iter().any(|&a| a) {
        return Err(Error::invalid("mesh has no interior vertices"));
    }
    let topo = mesh.topology();
    loop {
        let mut layer = Vec::new();
        for v in 0..nv {
            if assigned[v] {
                continue;
            }
            let best = topo
                .neighbors(v)
                .iter()
                .filter(|&&u| assigned[u])
                .map(|&u| (norm3(sub3(p[u], p[v])), u))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, u)) = best {
                layer.push((v, h[u]));
            }
        }
        if layer.is_empty() {
            break;
        }
        for (v, value) in layer {
            h[v] = value;
            assigned[v] = true;
        }
    }
    Ok(CurvatureField {
        h,
        normals: Some(normals),
    })
}

/// Rasterized, rescaled curvature over `[-1, 1]^2`; pixel `(i, j)` is stored
/// at `j * n + i` with `j` increasing upward.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureImage {
    pub n: usize,
    pub grid: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Samples `h` at every pixel center inside the disk image by barycentric
/// interpolation and rescales the masked pixels to `[0, 255]`.
pub fn curvature_image(disk: &PlanarMesh, h: &CurvatureField, n: usize) -> Result<CurvatureImage> {
    if n < 8 {
        return Err(Error::invalid(format!("image size must be at least 8, got {n}")));
    }
    if h.len() != disk.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "curvature values and vertices",
            left: h.len(),
            right: disk.vertex_count(),
        });
    }
    let locator = FaceLocator::new(disk);
    let faces = disk.faces();
    let mut raw = Vec::new();
    let mut mask = vec![false; n * n];
    for j in 0..n {
        for i in 0..n {
            let q = [node_coordinate(i, n), node_coordinate(j, n)];
            if let Some(l) = locator.locate(q) {
                let f = faces[l.face];
                // Difference form keeps constant fields exactly constant.
                let h0 = h.h[f[0]];
                raw.push(h0 + l.bary[1] * (h.h[f[1]] - h0) + l.bary[2] * (h.h[f[2]] - h0));
                mask[j * n + i] = true;
            }
        }
    }
    let scaled = rescale(&raw, 255.0);
    let mut grid = vec![0.0; n * n];
    for (slot, v) in mask.iter().enumerate().filter(|(_, m)| **m).map(|(k, _)| k).zip(scaled) {
        grid[slot] = v;
    }
    Ok(CurvatureImage { n, grid, mask })
}

impl CurvatureImage {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.grid[j * self.n + i]
    }

    /// ASCII PGM, top row first.
    pub fn to_pgm(&self) -> String {
        let n = self.n;
        let mut s = format!("P2\n{n} {n}\n255\n");
        for j in (0..n).rev() {
            let row: Vec<String> = (0..n).map(|i| format!("{}", self.get(i, j).round() as u8)).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// `i,j,value,mask` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,value,mask\n");
        for j in 0..self.n {
            for i in 0..self.n {
                let k = j * self.n + i;
                let _ = writeln!(s, "{i},{j},{:.16e},{}", self.grid[k], u8::from(self.mask[k]));
            }
        }
        s
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
