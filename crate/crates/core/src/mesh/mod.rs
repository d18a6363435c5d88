//! Indexed triangle meshes with disk topology, their planar images, and the
//! piecewise-linear differential quantities every other module builds on.

mod io;
mod locate;
mod topology;

use std::sync::Arc;

pub use io::{load_mesh, load_planar, read_obj, read_off, write_obj, write_off, write_planar_obj};
pub use locate::{barycentric, FaceLocator, Location};
pub use topology::{Edge, Topology, NO_FACE};

use crate::error::{Error, Result};
use crate::geometry::{cross2, cross3, norm3, sub2, sub3, Point2, Point3};

/// Default degenerate-face threshold, relative to the mean face area.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-14;

#[derive(Debug)]
struct MeshData {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    topology: Topology,
}

/// Immutable indexed triangle mesh with disk topology.
///
/// Construction validates the face list (valid and distinct indices, manifold
/// edges, consistent orientation, Euler characteristic 1, one boundary loop).
/// Cloning is cheap.
#[derive(Clone, Debug)]
pub struct TriMesh {
    data: Arc<MeshData>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid(format!("vertex {v} has a non-finite coordinate")));
        }
        let topology = Topology::build(vertices.len(), &faces)?;
        Ok(TriMesh {
            data: Arc::new(MeshData {
                vertices,
                faces,
                topology,
            }),
        })
    }

    /// Planar mesh from 2D positions (z = 0).
    pub fn from_planar(points: &[Point2], faces: Vec<[usize; 3]>) -> Result<Self> {
        TriMesh::new(points.iter().map(|p| [p[0], p[1], 0.0]).collect(), faces)
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.data.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.data.faces
    }

    pub fn topology(&self) -> &Topology {
        &self.data.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.data.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.data.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.data.topology.edges().len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    /// Ordered boundary loop, see [`boundary_loop`].
    pub fn boundary(&self) -> &[usize] {
        self.data.topology.boundary()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.data.topology.is_boundary(v)
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "vertex positions",
                left: vertices.len(),
                right: self.vertex_count(),
            });
        }
        Ok(TriMesh {
            data: Arc::new(MeshData {
                vertices,
                faces: self.data.faces.clone(),
                topology: self.data.topology.clone(),
            }),
        })
    }

    pub fn face_points(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.data.faces[f];
        let v = &self.data.vertices;
        [v[a], v[b], v[c]]
    }

    /// Length of the bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.vertices() {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        norm3(sub3(hi, lo))
    }
}

/// A triangle mesh together with one 2D point per vertex.
#[derive(Clone, Debug)]
pub struct PlanarMesh {
    pub base: TriMesh,
    pub uv: Vec<Point2>,
}

impl PlanarMesh {
    pub fn new(base: TriMesh, uv: Vec<Point2>) -> Result<Self> {
        if uv.len() != base.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "uv coordinates",
                left: uv.len(),
                right: base.vertex_count(),
            });
        }
        if let Some(v) = uv.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::invalid(format!("uv of vertex {v} is not finite")));
        }
        Ok(PlanarMesh { base, uv })
    }

    /// A planar mesh whose uv are the (x, y) of the base vertices.
    pub fn from_xy(base: TriMesh) -> Self {
        let uv = base.vertices().iter().map(|p| [p[0], p[1]]).collect();
        PlanarMesh { base, uv }
    }

    /// Same base, different uv.
    pub fn with_uv(&self, uv: Vec<Point2>) -> Result<Self> {
        PlanarMesh::new(self.base.clone(), uv)
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.base.faces()
    }

    pub fn face_count(&self) -> usize {
        self.base.face_count()
    }

    pub fn vertex_count(&self) -> usize {
        self.base.vertex_count()
    }

    pub fn face_uv(&self, f: usize) -> [Point2; 3] {
        let [a, b, c] = self.base.faces()[f];
        [self.uv[a], self.uv[b], self.uv[c]]
    }

    pub fn centroid(&self, f: usize) -> Point2 {
        let [a, b, c] = self.face_uv(f);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Signed uv area per face; positive for counterclockwise faces.
    pub fn signed_areas(&self) -> Vec<f64> {
        signed_areas(self.base.faces(), &self.uv)
    }

    /// Indices of faces whose signed uv area is not strictly positive.
    pub fn flipped_faces(&self) -> Vec<usize> {
        flipped_faces(self.base.faces(), &self.uv)
    }

    pub fn is_fold_free(&self) -> bool {
        self.flipped_faces().is_empty()
    }

    /// Average uv edge length.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.base.topology().edges();
        let total: f64 = edges
            .iter()
            .map(|e| {
                let d = sub2(self.uv[e.vertices[1]], self.uv[e.vertices[0]]);
                d[0].hypot(d[1])
            })
            .sum();
        total / edges.len() as f64
    }
}

pub(crate) fn signed_areas(faces: &[[usize; 3]], uv: &[Point2]) -> Vec<f64> {
    faces
        .iter()
        .map(|&[a, b, c]| 0.5 * cross2(sub2(uv[b], uv[a]), sub2(uv[c], uv[a])))
        .collect()
}

pub(crate) fn flipped_faces(faces: &[[usize; 3]], uv: &[Point2]) -> Vec<usize> {
    signed_areas(faces, uv)
        .iter()
        .enumerate()
        .filter(|(_, &a)| !(a > 0.0))
        .map(|(f, _)| f)
        .collect()
}

/// Anything with per-face triangle areas.
pub trait FaceAreas {
    fn face_areas(&self) -> Vec<f64>;
}

impl FaceAreas for TriMesh {
    fn face_areas(&self) -> Vec<f64> {
        (0..self.face_count())
            .map(|f| {
                let [a, b, c] = self.face_points(f);
                0.5 * norm3(cross3(sub3(b, a), sub3(c, a)))
            })
            .collect()
    }
}

impl FaceAreas for PlanarMesh {
    fn face_areas(&self) -> Vec<f64> {
        self.signed_areas().into_iter().map(f64::abs).collect()
    }
}

/// Unsigned area of every face.
pub fn face_areas<M: FaceAreas + ?Sized>(mesh: &M) -> Vec<f64> {
    mesh.face_areas()
}

/// Counterclockwise boundary loop of a disk mesh, starting at its smallest
/// vertex index.
pub fn boundary_loop(mesh: &TriMesh) -> Vec<usize> {
    mesh.boundary().to_vec()
}

/// Per-face partial derivatives of a piecewise-linear planar map:
/// `u = a x + b y + r`, `v = c x + d y + s` on each face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceDerivatives {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl FaceDerivatives {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `[a, b, c, d]` of one face.
    pub fn face(&self, f: usize) -> [f64; 4] {
        [self.a[f], self.b[f], self.c[f], self.d[f]]
    }
}

/// Gradients of the three hat functions of a triangle, `(A_i, B_i)` per
/// corner, from its corner positions. `area` must be the signed area.
#[inline]
pub(crate) fn hat_gradients(p: &[Point2; 3], area: f64) -> [[f64; 2]; 3] {
    let inv = 1.0 / (2.0 * area);
    let mut out = [[0.0; 2]; 3];
    for (i, g) in out.iter_mut().enumerate() {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        *g = [(p[j][1] - p[k][1]) * inv, (p[k][0] - p[j][0]) * inv];
    }
    out
}

/// Per-face 2D corner coordinates of the source domain of a map: either the
/// uv of a planar mesh, or an isometric layout of each 3D triangle.
#[derive(Clone, Debug)]
pub(crate) struct FaceCharts {
    pub corners: Vec<[Point2; 3]>,
    pub areas: Vec<f64>,
}

impl FaceCharts {
    pub fn from_planar(mesh: &PlanarMesh) -> Self {
        let corners: Vec<[Point2; 3]> = (0..mesh.face_count()).map(|f| mesh.face_uv(f)).collect();
        let areas = corners
            .iter()
            .map(|p| 0.5 * cross2(sub2(p[1], p[0]), sub2(p[2], p[0])))
            .collect();
        FaceCharts { corners, areas }
    }

    /// Lays every 3D triangle out rigidly in the plane: first corner at the
    /// origin, second on the positive x axis, third in the upper half plane.
    pub fn isometric(mesh: &TriMesh) -> Self {
        let corners: Vec<[Point2; 3]> = (0..mesh.face_count())
            .map(|f| {
                let [p0, p1, p2] = mesh.face_points(f);
                let e1 = sub3(p1, p0);
                let e2 = sub3(p2, p0);
                let l1 = norm3(e1);
                let x2 = if l1 > 0.0 {
                    (e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2]) / l1
                } else {
                    0.0
                };
                let y2 = if l1 > 0.0 { norm3(cross3(e1, e2)) / l1 } else { 0.0 };
                [[0.0, 0.0], [l1, 0.0], [x2, y2]]
            })
            .collect();
        let areas = corners.iter().map(|p| 0.5 * p[1][0] * p[2][1]).collect();
        FaceCharts { corners, areas }
    }

    /// Rejects faces whose area is below `ratio` times the mean area.
    pub fn check_nondegenerate(&self, ratio: f64) -> Result<()> {
        let mean = self.areas.iter().map(|a| a.abs()).sum::<f64>() / self.areas.len().max(1) as f64;
        let threshold = ratio * mean;
        for (f, &area) in self.areas.iter().enumerate() {
            if !(area > threshold) {
                return Err(Error::DegenerateFace {
                    face: f,
                    area,
                    threshold,
                });
            }
        }
        Ok(())
    }

    pub fn derivatives(&self, faces: &[[usize; 3]], target: &[Point2]) -> FaceDerivatives {
        let n = faces.len();
        let mut out = FaceDerivatives {
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
            d: Vec::with_capacity(n),
        };
        for (f, face) in faces.iter().enumerate() {
            let g = hat_gradients(&self.corners[f], self.areas[f]);
            let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..3 {
                let w = target[face[k]];
                a += g[k][0] * w[0];
                b += g[k][1] * w[0];
                c += g[k][0] * w[1];
                d += g[k][1] * w[1];
            }
            out.a.push(a);
            out.b.push(b);
            out.c.push(c);
            out.d.push(d);
        }
        out
    }
}

/// Partial derivatives `(a, b, c, d)` of the piecewise-linear map taking the
/// uv of `source` to `target_uv`, face by face.
pub fn face_derivatives(source: &PlanarMesh, target_uv: &[Point2]) -> Result<FaceDerivatives> {
    face_derivatives_with(source, target_uv, DEGENERATE_AREA_RATIO)
}

/// [`face_derivatives`] with a custom degenerate-face threshold.
pub fn face_derivatives_with(
    source: &PlanarMesh,
    target_uv: &[Point2],
    degenerate_ratio: f64,
) -> Result<FaceDerivatives> {
    if target_uv.len() != source.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "target uv",
            left: target_uv.len(),
            right: source.vertex_count(),
        });
    }
    let charts = FaceCharts::from_planar(source);
    charts.check_nondegenerate(degenerate_ratio)?;
    Ok(charts.derivatives(source.faces(), target_uv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh {
        TriMesh::from_planar(
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn two_triangle_square() {
        let m = square();
        assert_eq!((m.vertex_count(), m.edge_count(), m.face_count()), (4, 5, 2));
        assert_eq!(m.euler_characteristic(), 1);
        assert_eq!(boundary_loop(&m), vec![0, 1, 2, 3]);
        assert_eq!(face_areas(&m), vec![0.5, 0.5]);
    }

    #[test]
    fn fan_boundary_excludes_center() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let m = TriMesh::from_planar(&pts, vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]]).unwrap();
        assert_eq!(boundary_loop(&m), vec![1, 2, 3, 4]);
        assert!(!m.is_boundary(0));
    }

    #[test]
    fn closed_tetrahedron_is_rejected() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let f = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
        let err = TriMesh::new(v, f).unwrap_err();
        assert_eq!(
            err.to_string(),
            "disk topology violated: 0 boundary loops, Euler characteristic 2"
        );
    }

    #[test]
    fn duplicated_face_is_non_manifold() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let err = TriMesh::from_planar(&pts, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]).unwrap_err();
        assert!(err.to_string().contains("non-manifold edge"), "{err}");
    }

    #[test]
    fn flipped_neighbor_is_inconsistent() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let err = TriMesh::from_planar(&pts, vec![[0, 1, 2], [0, 3, 2]]).unwrap_err();
        assert!(matches!(err, Error::InconsistentOrientation(0, 2)), "{err}");
    }

    #[test]
    fn bad_indices() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        assert!(matches!(
            TriMesh::from_planar(&pts, vec![[0, 1, 3]]),
            Err(Error::InvalidFace { face: 0, .. })
        ));
        assert!(matches!(
            TriMesh::from_planar(&pts, vec![[0, 1, 1]]),
            Err(Error::InvalidFace { face: 0, .. })
        ));
    }

    #[test]
    fn derivatives_of_identity_and_stretch() {
        let m = PlanarMesh::from_xy(square());
        let id = face_derivatives(&m, &m.uv).unwrap();
        for f in 0..2 {
            let [a, b, c, d] = id.face(f);
            assert!((a - 1.0).abs() < 1e-15 && b.abs() < 1e-15 && c.abs() < 1e-15 && (d - 1.0).abs() < 1e-15);
        }
        let stretched: Vec<Point2> = m.uv.iter().map(|p| [2.0 * p[0], p[1]]).collect();
        let fd = face_derivatives(&m, &stretched).unwrap();
        for f in 0..2 {
            let [a, b, c, d] = fd.face(f);
            assert!((a - 2.0).abs() < 1e-15 && b.abs() < 1e-15 && c.abs() < 1e-15 && (d - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_face_is_reported() {
        let m = PlanarMesh::from_xy(square());
        let collapsed = m.with_uv(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]).unwrap();
        let err = face_derivatives(&collapsed, &m.uv).unwrap_err();
        assert!(matches!(err, Error::DegenerateFace { face: 0, .. }), "{err}");
    }
}
