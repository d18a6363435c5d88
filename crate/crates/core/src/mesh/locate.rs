//! Point location in the uv image of a planar mesh.

use super::PlanarMesh;
use crate::geometry::{cross2, point_segment, sub2, Point2};

/// Tolerance on barycentric coordinates for containment tests.
const INSIDE_TOL: f64 = 1e-12;

/// Barycentric coordinates of `p` in the triangle `t`.
pub fn barycentric(p: Point2, t: &[Point2; 3]) -> [f64; 3] {
    let d = cross2(sub2(t[1], t[0]), sub2(t[2], t[0]));
    let l1 = cross2(sub2(p, t[0]), sub2(t[2], t[0])) / d;
    let l2 = cross2(sub2(t[1], t[0]), sub2(p, t[0])) / d;
    [1.0 - l1 - l2, l1, l2]
}

/// A face and the barycentric coordinates of a point with respect to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub face: usize,
    pub bary: [f64; 3],
    /// Distance from the query to the face; zero when the point is inside.
    pub distance: f64,
}

/// Uniform bucket grid over the uv bounding box.
#[derive(Clone, Debug)]
pub struct FaceLocator {
    triangles: Vec<[Point2; 3]>,
    lo: Point2,
    cell: Point2,
    nx: usize,
    ny: usize,
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl FaceLocator {
    pub fn new(mesh: &PlanarMesh) -> Self {
        let triangles: Vec<[Point2; 3]> = (0..mesh.face_count()).map(|f| mesh.face_uv(f)).collect();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &mesh.uv {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (side, side);
        let cell = [
            ((hi[0] - lo[0]) / nx as f64).max(1e-300),
            ((hi[1] - lo[1]) / ny as f64).max(1e-300),
        ];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
        let mut this = FaceLocator {
            triangles,
            lo,
            cell,
            nx,
            ny,
            offsets: Vec::new(),
            items: Vec::new(),
        };
        for (f, t) in this.triangles.iter().enumerate() {
            let mut tlo = [f64::INFINITY; 2];
            let mut thi = [f64::NEG_INFINITY; 2];
            for p in t {
                for k in 0..2 {
                    tlo[k] = tlo[k].min(p[k]);
                    thi[k] = thi[k].max(p[k]);
                }
            }
            let (i0, j0) = this.cell_of(tlo);
            let (i1, j1) = this.cell_of(thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(f);
                }
            }
        }
        this.offsets.push(0);
        for b in buckets {
            this.items.extend(b);
            this.offsets.push(this.items.len());
        }
        this
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        let fi = ((p[0] - self.lo[0]) / self.cell[0]).floor();
        let fj = ((p[1] - self.lo[1]) / self.cell[1]).floor();
        let i = if fi.is_nan() {
            0.0
        } else {
            fi.clamp(0.0, (self.nx - 1) as f64)
        };
        let j = if fj.is_nan() {
            0.0
        } else {
            fj.clamp(0.0, (self.ny - 1) as f64)
        };
        (i as usize, j as usize)
    }

    fn bucket(&self, i: usize, j: usize) -> &[usize] {
        let c = j * self.nx + i;
        &self.items[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn triangle(&self, f: usize) -> &[Point2; 3] {
        &self.triangles[f]
    }

    /// The lowest-indexed face containing `p`, if any.
    pub fn locate(&self, p: Point2) -> Option<Location> {
        let (i, j) = self.cell_of(p);
        let mut best: Option<Location> = None;
        for &f in self.bucket(i, j) {
            let b = barycentric(p, &self.triangles[f]);
            if b.iter().all(|&x| x >= -INSIDE_TOL) && best.map_or(true, |l| f < l.face) {
                best = Some(Location {
                    face: f,
                    bary: b,
                    distance: 0.0,
                });
            }
        }
        best
    }

    /// Closest point of face `f` to `p`, as a location.
    pub fn project(&self, f: usize, p: Point2) -> Location {
        let t = &self.triangles[f];
        let b = barycentric(p, t);
        if b.iter().all(|&x| x >= -INSIDE_TOL) {
            return Location {
                face: f,
                bary: b,
                distance: 0.0,
            };
        }
        let mut best = (f64::INFINITY, [0.0; 3]);
        for k in 0..3 {
            let (a, c) = ((k + 1) % 3, (k + 2) % 3);
            let (d, s) = point_segment(p, t[a], t[c]);
            if d < best.0 {
                let mut bary = [0.0; 3];
                bary[a] = 1.0 - s;
                bary[c] = s;
                best = (d, bary);
            }
        }
        Location {
            face: f,
            bary: best.1,
            distance: best.0,
        }
    }

    /// Containing face if there is one, else the nearest face (ties to the
    /// lower index) with the barycentrics of the closest point.
    pub fn nearest(&self, p: Point2) -> Location {
        if let Some(l) = self.locate(p) {
            return l;
        }
        let (ci, cj) = self.cell_of(p);
        let step = self.cell[0].min(self.cell[1]);
        let max_ring = self.nx.max(self.ny);
        let mut best: Option<Location> = None;
        for r in 0..=max_ring {
            let i0 = ci.saturating_sub(r);
            let j0 = cj.saturating_sub(r);
            let i1 = (ci + r).min(self.nx - 1);
            let j1 = (cj + r).min(self.ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let on_ring = i.abs_diff(ci) == r || j.abs_diff(cj) == r;
                    if !on_ring {
                        continue;
                    }
                    for &f in self.bucket(i, j) {
                        let l = self.project(f, p);
                        let better = match best {
                            None => true,
                            Some(b) => l.distance < b.distance || (l.distance == b.distance && f < b.face),
                        };
                        if better {
                            best = Some(l);
                        }
                    }
                }
            }
            if let Some(b) = best {
                if b.distance < r as f64 * step {
                    break;
                }
            }
        }
        best.expect("mesh has at least one face")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;

    fn grid(n: usize) -> PlanarMesh {
        let mut pts = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                pts.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut faces = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let a = j * (n + 1) + i;
                faces.push([a, a + 1, a + n + 2]);
                faces.push([a, a + n + 2, a + n + 1]);
            }
        }
        PlanarMesh::from_xy(TriMesh::from_planar(&pts, faces).unwrap())
    }

    fn scan(m: &PlanarMesh, p: Point2) -> Option<usize> {
        (0..m.face_count()).find(|&f| barycentric(p, &m.face_uv(f)).iter().all(|&x| x >= -INSIDE_TOL))
    }

    #[test]
    fn agrees_with_linear_scan() {
        let m = grid(7);
        let loc = FaceLocator::new(&m);
        for k in 0..500 {
            let p = [((k * 37) % 101) as f64 / 100.0, ((k * 61) % 97) as f64 / 96.0];
            assert_eq!(loc.locate(p).map(|l| l.face), scan(&m, p), "{p:?}");
        }
    }

    #[test]
    fn nearest_outside() {
        let m = grid(4);
        let loc = FaceLocator::new(&m);
        let l = loc.nearest([1.5, 0.5]);
        assert!((l.distance - 0.5).abs() < 1e-15);
        let brute = (0..m.face_count())
            .map(|f| loc.project(f, [1.5, 0.5]).distance)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(l.distance, brute);
        let q = [-3.0, 7.0];
        let brute = (0..m.face_count())
            .map(|f| loc.project(f, q).distance)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(loc.nearest(q).distance, brute);
    }
}
