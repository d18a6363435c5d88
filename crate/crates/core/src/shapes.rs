//! Deterministic test surfaces.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::geometry::{cross3, dot3, norm3, scale3, sub3, Point2, Point3};
use crate::mesh::TriMesh;

/// Index of vertex `j` (wrapped) on ring `k` of a hex disk.
pub fn hex_index(k: usize, j: usize) -> usize {
    if k == 0 {
        0
    } else {
        1 + 3 * k * (k - 1) + j % (6 * k)
    }
}

/// Vertex positions and faces of the hex disk with `rings` rings: ring `k`
/// has `6k` vertices at radius `k / rings`, evenly spaced from angle 0.
pub fn hex_disk_layout(rings: usize) -> (Vec<Point2>, Vec<[usize; 3]>) {
    assert!(rings >= 1, "hex disk needs at least one ring");
    let mut pts = vec![[0.0, 0.0]];
    for k in 1..=rings {
        let r = k as f64 / rings as f64;
        for j in 0..6 * k {
            let a = TAU * j as f64 / (6 * k) as f64;
            pts.push([r * a.cos(), r * a.sin()]);
        }
    }
    let mut faces = Vec::with_capacity(6 * rings * rings);
    for k in 1..=rings {
        for s in 0..6 {
            let o = |t: usize| hex_index(k, s * k + t);
            let i = |t: usize| hex_index(k - 1, s * (k - 1) + t);
            for t in 0..k {
                faces.push([o(t), o(t + 1), i(t)]);
            }
            for t in 0..k.saturating_sub(1) {
                faces.push([i(t), o(t + 1), i(t + 1)]);
            }
        }
    }
    (pts, faces)
}

/// Planar hex disk inscribed in the unit circle; `1 + 3 rings (rings + 1)`
/// vertices, all boundary vertices on the circle.
pub fn hex_disk(rings: usize) -> TriMesh {
    let (pts, faces) = hex_disk_layout(rings);
    TriMesh::from_planar(&pts, faces).expect("hex disk is a valid disk")
}

/// Hex disk whose interior vertices are moved by up to `amount` times the
/// ring spacing in a random direction.
pub fn jittered_hex_disk(rings: usize, amount: f64, seed: u64) -> TriMesh {
    let (mut pts, faces) = hex_disk_layout(rings);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let h = 1.0 / rings as f64;
    let interior = 1 + 3 * rings * (rings - 1);
    for p in pts.iter_mut().take(interior) {
        let a: f64 = rng.random::<f64>() * TAU;
        let r: f64 = rng.random::<f64>() * amount * h;
        p[0] += r * a.cos();
        p[1] += r * a.sin();
    }
    TriMesh::from_planar(&pts, faces).expect("jittered hex disk is a valid disk")
}

/// The unit square split along its diagonal: faces `(0,1,2)`, `(0,2,3)`.
pub fn two_triangle_square() -> TriMesh {
    TriMesh::from_planar(
        &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("square is a valid disk")
}

/// Regular `n x n` grid on `[0, 1]^2`, cells split along alternating
/// diagonals.
pub fn square_grid(n: usize) -> TriMesh {
    let (pts, faces) = grid_layout(n, n);
    TriMesh::from_planar(
        &pts.iter()
            .map(|p| [p[0] / n as f64, p[1] / n as f64])
            .collect::<Vec<_>>(),
        faces,
    )
    .expect("grid is a valid disk")
}

/// Integer grid points `(i, j)` and counterclockwise faces.
fn grid_layout(nx: usize, ny: usize) -> (Vec<Point2>, Vec<[usize; 3]>) {
    let mut pts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            pts.push([i as f64, j as f64]);
        }
    }
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let a = j * (nx + 1) + i;
            let (b, c, d) = (a + 1, a + nx + 2, a + nx + 1);
            if (i + j) % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, c, d]);
            }
        }
    }
    (pts, faces)
}

/// Open cylinder patch of radius `radius` over angles `[0, sweep]` and
/// heights `[0, height]`, with outward normals.
pub fn cylinder_patch(radius: f64, sweep: f64, height: f64, n_around: usize, n_along: usize) -> TriMesh {
    let (grid, faces) = grid_layout(n_around, n_along);
    let pts = grid
        .iter()
        .map(|p| {
            let a = sweep * p[0] / n_around as f64;
            [radius * a.cos(), radius * a.sin(), height * p[1] / n_along as f64]
        })
        .collect();
    TriMesh::new(pts, faces).expect("cylinder patch is a valid disk")
}

/// The default cylinder used for curvature checks: radius 2, three quarters
/// of a turn, about 11k vertices.
pub fn default_cylinder() -> TriMesh {
    cylinder_patch(2.0, 1.5 * PI, 6.0, 120, 90)
}

/// Subdivided icosahedron on the unit sphere with outward normals.
pub fn icosphere(level: usize) -> (Vec<Point3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pts: Vec<Point3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| scale3(*p, 1.0 / norm3(*p)))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, pts: &mut Vec<Point3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let p = [
                    0.5 * (pts[a][0] + pts[b][0]),
                    0.5 * (pts[a][1] + pts[b][1]),
                    0.5 * (pts[a][2] + pts[b][2]),
                ];
                pts.push(scale3(p, 1.0 / norm3(p)));
                pts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut pts);
            let bc = midpoint(b, c, &mut pts);
            let ca = midpoint(c, a, &mut pts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for f in &mut faces {
        let n = cross3(sub3(pts[f[1]], pts[f[0]]), sub3(pts[f[2]], pts[f[0]]));
        if dot3(n, pts[f[0]]) < 0.0 {
            f.swap(1, 2);
        }
    }
    (pts, faces)
}

/// Unit icosphere with its last face removed, which makes it a disk.
pub fn punctured_icosphere(level: usize) -> TriMesh {
    let (pts, mut faces) = icosphere(level);
    faces.pop();
    TriMesh::new(pts, faces).expect("punctured sphere is a valid disk")
}

/// Height angle of a hex-disk radius lifted onto the unit hemisphere.
#[inline]
pub fn hemisphere_polar(r: f64) -> f64 {
    r * FRAC_PI_2
}

/// Unit upper hemisphere: the hex disk lifted so that radius `r` becomes
/// polar angle `r pi / 2`. The boundary is the equator.
pub fn hemisphere(rings: usize) -> TriMesh {
    let (pts, faces) = hex_disk_layout(rings);
    let lifted = pts
        .iter()
        .map(|p| {
            let r = p[0].hypot(p[1]);
            let psi = hemisphere_polar(r);
            let a = p[1].atan2(p[0]);
            [psi.sin() * a.cos(), psi.sin() * a.sin(), psi.cos()]
        })
        .collect();
    TriMesh::new(lifted, faces).expect("hemisphere is a valid disk")
}

/// Random rigid motion applied to every vertex.
pub fn random_rigid_motion(mesh: &TriMesh, seed: u64) -> TriMesh {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Random unit quaternion.
    let mut q = [0.0f64; 4];
    loop {
        for c in &mut q {
            *c = rng.random::<f64>() * 2.0 - 1.0;
        }
        let n = q.iter().map(|c| c * c).sum::<f64>();
        if n > 1e-3 && n <= 1.0 {
            q.iter_mut().for_each(|c| *c /= n.sqrt());
            break;
        }
    }
    let [w, x, y, z] = q;
    let r = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    let shift: Point3 = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let pts = mesh
        .vertices()
        .iter()
        .map(|p| {
            let mut out = shift;
            for (i, row) in r.iter().enumerate() {
                out[i] += dot3(*row, *p);
            }
            out
        })
        .collect();
    mesh.with_vertices(pts).expect("same vertex count")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_disk_counts() {
        for k in [1, 2, 5, 25] {
            let m = hex_disk(k);
            assert_eq!(m.vertex_count(), 1 + 3 * k * (k + 1));
            assert_eq!(m.face_count(), 6 * k * k);
            assert_eq!(m.boundary().len(), 6 * k);
            assert_eq!(m.euler_characteristic(), 1);
        }
        assert_eq!(hex_disk(57).vertex_count(), 9919);
    }

    #[test]
    fn other_shapes_are_disks() {
        assert_eq!(square_grid(4).vertex_count(), 25);
        let c = default_cylinder();
        assert!(c.vertex_count() >= 10_000);
        let s = punctured_icosphere(5);
        assert_eq!(s.vertex_count(), 10242);
        assert_eq!(s.boundary().len(), 3);
        assert_eq!(hemisphere(8).boundary().len(), 48);
        assert_eq!(jittered_hex_disk(5, 0.3, 1).vertex_count(), 91);
    }
}
