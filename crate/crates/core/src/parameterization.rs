//! Conformal maps of disk-type surfaces onto the unit disk, and the inverse
//! map from disk points back to the surface.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::beltrami::{mu_from_derivatives, BeltramiField, BoundaryCondition, LbsSolver};
use crate::error::{Error, Result};
use crate::geometry::{norm3, sub3, Point2, Point3};
use crate::mesh::{flipped_faces, FaceCharts, FaceLocator, PlanarMesh, TriMesh};
use crate::sparse::{Factorization, SolverOptions, SymMatrix, SymbolicCache};

pub const DEFAULT_MAX_ITER: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-4;
const MAX_HALVINGS: usize = 5;

/// Distortion of one accepted iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub mean_mu: f64,
    pub max_mu: f64,
}

/// A fold-free map of a surface onto the unit disk.
#[derive(Clone, Debug)]
pub struct DiskParam {
    /// The surface with its disk coordinates as uv.
    pub planar: PlanarMesh,
    /// Beltrami coefficient of the surface-to-disk map per face.
    pub mu: BeltramiField,
    /// Initial map first, then every accepted refinement.
    pub history: Vec<IterationRecord>,
    /// False when `max_iter` ran out before the improvement fell below
    /// `tol`.
    pub converged: bool,
}

impl DiskParam {
    pub fn mean_mu(&self) -> f64 {
        self.mu.mean_modulus()
    }

    pub fn max_mu(&self) -> f64 {
        self.mu.max_modulus()
    }

    pub fn surface(&self) -> &TriMesh {
        &self.planar.base
    }
}

/// Beltrami coefficient of the map from a surface to planar coordinates
/// `uv`, measured in a rigid planar layout of every triangle.
pub fn surface_mu(mesh: &TriMesh, uv: &[Point2]) -> Result<BeltramiField> {
    if uv.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "uv and vertices",
            left: uv.len(),
            right: mesh.vertex_count(),
        });
    }
    mu_from_derivatives(&FaceCharts::isometric(mesh).derivatives(mesh.faces(), uv))
}

fn record(mu: &BeltramiField) -> IterationRecord {
    IterationRecord {
        mean_mu: mu.mean_modulus(),
        max_mu: mu.max_modulus(),
    }
}

/// Boundary on the circle by arc length, interior harmonic.
fn initial_map(mesh: &TriMesh, solver: &mut LbsSolver) -> Result<Vec<Point2>> {
    let boundary = mesh.boundary();
    let pinned: Vec<(usize, Point2)> = boundary
        .iter()
        .zip(solver.default_angles())
        .map(|(&v, &a)| (v, [a.cos(), a.sin()]))
        .collect();
    let bc = BoundaryCondition::fixed(pinned.clone());
    let sol = solver.solve(&BeltramiField::zeros(mesh.face_count()), &bc, None)?;
    if sol.flipped.is_empty() {
        return Ok(sol.uv);
    }
    // Obtuse triangles can give negative cotangent weights; uniform weights
    // are always fold-free on a convex boundary.
    let uv = tutte(mesh, &pinned)?;
    let flipped = flipped_faces(mesh.faces(), &uv);
    if flipped.is_empty() {
        Ok(uv)
    } else {
        Err(Error::Folded { faces: flipped })
    }
}

/// Uniform-weight (Tutte) embedding with the given boundary positions.
pub fn tutte(mesh: &TriMesh, pinned: &[(usize, Point2)]) -> Result<Vec<Point2>> {
    let n = mesh.vertex_count();
    let mut fixed: Vec<Option<Point2>> = vec![None; n];
    for &(v, p) in pinned {
        fixed[v] = Some(p);
    }
    let mut index = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if fixed[v].is_none() {
            index[v] = free.len();
            free.push(v);
        }
    }
    let mut uv: Vec<Point2> = fixed.iter().map(|p| p.unwrap_or([0.0, 0.0])).collect();
    if free.is_empty() {
        return Ok(uv);
    }
    let topo = mesh.topology();
    let mut pairs = Vec::new();
    for &v in &free {
        for &u in topo.neighbors(v) {
            if index[u] != usize::MAX {
                pairs.push((index[v], index[u]));
            }
        }
    }
    let mut a = SymMatrix::with_pattern(free.len(), pairs);
    let mut rhs = vec![vec![0.0; free.len()], vec![0.0; free.len()]];
    for (i, &v) in free.iter().enumerate() {
        for &u in topo.neighbors(v) {
            a.add(i, i, 1.0);
            match fixed[u] {
                Some(p) => {
                    rhs[0][i] += p[0];
                    rhs[1][i] += p[1];
                }
                None if index[u] < i => a.add(i, index[u], -1.0),
                None => {}
            }
        }
    }
    Factorization::new(&a, &mut SymbolicCache::default(), SolverOptions::default())?.solve_many(&mut rhs)?;
    for (i, &v) in free.iter().enumerate() {
        uv[v] = [rhs[0][i], rhs[1][i]];
    }
    Ok(uv)
}

/// Maps a disk-type surface onto the unit disk with small conformal
/// distortion. Starts from the harmonic map with arc-length boundary, then
/// repeatedly reconstructs the map from a shrunken Beltrami coefficient with
/// the boundary sliding on the circle, keeping a step only when it lowers
/// the mean `|mu|` without folding.
pub fn disk_conformal_parameterize(mesh: &TriMesh, max_iter: usize, tol: f64) -> Result<DiskParam> {
    if !(tol >= 0.0) {
        return Err(Error::invalid("tolerance must be nonnegative"));
    }
    let mut solver = LbsSolver::for_surface(mesh)?;
    let mut uv = initial_map(mesh, &mut solver)?;
    let mut mu = surface_mu(mesh, &uv)?;
    let mut history = vec![record(&mu)];
    let boundary = mesh.boundary();
    let pin = boundary[0];
    let mut converged = false;
    for _ in 0..max_iter {
        let current = mu.mean_modulus();
        let mut angles: Vec<f64> = boundary.iter().map(|&v| uv[v][1].atan2(uv[v][0])).collect();
        unwrap_increasing(&mut angles);
        let bc = BoundaryCondition::circle(pin, uv[pin]).with_angles(angles);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let target = BeltramiField::new(mu.values.iter().map(|m| m * (1.0 - lambda)).collect());
            let sol = solver.solve(&target, &bc, None)?;
            if sol.flipped.is_empty() {
                let next = surface_mu(mesh, &sol.uv)?;
                if next.mean_modulus() < current {
                    accepted = Some((sol.uv, next));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((next_uv, next_mu)) = accepted else {
            converged = true;
            break;
        };
        let gain = current - next_mu.mean_modulus();
        uv = next_uv;
        mu = next_mu;
        history.push(record(&mu));
        if gain < tol {
            converged = true;
            break;
        }
    }
    Ok(DiskParam {
        planar: PlanarMesh::new(mesh.clone(), uv)?,
        mu,
        history,
        converged,
    })
}

/// Makes consecutive angles strictly increasing by adding turns.
pub(crate) fn unwrap_increasing(angles: &mut [f64]) {
    for k in 1..angles.len() {
        while angles[k] <= angles[k - 1] {
            angles[k] += TAU;
        }
    }
}

/// Surface points of disk points, by barycentric interpolation in the
/// containing uv triangle.
pub fn pull_back_to_surface(param: &DiskParam, points: &[Point2]) -> Result<Vec<Point3>> {
    pull_back(&param.planar, &FaceLocator::new(&param.planar), points)
}

pub(crate) fn pull_back(planar: &PlanarMesh, locator: &FaceLocator, points: &[Point2]) -> Result<Vec<Point3>> {
    let xyz = planar.base.vertices();
    points
        .iter()
        .map(|&p| {
            let Some(l) = locator.locate(p) else {
                let near = locator.nearest(p);
                return Err(Error::OutsideMesh {
                    x: p[0],
                    y: p[1],
                    distance: near.distance,
                });
            };
            let f = planar.faces()[l.face];
            if let Some(&v) = f.iter().find(|&&v| planar.uv[v] == p) {
                return Ok(xyz[v]);
            }
            let mut out = [0.0; 3];
            for k in 0..3 {
                for (o, x) in out.iter_mut().zip(xyz[f[k]]) {
                    *o += l.bary[k] * x;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Largest distance of a boundary uv from the unit circle.
pub fn boundary_circle_error(planar: &PlanarMesh) -> f64 {
    planar
        .base
        .boundary()
        .iter()
        .map(|&v| (planar.uv[v][0].hypot(planar.uv[v][1]) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Ratio of the longest to the shortest 3D edge; diagnostics only.
pub fn edge_length_ratio(mesh: &TriMesh) -> f64 {
    let p = mesh.vertices();
    let (lo, hi) = mesh
        .topology()
        .edges()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
            let l = norm3(sub3(p[e.vertices[1]], p[e.vertices[0]]));
            (lo.min(l), hi.max(l))
        });
    hi / lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::barycentric;
    use crate::shapes;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn planar_disk_is_kept() {
        let m = shapes::hex_disk(8);
        let p = disk_conformal_parameterize(&m, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(p.mean_mu() < 1e-6);
        for (a, b) in p.planar.uv.iter().zip(m.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn hemisphere_is_nearly_conformal() {
        let m = shapes::hemisphere(16);
        let p = disk_conformal_parameterize(&m, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(p.planar.is_fold_free());
        assert!(p.mean_mu() < 0.05, "mean |mu| {}", p.mean_mu());
        assert!(boundary_circle_error(&p.planar) < 1e-9);
        for w in p.history.windows(2) {
            assert!(w[1].mean_mu <= w[0].mean_mu + 1e-12);
        }
        let angles: Vec<f64> = m
            .boundary()
            .iter()
            .map(|&v| p.planar.uv[v][1].atan2(p.planar.uv[v][0]))
            .collect();
        let mut unwrapped = angles.clone();
        unwrap_increasing(&mut unwrapped);
        assert!(unwrapped.last().unwrap() - unwrapped[0] < TAU);
    }

    #[test]
    fn tutte_on_square_grid() {
        let m = shapes::square_grid(4);
        let pinned: Vec<_> = m
            .boundary()
            .iter()
            .map(|&v| (v, [m.vertices()[v][0], m.vertices()[v][1]]))
            .collect();
        let uv = tutte(&m, &pinned).unwrap();
        for (a, b) in uv.iter().zip(m.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pull_back_examples() {
        let m = shapes::hemisphere(10);
        let p = disk_conformal_parameterize(&m, 3, DEFAULT_TOL).unwrap();
        let verts: Vec<Point2> = (0..m.vertex_count()).map(|v| p.planar.uv[v]).collect();
        let back = pull_back_to_surface(&p, &verts).unwrap();
        assert_eq!(back, m.vertices());
        let f = 17;
        let c = pull_back_to_surface(&p, &[p.planar.centroid(f)]).unwrap()[0];
        let [a, b, d] = m.face_points(f);
        for k in 0..3 {
            assert!((c[k] - (a[k] + b[k] + d[k]) / 3.0).abs() < 1e-12);
        }
        assert!(matches!(
            pull_back_to_surface(&p, &[[1.5, 0.0]]),
            Err(Error::OutsideMesh { distance, .. }) if distance > 0.4
        ));
    }

    #[test]
    fn pull_back_matches_scan() {
        let m = shapes::hemisphere(10);
        let p = disk_conformal_parameterize(&m, 3, DEFAULT_TOL).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let pts: Vec<Point2> = (0..100)
            .map(|_| {
                let r = 0.95 * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * TAU;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let got = pull_back_to_surface(&p, &pts).unwrap();
        for (q, g) in pts.iter().zip(got) {
            let (f, b) = (0..m.face_count())
                .find_map(|f| {
                    let b = barycentric(*q, &p.planar.face_uv(f));
                    b.iter().all(|x| *x >= -1e-12).then_some((f, b))
                })
                .unwrap();
            let t = m.faces()[f];
            for k in 0..3 {
                let e = b[0] * m.vertices()[t[0]][k] + b[1] * m.vertices()[t[1]][k] + b[2] * m.vertices()[t[2]][k];
                assert!((g[k] - e).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn jittered_disks_stay_fold_free(seed in 0u64..10_000) {
            let m = shapes::jittered_hex_disk(6, 0.35, seed);
            let p = disk_conformal_parameterize(&m, 5, DEFAULT_TOL).unwrap();
            prop_assert!(p.planar.is_fold_free());
            prop_assert!(boundary_circle_error(&p.planar) < 1e-9);
            for w in p.history.windows(2) {
                prop_assert!(w[1].mean_mu <= w[0].mean_mu + 1e-12);
            }
        }
    }
}
