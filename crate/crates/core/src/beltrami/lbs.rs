//! Linear Beltrami solver.
//!
//! Given `mu` on the faces of a source triangulation, the map with that
//! Beltrami coefficient solves `div(A grad s) = div(A grad t) = 0` with
//! `A = [[a1, a2], [a2, a3]]` from [`alpha_coefficients`]. The discrete
//! system is the stiffness matrix of the hat functions weighted by `A`.
//!
//! Free boundary vertices are handled by minimizing the quasi-conformal
//! energy `1/2 (s'Ks + t'Kt) - area(f)`. It is nonnegative because
//! `det A = 1`, vanishes exactly on maps with coefficient `mu`, and its
//! stationarity conditions at interior vertices are the usual linear
//! Beltrami equations. On the circle each free boundary vertex keeps one
//! tangential degree of freedom, linearized around the current angles.

use std::f64::consts::TAU;

use super::{alpha_coefficients, AlphaCoefficients, BeltramiField};
use crate::error::{Error, Result};
use crate::geometry::{dist2, norm3, sub3, Point2};
use crate::mesh::{flipped_faces, hat_gradients, FaceCharts, FaceLocator, PlanarMesh, TriMesh, DEGENERATE_AREA_RATIO};
use crate::sparse::{Factorization, SolverOptions, SymMatrix, SymbolicCache};

/// Default weight of the boundary spacing energy in sliding mode.
pub const DEFAULT_RHO_BOUNDARY: f64 = 1e-8;

/// Cap on outer angle updates in sliding mode.
pub const MAX_SLIDING_ITERATIONS: usize = 10;

const SLIDING_TOL: f64 = 1e-10;
const MAX_ANGLE_STEP: f64 = 0.25;
/// A step may shrink any boundary gap to at most this fraction of its length.
const MIN_GAP_FRACTION: f64 = 0.25;
/// Landmark sources farther than this from the mesh image are rejected.
const LANDMARK_OUTSIDE_TOL: f64 = 1e-9;

/// How boundary vertices are constrained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Pinned vertices are held; all others are free.
    Fixed,
    /// Boundary vertices slide along the unit circle; one is pinned.
    CircleSliding,
}

/// Boundary constraints of a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub mode: BoundaryMode,
    pub pinned: Vec<(usize, Point2)>,
    /// Starting angle per boundary-loop vertex in sliding mode.
    pub angles: Option<Vec<f64>>,
    /// Weight of the boundary spacing energy in sliding mode.
    pub rho_boundary: f64,
}

impl BoundaryCondition {
    pub fn fixed(pinned: Vec<(usize, Point2)>) -> Self {
        BoundaryCondition {
            mode: BoundaryMode::Fixed,
            pinned,
            angles: None,
            rho_boundary: DEFAULT_RHO_BOUNDARY,
        }
    }

    /// Every boundary vertex held at its current uv.
    pub fn identity(mesh: &PlanarMesh) -> Self {
        Self::fixed(mesh.base.boundary().iter().map(|&v| (v, mesh.uv[v])).collect())
    }

    /// Sliding on the unit circle with `vertex` pinned at the angle of
    /// `position`.
    pub fn circle(vertex: usize, position: Point2) -> Self {
        BoundaryCondition {
            mode: BoundaryMode::CircleSliding,
            pinned: vec![(vertex, position)],
            angles: None,
            rho_boundary: DEFAULT_RHO_BOUNDARY,
        }
    }

    /// Sliding on the unit circle with the first boundary vertex at `(1, 0)`.
    pub fn circle_default(mesh: &TriMesh) -> Self {
        Self::circle(mesh.boundary()[0], [1.0, 0.0])
    }

    pub fn with_angles(mut self, angles: Vec<f64>) -> Self {
        self.angles = Some(angles);
        self
    }

    pub fn with_rho_boundary(mut self, rho: f64) -> Self {
        self.rho_boundary = rho;
        self
    }
}

/// A landmark tied to the source triangulation by barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub vertices: [usize; 3],
    pub weights: [f64; 3],
    pub target: Point2,
}

/// Soft landmark penalties `weight / 2 * sum |f(source) - target|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkConstraints {
    pub anchors: Vec<Anchor>,
    pub weight: f64,
}

impl LandmarkConstraints {
    /// Anchors `sources` (points in the uv image of `mesh`) to `targets`.
    pub fn new(mesh: &PlanarMesh, sources: &[Point2], targets: &[Point2], weight: f64) -> Result<Self> {
        Self::with_locator(mesh, &FaceLocator::new(mesh), sources, targets, weight)
    }

    pub fn with_locator(
        mesh: &PlanarMesh,
        locator: &FaceLocator,
        sources: &[Point2],
        targets: &[Point2],
        weight: f64,
    ) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "landmark sources and targets",
                left: sources.len(),
                right: targets.len(),
            });
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::invalid(format!(
                "landmark weight must be finite and nonnegative, got {weight}"
            )));
        }
        let mut anchors = Vec::with_capacity(sources.len());
        for (&p, &q) in sources.iter().zip(targets) {
            let loc = locator.nearest(p);
            if loc.distance > LANDMARK_OUTSIDE_TOL {
                return Err(Error::OutsideMesh {
                    x: p[0],
                    y: p[1],
                    distance: loc.distance,
                });
            }
            anchors.push(Anchor {
                vertices: mesh.faces()[loc.face],
                weights: loc.bary,
                target: q,
            });
        }
        Ok(LandmarkConstraints { anchors, weight })
    }

    /// Images of the landmark sources under the vertex positions `uv`.
    pub fn evaluate(&self, uv: &[Point2]) -> Vec<Point2> {
        self.anchors
            .iter()
            .map(|a| {
                let mut p = [0.0; 2];
                for k in 0..3 {
                    p[0] += a.weights[k] * uv[a.vertices[k]][0];
                    p[1] += a.weights[k] * uv[a.vertices[k]][1];
                }
                p
            })
            .collect()
    }

    pub fn targets(&self) -> Vec<Point2> {
        self.anchors.iter().map(|a| a.target).collect()
    }
}

/// Per-corner hat gradients, per-face coefficients and the assembled
/// vertex stiffness matrix of the linear Beltrami system.
#[derive(Clone, Debug)]
pub struct StiffnessData {
    /// `(A_i, B_i)` for the three corners of every face.
    pub gradients: Vec<[[f64; 2]; 3]>,
    /// Source face areas.
    pub areas: Vec<f64>,
    pub alpha: AlphaCoefficients,
    /// Symmetric vertex matrix; row `i` holds `c_i` on the diagonal and
    /// the `c_l` of its neighbours.
    pub matrix: SymMatrix,
    is_boundary: Vec<bool>,
}

impl StiffnessData {
    pub fn vertex_count(&self) -> usize {
        self.matrix.dim()
    }

    /// Diagonal coefficient `c_i`.
    pub fn c_diagonal(&self, i: usize) -> f64 {
        self.matrix.get(i, i)
    }

    /// Off-diagonal coefficient `c_l` coupling `i` and `l`.
    pub fn c_offdiagonal(&self, i: usize, l: usize) -> f64 {
        self.matrix.get(i, l)
    }

    pub fn is_interior(&self, i: usize) -> bool {
        !self.is_boundary[i]
    }

    /// Row sums of the interior rows.
    pub fn interior_row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.vertex_count()];
        let r = self.matrix.mul_vec(&ones);
        (0..r.len()).filter(|&i| !self.is_boundary[i]).map(|i| r[i]).collect()
    }

    /// Mean of `|c_i|` over interior vertices.
    pub fn mean_abs_diagonal(&self) -> f64 {
        let d = self.matrix.diagonal();
        let interior: Vec<f64> = (0..d.len())
            .filter(|&i| !self.is_boundary[i])
            .map(|i| d[i].abs())
            .collect();
        interior.iter().sum::<f64>() / interior.len().max(1) as f64
    }

    /// `(1 / 2N^2) * sum_i (|(Ks)_i| + |(Kt)_i|)` over interior vertices.
    pub fn residual(&self, uv: &[Point2]) -> f64 {
        let n = self.vertex_count();
        let s: Vec<f64> = uv.iter().map(|p| p[0]).collect();
        let t: Vec<f64> = uv.iter().map(|p| p[1]).collect();
        let ks = self.matrix.mul_vec(&s);
        let kt = self.matrix.mul_vec(&t);
        let sum: f64 = (0..n)
            .filter(|&i| !self.is_boundary[i])
            .map(|i| ks[i].abs() + kt[i].abs())
            .sum();
        sum / (2.0 * (n * n) as f64)
    }
}

/// Assembles `K` from per-face coefficients with a fixed pattern.
#[derive(Clone, Debug)]
struct Assembler {
    gradients: Vec<[[f64; 2]; 3]>,
    areas: Vec<f64>,
    slots: Vec<[usize; 6]>,
    pattern: SymMatrix,
}

const CORNER_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 0), (2, 0), (2, 1)];

impl Assembler {
    fn new(faces: &[[usize; 3]], charts: &FaceCharts, n: usize) -> Self {
        let gradients: Vec<[[f64; 2]; 3]> = charts
            .corners
            .iter()
            .zip(&charts.areas)
            .map(|(c, &a)| hat_gradients(c, a))
            .collect();
        let pattern = SymMatrix::with_pattern(n, faces.iter().flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]));
        let slots = faces
            .iter()
            .map(|f| CORNER_PAIRS.map(|(i, j)| pattern.slot(f[i], f[j]).unwrap()))
            .collect();
        Assembler {
            gradients,
            areas: charts.areas.clone(),
            slots,
            pattern,
        }
    }

    fn assemble(&self, alpha: &AlphaCoefficients) -> SymMatrix {
        let mut k = self.pattern.clone();
        let vals = k.values_mut();
        for (f, g) in self.gradients.iter().enumerate() {
            let [a1, a2, a3] = alpha.face(f);
            let area = self.areas[f];
            for (s, &(i, j)) in CORNER_PAIRS.iter().enumerate() {
                let (ai, bi) = (g[i][0], g[i][1]);
                let (aj, bj) = (g[j][0], g[j][1]);
                let v = area * (ai * (a1 * aj + a2 * bj) + bi * (a2 * aj + a3 * bj));
                vals[self.slots[f][s]] += v;
            }
        }
        k
    }
}

/// Assembles the stiffness data of `mu` on the uv triangulation of `mesh`.
pub fn assemble_lbs(mesh: &PlanarMesh, mu: &BeltramiField) -> Result<StiffnessData> {
    check_len(mu, mesh.face_count())?;
    let charts = FaceCharts::from_planar(mesh);
    charts.check_nondegenerate(DEGENERATE_AREA_RATIO)?;
    let alpha = alpha_coefficients(mu)?;
    let asm = Assembler::new(mesh.faces(), &charts, mesh.vertex_count());
    let matrix = asm.assemble(&alpha);
    let is_boundary = (0..mesh.vertex_count()).map(|v| mesh.base.is_boundary(v)).collect();
    Ok(StiffnessData {
        gradients: asm.gradients,
        areas: asm.areas,
        alpha,
        matrix,
        is_boundary,
    })
}

/// The normalized interior residual of `candidate_uv` in the linear
/// Beltrami system of `mu`.
pub fn lbs_residual(mesh: &PlanarMesh, mu: &BeltramiField, candidate_uv: &[Point2]) -> Result<f64> {
    if candidate_uv.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "candidate uv",
            left: candidate_uv.len(),
            right: mesh.vertex_count(),
        });
    }
    Ok(assemble_lbs(mesh, mu)?.residual(candidate_uv))
}

/// Gaps between consecutive angles, wrapped into `(0, 2pi)`. They must sum
/// to one full turn.
pub(crate) fn angle_gaps(angles: &[f64]) -> Result<Vec<f64>> {
    let n = angles.len();
    if n < 2 {
        return Err(Error::NonMonotoneAngles);
    }
    let mut gaps = Vec::with_capacity(n);
    for b in 0..n {
        let g = (angles[(b + 1) % n] - angles[b]).rem_euclid(TAU);
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::NonMonotoneAngles);
        }
        gaps.push(g);
    }
    let total: f64 = gaps.iter().sum();
    if (total - TAU).abs() > 1e-9 {
        return Err(Error::NonMonotoneAngles);
    }
    Ok(gaps)
}

/// Boundary spacing energy `sum 1 / theta_i` over the gaps between
/// consecutive boundary angles.
pub fn boundary_energy(angles: &[f64]) -> Result<f64> {
    Ok(angle_gaps(angles)?.iter().map(|g| 1.0 / g).sum())
}

fn check_len(mu: &BeltramiField, faces: usize) -> Result<()> {
    if mu.len() != faces {
        return Err(Error::LengthMismatch {
            what: "Beltrami field and faces",
            left: mu.len(),
            right: faces,
        });
    }
    if !mu.is_finite() {
        return Err(Error::invalid("Beltrami field has non-finite values"));
    }
    Ok(())
}

const NO_DOF: usize = usize::MAX;

/// A vertex coordinate as an affine function of at most one unknown.
#[derive(Clone, Copy, Debug)]
struct Coord {
    c0: f64,
    dof: usize,
    coef: f64,
}

impl Coord {
    fn constant(c0: f64) -> Self {
        Coord {
            c0,
            dof: NO_DOF,
            coef: 0.0,
        }
    }

    fn free(dof: usize) -> Self {
        Coord {
            c0: 0.0,
            dof,
            coef: 1.0,
        }
    }

    fn eval(&self, d: &[f64]) -> f64 {
        if self.dof == NO_DOF {
            self.c0
        } else {
            self.c0 + self.coef * d[self.dof]
        }
    }
}

struct Layout {
    x: Vec<Coord>,
    y: Vec<Coord>,
    ndof: usize,
}

/// Receives the terms of the quadratic energy.
trait Sink {
    /// `lambda * X * Y`
    fn bilinear(&mut self, lambda: f64, x: Coord, y: Coord);
    /// `lambda * X`
    fn linear(&mut self, lambda: f64, x: Coord);
    /// Hessian entry `H_ij` (and `H_ji`) of the `1/2 d'Hd` form.
    fn hessian(&mut self, i: usize, j: usize, v: f64);
    fn gradient(&mut self, i: usize, v: f64);
}

struct PatternSink(Vec<(usize, usize)>);

impl Sink for PatternSink {
    fn bilinear(&mut self, _: f64, x: Coord, y: Coord) {
        if x.dof != NO_DOF && y.dof != NO_DOF {
            self.0.push((x.dof, y.dof));
        }
    }
    fn linear(&mut self, _: f64, _: Coord) {}
    fn hessian(&mut self, i: usize, j: usize, _: f64) {
        self.0.push((i, j));
    }
    fn gradient(&mut self, _: usize, _: f64) {}
}

struct ValueSink {
    h: SymMatrix,
    g: Vec<f64>,
}

impl Sink for ValueSink {
    fn bilinear(&mut self, lambda: f64, x: Coord, y: Coord) {
        if x.dof != NO_DOF && y.dof != NO_DOF {
            let q = lambda * x.coef * y.coef;
            let v = if x.dof == y.dof { 2.0 * q } else { q };
            self.h.add(x.dof, y.dof, v);
        }
        if x.dof != NO_DOF {
            self.g[x.dof] += lambda * x.coef * y.c0;
        }
        if y.dof != NO_DOF {
            self.g[y.dof] += lambda * x.c0 * y.coef;
        }
    }
    fn linear(&mut self, lambda: f64, x: Coord) {
        if x.dof != NO_DOF {
            self.g[x.dof] += lambda * x.coef;
        }
    }
    fn hessian(&mut self, i: usize, j: usize, v: f64) {
        self.h.add(i, j, v);
    }
    fn gradient(&mut self, i: usize, v: f64) {
        self.g[i] += v;
    }
}

/// Spacing energy data: boundary-vertex unknowns and current gaps.
struct Spacing<'a> {
    dofs: &'a [usize],
    gaps: &'a [f64],
    rho: f64,
}

struct Energy<'a> {
    k: &'a SymMatrix,
    layout: &'a Layout,
    boundary: &'a [usize],
    landmarks: Option<&'a LandmarkConstraints>,
    spacing: Option<Spacing<'a>>,
}

impl Energy<'_> {
    fn terms(&self, sink: &mut impl Sink) {
        let (lx, ly) = (&self.layout.x, &self.layout.y);
        self.k.for_each(|r, c, v| {
            let lambda = if r == c { 0.5 * v } else { v };
            sink.bilinear(lambda, lx[r], lx[c]);
            sink.bilinear(lambda, ly[r], ly[c]);
        });
        let nb = self.boundary.len();
        for b in 0..nb {
            let (i, j) = (self.boundary[b], self.boundary[(b + 1) % nb]);
            sink.bilinear(-0.5, lx[i], ly[j]);
            sink.bilinear(0.5, ly[i], lx[j]);
        }
        if let Some(lm) = self.landmarks {
            let w = lm.weight;
            for a in &lm.anchors {
                for k in 0..3 {
                    let vk = a.vertices[k];
                    for l in 0..3 {
                        let vl = a.vertices[l];
                        let lambda = 0.5 * w * a.weights[k] * a.weights[l];
                        sink.bilinear(lambda, lx[vk], lx[vl]);
                        sink.bilinear(lambda, ly[vk], ly[vl]);
                    }
                    sink.linear(-w * a.target[0] * a.weights[k], lx[vk]);
                    sink.linear(-w * a.target[1] * a.weights[k], ly[vk]);
                }
            }
        }
        if let Some(sp) = &self.spacing {
            let nb = sp.dofs.len();
            for b in 0..nb {
                let (d0, d1) = (sp.dofs[b], sp.dofs[(b + 1) % nb]);
                let g = sp.gaps[b];
                let h = 2.0 * sp.rho / (g * g * g);
                let grad = sp.rho / (g * g);
                if d0 != NO_DOF {
                    sink.gradient(d0, grad);
                    sink.hessian(d0, d0, h);
                }
                if d1 != NO_DOF {
                    sink.gradient(d1, -grad);
                    sink.hessian(d1, d1, h);
                }
                if d0 != NO_DOF && d1 != NO_DOF {
                    sink.hessian(d1, d0, -h);
                }
            }
        }
    }

    /// Minimizes the quadratic model; returns the unknowns.
    fn minimize(&self, cache: &mut SymbolicCache, options: SolverOptions) -> Result<Vec<f64>> {
        let n = self.layout.ndof;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut pattern = PatternSink(Vec::new());
        self.terms(&mut pattern);
        let mut sink = ValueSink {
            h: SymMatrix::with_pattern(n, pattern.0),
            g: vec![0.0; n],
        };
        self.terms(&mut sink);
        let fact = Factorization::new(&sink.h, cache, options)?;
        let mut d: Vec<f64> = sink.g.iter().map(|v| -v).collect();
        fact.solve(&mut d)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("solution is not finite".into()));
        }
        Ok(d)
    }
}

/// Result of [`LbsSolver::solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct LbsSolution {
    pub uv: Vec<Point2>,
    /// Final boundary angles (sliding mode), in boundary-loop order.
    pub angles: Option<Vec<f64>>,
    pub sliding_iterations: usize,
    /// Largest angle change of the last sliding update.
    pub last_angle_step: f64,
    /// Faces with non-positive signed area in the output.
    pub flipped: Vec<usize>,
}

/// Reusable solver on one source triangulation. Keeps the assembly pattern
/// and symbolic factorizations between solves.
#[derive(Clone, Debug)]
pub struct LbsSolver {
    faces: Vec<[usize; 3]>,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
    assembler: Assembler,
    default_angles: Vec<f64>,
    main_cache: SymbolicCache,
    final_cache: SymbolicCache,
    pub options: SolverOptions,
}

impl LbsSolver {
    /// Solver whose source domain is the uv triangulation of `mesh`.
    pub fn new(mesh: &PlanarMesh) -> Result<Self> {
        let charts = FaceCharts::from_planar(mesh);
        charts.check_nondegenerate(DEGENERATE_AREA_RATIO)?;
        let boundary = mesh.base.boundary();
        let on_circle = boundary
            .iter()
            .all(|&v| ((mesh.uv[v][0]).hypot(mesh.uv[v][1]) - 1.0).abs() < 1e-6);
        let default_angles = if on_circle {
            boundary.iter().map(|&v| mesh.uv[v][1].atan2(mesh.uv[v][0])).collect()
        } else {
            let lengths: Vec<f64> = (0..boundary.len())
                .map(|b| dist2(mesh.uv[boundary[b]], mesh.uv[boundary[(b + 1) % boundary.len()]]))
                .collect();
            arc_length_angles(&lengths)
        };
        Ok(Self::build(&mesh.base, &charts, default_angles))
    }

    /// Solver whose source domain is the surface itself, through a rigid
    /// planar layout of each triangle.
    pub fn for_surface(mesh: &TriMesh) -> Result<Self> {
        let charts = FaceCharts::isometric(mesh);
        charts.check_nondegenerate(DEGENERATE_AREA_RATIO)?;
        let boundary = mesh.boundary();
        let p = mesh.vertices();
        let lengths: Vec<f64> = (0..boundary.len())
            .map(|b| norm3(sub3(p[boundary[(b + 1) % boundary.len()]], p[boundary[b]])))
            .collect();
        Ok(Self::build(mesh, &charts, arc_length_angles(&lengths)))
    }

    fn build(mesh: &TriMesh, charts: &FaceCharts, default_angles: Vec<f64>) -> Self {
        let n = mesh.vertex_count();
        LbsSolver {
            faces: mesh.faces().to_vec(),
            boundary: mesh.boundary().to_vec(),
            is_boundary: (0..n).map(|v| mesh.is_boundary(v)).collect(),
            assembler: Assembler::new(mesh.faces(), charts, n),
            default_angles,
            main_cache: SymbolicCache::default(),
            final_cache: SymbolicCache::default(),
            options: SolverOptions::default(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.is_boundary.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Boundary angles used when a sliding solve gives none.
    pub fn default_angles(&self) -> &[f64] {
        &self.default_angles
    }

    /// Vertex stiffness matrix for `mu`.
    pub fn stiffness(&self, mu: &BeltramiField) -> Result<SymMatrix> {
        check_len(mu, self.faces.len())?;
        Ok(self.assembler.assemble(&alpha_coefficients(mu)?))
    }

    fn validate(&self, bc: &BoundaryCondition) -> Result<()> {
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        for &(v, p) in &bc.pinned {
            if v >= n {
                return Err(Error::invalid(format!("pinned vertex {v} out of range")));
            }
            if seen[v] {
                return Err(Error::invalid(format!("vertex {v} pinned twice")));
            }
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::invalid(format!("pinned position of vertex {v} is not finite")));
            }
            seen[v] = true;
        }
        match bc.mode {
            BoundaryMode::Fixed if bc.pinned.len() < 2 => Err(Error::invalid(
                "fixed boundary conditions need at least 2 pinned vertices",
            )),
            BoundaryMode::CircleSliding if bc.pinned.len() != 1 => Err(Error::invalid(
                "circle-sliding boundary conditions pin exactly 1 vertex",
            )),
            BoundaryMode::CircleSliding if !self.is_boundary[bc.pinned[0].0] => Err(Error::invalid(format!(
                "pinned vertex {} is not on the boundary",
                bc.pinned[0].0
            ))),
            _ if !(bc.rho_boundary >= 0.0) => Err(Error::invalid("rho_boundary must be nonnegative")),
            _ => Ok(()),
        }
    }

    /// Computes the map with Beltrami coefficient `mu` under `bc`, with
    /// optional soft landmark penalties.
    pub fn solve(
        &mut self,
        mu: &BeltramiField,
        bc: &BoundaryCondition,
        landmarks: Option<&LandmarkConstraints>,
    ) -> Result<LbsSolution> {
        self.validate(bc)?;
        if let Some(lm) = landmarks {
            let n = self.vertex_count();
            if lm.anchors.iter().any(|a| a.vertices.iter().any(|&v| v >= n)) {
                return Err(Error::invalid("landmark anchor references a missing vertex"));
            }
        }
        let k = self.stiffness(mu)?;
        match bc.mode {
            BoundaryMode::Fixed => self.solve_fixed(&k, bc, landmarks),
            BoundaryMode::CircleSliding => self.solve_sliding(&k, bc, landmarks),
        }
    }

    fn solve_fixed(
        &mut self,
        k: &SymMatrix,
        bc: &BoundaryCondition,
        landmarks: Option<&LandmarkConstraints>,
    ) -> Result<LbsSolution> {
        let n = self.vertex_count();
        let mut fixed: Vec<Option<Point2>> = vec![None; n];
        for &(v, p) in &bc.pinned {
            fixed[v] = Some(p);
        }
        let layout = free_layout(&fixed);
        let energy = Energy {
            k,
            layout: &layout,
            boundary: &self.boundary,
            landmarks,
            spacing: None,
        };
        let d = energy.minimize(&mut self.main_cache, self.options)?;
        let uv = positions(&layout, &d);
        let flipped = flipped_faces(&self.faces, &uv);
        Ok(LbsSolution {
            uv,
            angles: None,
            sliding_iterations: 0,
            last_angle_step: 0.0,
            flipped,
        })
    }

    fn initial_angles(&self, bc: &BoundaryCondition) -> Result<Vec<f64>> {
        let nb = self.boundary.len();
        let mut angles = match &bc.angles {
            Some(a) if a.len() != nb => {
                return Err(Error::LengthMismatch {
                    what: "boundary angles",
                    left: a.len(),
                    right: nb,
                })
            }
            Some(a) => a.clone(),
            None => self.default_angles.clone(),
        };
        let (pv, pp) = bc.pinned[0];
        let b = self.boundary.iter().position(|&v| v == pv).unwrap();
        let shift = pp[1].atan2(pp[0]) - angles[b];
        angles.iter_mut().for_each(|a| *a += shift);
        // Unwrapped and increasing from the first boundary vertex on.
        let gaps = angle_gaps(&angles)?;
        let mut out = Vec::with_capacity(nb);
        let mut a = angles[0];
        for g in gaps.iter().take(nb) {
            out.push(a);
            a += g;
        }
        Ok(out)
    }

    fn solve_sliding(
        &mut self,
        k: &SymMatrix,
        bc: &BoundaryCondition,
        landmarks: Option<&LandmarkConstraints>,
    ) -> Result<LbsSolution> {
        let n = self.vertex_count();
        let nb = self.boundary.len();
        let pinned = bc.pinned[0].0;
        let mut theta = self.initial_angles(bc)?;

        // Unknowns: x, y of every interior vertex, then one tangential
        // offset per sliding boundary vertex.
        let mut interior_dof = vec![NO_DOF; n];
        let mut ndof = 0;
        for v in 0..n {
            if !self.is_boundary[v] {
                interior_dof[v] = ndof;
                ndof += 2;
            }
        }
        let mut boundary_dofs = vec![NO_DOF; nb];
        for (b, &v) in self.boundary.iter().enumerate() {
            if v != pinned {
                boundary_dofs[b] = ndof;
                ndof += 1;
            }
        }

        let mut iterations = 0;
        let mut last_step = 0.0;
        while iterations < MAX_SLIDING_ITERATIONS {
            iterations += 1;
            let mut x = vec![Coord::constant(0.0); n];
            let mut y = vec![Coord::constant(0.0); n];
            for v in 0..n {
                if interior_dof[v] != NO_DOF {
                    x[v] = Coord::free(interior_dof[v]);
                    y[v] = Coord::free(interior_dof[v] + 1);
                }
            }
            for (b, &v) in self.boundary.iter().enumerate() {
                let (s, c) = theta[b].sin_cos();
                let dof = boundary_dofs[b];
                x[v] = Coord { c0: c, dof, coef: -s };
                y[v] = Coord { c0: s, dof, coef: c };
            }
            let layout = Layout { x, y, ndof };
            let gaps: Vec<f64> = (0..nb)
                .map(|b| {
                    if b + 1 < nb {
                        theta[b + 1] - theta[b]
                    } else {
                        theta[0] + TAU - theta[b]
                    }
                })
                .collect();
            let energy = Energy {
                k,
                layout: &layout,
                boundary: &self.boundary,
                landmarks,
                spacing: (bc.rho_boundary > 0.0).then_some(Spacing {
                    dofs: &boundary_dofs,
                    gaps: &gaps,
                    rho: bc.rho_boundary,
                }),
            };
            let d = energy.minimize(&mut self.main_cache, self.options)?;
            let delta: Vec<f64> = boundary_dofs
                .iter()
                .map(|&dof| if dof == NO_DOF { 0.0 } else { d[dof] })
                .collect();
            let mut scale: f64 = 1.0;
            for b in 0..nb {
                let change = delta[(b + 1) % nb] - delta[b];
                if change < 0.0 {
                    scale = scale.min((1.0 - MIN_GAP_FRACTION) * gaps[b] / -change);
                }
            }
            let max_delta = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if max_delta * scale > MAX_ANGLE_STEP {
                scale = MAX_ANGLE_STEP / max_delta;
            }
            for b in 0..nb {
                theta[b] += scale * delta[b];
            }
            last_step = scale * max_delta;
            if last_step < SLIDING_TOL {
                break;
            }
        }

        // Boundary held at the final angles; interior rows then hold exactly.
        let mut fixed: Vec<Option<Point2>> = vec![None; n];
        for (b, &v) in self.boundary.iter().enumerate() {
            let (s, c) = theta[b].sin_cos();
            fixed[v] = Some([c, s]);
        }
        let layout = free_layout(&fixed);
        let energy = Energy {
            k,
            layout: &layout,
            boundary: &self.boundary,
            landmarks,
            spacing: None,
        };
        let d = energy.minimize(&mut self.final_cache, self.options)?;
        let uv = positions(&layout, &d);
        let flipped = flipped_faces(&self.faces, &uv);
        Ok(LbsSolution {
            uv,
            angles: Some(theta),
            sliding_iterations: iterations,
            last_angle_step: last_step,
            flipped,
        })
    }
}

fn free_layout(fixed: &[Option<Point2>]) -> Layout {
    let n = fixed.len();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut ndof = 0;
    for f in fixed {
        match f {
            Some(p) => {
                x.push(Coord::constant(p[0]));
                y.push(Coord::constant(p[1]));
            }
            None => {
                x.push(Coord::free(ndof));
                y.push(Coord::free(ndof + 1));
                ndof += 2;
            }
        }
    }
    Layout { x, y, ndof }
}

fn positions(layout: &Layout, d: &[f64]) -> Vec<Point2> {
    layout
        .x
        .iter()
        .zip(&layout.y)
        .map(|(x, y)| [x.eval(d), y.eval(d)])
        .collect()
}

/// Angles proportional to cumulative boundary length, starting at zero.
pub(crate) fn arc_length_angles(lengths: &[f64]) -> Vec<f64> {
    let total: f64 = lengths.iter().sum();
    let mut acc = 0.0;
    lengths
        .iter()
        .map(|l| {
            let a = TAU * acc / total;
            acc += l;
            a
        })
        .collect()
}

/// Solves the linear Beltrami system once and returns the mapped mesh.
///
/// Fails with [`Error::Folded`] if the result inverts faces, which can only
/// happen when landmark penalties pull against each other.
pub fn lbs_solve(
    mesh: &PlanarMesh,
    mu: &BeltramiField,
    bc: &BoundaryCondition,
    landmarks: Option<&LandmarkConstraints>,
) -> Result<PlanarMesh> {
    check_len(mu, mesh.face_count())?;
    let sol = LbsSolver::new(mesh)?.solve(mu, bc, landmarks)?;
    if !sol.flipped.is_empty() {
        return Err(Error::Folded { faces: sol.flipped });
    }
    mesh.with_uv(sol.uv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn square() -> PlanarMesh {
        PlanarMesh::from_xy(
            TriMesh::from_planar(
                &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                vec![[0, 1, 2], [0, 2, 3]],
            )
            .unwrap(),
        )
    }

    #[test]
    fn boundary_energy_examples() {
        let quarter = [0.0, 0.25 * TAU, 0.5 * TAU, 0.75 * TAU];
        assert!((boundary_energy(&quarter).unwrap() - 8.0 / std::f64::consts::PI).abs() < 1e-14);
        let n = 12;
        let uniform: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
        let e = boundary_energy(&uniform).unwrap();
        assert!((e - (n * n) as f64 / TAU).abs() < 1e-12);
        let squeezed = [0.0, 1e-6, 3.0, 4.5];
        assert!(boundary_energy(&squeezed).unwrap() >= 1e6);
        assert!(matches!(
            boundary_energy(&[0.0, 2.0, 1.0, 4.0]),
            Err(Error::NonMonotoneAngles)
        ));
    }

    #[test]
    fn identity_on_square() {
        let m = square();
        let out = lbs_solve(&m, &BeltramiField::zeros(2), &BoundaryCondition::identity(&m), None).unwrap();
        for (a, b) in out.uv.iter().zip(&m.uv) {
            assert!(dist2(*a, *b) < 1e-12);
        }
    }

    #[test]
    fn three_pinned_corners() {
        // A skewed quad; vertex 3 is free. The energy is quadratic in its
        // position, so the minimizer solves a 2x2 system built by hand from
        // the cotangent weights and the boundary-area gradient.
        let pts = [[0.0, 0.0], [1.2, 0.1], [1.0, 0.9], [-0.1, 1.1]];
        let m = PlanarMesh::from_xy(TriMesh::from_planar(&pts, vec![[0, 1, 2], [0, 2, 3]]).unwrap());
        let bc = BoundaryCondition::fixed(vec![(0, pts[0]), (1, pts[1]), (2, pts[2])]);
        let out = lbs_solve(&m, &BeltramiField::zeros(2), &bc, None).unwrap();
        let cot = |a: Point2, b: Point2, o: Point2| {
            let u = [a[0] - o[0], a[1] - o[1]];
            let v = [b[0] - o[0], b[1] - o[1]];
            (u[0] * v[0] + u[1] * v[1]) / (u[0] * v[1] - u[1] * v[0]).abs()
        };
        let (p0, p2, p3) = (pts[0], pts[2], pts[3]);
        // Edge (3,0) is opposite corner 2; edge (3,2) opposite corner 0.
        let w30 = 0.5 * cot(p3, p0, p2);
        let w32 = 0.5 * cot(p3, p2, p0);
        let k33 = w30 + w32;
        // -area gradient for vertex 3 between neighbours 2 and 0 on the loop.
        let ga = [0.5 * (p2[1] - p0[1]), 0.5 * (p0[0] - p2[0])];
        let x = (w30 * p0[0] + w32 * p2[0] - ga[0]) / k33;
        let y = (w30 * p0[1] + w32 * p2[1] - ga[1]) / k33;
        assert!(
            (out.uv[3][0] - x).abs() < 1e-12 && (out.uv[3][1] - y).abs() < 1e-12,
            "{:?} vs {:?}",
            out.uv[3],
            [x, y]
        );
    }

    #[test]
    fn affine_recovery_on_hex_disk() {
        let m = PlanarMesh::from_xy(shapes::hex_disk(6));
        let k = c(0.25, 0.0);
        let f = |p: Point2| {
            let z = c(p[0], p[1]);
            let w = z + k * z.conj();
            [w.re, w.im]
        };
        let bc = BoundaryCondition::fixed(m.base.boundary().iter().map(|&v| (v, f(m.uv[v]))).collect());
        let out = lbs_solve(&m, &BeltramiField::constant(m.face_count(), k), &bc, None).unwrap();
        for (a, p) in out.uv.iter().zip(&m.uv) {
            assert!(dist2(*a, f(*p)) < 1e-12);
        }
    }

    #[test]
    fn sliding_identity_is_fixed_point() {
        let m = PlanarMesh::from_xy(shapes::hex_disk(5));
        let bc = BoundaryCondition::circle_default(&m.base).with_rho_boundary(0.0);
        let mut solver = LbsSolver::new(&m).unwrap();
        let sol = solver.solve(&BeltramiField::zeros(m.face_count()), &bc, None).unwrap();
        let err = sol.uv.iter().zip(&m.uv).map(|(a, b)| dist2(*a, *b)).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(sol.flipped.is_empty());
    }

    #[test]
    fn sliding_recovers_mu() {
        let m = PlanarMesh::from_xy(shapes::hex_disk(10));
        let mu = BeltramiField::new(
            (0..m.face_count())
                .map(|f| {
                    let p = m.centroid(f);
                    c(0.3 * p[0], 0.2 * p[1] * p[0])
                })
                .collect(),
        );
        let out = lbs_solve(&m, &mu, &BoundaryCondition::circle_default(&m.base), None).unwrap();
        for &v in m.base.boundary() {
            assert!((out.uv[v][0].hypot(out.uv[v][1]) - 1.0).abs() < 1e-12);
        }
        let back = super::super::compute_mu(&m, &out.uv).unwrap();
        let err: f64 = back
            .values
            .iter()
            .zip(&mu.values)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / mu.len() as f64;
        assert!(err < 0.05, "{err}");
        let r = lbs_residual(&m, &mu, &out.uv).unwrap();
        let data = assemble_lbs(&m, &mu).unwrap();
        assert!(r < 1e-10 * data.mean_abs_diagonal(), "{r}");
    }

    #[test]
    fn row_sums_vanish() {
        let m = PlanarMesh::from_xy(shapes::hex_disk(4));
        let mu = BeltramiField::new(
            (0..m.face_count())
                .map(|f| c(0.5 * (f as f64).sin(), 0.4 * (f as f64).cos()))
                .collect(),
        );
        let data = assemble_lbs(&m, &mu).unwrap();
        for s in data.interior_row_sums() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn landmarks_pull() {
        let m = PlanarMesh::from_xy(shapes::hex_disk(6));
        let src = [[0.1, 0.05]];
        let dst = [[0.2, -0.1]];
        let lm = LandmarkConstraints::new(&m, &src, &dst, 1e8).unwrap();
        let mut solver = LbsSolver::new(&m).unwrap();
        let sol = solver
            .solve(
                &BeltramiField::zeros(m.face_count()),
                &BoundaryCondition::circle_default(&m.base),
                Some(&lm),
            )
            .unwrap();
        let p = lm.evaluate(&sol.uv)[0];
        assert!(dist2(p, dst[0]) < 1e-5, "{p:?}");
        assert!(sol.flipped.is_empty());
        assert!(matches!(
            LandmarkConstraints::new(&m, &[[2.0, 0.0]], &[[0.0, 0.0]], 1.0),
            Err(Error::OutsideMesh { .. })
        ));
    }

    #[test]
    fn bad_conditions() {
        let m = square();
        let mu = BeltramiField::zeros(2);
        assert!(lbs_solve(&m, &mu, &BoundaryCondition::fixed(vec![(0, [0.0, 0.0])]), None).is_err());
        let two = BoundaryCondition {
            mode: BoundaryMode::CircleSliding,
            pinned: vec![(0, [1.0, 0.0]), (1, [0.0, 1.0])],
            angles: None,
            rho_boundary: 0.0,
        };
        assert!(lbs_solve(&m, &mu, &two, None).is_err());
        assert!(lbs_solve(&m, &BeltramiField::zeros(3), &BoundaryCondition::identity(&m), None).is_err());
    }
}
