//! Landmark-matching quasi-conformal registration of a disk onto itself.
//!
//! The objective is `alpha L_mu + beta L_grad + gamma L_landmark`. It is
//! minimized by alternating three steps: reconstruct the map from the
//! current coefficient with the linear Beltrami solver (landmarks as soft
//! penalties, boundary sliding on the circle), measure the coefficient of
//! that map, and shrink and smooth it by a few explicit descent steps.
//! Iterates that would raise the objective are rejected.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beltrami::{
    clamp_mu, compute_mu, BeltramiField, BoundaryCondition, LandmarkConstraints, LbsSolver, DEFAULT_RHO_BOUNDARY,
};
use crate::error::{Error, Result};
use crate::geometry::{dist2, Point2};
use crate::landmark::LandmarkSet;
use crate::mesh::{face_areas, PlanarMesh, NO_FACE};
use crate::parameterization::unwrap_increasing;

pub const HISTOGRAM_BINS: usize = 50;
const MAX_HALVINGS: usize = 5;
/// Halvings of the landmark displacement tried for a fold-free solve.
const MAX_REACH_HALVINGS: usize = 30;
const POWER_ITERATIONS: usize = 5;
/// Sources closer than this are considered the same point.
const COINCIDENT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Weight of the Beltrami-consistency term. The solver satisfies that
    /// term exactly, so the value is carried for reporting only.
    pub eta: f64,
    pub rho_boundary: f64,
    pub max_outer: usize,
    pub tol: f64,
    pub smoothing_steps: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1e4,
            eta: 1.0,
            rho_boundary: DEFAULT_RHO_BOUNDARY,
            max_outer: 50,
            tol: 1e-6,
            smoothing_steps: 10,
        }
    }
}

impl RegistrationParams {
    pub fn with_weights(alpha: f64, beta: f64, gamma: f64) -> Self {
        RegistrationParams {
            alpha,
            beta,
            gamma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("rho_boundary", self.rho_boundary),
            ("tol", self.tol),
        ];
        for (name, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} must be finite and nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss components of one accepted iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_mu: f64,
    pub l_grad_mu: f64,
    pub l_landmark: f64,
    pub total: f64,
}

/// Counts of `|mu|` in uniform bins on `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram {
        lo: 0.0,
        hi: 1.0,
        counts,
    }
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum; both histograms must share bins.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.counts.len() != other.counts.len() {
            return Err(Error::LengthMismatch {
                what: "histogram bins",
                left: self.counts.len(),
                right: other.counts.len(),
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_mu: f64,
    pub sd_mu: f64,
    pub max_mu: f64,
    pub landmark_rmse: f64,
    pub wall_time: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub map: PlanarMesh,
    pub mu: BeltramiField,
    pub loss_trace: Vec<LossRecord>,
    pub landmark_positions: Vec<Point2>,
    pub landmark_targets: Vec<Point2>,
    pub wall_time: f64,
    /// False when `max_outer` ran out first.
    pub converged: bool,
    /// Landmark index pairs with distinct sources but coincident targets.
    pub infeasible: Vec<(usize, usize)>,
    /// Fraction of the landmark displacement the solver could impose
    /// without folding; 1 unless the targets are unreachable.
    pub reach: f64,
    pub params: RegistrationParams,
}

impl RegistrationResult {
    pub fn final_loss(&self) -> LossRecord {
        *self.loss_trace.last().expect("trace holds the initial iterate")
    }
}

/// Mean squared modulus.
pub fn loss_mu(mu: &BeltramiField) -> f64 {
    if mu.is_empty() {
        return 0.0;
    }
    mu.values.iter().map(|m| m.norm_sqr()).sum::<f64>() / mu.len() as f64
}

/// Interior dual edges `(f, g, 1 / d^2)` with `d` the centroid distance.
#[derive(Clone, Debug)]
pub struct DualGraph {
    pub edges: Vec<(usize, usize, f64)>,
    faces: usize,
}

impl DualGraph {
    pub fn new(mesh: &PlanarMesh) -> Result<Self> {
        let mut edges = Vec::new();
        for e in mesh.base.topology().edges() {
            let [f, g] = e.faces;
            if g == NO_FACE {
                continue;
            }
            let d = dist2(mesh.centroid(f), mesh.centroid(g));
            if !(d > 0.0) {
                return Err(Error::invalid(format!("faces {f} and {g} share a centroid")));
            }
            edges.push((f.min(g), f.max(g), 1.0 / (d * d)));
        }
        Ok(DualGraph {
            edges,
            faces: mesh.face_count(),
        })
    }

    /// `(S v)_i = 2 sum_j w_ij (v_i - v_j)`, the gradient of the summed
    /// per-face squared differences.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
        for &(f, g, w) in &self.edges {
            let d = (v[f] - v[g]) * (2.0 * w);
            out[f] += d;
            out[g] -= d;
        }
        out
    }

    fn max_diagonal(&self) -> f64 {
        let mut diag = vec![0.0; self.faces];
        for &(f, g, w) in &self.edges {
            diag[f] += 2.0 * w;
            diag[g] += 2.0 * w;
        }
        diag.into_iter().fold(0.0, f64::max)
    }

    /// Upper estimate of the largest eigenvalue of `S`: the larger of a few
    /// power iterations and the largest diagonal entry.
    pub fn spectral_bound(&self) -> f64 {
        let mut v: Vec<Complex64> = (0..self.faces)
            .map(|i| Complex64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, (i % 5) as f64 * 0.1))
            .collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = self.apply(&v);
            lambda = w.iter().zip(&v).map(|(a, b)| (a * b.conj()).re).sum::<f64>();
            v = w;
        }
        lambda.max(self.max_diagonal())
    }
}

/// `(1 / F) sum_faces sum_{interior dual edges of the face} |dmu / d|^2`.
pub fn loss_grad_mu(mesh: &PlanarMesh, mu: &BeltramiField) -> Result<f64> {
    if mu.len() != mesh.face_count() {
        return Err(Error::LengthMismatch {
            what: "Beltrami field and faces",
            left: mu.len(),
            right: mesh.face_count(),
        });
    }
    Ok(grad_loss(&DualGraph::new(mesh)?, mu))
}

fn grad_loss(dual: &DualGraph, mu: &BeltramiField) -> f64 {
    if dual.faces == 0 {
        return 0.0;
    }
    // Each dual edge belongs to both of its faces.
    let s: f64 = dual
        .edges
        .iter()
        .map(|&(f, g, w)| 2.0 * w * (mu.values[f] - mu.values[g]).norm_sqr())
        .sum();
    s / dual.faces as f64
}

/// Mean squared distance between mapped landmarks and their targets.
pub fn loss_landmark(current: &[Point2], targets: &[Point2]) -> Result<f64> {
    if current.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "landmark positions and targets",
            left: current.len(),
            right: targets.len(),
        });
    }
    if current.is_empty() {
        return Ok(0.0);
    }
    Ok(current
        .iter()
        .zip(targets)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum::<f64>()
        / current.len() as f64)
}

/// Pairs of landmarks whose sources differ but whose targets coincide.
pub fn infeasible_pairs(sources: &[Point2], targets: &[Point2]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            if dist2(targets[i], targets[j]) <= COINCIDENT && dist2(sources[i], sources[j]) > COINCIDENT {
                out.push((i, j));
            }
        }
    }
    out
}

struct Problem<'a> {
    disk: &'a PlanarMesh,
    solver: LbsSolver,
    landmarks: Option<LandmarkConstraints>,
    targets: Vec<Point2>,
    dual: DualGraph,
    params: RegistrationParams,
    pin: (usize, Point2),
}

struct Iterate {
    uv: Vec<Point2>,
    angles: Vec<f64>,
    mu: BeltramiField,
    loss: LossRecord,
}

impl Problem<'_> {
    fn solve(&mut self, mu: &BeltramiField, angles: &[f64]) -> Result<Option<Iterate>> {
        let bc = BoundaryCondition::circle(self.pin.0, self.pin.1)
            .with_angles(angles.to_vec())
            .with_rho_boundary(self.params.rho_boundary);
        let sol = self.solver.solve(mu, &bc, self.landmarks.as_ref())?;
        if !sol.flipped.is_empty() {
            return Ok(None);
        }
        let real = compute_mu(self.disk, &sol.uv)?;
        let loss = self.loss(&sol.uv, &real);
        Ok(Some(Iterate {
            angles: sol.angles.unwrap_or_else(|| angles.to_vec()),
            uv: sol.uv,
            mu: real,
            loss,
        }))
    }

    fn positions(&self, uv: &[Point2]) -> Vec<Point2> {
        self.landmarks.as_ref().map_or_else(Vec::new, |l| l.evaluate(uv))
    }

    fn loss(&self, uv: &[Point2], mu: &BeltramiField) -> LossRecord {
        let p = &self.params;
        let l_mu = loss_mu(mu);
        let l_grad_mu = grad_loss(&self.dual, mu);
        let l_landmark = loss_landmark(&self.positions(uv), &self.targets).expect("counts agree");
        LossRecord {
            l_mu,
            l_grad_mu,
            l_landmark,
            total: p.alpha * l_mu + p.beta * l_grad_mu + p.gamma * l_landmark,
        }
    }

    /// Moves the solver's landmark targets to `sources + reach * (targets - sources)`.
    fn set_reach(&mut self, sources: &[Point2], reach: f64) {
        if let Some(l) = self.landmarks.as_mut() {
            for ((a, p), q) in l.anchors.iter_mut().zip(sources).zip(&self.targets) {
                a.target = [p[0] + reach * (q[0] - p[0]), p[1] + reach * (q[1] - p[1])];
            }
        }
    }

    /// Explicit descent on `alpha |mu|^2 + beta |grad mu|^2`, then clamp.
    fn shrink(&self, mu: &BeltramiField, tau: f64) -> BeltramiField {
        let (a, b) = (self.params.alpha, self.params.beta);
        let mut v = mu.values.clone();
        for _ in 0..self.params.smoothing_steps {
            let s = if b > 0.0 {
                self.dual.apply(&v)
            } else {
                vec![Complex64::new(0.0, 0.0); v.len()]
            };
            for (x, sx) in v.iter_mut().zip(s) {
                *x -= (*x * a + sx * b) * tau;
            }
        }
        clamp_mu(&v)
    }
}

/// Registers `disk` so that the landmark sources land on their targets.
pub fn register(disk: &PlanarMesh, lm: &LandmarkSet, params: &RegistrationParams) -> Result<RegistrationResult> {
    params.validate()?;
    let start = Instant::now();
    if !disk.is_fold_free() {
        return Err(Error::Folded {
            faces: disk.flipped_faces(),
        });
    }
    let sources = lm.sources();
    let targets = lm.targets();
    let total_area: f64 = face_areas(disk).iter().sum();
    let landmarks = if sources.is_empty() {
        None
    } else {
        // Scaled so that the penalty in the solver energy matches gamma
        // times the mean squared landmark error relative to the map energy.
        let weight = 2.0 * params.gamma * total_area / sources.len() as f64;
        Some(LandmarkConstraints::new(disk, &sources, &targets, weight)?)
    };
    let boundary = disk.base.boundary();
    let pin = (boundary[0], disk.uv[boundary[0]]);
    let mut angles: Vec<f64> = boundary.iter().map(|&v| disk.uv[v][1].atan2(disk.uv[v][0])).collect();
    unwrap_increasing(&mut angles);
    let mut problem = Problem {
        disk,
        solver: LbsSolver::new(disk)?,
        landmarks,
        targets: targets.clone(),
        dual: DualGraph::new(disk)?,
        params: *params,
        pin,
    };
    let smoothing = (params.alpha > 0.0 || params.beta > 0.0) && params.smoothing_steps > 0;
    let tau0 = if smoothing {
        0.5 / (params.alpha + params.beta * problem.dual.spectral_bound())
    } else {
        0.0
    };
    // Landmarks far from their targets can fold the first solve. The
    // targets are then approached along straight lines from the sources,
    // each stage starting from the coefficient of the previous map, and
    // the objective is only tracked once the true targets are in place.
    let mut reach = 1.0;
    let mut state = None;
    for _ in 0..=MAX_REACH_HALVINGS {
        problem.set_reach(&sources, reach);
        state = problem.solve(&BeltramiField::zeros(disk.face_count()), &angles)?;
        if state.is_some() || problem.landmarks.is_none() {
            break;
        }
        reach *= 0.5;
    }
    let mut state = state.ok_or_else(|| Error::Folded { faces: vec![] })?;
    while reach < 1.0 {
        let mut step = reach.min(1.0 - reach);
        let mut next = None;
        for _ in 0..=MAX_REACH_HALVINGS {
            problem.set_reach(&sources, (reach + step).min(1.0));
            next = problem.solve(&state.mu, &state.angles)?;
            if next.is_some() {
                break;
            }
            step *= 0.5;
        }
        match next {
            Some(n) => {
                state = n;
                reach = (reach + step).min(1.0);
            }
            None => break,
        }
    }
    problem.set_reach(&sources, 1.0);
    let mut trace = vec![state.loss];
    let mut converged = false;
    for _ in 0..params.max_outer {
        if state.loss.total == 0.0 {
            converged = true;
            break;
        }
        let mut tau = tau0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let target = if smoothing {
                problem.shrink(&state.mu, tau)
            } else {
                state.mu.clone()
            };
            if let Some(next) = problem.solve(&target, &state.angles)? {
                if next.loss.total <= state.loss.total {
                    accepted = Some(next);
                    break;
                }
            }
            if !smoothing {
                break;
            }
            tau *= 0.5;
        }
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        let decrease = (state.loss.total - next.loss.total) / state.loss.total;
        trace.push(next.loss);
        state = next;
        if decrease < params.tol {
            converged = true;
            break;
        }
    }
    let positions = problem.positions(&state.uv);
    Ok(RegistrationResult {
        map: disk.with_uv(state.uv)?,
        mu: state.mu,
        loss_trace: trace,
        landmark_positions: positions,
        infeasible: infeasible_pairs(&sources, &targets),
        landmark_targets: targets,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        reach,
        params: *params,
    })
}

/// Mean, population SD and maximum of the moduli.
pub fn modulus_stats(mu: &BeltramiField) -> (f64, f64, f64) {
    let m = mu.moduli();
    if m.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m.len() as f64;
    (mean, var.sqrt(), m.iter().copied().fold(0.0, f64::max))
}

pub fn evaluate_metrics(result: &RegistrationResult) -> Metrics {
    let (mean_mu, sd_mu, max_mu) = modulus_stats(&result.mu);
    let rmse = loss_landmark(&result.landmark_positions, &result.landmark_targets)
        .expect("counts agree")
        .sqrt();
    Metrics {
        mean_mu,
        sd_mu,
        max_mu,
        landmark_rmse: rmse,
        wall_time: result.wall_time,
        histogram: histogram(&result.mu.moduli(), HISTOGRAM_BINS),
    }
}
