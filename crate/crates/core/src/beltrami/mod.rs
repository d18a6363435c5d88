//! Beltrami coefficients of piecewise-linear maps and the linear Beltrami
//! solver that reconstructs a map from them.
//!
//! A map `f = u + iv` between planar triangulations has on every face the
//! Beltrami coefficient `mu = f_zbar / f_z`. It measures how far the face
//! map is from being conformal: `mu = 0` on conformal faces and `|mu| < 1`
//! on every face that keeps its orientation.

mod lbs;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

pub use lbs::{
    assemble_lbs, boundary_energy, lbs_residual, lbs_solve, Anchor, BoundaryCondition, BoundaryMode,
    LandmarkConstraints, LbsSolution, LbsSolver, StiffnessData, DEFAULT_RHO_BOUNDARY, MAX_SLIDING_ITERATIONS,
};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::{face_derivatives, FaceDerivatives, PlanarMesh};

/// Largest modulus accepted by [`alpha_coefficients`].
pub const MU_BOUND: f64 = 1.0 - 1e-9;

/// Below this modulus of `2 f_z` a face has no usable conformal factor.
pub const CONFORMAL_FACTOR_EPS: f64 = 1e-14;

/// One complex Beltrami coefficient per face.
#[derive(Clone, Debug, PartialEq)]
pub struct BeltramiField {
    pub values: Vec<Complex64>,
}

impl BeltramiField {
    pub fn new(values: Vec<Complex64>) -> Self {
        BeltramiField { values }
    }

    pub fn zeros(faces: usize) -> Self {
        BeltramiField::constant(faces, Complex64::new(0.0, 0.0))
    }

    pub fn constant(faces: usize, mu: Complex64) -> Self {
        BeltramiField {
            values: vec![mu; faces],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.values.iter().map(|m| m.norm()).collect()
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }

    pub fn mean_modulus(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|m| m.norm()).sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|m| m.re.is_finite() && m.im.is_finite())
    }

    /// Writes `face_index,re_mu,im_mu` rows with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("face_index,re_mu,im_mu\n");
        for (i, m) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{i},{:.16e},{:.16e}", m.re, m.im);
        }
        s
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Parses the CSV written by [`BeltramiField::write_csv`]. Rows may come
    /// in any order but must cover faces `0..n` exactly once.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, Complex64)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("face_index") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::parse(i + 1, format!("expected 3 columns, found {}", cols.len())));
            }
            let f: usize = cols[0]
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad face index {:?}", cols[0])))?;
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(i + 1, format!("bad number {s:?}")))
            };
            rows.push((f, Complex64::new(num(cols[1])?, num(cols[2])?)));
        }
        let mut values = vec![None; rows.len()];
        for (f, m) in rows {
            match values.get_mut(f) {
                Some(slot @ None) => *slot = Some(m),
                Some(Some(_)) => return Err(Error::invalid(format!("face {f} listed twice"))),
                None => return Err(Error::invalid(format!("face index {f} out of range"))),
            }
        }
        Ok(BeltramiField {
            values: values.into_iter().map(Option::unwrap).collect(),
        })
    }
}

/// `mu` of one face from its partial derivatives; `None` when the conformal
/// factor vanishes.
#[inline]
pub(crate) fn mu_of(a: f64, b: f64, c: f64, d: f64) -> Option<Complex64> {
    let num = Complex64::new(a - d, c + b);
    let den = Complex64::new(a + d, c - b);
    if den.norm() < CONFORMAL_FACTOR_EPS {
        None
    } else {
        Some(num / den)
    }
}

pub(crate) fn mu_from_derivatives(fd: &FaceDerivatives) -> Result<BeltramiField> {
    let mut values = Vec::with_capacity(fd.len());
    for f in 0..fd.len() {
        let [a, b, c, d] = fd.face(f);
        match mu_of(a, b, c, d) {
            Some(m) => values.push(m),
            None => {
                return Err(Error::DegenerateConformalFactor {
                    face: f,
                    modulus: 0.5 * (a + d).hypot(c - b),
                })
            }
        }
    }
    Ok(BeltramiField { values })
}

/// Beltrami coefficient of the piecewise-linear map `source.uv -> target_uv`.
pub fn compute_mu(source: &PlanarMesh, target_uv: &[Point2]) -> Result<BeltramiField> {
    mu_from_derivatives(&face_derivatives(source, target_uv)?)
}

/// Jacobian `|f_z|^2 (1 - |mu|^2)` of the map on every face.
pub fn jacobian(source: &PlanarMesh, target_uv: &[Point2]) -> Result<Vec<f64>> {
    let fd = face_derivatives(source, target_uv)?;
    Ok((0..fd.len())
        .map(|f| {
            let [a, b, c, d] = fd.face(f);
            let fz2 = 0.25 * ((a + d) * (a + d) + (c - b) * (c - b));
            let fzbar2 = 0.25 * ((a - d) * (a - d) + (c + b) * (c + b));
            fz2 - fzbar2
        })
        .collect())
}

/// Coefficients of the symmetric matrix `[[a1, a2], [a2, a3]]` per face.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaCoefficients {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

impl AlphaCoefficients {
    pub fn face(&self, f: usize) -> [f64; 3] {
        [self.a1[f], self.a2[f], self.a3[f]]
    }
}

#[inline]
pub(crate) fn alpha_of(mu: Complex64) -> [f64; 3] {
    let (rho, tau) = (mu.re, mu.im);
    let s = 1.0 - rho * rho - tau * tau;
    [
        ((rho - 1.0) * (rho - 1.0) + tau * tau) / s,
        -2.0 * tau / s,
        ((rho + 1.0) * (rho + 1.0) + tau * tau) / s,
    ]
}

/// Evaluates `alpha1..alpha3` for every face. Faces with
/// `|mu| >= 1 - 1e-9` are rejected.
pub fn alpha_coefficients(mu: &BeltramiField) -> Result<AlphaCoefficients> {
    let n = mu.len();
    let mut out = AlphaCoefficients {
        a1: Vec::with_capacity(n),
        a2: Vec::with_capacity(n),
        a3: Vec::with_capacity(n),
    };
    for (f, &m) in mu.values.iter().enumerate() {
        let r = m.norm();
        if !(r < MU_BOUND) {
            return Err(Error::NearSingularMu { face: f, modulus: r });
        }
        let [a1, a2, a3] = alpha_of(m);
        out.a1.push(a1);
        out.a2.push(a2);
        out.a3.push(a3);
    }
    Ok(out)
}

/// Largest `f64` strictly below one.
pub const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// `tanh(|nu|) * exp(i arg nu)`, with `arg 0 = 0`.
pub fn clamp_mu(nu: &[Complex64]) -> BeltramiField {
    BeltramiField {
        values: nu.iter().map(|&v| clamp_one(v)).collect(),
    }
}

pub(crate) fn clamp_one(v: Complex64) -> Complex64 {
    let r = v.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let t = r.tanh().min(ONE_MINUS_ULP);
    let mut m = (v / r) * t;
    while m.norm() >= 1.0 {
        m *= ONE_MINUS_ULP;
    }
    m
}

/// Radially projects every value into the disk of radius `bound`.
pub fn project_mu(values: &[Complex64], bound: f64) -> BeltramiField {
    BeltramiField {
        values: values
            .iter()
            .map(|&v| {
                let r = v.norm();
                if r > bound {
                    v * (bound / r)
                } else {
                    v
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fan() -> PlanarMesh {
        let pts = [[0.1, -0.05], [1.0, 0.0], [0.2, 1.1], [-0.9, 0.1], [0.05, -1.0]];
        PlanarMesh::from_xy(TriMesh::from_planar(&pts, vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]]).unwrap())
    }

    fn apply(m: &PlanarMesh, f: impl Fn(Complex64) -> Complex64) -> Vec<Point2> {
        m.uv.iter()
            .map(|p| {
                let w = f(c(p[0], p[1]));
                [w.re, w.im]
            })
            .collect()
    }

    #[test]
    fn mu_of_affine_maps() {
        let m = fan();
        let id = compute_mu(&m, &m.uv).unwrap();
        assert!(id.values.iter().all(|v| v.norm() < 1e-15));
        let k = apply(&m, |z| z + 0.25 * z.conj());
        for v in compute_mu(&m, &k).unwrap().values {
            assert!((v - c(0.25, 0.0)).norm() < 1e-14);
        }
        let s = apply(&m, |z| c(2.0 * z.re, z.im));
        for v in compute_mu(&m, &s).unwrap().values {
            assert!((v - c(1.0 / 3.0, 0.0)).norm() < 1e-14);
        }
        for j in jacobian(&m, &s).unwrap() {
            assert!((j - 2.0).abs() < 1e-14);
        }
        for j in jacobian(&m, &m.uv).unwrap() {
            assert!((j - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn collapsed_target_has_no_conformal_factor() {
        let m = fan();
        let flat = vec![[0.0, 0.0]; 5];
        assert!(matches!(
            compute_mu(&m, &flat),
            Err(Error::DegenerateConformalFactor { face: 0, .. })
        ));
    }

    #[test]
    fn alpha_examples() {
        let a = alpha_coefficients(&BeltramiField::new(vec![c(0.0, 0.0), c(0.5, 0.0), c(0.0, 0.5)])).unwrap();
        let close = |x: [f64; 3], y: [f64; 3]| x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-15);
        assert!(close(a.face(0), [1.0, 0.0, 1.0]));
        assert!(close(a.face(1), [1.0 / 3.0, 0.0, 3.0]));
        assert!(close(a.face(2), [5.0 / 3.0, -4.0 / 3.0, 5.0 / 3.0]));
        assert!(matches!(
            alpha_coefficients(&BeltramiField::new(vec![c(0.0, 0.0), c(1.0, 0.0)])),
            Err(Error::NearSingularMu { face: 1, .. })
        ));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_mu(&[c(0.0, 0.0)]).values[0], c(0.0, 0.0));
        let big = clamp_mu(&[c(1000.0, 0.0)]).values[0];
        assert_eq!(big.re, ONE_MINUS_ULP);
        assert_eq!(big.im, 0.0);
        let half = clamp_mu(&[c(0.0, 0.5)]).values[0];
        assert!(half.re.abs() < 1e-17 && (half.im - 0.5f64.tanh()).abs() < 1e-16);
        assert!((half.im - 0.46211715726000974).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let f = BeltramiField::new(vec![c(0.1, -0.2), c(1.0 / 3.0, 1e-300), c(0.0, 0.0)]);
        assert_eq!(BeltramiField::from_csv(&f.to_csv()).unwrap(), f);
        assert!(BeltramiField::from_csv("0,1,2\n0,1,2\n").is_err());
        assert!(BeltramiField::from_csv("0,1\n").is_err());
    }

    proptest! {
        #[test]
        fn jacobian_is_determinant(pts in proptest::collection::vec(-2.0f64..2.0, 10)) {
            let m = fan();
            let target: Vec<Point2> = pts.chunks(2).map(|p| [p[0], p[1]]).collect();
            let fd = face_derivatives(&m, &target).unwrap();
            let j = jacobian(&m, &target).unwrap();
            for f in 0..fd.len() {
                let [a, b, cc, d] = fd.face(f);
                let scale = 1.0 + (a * d).abs() + (b * cc).abs();
                prop_assert!((j[f] - (a * d - b * cc)).abs() < 1e-12 * scale);
            }
        }

        #[test]
        fn alpha_determinant(re in -0.999f64..0.999, im in -0.999f64..0.999) {
            let mu = c(re, im);
            prop_assume!(mu.norm() < 0.999);
            let [a1, a2, a3] = alpha_of(mu);
            let r2 = re * re + im * im;
            // Symbolic expansion of a1*a3 - a2^2 before simplification.
            let expected = ((1.0 + r2) * (1.0 + r2) - 4.0 * re * re - 4.0 * im * im) / ((1.0 - r2) * (1.0 - r2));
            prop_assert!(a1 > 0.0 && a3 > 0.0);
            let det = a1 * a3 - a2 * a2;
            prop_assert!(det > 0.0);
            prop_assert!((det - expected).abs() < 1e-12 * expected.abs().max(1.0) * (1.0 / (1.0 - r2)));
        }

        #[test]
        fn clamp_keeps_direction(re in -50.0f64..50.0, im in -50.0f64..50.0) {
            let v = c(re, im);
            prop_assume!(v.norm() > 1e-300);
            let m = clamp_mu(&[v]).values[0];
            prop_assert!(m.norm() < 1.0);
            prop_assert!((m.arg() - v.arg()).abs() < 1e-12);
            prop_assert!((m.norm() - v.norm().tanh()).abs() < 1e-15);
        }
    }
}
