//! Synthetic data: random smooth Beltrami fields, quasi-conformal
//! distortions of disks, and brain-like surfaces with known valleys.
//!
//! All randomness comes from ChaCha20 seeded with a `u64`, so every output
//! is reproducible across platforms.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::beltrami::{BeltramiField, BoundaryCondition, LandmarkConstraints, LbsSolver};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};
use crate::landmark::{resample_curve, LandmarkCurve, LandmarkSet, DEFAULT_SAMPLES};
use crate::mesh::{PlanarMesh, TriMesh};
use crate::parameterization::unwrap_increasing;
use crate::shapes;
use crate::spectral::{dft2, grid_to_mu, idft2, lowpass, GridField, Spectrum};

/// Name of the pseudo-random generator, recorded in reports.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64)";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid_n: usize,
    /// Largest modulus of the generated field.
    pub amplitude: f64,
    /// Half-width of the kept low-frequency block.
    pub cutoff: usize,
    /// Rotate distorted disks by a random angle.
    pub rotation: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            grid_n: 64,
            amplitude: 0.3,
            cutoff: 4,
            rotation: false,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, amplitude: f64, cutoff: usize) -> Self {
        SynthConfig {
            seed,
            amplitude,
            cutoff,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::invalid(format!(
                "amplitude must lie in [0, 1), got {}",
                self.amplitude
            )));
        }
        if self.grid_n < 8 || !self.grid_n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid size must be a power of two >= 8, got {}",
                self.grid_n
            )));
        }
        if self.cutoff < 1 || self.cutoff > self.grid_n / 2 {
            return Err(Error::invalid(format!(
                "cutoff must lie in 1..={}, got {}",
                self.grid_n / 2,
                self.cutoff
            )));
        }
        Ok(())
    }
}

fn white_noise(rng: &mut ChaCha20Rng, n: usize) -> Vec<Complex64> {
    (0..n * n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

fn scale_to_amplitude(mut values: Vec<Complex64>, n: usize, amplitude: f64) -> Result<GridField> {
    let max = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if amplitude == 0.0 || max == 0.0 {
        return GridField::constant(n, Complex64::new(0.0, 0.0));
    }
    let s = amplitude / max;
    values.iter_mut().for_each(|v| *v *= s);
    GridField::new(n, values)
}

/// Complex white noise restricted to the low-frequency block of half-width
/// `cutoff` and scaled so that its largest modulus equals `amplitude`.
pub fn random_smooth_mu(cfg: &SynthConfig) -> Result<GridField> {
    cfg.validate()?;
    let n = cfg.grid_n;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let noise = GridField::new(n, white_noise(&mut rng, n))?;
    let smooth = idft2(&lowpass(&dft2(&noise), cfg.cutoff)?);
    scale_to_amplitude(smooth.values, n, cfg.amplitude)
}

/// Signed frequency of DFT index `k`.
fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Smooth field without a hard band limit: white noise under a Gaussian
/// spectral envelope of width `cutoff / 3`, so every frequency is present.
pub fn broadband_mu(cfg: &SynthConfig) -> Result<GridField> {
    cfg.validate()?;
    let n = cfg.grid_n;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let noise = GridField::new(n, white_noise(&mut rng, n))?;
    let spec = dft2(&noise);
    let sigma = cfg.cutoff as f64 / 3.0;
    let mut coefficients = spec.coefficients;
    for ky in 0..n {
        for kx in 0..n {
            let r2 = signed_frequency(kx, n).powi(2) + signed_frequency(ky, n).powi(2);
            coefficients[ky * n + kx] *= (-0.5 * r2 / (sigma * sigma)).exp();
        }
    }
    let smooth = idft2(&Spectrum { n, coefficients });
    scale_to_amplitude(smooth.values, n, cfg.amplitude)
}

/// A disk deformed by a known Beltrami coefficient.
#[derive(Clone, Debug)]
pub struct Distortion {
    pub disk: PlanarMesh,
    pub landmarks: LandmarkSet,
    /// The coefficient sampled on the source faces.
    pub mu: BeltramiField,
}

/// Deforms `disk` by the quasi-conformal map with Beltrami coefficient
/// `mu_grid` (boundary sliding on the circle, first boundary vertex kept in
/// place). Landmark sources move with the map; targets are kept.
pub fn distort_disk(disk: &PlanarMesh, mu_grid: &GridField, lm: &LandmarkSet) -> Result<Distortion> {
    distort_disk_rotated(disk, mu_grid, lm, 0.0)
}

fn distort_disk_rotated(disk: &PlanarMesh, mu_grid: &GridField, lm: &LandmarkSet, angle: f64) -> Result<Distortion> {
    let mu = grid_to_mu(mu_grid, disk)?;
    let boundary = disk.base.boundary();
    let pin = boundary[0];
    let mut angles: Vec<f64> = boundary.iter().map(|&v| disk.uv[v][1].atan2(disk.uv[v][0])).collect();
    unwrap_increasing(&mut angles);
    let bc = BoundaryCondition::circle(pin, disk.uv[pin]).with_angles(angles);
    let sol = LbsSolver::new(disk)?.solve(&mu, &bc, None)?;
    if !sol.flipped.is_empty() {
        return Err(Error::Folded { faces: sol.flipped });
    }
    let (c, s) = (angle.cos(), angle.sin());
    let uv: Vec<Point2> = sol
        .uv
        .iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect();
    let mut curves = Vec::with_capacity(lm.len());
    for curve in &lm.curves {
        let transfer = LandmarkConstraints::new(disk, &curve.source, &curve.target, 0.0)?;
        curves.push(LandmarkCurve {
            id: curve.id.clone(),
            source: transfer.evaluate(&uv),
            target: curve.target.clone(),
            endpoints: curve.endpoints,
        });
    }
    Ok(Distortion {
        disk: disk.with_uv(uv)?,
        landmarks: LandmarkSet::new(curves)?,
        mu,
    })
}

/// [`distort_disk`] driven by a [`SynthConfig`]: the field comes from
/// [`random_smooth_mu`], and a random rotation is applied when requested.
pub fn distort_with_config(disk: &PlanarMesh, lm: &LandmarkSet, cfg: &SynthConfig) -> Result<Distortion> {
    let grid = random_smooth_mu(cfg)?;
    let angle = if cfg.rotation {
        // Separate stream so that the field does not depend on the flag.
        ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15).random::<f64>() * TAU
    } else {
        0.0
    };
    distort_disk_rotated(disk, &grid, lm, angle)
}

/// Shape of a synthetic brain-like hemisphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrainConfig {
    pub seed: u64,
    /// Number of valleys, 1 to 6; they run along rays 60 degrees apart.
    pub bumps: usize,
    /// Hex-disk rings of the underlying triangulation.
    pub rings: usize,
    /// Radial depth of a valley at its middle.
    pub depth: f64,
    /// Gaussian half-width of a valley, in arc length on the unit sphere.
    pub width: f64,
    /// Azimuth change along each valley from its start to its end.
    pub twist: f64,
}

impl Default for BrainConfig {
    fn default() -> Self {
        BrainConfig {
            seed: 0,
            bumps: 3,
            rings: 40,
            depth: 0.1,
            width: 0.08,
            twist: 0.0,
        }
    }
}

/// Polar angles between which valleys are carved; both stay above the
/// equator.
const VALLEY_START: f64 = 0.2;
const VALLEY_END: f64 = 1.35;

/// A synthetic hemisphere and the bottom lines of its valleys.
#[derive(Clone, Debug)]
pub struct SyntheticBrain {
    pub mesh: TriMesh,
    pub valleys: Vec<Vec<Point3>>,
}

impl SyntheticBrain {
    /// Valley points at 10% and 90% of the valley length, where the valleys
    /// are well developed.
    pub fn valley_endpoints(&self) -> Vec<(Point3, Point3)> {
        self.valleys
            .iter()
            .map(|v| {
                let k = v.len() - 1;
                (v[k / 10], v[k - k / 10])
            })
            .collect()
    }
}

struct Groove {
    azimuth: f64,
    depth: f64,
}

fn window(psi: f64) -> f64 {
    if psi <= VALLEY_START || psi >= VALLEY_END {
        0.0
    } else {
        (PI * (psi - VALLEY_START) / (VALLEY_END - VALLEY_START)).sin().powi(2)
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

impl BrainConfig {
    fn grooves(&self) -> Vec<Groove> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let base = rng.random::<f64>() * TAU;
        (0..self.bumps)
            .map(|k| Groove {
                azimuth: base + k as f64 * PI / 3.0 + (rng.random::<f64>() - 0.5) * 0.2,
                depth: self.depth * (0.8 + 0.4 * rng.random::<f64>()),
            })
            .collect()
    }

    fn azimuth_at(&self, g: &Groove, psi: f64) -> f64 {
        g.azimuth + self.twist * (psi - VALLEY_START) / (VALLEY_END - VALLEY_START)
    }

    fn radius(&self, grooves: &[Groove], psi: f64, phi: f64) -> f64 {
        let w = window(psi);
        if w == 0.0 {
            return 1.0;
        }
        let cut: f64 = grooves
            .iter()
            .map(|g| {
                let d = wrap_angle(phi - self.azimuth_at(g, psi)) * psi.sin() / self.width;
                g.depth * (-0.5 * d * d).exp()
            })
            .sum();
        1.0 - w * cut
    }
}

fn spherical(r: f64, psi: f64, phi: f64) -> Point3 {
    [r * psi.sin() * phi.cos(), r * psi.sin() * phi.sin(), r * psi.cos()]
}

/// Hemisphere with `bumps` smooth valleys using default shape settings.
pub fn synthetic_brain(seed: u64, bumps: usize) -> Result<SyntheticBrain> {
    synthetic_brain_with(&BrainConfig {
        seed,
        bumps,
        ..Default::default()
    })
}

pub fn synthetic_brain_with(cfg: &BrainConfig) -> Result<SyntheticBrain> {
    if !(1..=6).contains(&cfg.bumps) {
        return Err(Error::invalid(format!("bumps must lie in 1..=6, got {}", cfg.bumps)));
    }
    if cfg.rings < 4 || !(cfg.depth >= 0.0 && cfg.depth < 0.5) || !(cfg.width > 0.0) {
        return Err(Error::invalid(
            "brain needs rings >= 4, depth in [0, 0.5) and positive width",
        ));
    }
    let grooves = cfg.grooves();
    let (pts, faces) = shapes::hex_disk_layout(cfg.rings);
    let lifted = pts
        .iter()
        .map(|p| {
            let psi = shapes::hemisphere_polar(p[0].hypot(p[1]));
            let phi = p[1].atan2(p[0]);
            spherical(cfg.radius(&grooves, psi, phi), psi, phi)
        })
        .collect();
    let mesh = TriMesh::new(lifted, faces)?;
    let samples = 200;
    let valleys = grooves
        .iter()
        .map(|g| {
            (0..=samples)
                .map(|k| {
                    let psi = VALLEY_START + (VALLEY_END - VALLEY_START) * k as f64 / samples as f64;
                    let phi = cfg.azimuth_at(g, psi);
                    spherical(cfg.radius(&grooves, psi, phi), psi, phi)
                })
                .collect()
        })
        .collect();
    Ok(SyntheticBrain { mesh, valleys })
}

/// A registration problem with a known answer: a template disk with
/// landmark curves, and a distorted copy carrying the moved landmarks.
#[derive(Clone, Debug)]
pub struct RegistrationPair {
    pub template: PlanarMesh,
    /// Distorted disk; its landmark sources are the moved curves and the
    /// targets the template curves.
    pub moving: PlanarMesh,
    pub landmarks: LandmarkSet,
    pub mu: BeltramiField,
}

/// Three gently curved landmark curves, 120 degrees apart, on the unit disk.
pub fn template_curves(seed: u64, m: usize) -> Result<LandmarkSet> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base = rng.random::<f64>() * TAU;
    let mut curves = Vec::new();
    for c in 0..3 {
        let theta = base + c as f64 * TAU / 3.0;
        let bend = 0.3 * (rng.random::<f64>() - 0.5);
        let poly: Vec<Point2> = (0..=100)
            .map(|k| {
                let t = k as f64 / 100.0;
                let r = 0.15 + 0.7 * t;
                let a = theta + bend * (PI * t).sin();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let pts = resample_curve(&poly, m)?;
        curves.push(LandmarkCurve::new(format!("c{c}"), pts.clone(), pts)?);
    }
    LandmarkSet::new(curves)
}

/// Template hex disk with `rings` rings and curves from [`template_curves`],
/// distorted by a random smooth field of the given amplitude.
pub fn registration_pair(seed: u64, amplitude: f64, rings: usize) -> Result<RegistrationPair> {
    registration_pair_with(&SynthConfig::new(seed, amplitude, 4), rings)
}

/// [`registration_pair`] with every field option exposed.
pub fn registration_pair_with(cfg: &SynthConfig, rings: usize) -> Result<RegistrationPair> {
    let template = PlanarMesh::from_xy(shapes::hex_disk(rings));
    let curves = template_curves(cfg.seed, DEFAULT_SAMPLES)?;
    let d = distort_with_config(&template, &curves, cfg)?;
    Ok(RegistrationPair {
        template,
        moving: d.disk,
        landmarks: d.landmarks,
        mu: d.mu,
    })
}
