//! Resampling of face-based Beltrami fields onto square grids, 2D discrete
//! Fourier transforms and low-pass truncation.
//!
//! The disk and the square `[-1, 1]^2` are identified radially: a point at
//! radius `r` in direction `theta` goes to the point of the square at
//! "square radius" `max(|x|, |y|) = r` in the same direction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::beltrami::{project_mu, BeltramiField, MU_BOUND};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::{FaceLocator, PlanarMesh};

const DOMAIN_TOL: f64 = 1e-12;

/// Maps the closed unit disk onto the square `[-1, 1]^2`.
pub fn disk_to_square(p: Point2) -> Result<Point2> {
    let r = p[0].hypot(p[1]);
    if !(r <= 1.0 + DOMAIN_TOL) {
        return Err(Error::invalid(format!(
            "point ({}, {}) lies outside the unit disk",
            p[0], p[1]
        )));
    }
    if r == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let r = r.min(1.0);
    let (ax, ay) = (p[0].abs(), p[1].abs());
    // The dominant coordinate becomes exactly +-r; directions within a few
    // ulps of a diagonal land exactly on the corner.
    Ok(if (ax - ay).abs() <= 4.0 * f64::EPSILON * ax.max(ay) {
        [r.copysign(p[0]), r.copysign(p[1])]
    } else if ax > ay {
        [r.copysign(p[0]), p[1] * (r / ax)]
    } else {
        [p[0] * (r / ay), r.copysign(p[1])]
    })
}

/// Inverse of [`disk_to_square`].
pub fn square_to_disk(q: Point2) -> Result<Point2> {
    let m = q[0].abs().max(q[1].abs());
    if !(m <= 1.0 + DOMAIN_TOL) {
        return Err(Error::invalid(format!(
            "point ({}, {}) lies outside the square",
            q[0], q[1]
        )));
    }
    if m == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let m = m.min(1.0);
    let s = m / q[0].hypot(q[1]);
    Ok([q[0] * s, q[1] * s])
}

/// Coordinate of grid node `i` along one axis of `[-1, 1]`.
#[inline]
pub fn node_coordinate(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

fn check_grid_size(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "grid size must be a power of two >= 8, got {n}"
        )));
    }
    Ok(())
}

/// `n x n` complex samples on `[-1, 1]^2`; node `(i, j)` sits at
/// `(node_coordinate(i), node_coordinate(j))` and is stored at `j * n + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub n: usize,
    pub values: Vec<Complex64>,
}

/// Forward DFT coefficients of a [`GridField`], index `(kx, ky)` stored at
/// `ky * n + kx`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub n: usize,
    pub coefficients: Vec<Complex64>,
}

impl GridField {
    pub fn new(n: usize, values: Vec<Complex64>) -> Result<Self> {
        check_grid_size(n)?;
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                what: "grid values",
                left: values.len(),
                right: n * n,
            });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("grid has non-finite values"));
        }
        Ok(GridField { n, values })
    }

    pub fn constant(n: usize, c: Complex64) -> Result<Self> {
        GridField::new(n, vec![c; n * n])
    }

    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        check_grid_size(n)?;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(node_coordinate(i, n), node_coordinate(j, n)));
            }
        }
        GridField::new(n, values)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[j * self.n + i]
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Bilinear interpolation at `q` in `[-1, 1]^2`; outside the node
    /// lattice the nearest edge values are held.
    pub fn sample(&self, q: Point2) -> Complex64 {
        let n = self.n;
        let axis = |x: f64| {
            let u = ((x + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 2);
            (i0, u - i0 as f64)
        };
        let (i0, tx) = axis(q[0]);
        let (j0, ty) = axis(q[1]);
        let v00 = self.get(i0, j0);
        let v10 = self.get(i0 + 1, j0);
        let v01 = self.get(i0, j0 + 1);
        let v11 = self.get(i0 + 1, j0 + 1);
        (v00 * (1.0 - tx) + v10 * tx) * (1.0 - ty) + (v01 * (1.0 - tx) + v11 * tx) * ty
    }

    /// `i,j,re,im` rows.
    pub fn to_csv(&self) -> String {
        grid_csv(self.n, &self.values)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (n, values) = parse_grid_csv(text)?;
        GridField::new(n, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        save(path.as_ref(), self.to_csv().into_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(GRID_MAGIC, self.n, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (n, values) = decode(GRID_MAGIC, bytes)?;
        GridField::new(n, values)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        save(path.as_ref(), self.to_bytes())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Spectrum {
    pub fn get(&self, kx: usize, ky: usize) -> Complex64 {
        self.coefficients[ky * self.n + kx]
    }

    pub fn l2_norm(&self) -> f64 {
        self.coefficients.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectra of the real and imaginary channels, recovered from the
    /// complex spectrum through Hermitian symmetry.
    pub fn channel_spectra(&self) -> (Spectrum, Spectrum) {
        let n = self.n;
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for ky in 0..n {
            for kx in 0..n {
                let s = self.get(kx, ky);
                let m = self.get((n - kx) % n, (n - ky) % n).conj();
                re.push((s + m) * 0.5);
                im.push((s - m) * Complex64::new(0.0, -0.5));
            }
        }
        (Spectrum { n, coefficients: re }, Spectrum { n, coefficients: im })
    }

    pub fn to_csv(&self) -> String {
        grid_csv(self.n, &self.coefficients)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (n, coefficients) = parse_grid_csv(text)?;
        check_grid_size(n)?;
        Ok(Spectrum { n, coefficients })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(SPECTRUM_MAGIC, self.n, &self.coefficients)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (n, coefficients) = decode(SPECTRUM_MAGIC, bytes)?;
        check_grid_size(n)?;
        Ok(Spectrum { n, coefficients })
    }
}

fn save(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn grid_csv(n: usize, values: &[Complex64]) -> String {
    let mut s = String::from("i,j,re,im\n");
    for j in 0..n {
        for i in 0..n {
            let v = values[j * n + i];
            let _ = writeln!(s, "{i},{j},{:.16e},{:.16e}", v.re, v.im);
        }
    }
    s
}

fn parse_grid_csv(text: &str) -> Result<(usize, Vec<Complex64>)> {
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("i,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::parse(k + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(k + 1, format!("bad index {s:?}")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(k + 1, format!("bad number {s:?}")))
        };
        rows.push((
            idx(cols[0])?,
            idx(cols[1])?,
            Complex64::new(num(cols[2])?, num(cols[3])?),
        ));
    }
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n * n != rows.len() {
        return Err(Error::invalid(format!("{} rows do not form a square grid", rows.len())));
    }
    let mut values = vec![None; n * n];
    for (i, j, v) in rows {
        if i >= n || j >= n || values[j * n + i].is_some() {
            return Err(Error::invalid(format!(
                "grid index ({i}, {j}) is out of range or repeated"
            )));
        }
        values[j * n + i] = Some(v);
    }
    Ok((n, values.into_iter().map(Option::unwrap).collect()))
}

const GRID_MAGIC: &[u8; 4] = b"QCGF";
const SPECTRUM_MAGIC: &[u8; 4] = b"QCSP";
/// Two real channels per sample: real and imaginary part.
const CHANNELS: u32 = 2;

fn encode(magic: &[u8; 4], n: usize, values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 16 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&CHANNELS.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<(usize, Vec<Complex64>)> {
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(Error::invalid(format!(
            "binary header does not start with {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let n = word(4);
    let channels = word(8);
    if channels != CHANNELS as usize {
        return Err(Error::invalid(format!(
            "expected {CHANNELS} channels, found {channels}"
        )));
    }
    let body = &bytes[12..];
    if body.len() != n * n * 16 {
        return Err(Error::invalid(format!(
            "binary body has {} bytes, expected {}",
            body.len(),
            n * n * 16
        )));
    }
    let f = |k: usize| f64::from_le_bytes(body[k..k + 8].try_into().unwrap());
    Ok((
        n,
        (0..n * n).map(|k| Complex64::new(f(16 * k), f(16 * k + 8))).collect(),
    ))
}

/// Samples `mu` at every grid node: the node is carried from the square to
/// the disk and takes the value of the face containing it (or the nearest
/// face when it falls outside the mesh image).
pub fn mu_to_grid(disk: &PlanarMesh, mu: &BeltramiField, n: usize) -> Result<GridField> {
    check_grid_size(n)?;
    if mu.len() != disk.face_count() {
        return Err(Error::LengthMismatch {
            what: "Beltrami field and faces",
            left: mu.len(),
            right: disk.face_count(),
        });
    }
    let locator = FaceLocator::new(disk);
    GridField::from_fn_result(n, |x, y| {
        let p = square_to_disk([x, y])?;
        Ok(mu.values[locator.nearest(p).face])
    })
}

impl GridField {
    fn from_fn_result(n: usize, f: impl Fn(f64, f64) -> Result<Complex64>) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(node_coordinate(i, n), node_coordinate(j, n))?);
            }
        }
        GridField::new(n, values)
    }
}

/// Samples the grid bilinearly at the square image of every face centroid,
/// then radially projects values into `|mu| <= 1 - 1e-9`.
pub fn grid_to_mu(grid: &GridField, disk: &PlanarMesh) -> Result<BeltramiField> {
    let mut values = Vec::with_capacity(disk.face_count());
    for f in 0..disk.face_count() {
        let c = disk.centroid(f);
        let r = c[0].hypot(c[1]);
        let c = if r > 1.0 { [c[0] / r, c[1] / r] } else { c };
        values.push(grid.sample(disk_to_square(c)?));
    }
    Ok(project_mu(&values, MU_BOUND))
}

fn fft2(values: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in values.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            col[j] = values[j * n + i];
        }
        fft.process(&mut col);
        for j in 0..n {
            values[j * n + i] = col[j];
        }
    }
}

/// Forward transform with a `1 / n^2` factor, so the DC coefficient is the
/// mean of the field.
pub fn dft2(grid: &GridField) -> Spectrum {
    let n = grid.n;
    let mut c = grid.values.clone();
    fft2(&mut c, n, false);
    let s = 1.0 / (n * n) as f64;
    c.iter_mut().for_each(|v| *v *= s);
    Spectrum { n, coefficients: c }
}

/// Unnormalized inverse of [`dft2`].
pub fn idft2(spec: &Spectrum) -> GridField {
    let n = spec.n;
    let mut v = spec.coefficients.clone();
    fft2(&mut v, n, true);
    GridField { n, values: v }
}

/// Whether frequency index `m` lies in the kept band of half-width `k`.
#[inline]
pub fn in_band(m: usize, n: usize, k: usize) -> bool {
    m < k || m >= n - k
}

/// Zeroes every coefficient outside the centred `2k x 2k` block of low
/// frequencies.
pub fn lowpass(spec: &Spectrum, k: usize) -> Result<Spectrum> {
    let n = spec.n;
    if k < 1 || k > n / 2 {
        return Err(Error::invalid(format!(
            "low-pass half-width must lie in 1..={}, got {k}",
            n / 2
        )));
    }
    let mut c = spec.coefficients.clone();
    for ky in 0..n {
        for kx in 0..n {
            if !(in_band(kx, n, k) && in_band(ky, n, k)) {
                c[ky * n + kx] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(Spectrum { n, coefficients: c })
}

/// `||a - b|| / ||b||` over grid values.
pub fn relative_l2_error(a: &GridField, b: &GridField) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum();
    num.sqrt() / b.l2_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn transform_examples() {
        assert_eq!(disk_to_square([0.5, 0.0]).unwrap(), [0.5, 0.0]);
        assert_eq!(disk_to_square([-1.0, 0.0]).unwrap(), [-1.0, 0.0]);
        assert_eq!(disk_to_square([FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap(), [1.0, 1.0]);
        assert_eq!(disk_to_square([0.0, 0.0]).unwrap(), [0.0, 0.0]);
        for (sx, sy) in [(1.0f64, 1.0f64), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            let a: f64 = sy.atan2(sx);
            assert_eq!(disk_to_square([a.cos(), a.sin()]).unwrap(), [sx, sy]);
        }
        let p = square_to_disk([1.0, 1.0]).unwrap();
        assert!((p[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (p[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(square_to_disk([0.3, 0.0]).unwrap(), [0.3, 0.0]);
        assert!(disk_to_square([1.0, 0.1]).is_err());
        assert!(square_to_disk([1.1, 0.0]).is_err());
    }

    #[test]
    fn dft_examples() {
        let g = GridField::constant(8, c(0.3, -0.1)).unwrap();
        let s = dft2(&g);
        assert!((s.get(0, 0) - c(0.3, -0.1)).norm() < 1e-15);
        assert!(s.coefficients.iter().skip(1).all(|v| v.norm() < 1e-12));
        let n = 16;
        let (kx, ky) = (3, 5);
        let wave = GridField::new(
            n,
            (0..n * n)
                .map(|idx| {
                    let (i, j) = (idx % n, idx / n);
                    let ph = 2.0 * PI * (kx * i + ky * j) as f64 / n as f64;
                    c(ph.cos(), ph.sin())
                })
                .collect(),
        )
        .unwrap();
        let s = dft2(&wave);
        for y in 0..n {
            for x in 0..n {
                let expect = if (x, y) == (kx, ky) { 1.0 } else { 0.0 };
                assert!((s.get(x, y) - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    /// Direct O(n^4) transform.
    fn naive_dft(g: &GridField) -> Vec<Complex64> {
        let n = g.n;
        let mut out = vec![c(0.0, 0.0); n * n];
        for ky in 0..n {
            for kx in 0..n {
                let mut acc = c(0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        let ph = -2.0 * PI * ((kx * i + ky * j) as f64) / n as f64;
                        acc += g.get(i, j) * c(ph.cos(), ph.sin());
                    }
                }
                out[ky * n + kx] = acc / (n * n) as f64;
            }
        }
        out
    }

    #[test]
    fn fft_matches_naive_dft() {
        let g = GridField::from_fn(8, |x, y| c((3.0 * x + y).sin(), x * y - 0.2)).unwrap();
        let fast = dft2(&g);
        for (a, b) in fast.coefficients.iter().zip(naive_dft(&g)) {
            assert!((a - b).norm() < 1e-13);
        }
        let (re, im) = fast.channel_spectra();
        let gre = GridField::new(8, g.values.iter().map(|v| c(v.re, 0.0)).collect()).unwrap();
        let gim = GridField::new(8, g.values.iter().map(|v| c(v.im, 0.0)).collect()).unwrap();
        for (a, b) in re.coefficients.iter().zip(naive_dft(&gre)) {
            assert!((a - b).norm() < 1e-13);
        }
        for (a, b) in im.coefficients.iter().zip(naive_dft(&gim)) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn lowpass_rules() {
        let g = GridField::from_fn(16, |x, y| c((5.0 * x).sin() * y, (7.0 * y).cos())).unwrap();
        let s = dft2(&g);
        assert_eq!(lowpass(&s, 8).unwrap(), s);
        assert!(lowpass(&s, 0).is_err() && lowpass(&s, 9).is_err());
        let k = lowpass(&s, 3).unwrap();
        assert_eq!(lowpass(&k, 3).unwrap(), k);
        assert!(k.l2_norm() <= s.l2_norm() + 1e-10);
        let flat = dft2(&GridField::constant(16, c(0.2, 0.1)).unwrap());
        assert_eq!(lowpass(&flat, 1).unwrap(), flat);
    }

    #[test]
    fn serialization_round_trips() {
        let g = GridField::from_fn(8, |x, y| c(x / 3.0, y * PI)).unwrap();
        assert_eq!(GridField::from_csv(&g.to_csv()).unwrap(), g);
        assert_eq!(GridField::from_bytes(&g.to_bytes()).unwrap(), g);
        let s = dft2(&g);
        assert_eq!(Spectrum::from_bytes(&s.to_bytes()).unwrap(), s);
        assert_eq!(Spectrum::from_csv(&s.to_csv()).unwrap(), s);
        assert!(GridField::from_bytes(&s.to_bytes()).is_err());
        assert!(GridField::new(12, vec![c(0.0, 0.0); 144]).is_err());
    }

    #[test]
    fn grid_mu_examples() {
        let disk = PlanarMesh::from_xy(shapes::hex_disk(8));
        let k = c(0.3, -0.2);
        let g = mu_to_grid(&disk, &BeltramiField::constant(disk.face_count(), k), 16).unwrap();
        assert!(g.values.iter().all(|v| *v == k));
        let back = grid_to_mu(&g, &disk).unwrap();
        assert!(back.values.iter().all(|v| (v - k).norm() < 1e-15));
        let zero = grid_to_mu(&GridField::constant(16, c(0.0, 0.0)).unwrap(), &disk).unwrap();
        assert!(zero.values.iter().all(|v| *v == c(0.0, 0.0)));
        let big = grid_to_mu(&GridField::constant(16, c(3.0, 0.0)).unwrap(), &disk).unwrap();
        assert!(big.max_modulus() < 1.0);
    }

    #[test]
    fn ramp_matches_bilinear_oracle() {
        let disk = PlanarMesh::from_xy(shapes::hex_disk(6));
        let g = GridField::from_fn(32, |x, y| c(0.2 * x + 0.1 * y, -0.3 * y)).unwrap();
        let mu = grid_to_mu(&g, &disk).unwrap();
        for f in 0..disk.face_count() {
            let q = disk_to_square(disk.centroid(f)).unwrap();
            // A linear field is reproduced by bilinear interpolation inside
            // the node lattice.
            let lim = node_coordinate(31, 32);
            if q[0].abs() <= lim && q[1].abs() <= lim {
                let expect = c(0.2 * q[0] + 0.1 * q[1], -0.3 * q[1]);
                assert!((mu.values[f] - expect).norm() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn disk_square_round_trip(r in 0.0f64..=1.0, a in -PI..PI) {
            let p = [r * a.cos(), r * a.sin()];
            let q = disk_to_square(p).unwrap();
            prop_assert!(q[0].abs() <= 1.0 && q[1].abs() <= 1.0);
            let back = square_to_disk(q).unwrap();
            prop_assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        }

        #[test]
        fn round_trip_is_identity(vals in proptest::collection::vec(-1.0f64..1.0, 128)) {
            let g = GridField::new(8, vals.chunks(2).map(|v| c(v[0], v[1])).collect()).unwrap();
            let back = idft2(&dft2(&g));
            prop_assert!(relative_l2_error(&back, &g) < 1e-10);
        }
    }
}
