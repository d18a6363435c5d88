//! Landmark curves on the disk: extraction along dark curvature valleys,
//! arc-length resampling, the curve discrepancy and landmark files.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffgeo::CurvatureField;
use crate::error::{Error, Result};
use crate::geometry::{dist2, Point2};
use crate::mesh::{FaceLocator, PlanarMesh};

/// Default number of points per resampled curve.
pub const DEFAULT_SAMPLES: usize = 16;
/// Endpoints may lie this far outside the mesh image.
const ENDPOINT_TOL: f64 = 1e-9;
const DISK_TOL: f64 = 1e-9;

/// One landmark curve: source positions on the moving disk, their target
/// positions, and the endpoints it was extracted from.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkCurve {
    pub id: String,
    pub source: Vec<Point2>,
    pub target: Vec<Point2>,
    pub endpoints: Option<(Point2, Point2)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub curves: Vec<LandmarkCurve>,
}

impl LandmarkCurve {
    pub fn new(id: impl Into<String>, source: Vec<Point2>, target: Vec<Point2>) -> Result<Self> {
        let c = LandmarkCurve {
            id: id.into(),
            source,
            target,
            endpoints: None,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.source.len() < 2 {
            return Err(Error::invalid(format!("curve {} has fewer than 2 points", self.id)));
        }
        if self.source.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                what: "curve source and target",
                left: self.source.len(),
                right: self.target.len(),
            });
        }
        let outside = self
            .source
            .iter()
            .chain(&self.target)
            .find(|p| !(p[0].hypot(p[1]) <= 1.0 + DISK_TOL));
        if let Some(p) = outside {
            return Err(Error::invalid(format!(
                "curve {} has point ({}, {}) outside the unit disk",
                self.id, p[0], p[1]
            )));
        }
        Ok(())
    }
}

impl LandmarkSet {
    pub fn new(curves: Vec<LandmarkCurve>) -> Result<Self> {
        for c in &curves {
            c.validate()?;
        }
        Ok(LandmarkSet { curves })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Total number of landmark points.
    pub fn point_count(&self) -> usize {
        self.curves.iter().map(|c| c.source.len()).sum()
    }

    pub fn sources(&self) -> Vec<Point2> {
        self.curves.iter().flat_map(|c| c.source.iter().copied()).collect()
    }

    pub fn targets(&self) -> Vec<Point2> {
        self.curves.iter().flat_map(|c| c.target.iter().copied()).collect()
    }

    /// Text format: a `curve <id> m=<count>` header per curve followed by
    /// `count` lines of `x y tx ty` (source then target).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.curves {
            let _ = writeln!(s, "curve {} m={}", c.id, c.source.len());
            for (p, q) in c.source.iter().zip(&c.target) {
                let _ = writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e}", p[0], p[1], q[0], q[1]);
            }
        }
        s
    }

    /// Parses [`LandmarkSet::to_text`] output. Point lines with only `x y`
    /// use the same position as target.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut curves = Vec::new();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        while let Some((ln, header)) = lines.next() {
            let words: Vec<&str> = header.split_whitespace().collect();
            let count = match words.as_slice() {
                ["curve", _, m] => m
                    .strip_prefix("m=")
                    .and_then(|m| m.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(ln, format!("bad point count {m:?}")))?,
                _ => return Err(Error::parse(ln, "expected `curve <id> m=<count>`")),
            };
            let mut source = Vec::with_capacity(count);
            let mut target = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(ln, format!("curve {} ends early", words[1])))?;
                let nums = line
                    .split_whitespace()
                    .map(|w| {
                        w.parse::<f64>()
                            .map_err(|_| Error::parse(ln, format!("bad number {w:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                match nums.as_slice() {
                    [x, y] => {
                        source.push([*x, *y]);
                        target.push([*x, *y]);
                    }
                    [x, y, tx, ty] => {
                        source.push([*x, *y]);
                        target.push([*tx, *ty]);
                    }
                    _ => return Err(Error::parse(ln, "expected `x y` or `x y tx ty`")),
                }
            }
            curves.push(LandmarkCurve {
                id: words[1].to_string(),
                source,
                target,
                endpoints: None,
            });
        }
        LandmarkSet::new(curves)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Endpoint pairs, one `x0 y0 x1 y1` line per curve (commas also accepted).
pub fn parse_endpoints(text: &str) -> Result<Vec<(Point2, Point2)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|w| !w.is_empty())
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| Error::parse(k + 1, format!("bad number {w:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match nums.as_slice() {
            [a, b, c, d] => out.push(([*a, *b], [*c, *d])),
            _ => return Err(Error::parse(k + 1, "expected `x0 y0 x1 y1`")),
        }
    }
    Ok(out)
}

pub fn endpoints_to_text(endpoints: &[(Point2, Point2)]) -> String {
    let mut s = String::new();
    for (a, b) in endpoints {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e}", a[0], a[1], b[0], b[1]);
    }
    s
}

pub fn read_endpoints(path: impl AsRef<Path>) -> Result<Vec<(Point2, Point2)>> {
    let path = path.as_ref();
    parse_endpoints(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Parameters of the valley-following path cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionWeights {
    /// Cost floor added to the shade of every edge.
    pub epsilon: f64,
}

impl Default for DetectionWeights {
    fn default() -> Self {
        DetectionWeights { epsilon: 0.05 }
    }
}

/// A path on the uv mesh graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectedCurve {
    pub vertices: Vec<usize>,
    pub points: Vec<Point2>,
    pub cost: f64,
    /// Distances from the requested endpoints to the snapped vertices.
    pub snap_distances: [f64; 2],
}

/// Shade per vertex: curvature rescaled to `[0, 1]` over the mesh. Sulci
/// are the low values and therefore the dark pixels of the curvature image.
pub fn vertex_shade(h: &CurvatureField) -> Vec<f64> {
    h.rescaled()
}

/// Cost of edge `(u, v)` given vertex shades.
#[inline]
pub fn edge_cost(uv: &[Point2], shade: &[f64], u: usize, v: usize, weights: DetectionWeights) -> f64 {
    dist2(uv[u], uv[v]) * (weights.epsilon + 0.5 * (shade[u] + shade[v]))
}

/// Nearest vertex to `p`, ties to the smaller index.
pub fn snap_to_vertex(disk: &PlanarMesh, p: Point2) -> (usize, f64) {
    disk.uv
        .iter()
        .enumerate()
        .map(|(v, q)| (v, dist2(*q, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("mesh has vertices")
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    // Reversed for a min-heap; equal costs pop the smaller vertex first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest path between the vertices nearest to `start` and `end` under
/// edge weights `length * (epsilon + mean shade)`.
pub fn detect_landmark_curve(
    disk: &PlanarMesh,
    h: &CurvatureField,
    start: Point2,
    end: Point2,
    weights: DetectionWeights,
) -> Result<DetectedCurve> {
    if h.len() != disk.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "curvature values and vertices",
            left: h.len(),
            right: disk.vertex_count(),
        });
    }
    if !(weights.epsilon > 0.0) {
        return Err(Error::invalid("detection epsilon must be positive"));
    }
    let locator = FaceLocator::new(disk);
    for p in [start, end] {
        let l = locator.nearest(p);
        if l.distance > ENDPOINT_TOL {
            return Err(Error::OutsideMesh {
                x: p[0],
                y: p[1],
                distance: l.distance,
            });
        }
    }
    let shade = vertex_shade(h);
    let (s, ds) = snap_to_vertex(disk, start);
    let (t, dt) = snap_to_vertex(disk, end);
    let (vertices, cost) = shortest_path(disk, s, t, |u, v| edge_cost(&disk.uv, &shade, u, v, weights));
    Ok(DetectedCurve {
        points: vertices.iter().map(|&v| disk.uv[v]).collect(),
        vertices,
        cost,
        snap_distances: [ds, dt],
    })
}

/// Dijkstra on the mesh edge graph.
pub fn shortest_path(disk: &PlanarMesh, s: usize, t: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, f64) {
    let n = disk.vertex_count();
    let topo = disk.base.topology();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Item(0.0, s));
    while let Some(Item(d, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == t {
            break;
        }
        for &v in topo.neighbors(u) {
            let nd = d + cost(u, v);
            if nd < dist[v] || (nd == dist[v] && u < prev[v]) {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Item(nd, v));
            }
        }
    }
    assert!(dist[t].is_finite(), "mesh graph of a disk is connected");
    let mut path = vec![t];
    while *path.last().unwrap() != s {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    (path, dist[t])
}

/// `m` points at uniform arc-length spacing along the polyline; the first
/// and last points are kept exactly.
pub fn resample_curve(curve: &[Point2], m: usize) -> Result<Vec<Point2>> {
    if curve.is_empty() {
        return Err(Error::invalid("cannot resample an empty curve"));
    }
    let mut cum = vec![0.0];
    for w in curve.windows(2) {
        cum.push(cum.last().unwrap() + dist2(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    if curve.len() == 1 || total == 0.0 {
        return Ok(vec![curve[0]; m]);
    }
    if m < 2 {
        return Err(Error::invalid(format!("resampling needs at least 2 points, got {m}")));
    }
    let mut out = Vec::with_capacity(m);
    out.push(curve[0]);
    let mut seg = 0;
    for k in 1..m - 1 {
        let s = total * k as f64 / (m - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (curve[seg], curve[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(*curve.last().unwrap());
    Ok(out)
}

/// Sum of squared distances between corresponding points.
pub fn curve_discrepancy(detected: &[Point2], reference: &[Point2]) -> Result<f64> {
    if detected.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "curve discrepancy",
            left: detected.len(),
            right: reference.len(),
        });
    }
    Ok(detected
        .iter()
        .zip(reference)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum())
}
