//! End-to-end registration of subject surfaces onto a control surface.
//!
//! Each subject is flattened to the disk, its curvature valleys between the
//! given endpoints become landmark curves, the subject disk is registered so
//! those curves land on the control's curves, and the registered disk is
//! lifted onto the control surface. Subjects run independently; the batch
//! report is assembled in subject-id order.
//!
//! Working directory layout (all names fixed):
//!
//! ```text
//! control/disk.obj  control/param.json  control/curvature.{csv,pgm}  control/targets.txt
//! subjects/<id>/disk.obj  param.json  curvature.{csv,pgm}  landmarks.txt
//! subjects/<id>/mapped.obj  mu.csv  registration.json  registered.off  report.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beltrami::{compute_mu, BeltramiField};
use crate::diffgeo::{curvature_image, mean_curvature, CurvatureField};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};
use crate::landmark::{
    detect_landmark_curve, resample_curve, DetectedCurve, DetectionWeights, LandmarkCurve, LandmarkSet, DEFAULT_SAMPLES,
};
use crate::mesh::{load_mesh, load_planar, write_off, write_planar_obj};
use crate::mesh::{FaceLocator, PlanarMesh, TriMesh};
use crate::parameterization::{
    boundary_circle_error, disk_conformal_parameterize, surface_mu, DiskParam, IterationRecord, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::registration::{histogram, register, Histogram, RegistrationParams, RegistrationResult, HISTOGRAM_BINS};
use crate::report::{read_report, write_report, Envelope, MetricsRecord, TableRow};

/// Side of the square curvature image written for inspection.
pub const CURVATURE_IMAGE_N: usize = 256;
pub const SD_CONVENTION: &str = "population";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub registration: RegistrationParams,
    /// Points per landmark curve after resampling.
    pub samples: usize,
    pub param_max_iter: usize,
    pub param_tol: f64,
    pub detection_epsilon: f64,
    /// Skip stages whose outputs already exist in the working directory.
    pub resume: bool,
    /// Worker threads for the batch; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            registration: RegistrationParams::default(),
            samples: DEFAULT_SAMPLES,
            param_max_iter: DEFAULT_MAX_ITER,
            param_tol: DEFAULT_TOL,
            detection_epsilon: DetectionWeights::default().epsilon,
            resume: false,
            threads: 0,
        }
    }
}

impl PipelineOptions {
    fn weights(&self) -> DetectionWeights {
        DetectionWeights {
            epsilon: self.detection_epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub mean_mu: f64,
    pub max_mu: f64,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub boundary_circle_error: f64,
}

impl ParamDiagnostics {
    pub fn of(param: &DiskParam) -> Self {
        ParamDiagnostics {
            mean_mu: param.mean_mu(),
            max_mu: param.max_mu(),
            history: param.history.clone(),
            converged: param.converged,
            boundary_circle_error: boundary_circle_error(&param.planar),
        }
    }
}

/// A detected curve and its resampled points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub id: String,
    pub endpoints: (Point2, Point2),
    pub vertices: Vec<usize>,
    pub cost: f64,
    pub snap_distances: [f64; 2],
    pub samples: Vec<Point2>,
}

/// Seconds spent per stage of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub parameterize: f64,
    pub curvature: f64,
    pub detect: f64,
    pub register: f64,
    pub pull_back: f64,
    pub io: f64,
}

impl StageTimes {
    pub fn sum(&self) -> f64 {
        self.parameterize + self.curvature + self.detect + self.register + self.pull_back + self.io
    }
}

/// The prepared control: its disk, curvature and landmark targets.
#[derive(Clone, Debug)]
pub struct Control {
    pub param: DiskParam,
    pub curvature: CurvatureField,
    pub curves: Vec<CurveRecord>,
    locator: FaceLocator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub vertices: usize,
    pub faces: usize,
    pub parameterization: ParamDiagnostics,
    pub curves: Vec<CurveRecord>,
    pub wall_time: f64,
}

impl Control {
    pub fn targets(&self) -> Vec<Vec<Point2>> {
        self.curves.iter().map(|c| c.samples.clone()).collect()
    }

    pub fn surface(&self) -> &TriMesh {
        self.param.surface()
    }

    fn record(&self, wall_time: f64) -> ControlRecord {
        ControlRecord {
            vertices: self.surface().vertex_count(),
            faces: self.surface().face_count(),
            parameterization: ParamDiagnostics::of(&self.param),
            curves: self.curves.clone(),
            wall_time,
        }
    }

    /// Surface points of disk points. Points just outside the control's
    /// disk image (a boundary vertex on the circle beyond a chord) are
    /// projected onto the nearest face; the largest projection distance is
    /// returned alongside.
    pub fn lift(&self, points: &[Point2]) -> (Vec<Point3>, f64) {
        let planar = &self.param.planar;
        let xyz = planar.base.vertices();
        let mut worst = 0.0f64;
        let lifted = points
            .iter()
            .map(|&p| {
                let l = self.locator.nearest(p);
                worst = worst.max(l.distance);
                let f = planar.faces()[l.face];
                if let Some(&v) = f.iter().find(|&&v| planar.uv[v] == p) {
                    return xyz[v];
                }
                let mut out = [0.0; 3];
                for k in 0..3 {
                    for (o, x) in out.iter_mut().zip(xyz[f[k]]) {
                        *o += l.bary[k] * x;
                    }
                }
                out
            })
            .collect();
        (lifted, worst)
    }
}

fn detect_curves(
    disk: &PlanarMesh,
    h: &CurvatureField,
    endpoints: &[(Point2, Point2)],
    opts: &PipelineOptions,
) -> Result<Vec<CurveRecord>> {
    endpoints
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let DetectedCurve {
                vertices,
                points,
                cost,
                snap_distances,
            } = detect_landmark_curve(disk, h, a, b, opts.weights())?;
            Ok(CurveRecord {
                id: format!("c{k}"),
                endpoints: (a, b),
                vertices,
                cost,
                snap_distances,
                samples: resample_curve(&points, opts.samples)?,
            })
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parameterizes `mesh`, reusing `dir/disk.obj` and `dir/param.json` when
/// resuming.
fn parameterize_stage(mesh: &TriMesh, dir: Option<&Path>, opts: &PipelineOptions) -> Result<DiskParam> {
    if let Some(dir) = dir.filter(|_| opts.resume) {
        let (disk, json) = (dir.join("disk.obj"), dir.join("param.json"));
        if disk.exists() && json.exists() {
            let diag: ParamDiagnostics = read_report(&json)?.payload;
            let uv = load_planar(&disk)?.uv;
            let planar = PlanarMesh::new(mesh.clone(), uv)?;
            return Ok(DiskParam {
                mu: surface_mu(mesh, &planar.uv)?,
                planar,
                history: diag.history,
                converged: diag.converged,
            });
        }
    }
    let param = disk_conformal_parameterize(mesh, opts.param_max_iter, opts.param_tol)?;
    if let Some(dir) = dir {
        write_planar_obj(&param.planar, dir.join("disk.obj"))?;
        write_report(
            &Envelope::new("parameterization", None, ParamDiagnostics::of(&param)),
            dir.join("param.json"),
        )?;
    }
    Ok(param)
}

fn write_curvature(dir: &Path, disk: &PlanarMesh, h: &CurvatureField) -> Result<()> {
    write_text(&dir.join("curvature.csv"), &h.to_csv())?;
    curvature_image(disk, h, CURVATURE_IMAGE_N)?.write_pgm(dir.join("curvature.pgm"))
}

/// Flattens the control and detects its landmark curves between
/// `endpoints` (uv coordinates on the control disk).
pub fn prepare_control(
    mesh: &TriMesh,
    endpoints: &[(Point2, Point2)],
    opts: &PipelineOptions,
    workdir: Option<&Path>,
) -> Result<Control> {
    let dir = workdir.map(|w| w.join("control"));
    if let Some(d) = &dir {
        ensure_dir(d)?;
    }
    let param = parameterize_stage(mesh, dir.as_deref(), opts)?;
    let curvature = mean_curvature(mesh)?;
    let curves = detect_curves(&param.planar, &curvature, endpoints, opts)?;
    if let Some(d) = &dir {
        write_curvature(d, &param.planar, &curvature)?;
        let set = LandmarkSet::new(
            curves
                .iter()
                .map(|c| LandmarkCurve::new(c.id.clone(), c.samples.clone(), c.samples.clone()))
                .collect::<Result<_>>()?,
        )?;
        set.write(d.join("targets.txt"))?;
    }
    Ok(Control {
        locator: FaceLocator::new(&param.planar),
        param,
        curvature,
        curves,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub vertices: usize,
    pub faces: usize,
    pub parameterization: ParamDiagnostics,
    pub curves: Vec<CurveRecord>,
    pub registration: MetricsRecord,
    /// `|mu|` of the registration map per subject face.
    pub face_mu: Vec<f64>,
    /// Largest distance of a registered disk point from the control disk.
    pub lift_distance: f64,
    pub timings: StageTimes,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct PairOutput {
    /// Subject connectivity placed on the control surface.
    pub registered: TriMesh,
    /// The registered subject disk.
    pub mapped: PlanarMesh,
    pub mu: BeltramiField,
    pub report: SubjectReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RegistrationStage {
    metrics: MetricsRecord,
}

fn register_stage(
    disk: &PlanarMesh,
    lm: &LandmarkSet,
    dir: Option<&Path>,
    opts: &PipelineOptions,
) -> Result<(PlanarMesh, BeltramiField, MetricsRecord)> {
    if let Some(dir) = dir.filter(|_| opts.resume) {
        let (mapped, json) = (dir.join("mapped.obj"), dir.join("registration.json"));
        if mapped.exists() && json.exists() {
            let stage: RegistrationStage = read_report(&json)?.payload;
            let map = disk.with_uv(load_planar(&mapped)?.uv)?;
            let mu = compute_mu(disk, &map.uv)?;
            return Ok((map, mu, stage.metrics));
        }
    }
    let result: RegistrationResult = register(disk, lm, &opts.registration)?;
    let metrics = MetricsRecord::from_result(&result);
    if let Some(dir) = dir {
        write_planar_obj(&result.map, dir.join("mapped.obj"))?;
        result.mu.write_csv(dir.join("mu.csv"))?;
        let stage = RegistrationStage {
            metrics: metrics.clone(),
        };
        write_report(
            &Envelope::new("registration", None, stage),
            dir.join("registration.json"),
        )?;
    }
    Ok((result.map, result.mu, metrics))
}

/// Registers one subject onto the prepared control. Endpoints are uv
/// coordinates on the subject disk, one pair per control curve.
pub fn run_pair(
    id: &str,
    subject: &TriMesh,
    control: &Control,
    endpoints: &[(Point2, Point2)],
    opts: &PipelineOptions,
    workdir: Option<&Path>,
) -> Result<PairOutput> {
    let start = Instant::now();
    if endpoints.len() != control.curves.len() {
        return Err(Error::LengthMismatch {
            what: "subject endpoints and control curves",
            left: endpoints.len(),
            right: control.curves.len(),
        });
    }
    let dir = workdir.map(|w| subject_dir(w, id));
    let mut t = StageTimes::default();
    let mut clock = Instant::now();
    let mut lap = |slot: &mut f64| {
        let now = Instant::now();
        *slot += (now - clock).as_secs_f64();
        clock = now;
    };
    if let Some(d) = &dir {
        ensure_dir(d)?;
    }
    lap(&mut t.io);

    let param = parameterize_stage(subject, dir.as_deref(), opts)?;
    lap(&mut t.parameterize);
    let h = mean_curvature(subject)?;
    lap(&mut t.curvature);
    let curves = detect_curves(&param.planar, &h, endpoints, opts)?;
    let lm = LandmarkSet::new(
        curves
            .iter()
            .zip(&control.curves)
            .map(|(s, c)| LandmarkCurve::new(s.id.clone(), s.samples.clone(), c.samples.clone()))
            .collect::<Result<_>>()?,
    )?;
    lap(&mut t.detect);
    if let Some(d) = &dir {
        write_curvature(d, &param.planar, &h)?;
        lm.write(d.join("landmarks.txt"))?;
    }
    lap(&mut t.io);

    let (mapped, mu, metrics) = register_stage(&param.planar, &lm, dir.as_deref(), opts)?;
    lap(&mut t.register);
    let (xyz, lift_distance) = control.lift(&mapped.uv);
    let registered = TriMesh::new(xyz, subject.faces().to_vec())?;
    lap(&mut t.pull_back);
    if let Some(d) = &dir {
        write_off(&registered, d.join("registered.off"))?;
    }
    lap(&mut t.io);

    let report = SubjectReport {
        vertices: subject.vertex_count(),
        faces: subject.face_count(),
        parameterization: ParamDiagnostics::of(&param),
        curves,
        registration: metrics,
        face_mu: mu.moduli(),
        lift_distance,
        timings: t,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if let Some(d) = &dir {
        write_report(&Envelope::new("subject", None, report.clone()), d.join("report.json"))?;
    }
    Ok(PairOutput {
        registered,
        mapped,
        mu,
        report,
    })
}

fn subject_dir(workdir: &Path, id: &str) -> PathBuf {
    workdir.join("subjects").join(id)
}

/// Outcome for one subject of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub report: Option<SubjectReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub subjects: usize,
    pub failed: usize,
    /// Pooled over every face of every subject.
    pub mean_mu: f64,
    pub sd_mu: f64,
    /// Mean and SD across subjects of the per-subject landmark RMSE.
    pub landmark_error: f64,
    pub sd_landmark_error: f64,
    /// Mean per-subject wall time.
    pub time: f64,
    /// Sum of per-subject wall times.
    pub total_time: f64,
    pub histogram: Histogram,
    /// Per-face statistics across subjects; absent when face counts differ.
    pub per_face: Option<FaceStats>,
    pub sd_convention: String,
}

impl Aggregate {
    pub fn table_row(&self, method: &str) -> TableRow {
        TableRow {
            method: method.to_string(),
            mean_mu: self.mean_mu,
            sd_mu: self.sd_mu,
            landmark_error: self.landmark_error,
            sd_landmark_error: self.sd_landmark_error,
            time: self.time,
        }
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cross-subject statistics of the successful subjects. Per-face arrays
/// need every subject to share `faces`.
pub fn aggregate(entries: &[SubjectEntry], faces: usize) -> Result<Aggregate> {
    let ok: Vec<&SubjectReport> = entries.iter().filter_map(|e| e.report.as_ref()).collect();
    if ok.is_empty() {
        return Err(Error::invalid("no subject finished; nothing to aggregate"));
    }
    let pooled = ok.iter().flat_map(|r| r.face_mu.iter().copied());
    let (mean_mu, sd_mu) = mean_sd(pooled);
    let (landmark_error, sd_landmark_error) = mean_sd(ok.iter().map(|r| r.registration.landmark_rmse));
    let total_time: f64 = ok.iter().map(|r| r.wall_time).sum();
    let mut hist = histogram(&[], HISTOGRAM_BINS);
    for r in &ok {
        hist.merge(&r.registration.histogram)?;
    }
    let per_face = ok.iter().all(|r| r.face_mu.len() == faces).then(|| {
        let (mean, sd) = (0..faces)
            .map(|f| mean_sd(ok.iter().map(move |r| r.face_mu[f])))
            .unzip();
        FaceStats { mean, sd }
    });
    Ok(Aggregate {
        subjects: ok.len(),
        failed: entries.len() - ok.len(),
        mean_mu,
        sd_mu,
        landmark_error,
        sd_landmark_error,
        time: total_time / ok.len() as f64,
        total_time,
        histogram: hist,
        per_face,
        sd_convention: SD_CONVENTION.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub options: PipelineOptions,
    pub control: ControlRecord,
    pub subjects: Vec<SubjectEntry>,
    pub aggregate: Option<Aggregate>,
    /// Elapsed time of the whole batch, including the control.
    pub elapsed: f64,
}

impl PipelineReport {
    /// Copy with every timing zeroed; the rest is reproducible bit for bit.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.elapsed = 0.0;
        r.control.wall_time = 0.0;
        for s in r.subjects.iter_mut().filter_map(|s| s.report.as_mut()) {
            s.timings = StageTimes::default();
            s.wall_time = 0.0;
            s.registration.wall_time = 0.0;
        }
        if let Some(a) = r.aggregate.as_mut() {
            a.time = 0.0;
            a.total_time = 0.0;
        }
        r
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_report(&Envelope::new("pipeline", None, self), path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(read_report(path)?.payload)
    }
}

/// A subject to process: an id and its surface, or the reason it could
/// not be loaded.
pub struct SubjectInput {
    pub id: String,
    pub mesh: Result<TriMesh>,
}

impl SubjectInput {
    pub fn new(id: impl Into<String>, mesh: TriMesh) -> Self {
        SubjectInput {
            id: id.into(),
            mesh: Ok(mesh),
        }
    }

    /// Loads an OFF/OBJ file; the id is the file stem.
    pub fn load(path: &Path) -> Self {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        SubjectInput {
            id,
            mesh: load_mesh(path),
        }
    }
}

/// Runs every subject against the control. Failures become error entries;
/// only control failures abort the batch.
pub fn run_batch(
    control: &TriMesh,
    mut subjects: Vec<SubjectInput>,
    endpoints: &[(Point2, Point2)],
    opts: &PipelineOptions,
    workdir: Option<&Path>,
) -> Result<PipelineReport> {
    let start = Instant::now();
    subjects.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::invalid(format!("duplicate subject id {}", w[0].id)));
    }
    let prepared = prepare_control(control, endpoints, opts, workdir)?;
    let control_record = prepared.record(start.elapsed().as_secs_f64());

    let threads = match opts.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(subjects.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SubjectEntry>>> = subjects.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(input) = subjects.get(k) else { break };
                let outcome = match &input.mesh {
                    Ok(mesh) => run_pair(&input.id, mesh, &prepared, endpoints, opts, workdir)
                        .map(|o| o.report)
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                let entry = match outcome {
                    Ok(report) => SubjectEntry {
                        id: input.id.clone(),
                        report: Some(report),
                        error: None,
                    },
                    Err(error) => SubjectEntry {
                        id: input.id.clone(),
                        report: None,
                        error: Some(error),
                    },
                };
                *slots[k].lock().expect("slot lock") = Some(entry);
            });
        }
    });
    let entries: Vec<SubjectEntry> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every subject ran"))
        .collect();
    let aggregate = aggregate(&entries, control.face_count()).ok();
    Ok(PipelineReport {
        options: opts.clone(),
        control: control_record,
        subjects: entries,
        aggregate,
        elapsed: start.elapsed().as_secs_f64(),
    })
}
