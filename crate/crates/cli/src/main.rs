use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use qcreg::beltrami::{BeltramiField, BoundaryCondition, LandmarkConstraints, LbsSolver};
use qcreg::diffgeo::{curvature_image, mean_curvature};
use qcreg::geometry::Point2;
use qcreg::landmark::{
    detect_landmark_curve, endpoints_to_text, resample_curve, DetectionWeights, LandmarkCurve, LandmarkSet,
    DEFAULT_SAMPLES,
};
use qcreg::mesh::{load_mesh, load_planar, write_off, write_planar_obj};
use qcreg::parameterization::{disk_conformal_parameterize, DEFAULT_MAX_ITER, DEFAULT_TOL};
use qcreg::pipeline::{run_batch, ParamDiagnostics, PipelineOptions, SubjectInput};
use qcreg::registration::{register, RegistrationParams};
use qcreg::report::{table_csv, write_report, Envelope, MetricsRecord};
use qcreg::spectral::{dft2, grid_to_mu, idft2, lowpass, mu_to_grid, relative_l2_error};
use qcreg::synth::{registration_pair_with, synthetic_brain_with, BrainConfig, SynthConfig};

#[derive(Parser)]
#[command(
    name = "qcreg",
    version,
    about = "Quasi-conformal registration of disk-topology meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    /// Boundary slides along the unit circle; its first vertex stays put.
    Circle,
    /// Boundary held at its input uv.
    Fixed,
}

#[derive(clap::Args)]
struct WeightArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e4)]
    gamma: f64,
    /// Reported only: the solver satisfies the consistency term exactly.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = qcreg::beltrami::DEFAULT_RHO_BOUNDARY)]
    rho_boundary: f64,
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 10)]
    smoothing_steps: usize,
}

impl WeightArgs {
    fn params(&self) -> RegistrationParams {
        RegistrationParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            eta: self.eta,
            rho_boundary: self.rho_boundary,
            max_outer: self.max_outer,
            tol: self.tol,
            smoothing_steps: self.smoothing_steps,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Map a disk-type surface onto the unit disk.
    Parameterize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Reconstruct the map of a Beltrami coefficient.
    Lbs {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long, value_enum, default_value = "circle")]
        bc: Bc,
        #[arg(long)]
        out: PathBuf,
        /// Soft landmark constraints (sources and targets in uv).
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long, default_value_t = 1e4)]
        landmark_weight: f64,
    },
    /// Mean curvature of a surface, written per vertex and as an image
    /// over its disk coordinates.
    Curvature {
        #[arg(long)]
        disk: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long)]
        image_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Trace landmark curves along curvature valleys between endpoints.
    Detect {
        #[arg(long)]
        disk: PathBuf,
        /// Curve start as `x,y` in uv; repeat once per curve.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: Vec<Point2>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        end: Vec<Point2>,
        /// Landmark file whose curve points become the targets, curve by
        /// curve; without it each target equals its source.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Register a disk so its landmarks reach their targets.
    Register {
        #[arg(long)]
        disk: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mu: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Low-pass a Beltrami coefficient through the square grid.
    Compress {
        #[arg(long)]
        disk: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        keep: usize,
        #[arg(long)]
        out: PathBuf,
        /// Kept spectrum, raw little-endian binary.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Generate synthetic data: a distorted disk with landmarks, or with
    /// `--brain` a folded hemisphere and its valley endpoints.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        amplitude: f64,
        #[arg(long, default_value_t = 4)]
        cutoff: usize,
        #[arg(long, default_value_t = 40)]
        rings: usize,
        #[arg(long)]
        rotation: bool,
        /// Number of valleys of a synthetic brain (1 to 6).
        #[arg(long)]
        brain: Option<usize>,
        #[arg(long)]
        out_prefix: String,
    },
    /// Register subjects onto a control surface.
    Pipeline {
        #[arg(long)]
        control: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        subjects: Vec<PathBuf>,
        #[arg(long)]
        endpoints: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Summary table as CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[command(flatten)]
        weights: WeightArgs,
    },
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.parse().map_err(|e| format!("bad x in {s:?}: {e}"))?;
            let y: f64 = y.parse().map_err(|e| format!("bad y in {s:?}: {e}"))?;
            Ok([x, y])
        }
        _ => Err(format!("expected x,y, got {s:?}")),
    }
}

fn save(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parameterize(input: &Path, out: &Path, report: Option<&Path>, max_iter: usize, tol: f64) -> Result<()> {
    let mesh = load_mesh(input)?;
    let param = disk_conformal_parameterize(&mesh, max_iter, tol)?;
    write_planar_obj(&param.planar, out)?;
    if let Some(r) = report {
        write_report(
            &Envelope::new("parameterization", None, ParamDiagnostics::of(&param)),
            r,
        )?;
    }
    println!(
        "mean |mu| {:.4e}, max |mu| {:.4e}, {} iterations{}",
        param.mean_mu(),
        param.max_mu(),
        param.history.len() - 1,
        if param.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn lbs(mesh: &Path, mu: &Path, bc: Bc, out: &Path, landmarks: Option<&Path>, weight: f64) -> Result<()> {
    let disk = load_planar(mesh)?;
    let mu = BeltramiField::read_csv(mu)?;
    let bc = match bc {
        Bc::Circle => {
            let pin = disk.base.boundary()[0];
            BoundaryCondition::circle(pin, disk.uv[pin])
        }
        Bc::Fixed => BoundaryCondition::identity(&disk),
    };
    let lm = match landmarks {
        Some(p) => {
            let set = LandmarkSet::read(p)?;
            Some(LandmarkConstraints::new(&disk, &set.sources(), &set.targets(), weight)?)
        }
        None => None,
    };
    let sol = LbsSolver::new(&disk)?.solve(&mu, &bc, lm.as_ref())?;
    write_planar_obj(&disk.with_uv(sol.uv)?, out)?;
    if !sol.flipped.is_empty() {
        bail!(
            "map folds {} faces; written anyway to {}",
            sol.flipped.len(),
            out.display()
        );
    }
    println!("fold-free map written to {}", out.display());
    Ok(())
}

fn curvature(disk: &Path, csv: Option<&Path>, pgm: Option<&Path>, image_csv: Option<&Path>, size: usize) -> Result<()> {
    let disk = load_planar(disk)?;
    let h = mean_curvature(&disk.base)?;
    if let Some(p) = csv {
        save(p, h.to_csv())?;
    }
    if pgm.is_some() || image_csv.is_some() {
        let img = curvature_image(&disk, &h, size)?;
        if let Some(p) = pgm {
            img.write_pgm(p)?;
        }
        if let Some(p) = image_csv {
            img.write_csv(p)?;
        }
    }
    let (lo, hi) =
        h.h.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &x| (l.min(x), u.max(x)));
    println!("H in [{lo:.4e}, {hi:.4e}] over {} vertices", h.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn detect(
    disk: &Path,
    start: &[Point2],
    end: &[Point2],
    targets: Option<&Path>,
    out: &Path,
    samples: usize,
    epsilon: f64,
) -> Result<()> {
    if start.len() != end.len() {
        bail!("{} --start but {} --end", start.len(), end.len());
    }
    let disk = load_planar(disk)?;
    let h = mean_curvature(&disk.base)?;
    let targets = targets.map(LandmarkSet::read).transpose()?;
    if let Some(t) = &targets {
        if t.len() != start.len() {
            bail!("target file has {} curves for {} endpoint pairs", t.len(), start.len());
        }
    }
    let mut curves = Vec::new();
    for (k, (&a, &b)) in start.iter().zip(end).enumerate() {
        let found = detect_landmark_curve(&disk, &h, a, b, DetectionWeights { epsilon })?;
        let source = resample_curve(&found.points, samples)?;
        let (id, target) = match &targets {
            Some(t) => {
                let c = &t.curves[k];
                (c.id.clone(), resample_curve(&c.target, samples)?)
            }
            None => (format!("c{k}"), source.clone()),
        };
        println!(
            "curve {id}: {} vertices, cost {:.4e}, snapped {:.2e} / {:.2e}",
            found.vertices.len(),
            found.cost,
            found.snap_distances[0],
            found.snap_distances[1]
        );
        let mut curve = LandmarkCurve::new(id, source, target)?;
        curve.endpoints = Some((a, b));
        curves.push(curve);
    }
    LandmarkSet::new(curves)?.write(out)?;
    Ok(())
}

fn register_cmd(
    disk: &Path,
    landmarks: &Path,
    params: RegistrationParams,
    out: &Path,
    mu: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let disk = load_planar(disk)?;
    let lm = LandmarkSet::read(landmarks)?;
    let result = register(&disk, &lm, &params)?;
    write_planar_obj(&result.map, out)?;
    if let Some(p) = mu {
        result.mu.write_csv(p)?;
    }
    let record = MetricsRecord::from_result(&result);
    if let Some(p) = report {
        write_report(&Envelope::new("registration", None, &record), p)?;
    }
    println!(
        "landmark RMSE {:.4e}, mean |mu| {:.4e}, SD {:.4e}, {} iterations, {:.2} s{}",
        record.landmark_rmse,
        record.mean_mu,
        record.sd_mu,
        record.loss_trace.len() - 1,
        record.wall_time,
        if record.converged { "" } else { " (not converged)" }
    );
    if !record.infeasible_pairs.is_empty() {
        eprintln!(
            "warning: {} landmark pairs share a target",
            record.infeasible_pairs.len()
        );
    }
    Ok(())
}

fn compress(disk: &Path, mu: &Path, grid: usize, keep: usize, out: &Path, spectrum: Option<&Path>) -> Result<()> {
    let disk = load_planar(disk)?;
    let mu = BeltramiField::read_csv(mu)?;
    let field = mu_to_grid(&disk, &mu, grid)?;
    let kept = lowpass(&dft2(&field), keep)?;
    let rec = idft2(&kept);
    grid_to_mu(&rec, &disk)?.write_csv(out)?;
    if let Some(p) = spectrum {
        save(p, kept.to_bytes())?;
    }
    println!(
        "grid {grid}, kept |k| < {keep}: relative L2 error {:.4e}",
        relative_l2_error(&rec, &field)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    seed: u64,
    amplitude: f64,
    cutoff: usize,
    rings: usize,
    rotation: bool,
    brain: Option<usize>,
    prefix: &str,
) -> Result<()> {
    let file = |suffix: &str| PathBuf::from(format!("{prefix}{suffix}"));
    if let Some(bumps) = brain {
        let b = synthetic_brain_with(&BrainConfig {
            seed,
            bumps,
            rings,
            ..Default::default()
        })?;
        write_off(&b.mesh, file("_brain.off"))?;
        // Endpoints in the brain's own disk coordinates.
        let param = disk_conformal_parameterize(&b.mesh, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        let nearest = |q: [f64; 3]| {
            let d = |v: usize| {
                let p = b.mesh.vertices()[v];
                (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()
            };
            let v = (0..b.mesh.vertex_count())
                .min_by(|&x, &y| d(x).total_cmp(&d(y)))
                .expect("mesh has vertices");
            param.planar.uv[v]
        };
        let ends: Vec<(Point2, Point2)> = b
            .valley_endpoints()
            .into_iter()
            .map(|(a, c)| (nearest(a), nearest(c)))
            .collect();
        save(&file("_endpoints.txt"), endpoints_to_text(&ends))?;
        println!(
            "brain with {bumps} valleys: {}_brain.off, {}_endpoints.txt",
            prefix, prefix
        );
        return Ok(());
    }
    let cfg = SynthConfig {
        rotation,
        ..SynthConfig::new(seed, amplitude, cutoff)
    };
    let pair = registration_pair_with(&cfg, rings)?;
    write_planar_obj(&pair.template, file("_template.obj"))?;
    write_planar_obj(&pair.moving, file("_moving.obj"))?;
    pair.mu.write_csv(file("_mu.csv"))?;
    pair.landmarks.write(file("_landmarks.txt"))?;
    println!(
        "{prefix}_moving.obj ({} vertices), {prefix}_mu.csv (max |mu| {:.3}), {prefix}_landmarks.txt ({} points)",
        pair.moving.vertex_count(),
        pair.mu.max_modulus(),
        pair.landmarks.point_count()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pipeline(
    control: &Path,
    subjects: &[PathBuf],
    endpoints: &Path,
    workdir: &Path,
    report: &Path,
    summary: Option<&Path>,
    opts: PipelineOptions,
) -> Result<bool> {
    let control = load_mesh(control)?;
    let ends = qcreg::landmark::read_endpoints(endpoints)?;
    let inputs = subjects.iter().map(|p| SubjectInput::load(p)).collect();
    std::fs::create_dir_all(workdir).with_context(|| format!("creating {}", workdir.display()))?;
    let r = run_batch(&control, inputs, &ends, &opts, Some(workdir))?;
    r.write(report)?;
    for s in &r.subjects {
        match (&s.report, &s.error) {
            (Some(rep), _) => println!(
                "{}: RMSE {:.4e}, mean |mu| {:.4e}, {:.2} s",
                s.id, rep.registration.landmark_rmse, rep.registration.mean_mu, rep.wall_time
            ),
            (None, Some(e)) => println!("{}: failed: {e}", s.id),
            (None, None) => {}
        }
    }
    let Some(agg) = &r.aggregate else {
        eprintln!("no subject finished");
        return Ok(false);
    };
    if let Some(p) = summary {
        save(p, table_csv(&[agg.table_row("qcreg")]))?;
    }
    println!(
        "{} subjects ({} failed): mean |mu| {:.4e} (SD {:.4e}), landmark error {:.4e} (SD {:.4e})",
        agg.subjects + agg.failed,
        agg.failed,
        agg.mean_mu,
        agg.sd_mu,
        agg.landmark_error,
        agg.sd_landmark_error
    );
    Ok(agg.failed == 0)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Parameterize {
            input,
            out,
            report,
            max_iter,
            tol,
        } => parameterize(&input, &out, report.as_deref(), max_iter, tol)?,
        Command::Lbs {
            mesh,
            mu,
            bc,
            out,
            landmarks,
            landmark_weight,
        } => lbs(&mesh, &mu, bc, &out, landmarks.as_deref(), landmark_weight)?,
        Command::Curvature {
            disk,
            csv,
            pgm,
            image_csv,
            size,
        } => curvature(&disk, csv.as_deref(), pgm.as_deref(), image_csv.as_deref(), size)?,
        Command::Detect {
            disk,
            start,
            end,
            targets,
            out,
            samples,
            epsilon,
        } => detect(&disk, &start, &end, targets.as_deref(), &out, samples, epsilon)?,
        Command::Register {
            disk,
            landmarks,
            weights,
            out,
            mu,
            report,
        } => register_cmd(
            &disk,
            &landmarks,
            weights.params(),
            &out,
            mu.as_deref(),
            report.as_deref(),
        )?,
        Command::Compress {
            disk,
            mu,
            grid,
            keep,
            out,
            spectrum,
        } => compress(&disk, &mu, grid, keep, &out, spectrum.as_deref())?,
        Command::Synth {
            seed,
            amplitude,
            cutoff,
            rings,
            rotation,
            brain,
            out_prefix,
        } => synth(seed, amplitude, cutoff, rings, rotation, brain, &out_prefix)?,
        Command::Pipeline {
            control,
            subjects,
            endpoints,
            workdir,
            report,
            summary,
            resume,
            threads,
            samples,
            weights,
        } => {
            let opts = PipelineOptions {
                registration: weights.params(),
                samples,
                resume,
                threads,
                ..Default::default()
            };
            return pipeline(
                &control,
                &subjects,
                &endpoints,
                &workdir,
                &report,
                summary.as_deref(),
                opts,
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
