//! Orchestration: metric and curvature, seed, regions, per-region iteration and patching,
//! development, verification. Each stage writes its artifacts to the run directory before the
//! next one starts, and the report is written whether or not a stage fails.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::config::{MetricInput, RunConfig};
use crate::embed::{DevelopOptions, EmbeddingMesh, assemble_embedding, develop, export_mesh, flat_metric, write_error_csv};
use crate::error::{Error, Result};
use crate::grid::{Accuracy, Grid, ScalarField};
use crate::jet::{Jet, PolyJet};
use crate::metric::{
    ClosedMetric, GeometryCache, MetricField, MetricSource, PointGeometry, christoffel, pullback_jets, z_points,
};
use crate::nash_moser::{NeighborhoodSolution, RegionOptions, Schedule, global_value, init_schedule, solve_regions};
use crate::regions::{RegionDecomposition, SectorInfo, SectorKind, SectorSetup, ZeroSetOptions, decompose};
use crate::seed::{MetricJet, build_z0, residual_decay_order, taylor_metric, taylor_metric_sampled};
use crate::sparse::{CsrBuilder, solve as sparse_solve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Curvature,
    Seed,
    Regions,
    Solve,
    Develop,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Curvature, Stage::Seed, Stage::Regions, Stage::Solve, Stage::Develop, Stage::Verify];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Curvature => "curvature",
            Stage::Seed => "seed",
            Stage::Regions => "regions",
            Stage::Solve => "solve",
            Stage::Develop => "develop",
            Stage::Verify => "verify",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// How the neighbourhood is solved, from the curvature at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolvePath {
    /// `K(0) = 0` with two transversal zero curves: four sectors.
    Mixed,
    /// `K(0) > 0`: one elliptic region solved on the whole chart.
    Elliptic,
    /// `K = 0` on the chart: the seed already solves the equation.
    Flat,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureSummary {
    pub nodes: usize,
    pub chart: f64,
    pub k_origin: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub vanishing_order: i32,
    /// `N` passed to the schedule.
    pub n_used: i64,
    pub path: SolvePath,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    /// Chart rotation of the seed: original `y = R(rotation) ybar`.
    pub rotation: f64,
    pub degree: usize,
    /// Fitted `sup_{|y| = r} |Phi(z0)|` slope and its target `m_star - 1`.
    pub decay_slope: Option<f64>,
    pub decay_target: Option<i64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionSummary {
    pub path: SolvePath,
    pub crossing_angle: Option<f64>,
    pub sectors: Vec<SectorInfo>,
    /// Nodes per sector axis.
    pub sector_nodes: usize,
    /// Half-width, in `y`, of the square chart that is solved and embedded.
    pub embed_half_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionVerdict {
    pub label: String,
    pub initial: f64,
    pub best: f64,
    pub reduction: f64,
    pub iterations: usize,
    pub best_step: usize,
    pub converged: bool,
    pub diverged: bool,
    pub max_identity: f64,
    pub theta: Vec<f64>,
    pub phi_l2: Vec<f64>,
    pub theta_nonincreasing_after_2: bool,
    pub phi_l2_nonincreasing: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbeddingSummary {
    pub nodes: usize,
    pub h: f64,
    pub max_grad: f64,
    pub max_k_h: f64,
    pub loop_defect: f64,
    pub max_error: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// Informational checks do not fail the run.
    pub required: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub requested_stage: Stage,
    pub completed: Vec<Stage>,
    pub failure: Option<Failure>,
    /// Every input and tolerance of the run.
    pub config: RunConfig,
    pub schedule: Option<Schedule>,
    pub schedule_warnings: Vec<String>,
    pub curvature: Option<CurvatureSummary>,
    pub seed: Option<SeedSummary>,
    pub regions: Option<RegionSummary>,
    pub convergence: Vec<RegionVerdict>,
    pub interfaces: Option<crate::nash_moser::PatchReport>,
    pub embedding: Option<EmbeddingSummary>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Seconds per stage; the only field that differs between identical runs.
    pub timings: BTreeMap<String, f64>,
}

/// Result of `run_pipeline`: the report (also written as `report.json`) and the first stage error.
pub struct PipelineRun {
    pub report: RunReport,
    pub dir: PathBuf,
    pub error: Option<Error>,
}

impl PipelineRun {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, Error::exit_code)
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    report: RunReport,
    metric: MetricInput,
    k0: f64,
    path: SolvePath,
    sched: Option<Schedule>,
    rotation: f64,
    decomposition: Option<RegionDecomposition>,
    z0: Option<PolyJet>,
    setups: Vec<SectorSetup>,
    embed_grid: Option<Grid>,
    solution: Option<NeighborhoodSolution>,
    z: Option<ScalarField>,
    mesh: Option<EmbeddingMesh>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Smallest singular value of a 2x2 matrix.
fn min_singular(m: [[f64; 2]; 2]) -> f64 {
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let c = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let t = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (t - d).max(0.0).sqrt()
}

fn transpose(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

/// Non-increasing up to a relative slack of `1e-12`.
fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

/// Run every stage up to `stage`, writing artifacts under `<output.dir>/<config hash>/`.
///
/// `Err` only when the run directory cannot be set up; stage failures are returned in
/// `PipelineRun::error` with the stage tag, after the report has been written.
pub fn run_pipeline(cfg: &RunConfig, stage: Stage) -> Result<PipelineRun> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let dir = cfg.output.dir.join(&hash);
    std::fs::create_dir_all(&dir)?;
    let metric = cfg.metric()?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: hash,
        requested_stage: stage,
        completed: vec![],
        failure: None,
        config: cfg.clone(),
        schedule: None,
        schedule_warnings: vec![],
        curvature: None,
        seed: None,
        regions: None,
        convergence: vec![],
        interfaces: None,
        embedding: None,
        checks: vec![],
        warnings: vec![],
        timings: BTreeMap::new(),
    };
    let mut run = Run {
        cfg,
        dir: dir.clone(),
        report,
        metric,
        k0: 0.0,
        path: SolvePath::Mixed,
        sched: None,
        rotation: 0.0,
        decomposition: None,
        z0: None,
        setups: vec![],
        embed_grid: None,
        solution: None,
        z: None,
        mesh: None,
    };
    let mut error = None;
    for st in Stage::ALL.into_iter().filter(|s| *s <= stage) {
        info!("stage {st}");
        let t0 = Instant::now();
        let res = match st {
            Stage::Curvature => run.curvature(),
            Stage::Seed => run.seed(),
            Stage::Regions => run.regions(),
            Stage::Solve => run.solve(),
            Stage::Develop => run.develop(),
            Stage::Verify => run.verify(),
        };
        run.report.timings.insert(st.name().into(), t0.elapsed().as_secs_f64());
        match res {
            Ok(()) => run.report.completed.push(st),
            Err(e) => {
                run.report.failure = Some(Failure { stage: st, message: e.to_string(), exit_code: e.exit_code() });
                error = Some(Error::Stage { stage: st.name().into(), source: Box::new(e) });
                break;
            }
        }
    }
    let text = serde_json::to_string_pretty(&run.report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("report.json"), text + "\n")?;
    Ok(PipelineRun { report: run.report, dir, error })
}

impl Run<'_> {
    fn closed(&self, what: &str) -> Result<&ClosedMetric> {
        self.metric
            .closed()
            .ok_or_else(|| Error::Config(format!("{what} needs a closed-form metric; tabulated metrics support the curvature and seed stages")))
    }

    fn curvature(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let geo = match &self.metric {
            MetricInput::Closed(m) => GeometryCache::from_source(m, cfg.chart_grid()?, 1.0)?,
            MetricInput::Table(f) => christoffel(f),
        };
        let k = &geo.k;
        write_with(&self.dir, "curvature.dump", |w| k.write_dump(w))?;
        let (i0, j0) = k.grid.origin_index();
        let k0 = k.at(i0, j0);
        let (k_min, k_max) = k.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
        let scale = k.max_abs();
        let path = if scale <= 1e-12 {
            SolvePath::Flat
        } else if k0.abs() <= 1e-6 * scale {
            SolvePath::Mixed
        } else if k0 > 0.0 {
            SolvePath::Elliptic
        } else {
            return Err(Error::Topology(format!("K(0) = {k0:.3e} < 0: a purely hyperbolic neighbourhood is not supported")));
        };
        let n_used = match (cfg.schedule.n, path) {
            (Some(n), _) => n,
            (None, SolvePath::Mixed) => geo.n.max(0) as i64,
            (None, _) => 0,
        };
        let s = &cfg.schedule;
        let mut sched = init_schedule(s.m_star, n_used, s.m0, s.epsilon);
        sched.s0 = s.s0;
        sched.gamma = s.gamma.unwrap_or(2 * s.s0 + 1);
        sched.delta = s.delta;
        sched.max_iter = s.max_iter;
        sched.target = s.target;
        self.report.schedule_warnings = sched.warnings();
        self.report.schedule = Some(sched.clone());
        self.sched = Some(sched);
        self.k0 = k0;
        self.path = path;
        self.report.curvature = Some(CurvatureSummary {
            nodes: k.grid.nx,
            chart: 0.5 * (k.grid.x1 - k.grid.x0),
            k_origin: k0,
            k_min,
            k_max,
            vanishing_order: geo.n,
            n_used,
            path,
        });
        Ok(())
    }

    /// Taylor jets of the metric at the origin in the chart rotated by `r`.
    fn metric_jet(&self, r: [[f64; 2]; 2], order: usize) -> Result<MetricJet> {
        match &self.metric {
            MetricInput::Closed(m) => Ok(taylor_metric(&m.pulled_back(r), order)),
            MetricInput::Table(f) => {
                let (gj, _) = taylor_metric_sampled([&f.g11, &f.g12, &f.g22], order, None)?;
                Ok(MetricJet { g: pullback_jets(r, &gj.g[0], &gj.g[1], &gj.g[2]) })
            }
        }
    }

    fn seed(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let m_star = cfg.schedule.m_star as usize;
        let mut decay = None;
        let z0 = match self.path {
            SolvePath::Mixed => {
                let k = match &self.metric {
                    MetricInput::Closed(m) => {
                        let p = cfg.solver.probe;
                        ScalarField::from_fn(Grid::square(1.0, 129)?, |x, y| PointGeometry::from_jets(&m.jets(p * x, p * y, 2)).k())
                    }
                    MetricInput::Table(f) => christoffel(f).k,
                };
                let d = decompose(&k, &ZeroSetOptions::default())?;
                self.rotation = d.rotation;
                let r = d.rotation_matrix();
                self.decomposition = Some(d);
                let z0 = build_z0(&self.metric_jet(r, m_star)?, m_star)?;
                if let MetricInput::Closed(m) = &self.metric {
                    let g = cfg.chart_grid()?;
                    let (slope, pts) = residual_decay_order(&m.pulled_back(r), &z0, g.hx, 2.0 * cfg.metric.chart);
                    write_with(&self.dir, "seed_decay.csv", |w| {
                        writeln!(w, "r,sup_phi")?;
                        for (r, s) in &pts {
                            writeln!(w, "{r:e},{s:e}")?;
                        }
                        Ok(())
                    })?;
                    decay = Some(slope);
                }
                z0
            }
            SolvePath::Elliptic => {
                // Covariant Hessian sqrt(K) g at the origin, so that det = K |g| there.
                let gj = self.metric_jet([[1.0, 0.0], [0.0, 1.0]], 2)?;
                let c = self.k0.sqrt();
                let mut z = Jet::zero(2);
                z.set(2, 0, 0.5 * c * gj.g[0].value());
                z.set(1, 1, c * gj.g[1].value());
                z.set(0, 2, 0.5 * c * gj.g[2].value());
                z
            }
            SolvePath::Flat => build_z0(&self.metric_jet([[1.0, 0.0], [0.0, 1.0]], m_star)?, m_star)?,
        };
        let table = z0.to_table();
        write_with(&self.dir, "z0.txt", |w| w.write_all(table.as_bytes()))?;
        self.report.seed = Some(SeedSummary {
            rotation: self.rotation,
            degree: z0.deg,
            decay_slope: decay,
            decay_target: decay.map(|_| cfg.schedule.m_star - 1),
        });
        self.z0 = Some(z0);
        Ok(())
    }

    fn regions(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let metric = self.closed("the regions stage")?.clone();
        let eps = cfg.schedule.epsilon;
        let sigma = cfg.solver.sigma;
        let n = cfg.metric.resolution;
        let mut smin = 1.0f64;
        let mut sectors = vec![];
        let mut angle = None;
        if let (SolvePath::Mixed, Some(d)) = (self.path, &self.decomposition) {
            let base = metric.pulled_back(d.rotation_matrix());
            let z0 = self.z0.as_ref().expect("seed stage ran");
            self.setups = d
                .sectors
                .iter()
                .map(|info| SectorSetup::with_series(&base, z0, info, sigma, n, eps, Accuracy::Fourth, cfg.solver.seed_extra))
                .collect::<Result<_>>()?;
            smin = self.setups.iter().map(|s| min_singular(s.map.m)).fold(f64::INFINITY, f64::min);
            sectors = d.sectors.clone();
            angle = Some(d.zero_set.angle);
            let json = d.to_json();
            write_with(&self.dir, "regions.json", |w| writeln!(w, "{json}"))?;
        }
        // Each sector image contains the chart disk of radius sigma * smin.
        let half = 0.9 * eps * eps * sigma * smin / std::f64::consts::SQRT_2;
        self.embed_grid = Some(Grid::square(half, n)?);
        self.report.regions = Some(RegionSummary {
            path: self.path,
            crossing_angle: angle,
            sectors,
            sector_nodes: n,
            embed_half_width: half,
        });
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let grid = self.embed_grid.expect("regions stage ran");
        let z0 = self.z0.clone().expect("seed stage ran");
        let rt = transpose(crate::regions::rotation_matrix(self.rotation));
        // Seed in the original chart: y_rot = R^T y.
        let z0o = z0.compose_linear(rt);
        let seed = ScalarField::from_fn(grid, |u, v| z0o.eval(u, v));
        let z = match self.path {
            SolvePath::Mixed => {
                let sched = self.sched.as_ref().expect("curvature stage ran");
                let v = &cfg.solver;
                let opts = RegionOptions {
                    nr: v.polar_nr,
                    nt: v.polar_nt,
                    s0: cfg.schedule.s0 as usize,
                    margin: v.margin,
                    cutoff_frac: v.cutoff_frac,
                    identity_tol: v.identity_tol,
                    guard: v.guard,
                };
                let infos = self.decomposition.as_ref().expect("seed stage ran").sectors.clone();
                let sol = solve_regions(&self.setups, &infos, sched, opts)?;
                for r in &sol.runs {
                    write_with(&self.dir, &format!("convergence_{}.csv", r.label), |w| r.log.write_csv(w))?;
                    if r.kind == SectorKind::Hyperbolic {
                        write_with(&self.dir, &format!("layers_{}.csv", r.label), |w| r.write_layers_csv(w))?;
                    }
                    let theta: Vec<f64> = r.log.steps.iter().map(|s| s.theta).collect();
                    let phi_l2: Vec<f64> = r.log.steps.iter().map(|s| s.phi_h2).collect();
                    let best = r.log.steps.iter().map(|s| s.phi_sup).fold(r.log.initial, f64::min);
                    let reduction = r.log.reduction();
                    self.report.warnings.extend(r.warnings.iter().cloned());
                    self.report.convergence.push(RegionVerdict {
                        label: r.label.clone(),
                        initial: r.log.initial,
                        best,
                        reduction,
                        iterations: r.log.steps.len(),
                        best_step: r.best,
                        converged: !r.failed && reduction <= v.reduction,
                        diverged: r.failed,
                        max_identity: r.log.steps.iter().map(|s| s.identity).fold(0.0, f64::max),
                        theta_nonincreasing_after_2: non_increasing(theta.get(2..).unwrap_or(&[])),
                        phi_l2_nonincreasing: non_increasing(&phi_l2),
                        theta,
                        phi_l2,
                        warnings: r.warnings.clone(),
                    });
                }
                write_with(&self.dir, "interfaces.csv", |w| sol.patch.write_csv(w))?;
                self.report.interfaces = Some(sol.patch.clone());
                let e2 = sched.eps * sched.eps;
                let e5 = e2 * e2 * sched.eps;
                let z = ScalarField::from_fn(grid, |u, v| {
                    let y = [rt[0][0] * u + rt[0][1] * v, rt[1][0] * u + rt[1][1] * v];
                    e5 * global_value(&sol.runs, &infos, [y[0] / e2, y[1] / e2])
                })
                .add(&seed);
                let patch = sol.patch.clone();
                self.solution = Some(sol);
                self.z = Some(z);
                patch.check(v.patch_c)?;
                write_with(&self.dir, "z.dump", |w| self.z.as_ref().expect("set").write_dump(w))?;
                return Ok(());
            }
            SolvePath::Elliptic => {
                let metric = self.closed("the solve stage")?;
                let nr = newton_elliptic(metric, seed, cfg.solver.newton_tol, cfg.solver.newton_max_iter)?;
                write_with(&self.dir, "convergence_E.csv", |w| {
                    writeln!(w, "n,phi_sup,step_sup")?;
                    for (n, p, s) in &nr.log {
                        writeln!(w, "{n},{p:e},{s:e}")?;
                    }
                    Ok(())
                })?;
                let initial = nr.log.first().map_or(0.0, |r| r.1);
                let best = nr.log.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
                self.report.convergence.push(RegionVerdict {
                    label: "E".into(),
                    initial,
                    best,
                    reduction: if initial > 0.0 { best / initial } else { 0.0 },
                    iterations: nr.log.len().saturating_sub(1),
                    best_step: nr.log.len().saturating_sub(1),
                    converged: nr.converged,
                    diverged: false,
                    max_identity: 0.0,
                    theta: vec![],
                    phi_l2: vec![],
                    theta_nonincreasing_after_2: true,
                    phi_l2_nonincreasing: true,
                    warnings: vec![],
                });
                nr.z
            }
            SolvePath::Flat => {
                let metric = self.closed("the solve stage")?;
                let geo = GeometryCache::from_source(metric, grid, 1.0)?;
                let zp = z_points(&seed, 1.0, Accuracy::Fourth);
                let phi = geo.points.iter().zip(&zp).map(|(g, z)| g.phi(z).abs()).fold(0.0, f64::max);
                self.report.convergence.push(RegionVerdict {
                    label: "flat".into(),
                    initial: phi,
                    best: phi,
                    reduction: 1.0,
                    iterations: 0,
                    best_step: 0,
                    converged: phi <= cfg.solver.flat_residual_tol,
                    diverged: false,
                    max_identity: 0.0,
                    theta: vec![],
                    phi_l2: vec![],
                    theta_nonincreasing_after_2: true,
                    phi_l2_nonincreasing: true,
                    warnings: vec![],
                });
                seed
            }
        };
        write_with(&self.dir, "z.dump", |w| z.write_dump(w))?;
        self.z = Some(z);
        Ok(())
    }

    fn develop(&mut self) -> Result<()> {
        let metric = self.closed("the develop stage")?;
        let z = self.z.as_ref().expect("solve stage ran");
        let g = MetricField::sample(metric, z.grid, 1.0)?;
        let (mesh, summary) = embed_height(&g, z, self.cfg.solver.flatness_tol)?;
        write_with(&self.dir, "mesh.obj", |w| export_mesh(&mesh, w))?;
        write_with(&self.dir, "isometry_error.csv", |w| write_error_csv(&mesh, w))?;
        self.report.embedding = Some(summary);
        self.mesh = Some(mesh);
        Ok(())
    }

    fn verify(&mut self) -> Result<()> {
        let v = &self.cfg.solver;
        let mut checks = vec![];
        let mut push = |name: String, value: f64, bound: f64, required: bool| {
            checks.push(Check { name, value, bound, pass: value <= bound, required });
        };
        for r in &self.report.convergence {
            if self.path == SolvePath::Flat {
                push("seed residual".into(), r.best, v.flat_residual_tol, true);
                continue;
            }
            push(format!("reduction {}", r.label), r.reduction, v.reduction, true);
            if self.path == SolvePath::Mixed {
                push(format!("identity {}", r.label), r.max_identity, v.identity_tol, true);
                push(format!("theta non-increasing after n = 2 {}", r.label), if r.theta_nonincreasing_after_2 { 0.0 } else { 1.0 }, 0.0, false);
                push(format!("phi l2 non-increasing {}", r.label), if r.phi_l2_nonincreasing { 0.0 } else { 1.0 }, 0.0, false);
            }
        }
        if let Some(p) = &self.report.interfaces {
            for j in &p.interfaces {
                push(format!("value jump {} ({}|{})", j.curve, j.sides[0], j.sides[1]), j.value_jump, v.patch_c * p.h * p.h, true);
                push(format!("gradient jump {} ({}|{})", j.curve, j.sides[0], j.sides[1]), j.grad_jump, v.patch_c * p.h, true);
            }
        }
        if let Some(e) = &self.report.embedding {
            push("isometry".into(), e.rel_error, v.isometry_tol, true);
        }
        if let (Some(f), Some(mesh)) = (&self.cfg.metric.graph, &self.mesh) {
            // Reconstruction alone: the exact height of a graph metric.
            let fe = crate::expr::parse(f)?;
            let grid = mesh.grid;
            let z = ScalarField::from_fn(grid, |u, w| fe.eval(u, w));
            let g = MetricField::sample(self.closed("verify")?, grid, 1.0)?;
            let (_, s) = embed_height(&g, &z, v.flatness_tol)?;
            push("exact height isometry".into(), s.rel_error, v.exact_c * grid.hx * grid.hx, true);
        }
        let failed: Vec<String> = checks.iter().filter(|c| c.required && !c.pass).map(|c| c.name.clone()).collect();
        self.report.checks = checks;
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Verify(failed.join(", ")))
        }
    }
}

/// `h = g - dz^2`, its development and the mesh `(x, y, z)`.
pub fn embed_height(g: &MetricField, z: &ScalarField, flatness_tol: f64) -> Result<(EmbeddingMesh, EmbeddingSummary)> {
    let fc = flat_metric(g, z, Accuracy::Fourth)?;
    let d = develop(&fc.h, DevelopOptions { k_tol: flatness_tol, acc: Accuracy::Fourth })?;
    let mesh = assemble_embedding(&d.x, &d.y, z, g)?;
    let s = EmbeddingSummary {
        nodes: z.grid.nx,
        h: z.grid.hx,
        max_grad: fc.max_grad,
        max_k_h: fc.max_k,
        loop_defect: d.loop_defect,
        max_error: mesh.max_error,
        rel_error: mesh.rel_error,
    };
    Ok((mesh, s))
}

/// Newton iterates of the elliptic solve: `(iteration, sup |Phi|, sup |step|)`.
pub struct NewtonRun {
    pub z: ScalarField,
    pub log: Vec<(usize, f64, f64)>,
    pub converged: bool,
}

/// Solve `Phi(z) = 0` on the chart by Newton's method with second-order differences, keeping the
/// boundary values of `z`. Every linearization must be elliptic on the interior.
pub fn newton_elliptic(metric: &ClosedMetric, mut z: ScalarField, tol: f64, max_iter: usize) -> Result<NewtonRun> {
    let grid = z.grid;
    let geo = GeometryCache::from_source(metric, grid, 1.0)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let interior = |k: usize| {
        let (i, j) = (k % nx, k / nx);
        i > 0 && j > 0 && i + 1 < nx && j + 1 < ny
    };
    let scale = geo.r1212.max_abs().max(f64::MIN_POSITIVE);
    let mut log = vec![];
    let mut converged = false;
    for it in 0..=max_iter {
        let zp = z_points(&z, 1.0, Accuracy::Second);
        let phi: Vec<f64> = (0..grid.len()).map(|k| if interior(k) { geo.points[k].phi(&zp[k]) } else { 0.0 }).collect();
        let sup = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if sup <= tol * scale {
            log.push((it, sup, 0.0));
            converged = true;
            break;
        }
        if it == max_iter {
            log.push((it, sup, 0.0));
            break;
        }
        let (hx, hy) = (grid.hx, grid.hy);
        let mut b = CsrBuilder::new(grid.len());
        let mut rhs = vec![0.0; grid.len()];
        for k in 0..grid.len() {
            if !interior(k) {
                b.add(k, 1.0);
                b.end_row();
                continue;
            }
            let c = geo.points[k].lin_coeffs(&zp[k], 1.0);
            if c.a11 * c.a22 - c.a12 * c.a12 <= 0.0 || c.a11 <= 0.0 {
                let (x, y) = grid.point(k);
                return Err(Error::Consistency(format!("linearization is not elliptic at ({x:.4e}, {y:.4e})")));
            }
            let (ax, ay, axy) = (c.a11 / (hx * hx), c.a22 / (hy * hy), 2.0 * c.a12 / (4.0 * hx * hy));
            b.add(k, -2.0 * ax - 2.0 * ay);
            b.add(k + 1, ax + c.a1 / (2.0 * hx));
            b.add(k - 1, ax - c.a1 / (2.0 * hx));
            b.add(k + nx, ay + c.a2 / (2.0 * hy));
            b.add(k - nx, ay - c.a2 / (2.0 * hy));
            b.add(k + nx + 1, axy);
            b.add(k - nx - 1, axy);
            b.add(k + nx - 1, -axy);
            b.add(k - nx + 1, -axy);
            b.end_row();
            rhs[k] = -phi[k];
        }
        let (du, _) = sparse_solve(&b.finish(), &rhs, 1e-12)?;
        let step = du.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        log.push((it, sup, step));
        for (zk, d) in z.data.iter_mut().zip(du) {
            *zk += d;
        }
    }
    Ok(NewtonRun { z, log, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(metric: &str, n: usize, dir: &Path) -> RunConfig {
        let mut c = RunConfig::parse(&format!("[metric]\n{metric}\nresolution = {n}\n")).unwrap();
        c.output.dir = dir.to_path_buf();
        c
    }

    fn strip_timings(p: &Path) -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("bogus".parse::<Stage>().unwrap_err().exit_code(), 2);
        assert!(Stage::Curvature < Stage::Verify);
    }

    #[test]
    fn min_singular_value() {
        assert!((min_singular([[2.0, 0.0], [0.0, 0.5]]) - 0.5).abs() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((min_singular([[s, -s], [s, s]]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_metric_is_a_trivial_solve() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg("g11 = \"1\"\ng12 = \"0\"\ng22 = \"1\"", 33, tmp.path());
        let run = run_pipeline(&c, Stage::Verify).unwrap();
        assert!(run.error.is_none(), "{:?}", run.error);
        let r = &run.report;
        assert_eq!(r.curvature.as_ref().unwrap().path, SolvePath::Flat);
        let e = r.embedding.as_ref().unwrap();
        // z0 = u^2 / 2 is exact; what is left is the O(h^2) development and differencing error.
        assert!(e.rel_error <= 10.0 * e.h * e.h, "{} vs h = {}", e.rel_error, e.h);
        assert_eq!(r.completed.len(), 6);
        for f in ["report.json", "mesh.obj", "isometry_error.csv", "z0.txt", "curvature.dump", "z.dump"] {
            assert!(run.dir.join(f).exists(), "{f}");
        }
    }

    #[test]
    fn sphere_cap_takes_the_elliptic_path() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg("g11 = \"1\"\ng12 = \"0\"\ng22 = \"cos(u)^2\"", 33, tmp.path());
        let run = run_pipeline(&c, Stage::Verify).unwrap();
        assert!(run.error.is_none(), "{:?}", run.error);
        let r = &run.report;
        assert_eq!(r.curvature.as_ref().unwrap().path, SolvePath::Elliptic);
        assert!(r.regions.as_ref().unwrap().sectors.is_empty());
        assert!(r.convergence[0].converged);
        assert!(r.embedding.as_ref().unwrap().rel_error < 1e-2);
    }

    #[test]
    fn hyperbolic_origin_is_unsupported_topology() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg("graph = \"u*v\"", 33, tmp.path());
        let run = run_pipeline(&c, Stage::Verify).unwrap();
        assert_eq!(run.exit_code(), 3);
        let f = run.report.failure.as_ref().unwrap();
        assert_eq!(f.stage, Stage::Curvature);
        assert!(run.dir.join("report.json").exists());
        // The curvature field is written before the topology check.
        assert!(run.dir.join("curvature.dump").exists());
    }

    #[test]
    fn stage_selector_stops_early_and_runs_are_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg("graph = \"u^2/2 + u*v^3/6\"", 33, tmp.path());
        let a = run_pipeline(&c, Stage::Regions).unwrap();
        assert!(a.error.is_none(), "{:?}", a.error);
        assert_eq!(a.report.completed, vec![Stage::Curvature, Stage::Seed, Stage::Regions]);
        assert_eq!(a.report.regions.as_ref().unwrap().sectors.len(), 4);
        assert!(a.report.seed.as_ref().unwrap().decay_slope.unwrap() >= 6.5);
        assert!(!a.dir.join("mesh.obj").exists());
        let first = strip_timings(&a.dir);
        let b = run_pipeline(&c, Stage::Regions).unwrap();
        assert_eq!(first, strip_timings(&b.dir));
    }
}
