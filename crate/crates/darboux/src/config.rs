//! Run configuration: a TOML document with `[metric]`, `[schedule]`, `[solver]` and `[output]`
//! tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::metric::{ClosedMetric, MetricField, MetricSource};

/// Metric components as expressions in `u, v`, as the graph metric of a height function, or as
/// tabulated grids (field dumps).
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub g11: Option<String>,
    pub g12: Option<String>,
    pub g22: Option<String>,
    /// `F` for the metric `du^2 + dv^2 + dF^2`.
    pub graph: Option<String>,
    pub table: Option<TableSpec>,
    /// Half-width of the square chart used for curvature diagnostics.
    #[serde(default = "default_chart")]
    pub chart: f64,
    /// Nodes per axis, odd.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub g11: PathBuf,
    pub g12: PathBuf,
    pub g22: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub epsilon: f64,
    pub m_star: i64,
    /// Overrides the measured vanishing order of `K`.
    pub n: Option<i64>,
    pub m0: i64,
    pub s0: i64,
    pub delta: f64,
    pub gamma: Option<i64>,
    pub lambda: f64,
    pub max_iter: usize,
    pub target: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epsilon: 0.05,
            m_star: 8,
            n: None,
            m0: 8,
            s0: 4,
            delta: std::f64::consts::PI / 16.0,
            gamma: None,
            lambda: 64.0,
            max_iter: 10,
            target: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Normal-form sector size in `x` units.
    pub sigma: f64,
    /// Half-width of the `[-1, 1]^2` probe grid, in `y`, for the zero set of `K`.
    pub probe: f64,
    pub seed_extra: usize,
    pub margin: f64,
    pub cutoff_frac: f64,
    pub polar_nr: usize,
    pub polar_nt: usize,
    pub identity_tol: f64,
    pub guard: f64,
    /// Required `sup |Phi|` reduction per sector.
    pub reduction: f64,
    /// Interface jumps must stay below `patch_c h^2` (value) and `patch_c h` (gradient).
    pub patch_c: f64,
    pub patch_samples: usize,
    pub flatness_tol: f64,
    pub isometry_tol: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// `sup |Phi(z0)|` allowed when `K` vanishes on the chart.
    pub flat_residual_tol: f64,
    /// Injected exact heights must embed to within `exact_c h^2`.
    pub exact_c: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            sigma: 1.0,
            probe: 0.01,
            seed_extra: 8,
            margin: 3.0,
            cutoff_frac: 1.05,
            polar_nr: 0,
            polar_nt: 0,
            identity_tol: 1e-6,
            guard: 1e-6,
            reduction: 0.1,
            patch_c: 10.0,
            patch_samples: 64,
            flatness_tol: 1e-3,
            isometry_tol: 1e-2,
            newton_tol: 1e-12,
            newton_max_iter: 20,
            flat_residual_tol: 1e-8,
            exact_c: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub metric: MetricSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_chart() -> f64 {
    0.5
}

fn default_resolution() -> usize {
    129
}

/// The metric a run works with.
pub enum MetricInput {
    Closed(ClosedMetric),
    Table(MetricField),
}

impl MetricInput {
    pub fn closed(&self) -> Option<&ClosedMetric> {
        match self {
            MetricInput::Closed(m) => Some(m),
            MetricInput::Table(_) => None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate; relative table paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Some(t) = &mut cfg.metric.table {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut t.g11, &mut t.g12, &mut t.g22] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let m = &self.metric;
        let exprs = m.g11.is_some() || m.g12.is_some() || m.g22.is_some();
        let forms = [exprs, m.graph.is_some(), m.table.is_some()].iter().filter(|b| **b).count();
        if forms != 1 {
            return bad("metric needs exactly one of g11/g12/g22, graph or table".into());
        }
        if exprs && (m.g11.is_none() || m.g12.is_none() || m.g22.is_none()) {
            return bad("metric expressions need all of g11, g12 and g22".into());
        }
        if m.resolution < 17 || m.resolution % 2 == 0 {
            return bad(format!("resolution must be odd and at least 17, got {}", m.resolution));
        }
        let s = &self.schedule;
        let v = &self.solver;
        let positive = [
            ("metric.chart", m.chart),
            ("schedule.epsilon", s.epsilon),
            ("schedule.delta", s.delta),
            ("schedule.lambda", s.lambda),
            ("schedule.target", s.target),
            ("solver.sigma", v.sigma),
            ("solver.probe", v.probe),
            ("solver.margin", v.margin),
            ("solver.cutoff_frac", v.cutoff_frac),
            ("solver.identity_tol", v.identity_tol),
            ("solver.guard", v.guard),
            ("solver.reduction", v.reduction),
            ("solver.patch_c", v.patch_c),
            ("solver.flatness_tol", v.flatness_tol),
            ("solver.isometry_tol", v.isometry_tol),
            ("solver.newton_tol", v.newton_tol),
            ("solver.exact_c", v.exact_c),
            ("solver.flat_residual_tol", v.flat_residual_tol),
        ];
        for (name, x) in positive {
            if !(x > 0.0) || !x.is_finite() {
                return bad(format!("{name} must be positive, got {x}"));
            }
        }
        if s.epsilon >= 1.0 {
            return bad(format!("schedule.epsilon must be below 1, got {}", s.epsilon));
        }
        if s.m_star < 4 || s.m0 < 1 || s.s0 < 1 || s.max_iter == 0 {
            return bad("schedule needs m_star >= 4, m0 >= 1, s0 >= 1 and max_iter >= 1".into());
        }
        if s.n.is_some_and(|n| n < 0) {
            return bad("schedule.n must be non-negative".into());
        }
        if exprs || m.graph.is_some() {
            let metric = self.closed_metric()?.expect("closed form");
            let g = metric.value(0.0, 0.0);
            if !(g[0] > 0.0 && g[0] * g[2] - g[1] * g[1] > 0.0) {
                return bad("metric is not positive definite at the origin".into());
            }
        }
        Ok(())
    }

    fn closed_metric(&self) -> Result<Option<ClosedMetric>> {
        let m = &self.metric;
        if let Some(f) = &m.graph {
            return ClosedMetric::graph(f).map(Some);
        }
        match (&m.g11, &m.g12, &m.g22) {
            (Some(a), Some(b), Some(c)) => ClosedMetric::parse(a, b, c).map(Some),
            _ => Ok(None),
        }
    }

    /// Closed-form metric, or the tabulated fields read from their dumps.
    pub fn metric(&self) -> Result<MetricInput> {
        if let Some(m) = self.closed_metric()? {
            return Ok(MetricInput::Closed(m));
        }
        let t = self.metric.table.as_ref().expect("validated");
        let read = |p: &Path| -> Result<ScalarField> {
            let bytes = std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ScalarField::read_dump(&bytes)
        };
        let f = MetricField::new(read(&t.g11)?, read(&t.g12)?, read(&t.g22)?)?;
        Ok(MetricInput::Table(f))
    }

    /// Square chart grid of the curvature stage.
    pub fn chart_grid(&self) -> Result<Grid> {
        Grid::square(self.metric.chart, self.metric.resolution)
    }

    /// Hex digest of the configuration (without the output directory) and of any table files.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let text = toml::to_string(&c).map_err(|e| Error::Config(e.to_string()))?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        if let Some(t) = &self.metric.table {
            for p in [&t.g11, &t.g12, &t.g22] {
                h.update(std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?);
            }
        }
        let d = h.finalize();
        Ok(d.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}
