//! The adaptive loop (solve, estimate, mark, refine), the uniform baseline
//! and empirical rate fits.

use std::cmp::Ordering;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bem::{
    assemble, energy_norm, residual_samples, solve, Density, GalerkinSystem, ProblemData,
    QuadConfig, Quadrature, ResidualTable, Rhs,
};
use crate::error::{Error, Result};
use crate::estimators::{
    eta_indicators, mu_indicators, rho_tilde_indicators, EstimatorKind, IndicatorSet, ETA_ORDER,
};
use crate::geometry::{GeometryKind, ParamCurve};
use crate::mesh::{single_mark_growth, KnotMesh};

/// Runs stop once the estimator falls below this value.
pub const ESTIMATOR_FLOOR: f64 = 1e-12;

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Adaptive,
    Uniform,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Adaptive => "adaptive",
            Mode::Uniform => "uniform",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "uniform" => Ok(Mode::Uniform),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

/// Output files written by the command line tool.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub out: Option<PathBuf>,
    pub dump_mesh: Option<PathBuf>,
    pub dump_indicators: Option<PathBuf>,
    pub dump_matrix: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub geometry: GeometryKind,
    pub p: usize,
    pub theta: f64,
    pub estimator: EstimatorKind,
    pub mode: Mode,
    pub rhs: Rhs,
    pub max_dofs: usize,
    pub max_iters: usize,
    pub quad: QuadConfig,
    /// elements of the initial mesh (per smooth piece, proportionally)
    pub n0: usize,
    /// initial NURBS weights; all one if absent
    pub weights: Option<Vec<f64>>,
    /// Gauss points per element for the residual
    pub residual_k: usize,
    /// Gauss order per direction for `eta`
    pub eta_order: usize,
    /// base of the modified mesh-size function used for `rho~`
    pub q1: f64,
    pub timing: bool,
    pub outputs: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometryKind::Slit,
            p: 0,
            theta: 0.5,
            estimator: EstimatorKind::Mu,
            mode: Mode::Adaptive,
            rhs: Rhs::One,
            max_dofs: 2000,
            max_iters: 100,
            quad: QuadConfig::default(),
            n0: 4,
            weights: None,
            residual_k: 8,
            eta_order: ETA_ORDER,
            q1: 0.9,
            timing: true,
            outputs: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if self.p > MAX_DEGREE {
            return bad(format!("degree {} exceeds {MAX_DEGREE}", self.p));
        }
        if self.max_dofs == 0 || self.max_iters == 0 {
            return bad("max-dofs and max-iters must be positive".into());
        }
        if self.quad.n == 0 || self.quad.log_n == 0 || self.eta_order == 0 {
            return bad("quadrature orders must be positive".into());
        }
        if self.residual_k < 2 {
            return bad("at least 2 residual samples per element are needed".into());
        }
        if self.n0 == 0 {
            return bad("n0 must be positive".into());
        }
        if !(self.q1 > 0.0 && self.q1 < 1.0) {
            return bad(format!("q1 must lie in (0, 1), got {}", self.q1));
        }
        if let Rhs::AbsPow(s) = self.rhs {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("abs-pow exponent must be positive, got {s}"));
            }
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad("weights must be positive".into());
            }
        }
        Ok(())
    }

    /// The initial mesh of this configuration.
    pub fn initial_mesh(&self) -> Result<KnotMesh> {
        let curve = Arc::new(ParamCurve::builtin(self.geometry));
        let mesh = KnotMesh::uniform(Arc::clone(&curve), self.p, self.n0)?;
        match &self.weights {
            None => Ok(mesh),
            Some(w) => {
                if w.len() != mesh.dofs() {
                    return Err(Error::Config(format!(
                        "expected {} weights, got {}",
                        mesh.dofs(),
                        w.len()
                    )));
                }
                KnotMesh::initial(
                    curve,
                    self.p,
                    mesh.nodes().to_vec(),
                    mesh.mults().to_vec(),
                    Some(w.clone()),
                )
            }
        }
    }

    pub fn problem(&self) -> ProblemData {
        ProblemData::builtin(self.geometry, self.rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `|K_l|`
    pub knots: usize,
    pub dofs: usize,
    pub mu: f64,
    pub eta: f64,
    /// `||phi - Phi_l||_V` if the exact energy is known
    pub energy_error: Option<f64>,
    /// `|M_l|`, zero on the last level
    pub marked: usize,
    /// mesh ratio
    pub kappa: f64,
    pub seconds: f64,
    /// `||Phi_l - Phi_{l-1}||_V`
    pub update_norm: Option<f64>,
    /// total of `rho~^2`
    pub rho_tilde_sq: f64,
}

impl IterationRecord {
    pub fn estimator(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Mu => self.mu,
            EstimatorKind::Eta => self.eta,
        }
    }
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// the estimator fell below [`ESTIMATOR_FLOOR`]
    Converged,
    /// the next mesh would exceed `max_dofs`
    MaxDofs,
    MaxIters,
    /// the next mesh would need elements below double precision resolution
    Resolution,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxDofs => "max-dofs",
            StopReason::MaxIters => "max-iters",
            StopReason::Resolution => "resolution",
        })
    }
}

/// Least-squares rate `s` and tail contraction `q` of an estimator sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub s: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    /// `|K_0|`
    pub initial_knots: usize,
    /// largest knot growth caused by marking one node of the initial mesh
    pub single_mark_growth: usize,
    pub stop: StopReason,
}

impl RunReport {
    pub fn estimates(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.estimator(self.config.estimator))
            .collect()
    }

    pub fn fit(&self) -> Result<RateFit> {
        fit_rates(self)
    }

    /// Largest observed `(|K_l| - |K_0|) / sum_{j<l} |M_j|`.
    pub fn growth_ratio(&self) -> f64 {
        let mut marked = 0;
        let mut worst: f64 = 0.0;
        for r in &self.records {
            if marked > 0 {
                worst = worst.max((r.knots - self.initial_knots) as f64 / marked as f64);
            }
            marked += r.marked;
        }
        worst
    }
}

/// `doerfler_mark`: the minimal set of nodes carrying a `theta` fraction of
/// the total. Ties are broken by ascending node parameter. Returns mesh node
/// indices in ascending order; empty if the total vanishes.
pub fn doerfler_mark(indicators: &IndicatorSet, theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::domain(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    let values = indicators.values();
    let params = indicators.params();
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(Ordering::Equal)
            .then(params[i].total_cmp(&params[j]))
    });
    let target = theta * indicators.total();
    let mut mass = 0.0;
    let mut marked = Vec::new();
    for i in order {
        if mass >= target {
            break;
        }
        mass += values[i];
        marked.push(indicators.nodes()[i]);
    }
    marked.sort_unstable();
    Ok(marked)
}

/// Least-squares slope of `(x, y)`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Rate fit on the last `max(ceil(L/2), 5)` levels of `estimates` against
/// `knots[l] - knots_0 + 1`.
pub fn fit_sequence(knots: &[usize], knots_0: usize, estimates: &[f64]) -> Result<RateFit> {
    let l = estimates.len();
    if l < 5 || knots.len() != l {
        return Err(Error::domain(format!(
            "rate fit needs at least 5 levels, got {l}"
        )));
    }
    if estimates.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::domain("rate fit needs positive estimates"));
    }
    let tail = l.div_ceil(2).max(5);
    let start = l - tail;
    let x: Vec<f64> = knots[start..]
        .iter()
        .map(|&k| ((k - knots_0) as f64 + 1.0).ln())
        .collect();
    let y: Vec<f64> = estimates[start..].iter().map(|e| e.ln()).collect();
    let s = if x.iter().all(|v| *v == x[0]) {
        0.0
    } else {
        -slope(&x, &y)
    };
    let q = (estimates[l - 1] / estimates[start]).powf(1.0 / (tail - 1) as f64);
    Ok(RateFit { s, q })
}

/// `fit_rates` for the estimator that drives the run.
pub fn fit_rates(report: &RunReport) -> Result<RateFit> {
    let knots: Vec<usize> = report.records.iter().map(|r| r.knots).collect();
    fit_sequence(&knots, report.initial_knots, &report.estimates())
}

/// Everything known about one level, handed to run observers.
pub struct Level<'a> {
    pub mesh: &'a KnotMesh,
    pub problem: &'a ProblemData,
    pub quad: &'a Quadrature,
    pub system: &'a GalerkinSystem,
    pub coeffs: &'a [f64],
    pub residual: &'a ResidualTable,
    pub mu: &'a IndicatorSet,
    pub eta: &'a IndicatorSet,
    /// nodes marked for refinement (all nodes in uniform mode)
    pub marked: &'a [usize],
    pub record: &'a IterationRecord,
}

/// Runs the configured mode from the configured initial mesh.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    run_observed(config, |_| Ok(()))
}

pub fn run_observed(
    config: &RunConfig,
    observer: impl FnMut(&Level) -> Result<()>,
) -> Result<RunReport> {
    config.validate()?;
    let mesh = config.initial_mesh()?;
    run_with(config, mesh, config.problem(), observer)
}

/// `adaptive_run`, whatever the configured mode.
pub fn adaptive_run(config: &RunConfig) -> Result<RunReport> {
    let config = RunConfig {
        mode: Mode::Adaptive,
        ..config.clone()
    };
    run(&config)
}

/// `uniform_run`, whatever the configured mode.
pub fn uniform_run(config: &RunConfig) -> Result<RunReport> {
    let config = RunConfig {
        mode: Mode::Uniform,
        ..config.clone()
    };
    run(&config)
}

/// The loop on an explicit initial mesh and problem. `config.geometry` and
/// `config.rhs` are not consulted.
pub fn run_with(
    config: &RunConfig,
    initial: KnotMesh,
    problem: ProblemData,
    mut observer: impl FnMut(&Level) -> Result<()>,
) -> Result<RunReport> {
    config.validate()?;
    let quad = Quadrature::new(config.quad)?;
    let initial_knots = initial.knot_count();
    let growth = single_mark_growth(&initial)?;
    let mut records = Vec::new();
    let mut mesh = initial;
    let mut previous: Option<Vec<f64>> = None;
    let mut stop = StopReason::MaxIters;
    for iter in 0..config.max_iters {
        let at = |e: Error| Error::AtIteration {
            iter,
            source: Box::new(e),
        };
        let clock = Instant::now();
        let system = assemble(&mesh, &problem, &quad).map_err(at)?;
        let coeffs = solve(&system).map_err(at)?;
        let density = Density::new(mesh.clone(), coeffs).map_err(at)?;
        let residual =
            residual_samples(&density, &problem, &quad, config.residual_k).map_err(at)?;
        let mu = mu_indicators(&mesh, &residual).map_err(at)?;
        let eta = eta_indicators(&mesh, &residual, config.eta_order).map_err(at)?;
        let rho_tilde =
            rho_tilde_indicators(&mesh, &residual, &mesh.tilde_h(config.q1)).map_err(at)?;
        let coeffs = density.coeffs();

        let energy_error = match problem.reference_energy() {
            Some(e) => {
                let fx = system
                    .load
                    .as_slice()
                    .iter()
                    .zip(coeffs)
                    .map(|(b, x)| b * x)
                    .sum::<f64>();
                let ax = energy_norm(coeffs, &system.matrix).map_err(at)?.powi(2);
                Some((e - 2.0 * fx + ax).max(0.0).sqrt())
            }
            None => None,
        };
        let update_norm = match &previous {
            Some(old) => {
                let diff: Vec<f64> = coeffs.iter().zip(old).map(|(a, b)| a - b).collect();
                Some(energy_norm(&diff, &system.matrix).map_err(at)?)
            }
            None => None,
        };

        let driving = match config.estimator {
            EstimatorKind::Mu => &mu,
            EstimatorKind::Eta => &eta,
        };
        let converged = driving.estimate() <= ESTIMATOR_FLOOR;
        let last_iter = iter + 1 == config.max_iters;
        let mut marked = match config.mode {
            _ if converged || last_iter => Vec::new(),
            Mode::Adaptive => doerfler_mark(driving, config.theta).map_err(at)?,
            Mode::Uniform => mesh.counted_nodes().collect(),
        };
        let mut next = None;
        if converged {
            stop = StopReason::Converged;
        } else if !marked.is_empty() {
            match mesh.refine_with(&marked, Some(coeffs)) {
                Ok((fine, _)) if fine.dofs() > config.max_dofs => stop = StopReason::MaxDofs,
                Ok(refined) => next = Some(refined),
                Err(Error::Resolution(_)) => stop = StopReason::Resolution,
                Err(e) => return Err(at(e)),
            }
            if next.is_none() {
                marked.clear();
            }
        }

        let record = IterationRecord {
            iter,
            knots: mesh.knot_count(),
            dofs: mesh.dofs(),
            mu: mu.estimate(),
            eta: eta.estimate(),
            energy_error,
            marked: marked.len(),
            kappa: mesh.mesh_ratio(),
            seconds: if config.timing {
                clock.elapsed().as_secs_f64()
            } else {
                0.0
            },
            update_norm,
            rho_tilde_sq: rho_tilde.iter().sum(),
        };
        observer(&Level {
            mesh: &mesh,
            problem: &problem,
            quad: &quad,
            system: &system,
            coeffs,
            residual: &residual,
            mu: &mu,
            eta: &eta,
            marked: &marked,
            record: &record,
        })
        .map_err(at)?;
        records.push(record);
        match next {
            Some((fine, moved)) => {
                mesh = fine;
                previous = moved;
            }
            None => break,
        }
    }
    Ok(RunReport {
        config: config.clone(),
        records,
        initial_knots,
        single_mark_growth: growth,
        stop,
    })
}
