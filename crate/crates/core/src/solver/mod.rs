//! Levenberg-Marquardt minimization of the reprojection objective plus the
//! weighted baseline constraint.

mod gauge;
mod incremental;
mod linear;

pub use gauge::fix_gauge;
pub use incremental::{
    bootstrap, grow_problem, reconstruct, resect, triangulate, GrowthOutcome, Mode,
    ReconstructionReport,
};
pub use linear::{CostBreakdown, ParamBlock, ResidualCoupling};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cost::RobustLossConfig;
use crate::error::{Error, Result};
use crate::problem::RigProblem;
use crate::rig::{average_relative_pose, global_weight, per_pair_weight, RelativePose};

use linear::{evaluate_cost, linearize_problem, Layout, NormalEquations};

const MAX_DAMPING: f64 = 1e32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub gradient_tolerance: f64,
    pub parameter_tolerance: f64,
    pub cost_tolerance: f64,
    /// Damping multiplier after a rejected step.
    pub damping_increase: f64,
    /// Damping multiplier after an accepted step.
    pub damping_decrease: f64,
    pub loss: RobustLossConfig,
    pub refine_intrinsics: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-4,
            gradient_tolerance: 1e-10,
            parameter_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            damping_increase: 10.0,
            damping_decrease: 0.5,
            loss: RobustLossConfig::default(),
            refine_intrinsics: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.gradient_tolerance,
            self.parameter_tolerance,
            self.cost_tolerance,
            self.damping_increase,
            self.damping_decrease,
            self.loss.huber_delta,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("solver options must be positive".into()));
        }
        Ok(())
    }
}

/// How baseline residuals enter the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineWeighting {
    /// No baseline residuals are assembled at all.
    Disabled,
    /// Every consecutive link uses the same weight.
    Global(f64),
    /// Weight per time index; a link uses the larger weight of its two pairs.
    PerPair(BTreeMap<u32, f64>),
}

impl BaselineWeighting {
    /// Weight reported in iteration traces.
    fn summary(&self) -> f64 {
        match self {
            Self::Disabled => 0.0,
            Self::Global(w) => *w,
            Self::PerPair(m) if m.is_empty() => 0.0,
            Self::PerPair(m) => m.values().sum::<f64>() / m.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Reprojection cost at the start of the iteration.
    pub reprojection_cost: f64,
    pub baseline_cost: f64,
    pub weight: f64,
    pub total_cost: f64,
    /// Total cost of the trial point.
    pub candidate_cost: f64,
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    ParameterTolerance,
    CostTolerance,
    /// Iteration budget exhausted; parameters hold the best state found.
    MaxIterations,
    /// No free parameters to optimize.
    NothingToOptimize,
}

impl Termination {
    pub fn converged(&self) -> bool {
        !matches!(self, Self::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial: CostSummary,
    pub final_cost: CostSummary,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    pub dropped_observations: usize,
    /// Per-pair weights used by a final pass, keyed by time index.
    pub pair_weights: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub reprojection: f64,
    pub baseline: f64,
    pub weighted_baseline: f64,
    pub total: f64,
}

impl From<CostBreakdown> for CostSummary {
    fn from(c: CostBreakdown) -> Self {
        Self {
            reprojection: c.reprojection,
            baseline: c.baseline,
            weighted_baseline: c.weighted_baseline,
            total: c.total(),
        }
    }
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Global weight `lambda N_p / N_t` for the current state (zero without pairs).
pub fn current_weighting(problem: &RigProblem) -> Result<BaselineWeighting> {
    if problem.n_total_pairs() == 0 {
        return Ok(BaselineWeighting::Global(0.0));
    }
    Ok(BaselineWeighting::Global(global_weight(
        &problem.constraint_weights(),
    )?))
}

/// Minimizes reprojection error plus the globally weighted baseline cost.
pub fn solve(problem: &mut RigProblem, options: &SolverOptions) -> Result<SolveReport> {
    let weighting = current_weighting(problem)?;
    solve_with(problem, options, &weighting)
}

/// Plain bundle adjustment: no baseline residuals are assembled.
pub fn solve_unconstrained(
    problem: &mut RigProblem,
    options: &SolverOptions,
) -> Result<SolveReport> {
    solve_with(problem, options, &BaselineWeighting::Disabled)
}

/// Per-pair weights for the final pass: the average relative orientation over
/// all reconstructed pairs decides which pairs get the high weight.
pub fn final_pass_weights(problem: &RigProblem) -> Result<BTreeMap<u32, f64>> {
    let rel = problem.relative_poses();
    let poses: Vec<RelativePose> = rel.iter().map(|(_, p)| *p).collect();
    let avg = average_relative_pose(&poses)?;
    let w = problem.constraint_weights();
    Ok(rel
        .iter()
        .map(|(pair, p)| (pair.time_index, per_pair_weight(p, &avg, &w)))
        .collect())
}

/// The last adjustment over every reconstructed camera, with per-pair weights.
pub fn final_full_iteration(
    problem: &mut RigProblem,
    options: &SolverOptions,
) -> Result<SolveReport> {
    let (np, nt) = (problem.n_reconstructed_pairs(), problem.n_total_pairs());
    if np < nt || nt == 0 {
        return Err(Error::Precondition(format!(
            "final pass needs every rig pair reconstructed ({np} of {nt})"
        )));
    }
    let weights = final_pass_weights(problem)?;
    let mut report = solve_with(
        problem,
        options,
        &BaselineWeighting::PerPair(weights.clone()),
    )?;
    report.pair_weights = weights;
    Ok(report)
}

/// Objective value under the given weighting.
pub fn total_cost(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> CostBreakdown {
    evaluate_cost(problem, options, weighting)
}

/// Objective recomputed from the assembled (weighted) residual blocks, i.e.
/// `1/2 |r|^2` of the stacked residual vector the solver linearizes. Matches
/// [`total_cost`] whenever every reprojection residual is in the Huber
/// inlier region.
pub fn assembled_cost(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Result<f64> {
    let layout = Layout::new(problem, options)?;
    let lin = linearize_problem(problem, &layout, options, weighting);
    let mut c = 0.0;
    for t in &lin.obs {
        c += 0.5 * t.r.norm_squared();
    }
    for l in &lin.links {
        c += 0.5 * l.r.norm_squared();
    }
    Ok(c)
}

/// Which parameter blocks every assembled residual touches.
pub fn jacobian_structure(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Result<Vec<ResidualCoupling>> {
    let layout = Layout::new(problem, options)?;
    let lin = linearize_problem(problem, &layout, options, weighting);
    Ok(linear::coupling(&lin, &layout, problem))
}

/// Dense `J^T J` over the free parameters (camera blocks first, then
/// landmarks). Meant for inspecting small problems.
pub fn dense_normal_matrix(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Result<DMatrix<f64>> {
    let layout = Layout::new(problem, options)?;
    let lin = linearize_problem(problem, &layout, options, weighting);
    let (j, _) = linear::dense_jacobian(&lin, &layout);
    Ok(j.transpose() * j)
}

/// Dense Jacobian of the weighted residuals and the residual vector.
pub fn dense_jacobian(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Result<(DMatrix<f64>, nalgebra::DVector<f64>)> {
    let layout = Layout::new(problem, options)?;
    let lin = linearize_problem(problem, &layout, options, weighting);
    Ok(linear::dense_jacobian(&lin, &layout))
}

pub fn solve_with(
    problem: &mut RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Result<SolveReport> {
    options.validate()?;
    problem.validate()?;
    if problem.gauge.is_none() {
        fix_gauge(problem)?;
    }
    linear::place_single_view_landmarks(problem);
    let mut layout = Layout::new(problem, options)?;
    let weight_summary = weighting.summary();

    let mut cost = evaluate_cost(problem, options, weighting);
    let initial = CostSummary::from(cost);
    let mut trace = Vec::new();
    let mut mu = options.initial_damping;

    if layout.total_dim() == 0 {
        return Ok(SolveReport {
            initial,
            final_cost: initial,
            trace,
            termination: Termination::NothingToOptimize,
            dropped_observations: cost.n_dropped,
            pair_weights: BTreeMap::new(),
        });
    }

    let mut termination = Termination::MaxIterations;
    let mut needs_linearization = true;
    let mut normal: Option<NormalEquations> = None;

    'outer: while trace.len() < options.max_iterations {
        if needs_linearization {
            // the anchored-center tangent basis follows the current estimate
            layout = Layout::new(problem, options)?;
            let lin = linearize_problem(problem, &layout, options, weighting);
            let ne = NormalEquations::build(&lin, &layout);
            if ne.gradient_max_norm() <= options.gradient_tolerance {
                termination = Termination::GradientTolerance;
                break;
            }
            normal = Some(ne);
            needs_linearization = false;
        }
        let ne = normal.as_ref().expect("linearized");

        // escalate damping until the damped system is solvable
        let (dc, dl, predicted) = loop {
            match ne.solve_damped(&layout, mu) {
                Some(step) => break step,
                None => {
                    mu *= options.damping_increase;
                    if mu > MAX_DAMPING {
                        return Err(Error::NumericalFailure(
                            "normal equations stayed singular under maximal damping".into(),
                        ));
                    }
                }
            }
        };

        let step_norm =
            (dc.norm_squared() + dl.iter().map(|v| v.norm_squared()).sum::<f64>()).sqrt();
        let x_norm = layout.parameter_norm(problem);
        let candidate = layout.retract(problem, &dc, &dl);
        let new_cost = evaluate_cost(&candidate, options, weighting);
        let accepted = new_cost.total() < cost.total() && new_cost.n_dropped <= cost.n_dropped;

        trace.push(IterationRecord {
            iteration: trace.len(),
            reprojection_cost: cost.reprojection,
            baseline_cost: cost.baseline,
            weight: weight_summary,
            total_cost: cost.total(),
            candidate_cost: new_cost.total(),
            damping: mu,
            step_norm,
            accepted,
        });
        log::trace!(
            "lm iter {}: cost {:.6e} -> {:.6e} (predicted decrease {:.3e}), mu {:.1e}, accepted {}",
            trace.len(),
            cost.total(),
            new_cost.total(),
            predicted,
            mu,
            accepted
        );

        let small_step =
            step_norm <= options.parameter_tolerance * (x_norm + options.parameter_tolerance);
        if accepted {
            let decrease = cost.total() - new_cost.total();
            *problem = candidate;
            let previous = cost.total();
            cost = new_cost;
            mu = (mu * options.damping_decrease).max(1e-16);
            needs_linearization = true;
            if small_step {
                termination = Termination::ParameterTolerance;
                break 'outer;
            }
            if decrease <= options.cost_tolerance * previous {
                termination = Termination::CostTolerance;
                break 'outer;
            }
        } else {
            if small_step {
                termination = Termination::ParameterTolerance;
                break 'outer;
            }
            mu *= options.damping_increase;
            if mu > MAX_DAMPING {
                termination = Termination::ParameterTolerance;
                break 'outer;
            }
        }
    }

    if termination == Termination::MaxIterations {
        log::warn!(
            "solver stopped after {} iterations without converging",
            trace.len()
        );
    }
    Ok(SolveReport {
        initial,
        final_cost: CostSummary::from(cost),
        trace,
        termination,
        dropped_observations: cost.n_dropped,
        pair_weights: BTreeMap::new(),
    })
}
