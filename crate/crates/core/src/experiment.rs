//! Reproducible experiments: scene generation, reconstruction in either mode,
//! evaluation, and multi-seed comparison of the two modes.

use nalgebra::{Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::cost::RobustLossConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, improvement_percent, DriftReport};
use crate::geometry::Intrinsics;
use crate::problem::{RigProblem, RigSettings};
use crate::rig::RelativePose;
use crate::sim::{
    generate, LandmarkSpec, NoiseSpec, RigDefinition, SceneBundle, TrajectoryShape, TrajectorySpec,
};
use crate::solver::{reconstruct, Mode, ReconstructionReport, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    ClosedLoop,
    Straight,
    Arc,
}

/// Every setting of an experiment as one flat record. Lengths given in rig
/// units (`step_length`, landmark ranges, rig translation and
/// `translation_sigma`) are multiplied by `scene_scale`.
///
/// The defaults describe the drift scenario: a closed loop with 1 px pixel
/// noise and a random-walk pose perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trajectory: TrajectoryKind,
    /// Total turn of an arc trajectory (radians).
    pub arc_turn: f64,
    pub n_time_steps: u32,
    pub step_length: f64,
    pub n_landmarks: usize,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub landmark_margin: u32,
    pub layout_seed: u64,
    pub covisibility_window: u32,
    /// Conversion from rig units to scene units. The baseline residual is
    /// measured in scene units, so this also sets how strongly a given
    /// `lambda` acts on the rig translation.
    pub scene_scale: f64,
    pub rig_rotation: [f64; 3],
    pub rig_translation: [f64; 3],
    /// `[focal, cx, cy, k1, k2]` of camera A.
    pub intrinsics_a: [f64; 5],
    pub intrinsics_b: [f64; 5],
    pub image_width: f64,
    pub image_height: f64,
    pub pixel_sigma: f64,
    pub rotation_sigma: f64,
    pub translation_sigma: f64,
    pub landmark_sigma: f64,
    pub accumulate: bool,
    pub lambda: f64,
    pub lambda_low: f64,
    pub outlier_factor: f64,
    pub mode: Mode,
    pub max_iterations: usize,
    pub huber_delta: f64,
    pub refine_intrinsics: bool,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rig = RigDefinition::default();
        let [rx, ry, rz, tx, ty, tz] = rig.relative.p.into();
        Self {
            seed: 0,
            trajectory: TrajectoryKind::ClosedLoop,
            arc_turn: std::f64::consts::PI,
            n_time_steps: 40,
            step_length: 0.5,
            n_landmarks: 600,
            lateral_min: 4.0,
            lateral_max: 10.0,
            height_min: -1.5,
            height_max: 2.0,
            landmark_margin: 4,
            layout_seed: 0,
            covisibility_window: 20,
            scene_scale: 30.0,
            rig_rotation: [rx, ry, rz],
            rig_translation: [tx, ty, tz],
            intrinsics_a: rig.intrinsics[0].to_array(),
            intrinsics_b: rig.intrinsics[1].to_array(),
            image_width: rig.image_size.x,
            image_height: rig.image_size.y,
            pixel_sigma: 1.0,
            rotation_sigma: 0.005,
            translation_sigma: 0.01,
            landmark_sigma: 0.0,
            accumulate: true,
            lambda: 500.0,
            lambda_low: 250.0,
            outlier_factor: 5.0,
            mode: Mode::Constrained,
            max_iterations: 100,
            huber_delta: 1.0,
            refine_intrinsics: false,
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scene_scale > 0.0) {
            return Err(Error::Precondition("scene_scale must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda_low >= 0.0 && self.outlier_factor >= 0.0) {
            return Err(Error::Precondition(
                "constraint weights must be non-negative".into(),
            ));
        }
        self.rig_definition()?.validate()?;
        self.trajectory_spec().validate()?;
        self.noise_spec().validate()?;
        self.solver_options().validate()?;
        Ok(())
    }

    pub fn rig_definition(&self) -> Result<RigDefinition> {
        let s = self.scene_scale;
        let [rx, ry, rz] = self.rig_rotation;
        let [tx, ty, tz] = self.rig_translation;
        let k = |a: [f64; 5]| Intrinsics::new(a[0], a[1], a[2], a[3], a[4]);
        Ok(RigDefinition {
            relative: RelativePose::new(Vector6::new(rx, ry, rz, tx * s, ty * s, tz * s)),
            intrinsics: [k(self.intrinsics_a)?, k(self.intrinsics_b)?],
            image_size: Vector2::new(self.image_width, self.image_height),
        })
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec {
        TrajectorySpec {
            shape: match self.trajectory {
                TrajectoryKind::ClosedLoop => TrajectoryShape::ClosedLoop,
                TrajectoryKind::Straight => TrajectoryShape::Straight,
                TrajectoryKind::Arc => TrajectoryShape::Arc {
                    turn: self.arc_turn,
                },
            },
            n_time_steps: self.n_time_steps,
            step_length: self.step_length * self.scene_scale,
        }
    }

    pub fn landmark_spec(&self) -> LandmarkSpec {
        let s = self.scene_scale;
        LandmarkSpec {
            count: self.n_landmarks,
            lateral: (self.lateral_min * s, self.lateral_max * s),
            height: (self.height_min * s, self.height_max * s),
            margin: self.landmark_margin,
            layout_seed: self.layout_seed,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            pixel_sigma: self.pixel_sigma,
            rotation_sigma: self.rotation_sigma,
            translation_sigma: self.translation_sigma * self.scene_scale,
            landmark_sigma: self.landmark_sigma * self.scene_scale,
            accumulate: self.accumulate,
            seed: self.seed,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            loss: RobustLossConfig {
                huber_delta: self.huber_delta,
            },
            refine_intrinsics: self.refine_intrinsics,
            ..Default::default()
        }
    }

    /// Constraint settings; traditional mode forces `lambda = 0`.
    pub fn rig_settings(&self) -> RigSettings {
        RigSettings {
            lambda: if self.mode == Mode::Traditional {
                0.0
            } else {
                self.lambda
            },
            lambda_low: self.lambda_low,
            outlier_factor: self.outlier_factor,
            ..Default::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn generate_scene(&self) -> Result<SceneBundle> {
        self.validate()?;
        generate(
            &self.rig_definition()?,
            &self.trajectory_spec(),
            &self.landmark_spec(),
            self.covisibility_window,
            &self.noise_spec(),
        )
    }
}

/// Runs the incremental pipeline on `initial` with the configuration's mode,
/// constraint settings and solver options.
pub fn solve_scene(
    initial: &RigProblem,
    config: &ExperimentConfig,
) -> Result<(RigProblem, ReconstructionReport)> {
    config.validate()?;
    let mut input = initial.clone();
    input.rig = config.rig_settings();
    reconstruct(&input, config.mode, &config.solver_options())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub mode: Mode,
    pub report: Option<DriftReport>,
    pub final_reprojection_cost: Option<f64>,
    pub error: Option<String>,
}

fn run_mode(bundle: &SceneBundle, config: &ExperimentConfig, mode: Mode) -> RunResult {
    let cfg = config.with_mode(mode);
    let outcome = solve_scene(&bundle.initial, &cfg).and_then(|(solved, report)| {
        let drift = evaluate(&solved, &bundle.truth)?;
        let cost = report
            .final_report
            .as_ref()
            .or(report.steps.last().map(|s| &s.report))
            .map(|r| r.final_cost.reprojection);
        Ok((drift, cost))
    });
    match outcome {
        Ok((drift, cost)) => RunResult {
            seed: config.seed,
            mode,
            report: Some(drift),
            final_reprojection_cost: cost,
            error: None,
        },
        Err(e) => RunResult {
            seed: config.seed,
            mode,
            report: None,
            final_reprojection_cost: None,
            error: Some(e.to_string()),
        },
    }
}

/// Both modes on the scene of one seed. Failures are recorded in the rows.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> [RunResult; 2] {
    let cfg = config.with_seed(seed);
    match cfg.generate_scene() {
        Ok(bundle) => {
            let mut trad = run_mode(&bundle, &cfg, Mode::Traditional);
            let mut cons = run_mode(&bundle, &cfg, Mode::Constrained);
            if let (Some(t), Some(c)) = (&trad.report, &mut cons.report) {
                c.compare_to(t);
            }
            if let Some(t) = &mut trad.report {
                let own = t.clone();
                t.compare_to(&own);
            }
            [trad, cons]
        }
        Err(e) => [Mode::Traditional, Mode::Constrained].map(|mode| RunResult {
            seed,
            mode,
            report: None,
            final_reprojection_cost: None,
            error: Some(e.to_string()),
        }),
    }
}

/// Aggregates of one mode over all successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_absolute_distance: f64,
    pub std_deviation: f64,
    pub relative_pose_spread: f64,
    pub endpoint_drift: f64,
    pub horizontal_drift: f64,
    pub vertical_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub runs: Vec<RunResult>,
    pub traditional: ModeSummary,
    pub constrained: ModeSummary,
    /// `100 (trad - cons) / trad` of the aggregated means.
    pub mad_improvement_percent: f64,
    pub endpoint_improvement_percent: f64,
    pub spread_improvement_percent: f64,
    /// Seeds where both modes succeeded.
    pub n_paired: usize,
    pub n_lower_spread: usize,
    pub n_lower_endpoint_drift: usize,
    /// Median over paired seeds of the per-seed endpoint-drift improvement.
    pub median_endpoint_improvement_percent: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn summarize(runs: &[RunResult], mode: Mode) -> ModeSummary {
    let reports: Vec<&DriftReport> = runs
        .iter()
        .filter(|r| r.mode == mode)
        .filter_map(|r| r.report.as_ref())
        .collect();
    let pick = |f: fn(&DriftReport) -> f64| mean(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    ModeSummary {
        mode,
        n_runs: reports.len(),
        n_failed: runs
            .iter()
            .filter(|r| r.mode == mode && r.report.is_none())
            .count(),
        mean_absolute_distance: pick(|r| r.mean_absolute_distance),
        std_deviation: pick(|r| r.std_deviation),
        relative_pose_spread: pick(|r| r.relative_pose_spread.total()),
        endpoint_drift: pick(|r| r.endpoint_drift.norm),
        horizontal_drift: pick(|r| r.endpoint_drift.horizontal),
        vertical_drift: pick(|r| r.endpoint_drift.vertical),
    }
}

/// Runs both modes for every seed and aggregates them.
pub fn compare(config: &ExperimentConfig, seeds: &[u64]) -> ComparisonSummary {
    let mut runs = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        let [t, c] = run_seed(config, seed);
        for r in [&t, &c] {
            if let Some(e) = &r.error {
                log::warn!("seed {seed} {:?} failed: {e}", r.mode);
            }
        }
        runs.push(t);
        runs.push(c);
    }
    summarize_runs(runs)
}

pub fn summarize_runs(runs: Vec<RunResult>) -> ComparisonSummary {
    let traditional = summarize(&runs, Mode::Traditional);
    let constrained = summarize(&runs, Mode::Constrained);
    let mut paired = Vec::new();
    for t in runs.iter().filter(|r| r.mode == Mode::Traditional) {
        let c = runs
            .iter()
            .find(|r| r.mode == Mode::Constrained && r.seed == t.seed);
        if let (Some(tr), Some(Some(cr))) = (&t.report, c.map(|c| &c.report)) {
            paired.push((tr, cr));
        }
    }
    let n_lower_spread = paired
        .iter()
        .filter(|(t, c)| c.relative_pose_spread.total() < t.relative_pose_spread.total())
        .count();
    let n_lower_endpoint_drift = paired
        .iter()
        .filter(|(t, c)| c.endpoint_drift.norm < t.endpoint_drift.norm)
        .count();
    let per_seed: Vec<f64> = paired
        .iter()
        .map(|(t, c)| improvement_percent(t.endpoint_drift.norm, c.endpoint_drift.norm))
        .collect();
    ComparisonSummary {
        mad_improvement_percent: improvement_percent(
            traditional.mean_absolute_distance,
            constrained.mean_absolute_distance,
        ),
        endpoint_improvement_percent: improvement_percent(
            traditional.endpoint_drift,
            constrained.endpoint_drift,
        ),
        spread_improvement_percent: improvement_percent(
            traditional.relative_pose_spread,
            constrained.relative_pose_spread,
        ),
        n_paired: paired.len(),
        n_lower_spread,
        n_lower_endpoint_drift,
        median_endpoint_improvement_percent: median(&per_seed),
        runs,
        traditional,
        constrained,
    }
}

impl ComparisonSummary {
    pub const TABLE_HEADER: &'static str = "mode,runs,failed,mean_absolute_distance,std_deviation,\
relative_pose_spread,endpoint_drift,horizontal_drift,vertical_drift";

    /// One row per mode followed by the improvement row.
    pub fn table_csv(&self) -> String {
        let row = |m: &ModeSummary| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                mode_name(m.mode),
                m.n_runs,
                m.n_failed,
                m.mean_absolute_distance,
                m.std_deviation,
                m.relative_pose_spread,
                m.endpoint_drift,
                m.horizontal_drift,
                m.vertical_drift
            )
        };
        format!(
            "{}\n{}\n{}\nimprovement_percent,,,{},,{},{},,\n",
            Self::TABLE_HEADER,
            row(&self.traditional),
            row(&self.constrained),
            self.mad_improvement_percent,
            self.spread_improvement_percent,
            self.endpoint_improvement_percent
        )
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("seed,mode,error,{}\n", DriftReport::CSV_HEADER);
        for r in &self.runs {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let body = match &r.report {
                Some(rep) => rep.csv_row(),
                None => ",".repeat(DriftReport::CSV_HEADER.matches(',').count()),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.seed,
                mode_name(r.mode),
                err,
                body
            ));
        }
        out
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Traditional => "traditional",
        Mode::Constrained => "constrained",
    }
}

/// Iteration trace of a reconstruction as CSV, one line per LM iteration.
pub fn trace_csv(report: &ReconstructionReport) -> String {
    let mut out = String::from(
        "stage,time_index,iteration,reprojection_cost,baseline_cost,weight,total_cost,candidate_cost,damping,step_norm,accepted\n",
    );
    let mut push = |stage: &str, t: String, s: &crate::solver::SolveReport| {
        for r in &s.trace {
            out.push_str(&format!(
                "{stage},{t},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.reprojection_cost,
                r.baseline_cost,
                r.weight,
                r.total_cost,
                r.candidate_cost,
                r.damping,
                r.step_norm,
                r.accepted
            ));
        }
    };
    for step in &report.steps {
        push("grow", step.time_index.to_string(), &step.report);
    }
    if let Some(f) = &report.final_report {
        push("final", String::new(), f);
    }
    out
}
