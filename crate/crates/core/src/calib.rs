//! Per-anchor calibration and model-error statistics.
//!
//! Essential calibration fits the matching factor `ξ` and the multipath
//! field `b_NLOS` of each anchor. With `u = ξ` and `v = ξ b_NLOS` the
//! channel `γ₀ (u b_LOS + v)ᵀ o_ag` is linear in `(u, v) ∈ C⁴`, so the fit
//! is a closed-form complex least-squares problem.
//!
//! Full calibration additionally refines each anchor pose by MAP
//! estimation. Levenberg–Marquardt runs over the five pose parameters and
//! the essential parameters are re-solved exactly at every iterate.

use log::warn;
use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::lm::{self, LeastSquaresProblem, LmSettings};
use crate::model::{
    self, coupling_coefficient, direct_path_field, link_geometry, unit_to_spherical, Anchor,
    ChannelVector, CoilSpec, Environment, ModelError, Pose,
};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} deployment(s) are not enough")]
    TooFewDeployments(usize),
    #[error("anchor {anchor}: deployment poses cannot separate the calibration parameters")]
    RankDeficient { anchor: usize },
    #[error("anchor {anchor}: matching factor magnitude {magnitude:e} is too small to recover b_NLOS")]
    NearZeroXi { anchor: usize, magnitude: f64 },
    #[error("deployment {index} has {found} channel entries, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(&'static str),
    #[error("{priors} priors given for {anchors} anchors")]
    PriorCount { anchors: usize, priors: usize },
    #[error("every link was excluded from the model-error statistics")]
    NoValidLinks,
}

/// One agent placement with its measured channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    /// 1-based.
    pub index: usize,
    pub agent_pose: Pose,
    pub measured: ChannelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub calibration: Vec<Deployment>,
    pub evaluation: Vec<Deployment>,
}

/// Odd indices go to evaluation, even ones to calibration.
pub fn split_odd_even(deployments: &[Deployment]) -> Result<DataSplit, CalibrationError> {
    let (evaluation, calibration): (Vec<_>, Vec<_>) =
        deployments.iter().cloned().partition(|d| d.index % 2 == 1);
    if evaluation.is_empty() || calibration.is_empty() {
        return Err(CalibrationError::TooFewDeployments(deployments.len()));
    }
    Ok(DataSplit {
        calibration,
        evaluation,
    })
}

/// Gaussian prior on an anchor pose.
///
/// Orientation deviations are measured in an orthonormal tangent frame at
/// `orientation_mean` aligned with the azimuth and polar directions, so the
/// prior stays regular for vertical anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrior {
    pub position_mean: Vector3<f64>,
    pub orientation_mean: Vector3<f64>,
    /// Per axis, meters.
    pub position_stddev: Vector3<f64>,
    /// Radians.
    pub angle_stddev: f64,
}

impl PosePrior {
    pub const DEFAULT_POSITION_STDDEV: f64 = 0.02;
    pub const DEFAULT_ANGLE_STDDEV_DEG: f64 = 2.0;

    pub fn new(
        mean: &Pose,
        position_stddev: Vector3<f64>,
        angle_stddev: f64,
    ) -> Result<Self, CalibrationError> {
        if position_stddev.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CalibrationError::InvalidPrior("position stddev must be positive"));
        }
        if !(angle_stddev > 0.0) || !angle_stddev.is_finite() {
            return Err(CalibrationError::InvalidPrior("angle stddev must be positive"));
        }
        Ok(Self {
            position_mean: mean.position,
            orientation_mean: mean.orientation,
            position_stddev,
            angle_stddev,
        })
    }

    /// 2 cm per axis and 2° around `mean`.
    pub fn around(mean: &Pose) -> Self {
        Self {
            position_mean: mean.position,
            orientation_mean: mean.orientation,
            position_stddev: Vector3::repeat(Self::DEFAULT_POSITION_STDDEV),
            angle_stddev: Self::DEFAULT_ANGLE_STDDEV_DEG.to_radians(),
        }
    }
}

/// Orthonormal tangent frame at `o` along the azimuth and polar directions.
fn tangent_frame(o: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let (az, polar) = unit_to_spherical(o);
    let (sp, cp) = az.sin_cos();
    let (st, ct) = polar.sin_cos();
    (Vector3::new(-sp, cp, 0.0), Vector3::new(ct * cp, ct * sp, -st))
}

/// Exponential map on the sphere: rotate `base` by `(a, b)` radians along the
/// tangent frame.
fn chart_to_unit(base: &Vector3<f64>, a: f64, b: f64) -> Vector3<f64> {
    let (t1, t2) = tangent_frame(base);
    let r = a.hypot(b);
    if r == 0.0 {
        return *base;
    }
    (base * r.cos() + (t1 * a + t2 * b) * (r.sin() / r)).normalize()
}

fn unit_to_chart(base: &Vector3<f64>, o: &Vector3<f64>) -> (f64, f64) {
    let (t1, t2) = tangent_frame(base);
    let c = base.dot(o).clamp(-1.0, 1.0);
    let w = o - base * c;
    let s = w.norm();
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let r = s.atan2(c);
    (r * w.dot(&t1) / s, r * w.dot(&t2) / s)
}

/// Result of a per-anchor essential fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialFit {
    pub matching_factor: Complex64,
    pub multipath_field: model::CVector3,
    /// `Σ_i |h_i − h_model,i|²` over the calibration deployments.
    pub residual_sum_of_squares: f64,
}

fn check_dimensions(deployments: &[Deployment], anchors: usize) -> Result<(), CalibrationError> {
    for d in deployments {
        if d.measured.len() != anchors {
            return Err(CalibrationError::DimensionMismatch {
                index: d.index,
                expected: anchors,
                found: d.measured.len(),
            });
        }
    }
    Ok(())
}

/// Linear least squares for `(u, v)` with the anchor at `pose`.
fn solve_essential(
    anchor_index: usize,
    pose: &Pose,
    anchor_coil: &CoilSpec,
    deployments: &[Deployment],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<(EssentialFit, DVector<Complex64>), CalibrationError> {
    let m = deployments.len();
    let gamma0 = coupling_coefficient(agent_coil, anchor_coil, env, Complex64::ONE);
    let k = env.wave_number();
    let mut design = DMatrix::<Complex64>::zeros(m, 4);
    let mut target = DVector::<Complex64>::zeros(m);
    for (row, d) in deployments.iter().enumerate() {
        let g = link_geometry(pose, &d.agent_pose.position).map_err(|e| e.at_anchor(anchor_index))?;
        let o = &d.agent_pose.orientation;
        design[(row, 0)] = gamma0 * model::project(&direct_path_field(&g, k), o);
        for j in 0..3 {
            design[(row, j + 1)] = gamma0 * o[j];
        }
        target[row] = d.measured[anchor_index];
    }

    let scales: Vec<f64> = (0..4).map(|j| design.column(j).norm()).collect();
    if scales.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(CalibrationError::RankDeficient { anchor: anchor_index });
    }
    let mut normalized = design.clone();
    for (j, s) in scales.iter().enumerate() {
        normalized.column_mut(j).unscale_mut(*s);
    }
    let svd = normalized.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if svd.singular_values.len() < 4 || smin < 1e-10 * smax {
        return Err(CalibrationError::RankDeficient { anchor: anchor_index });
    }
    let mut x = svd
        .solve(&target, 0.0)
        .map_err(|_| CalibrationError::RankDeficient { anchor: anchor_index })?;
    for (j, s) in scales.iter().enumerate() {
        x[j] /= *s;
    }
    let residual = &target - &design * &x;
    let u = x[0];
    if u.norm() < 1e-6 {
        return Err(CalibrationError::NearZeroXi {
            anchor: anchor_index,
            magnitude: u.norm(),
        });
    }
    let v = model::CVector3::new(x[1], x[2], x[3]);
    let fit = EssentialFit {
        matching_factor: u,
        multipath_field: v / u,
        residual_sum_of_squares: residual.norm_squared(),
    };
    Ok((fit, residual))
}

/// Fits `ξ` and `b_NLOS` of anchor `anchor_index` at its current pose.
pub fn essential_calibrate(
    anchor_index: usize,
    anchors: &[Anchor],
    deployments: &[Deployment],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<EssentialFit, CalibrationError> {
    if deployments.len() < 4 {
        return Err(CalibrationError::TooFewDeployments(deployments.len()));
    }
    check_dimensions(deployments, anchors.len())?;
    let anchor = &anchors[anchor_index];
    solve_essential(anchor_index, &anchor.pose, &anchor.coil, deployments, agent_coil, env).map(|(f, _)| f)
}

/// Essential calibration of every anchor; poses are left untouched.
pub fn calibrate_essential(
    anchors: &[Anchor],
    deployments: &[Deployment],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Vec<Anchor>, CalibrationError> {
    (0..anchors.len())
        .into_par_iter()
        .map(|n| {
            let fit = essential_calibrate(n, anchors, deployments, agent_coil, env)?;
            Ok(anchors[n].clone().with_calibration(fit.matching_factor, fit.multipath_field))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCalibrationReport {
    pub converged: bool,
    /// Some pose parameter ended more than 5 prior standard deviations from
    /// its mean.
    pub prior_violation: bool,
    /// Largest pose deviation in prior standard deviations.
    pub max_prior_deviation: f64,
    /// Complex noise variance used in the likelihood term.
    pub noise_variance: f64,
    /// MAP objective after the start and after every accepted step.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullCalibration {
    pub anchors: Vec<Anchor>,
    pub reports: Vec<AnchorCalibrationReport>,
}

/// Settings for the per-anchor MAP pose search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullCalibrationSettings {
    pub lm: LmSettings,
    /// Central-difference step for positions (m) and angles (rad).
    pub difference_step: f64,
}

impl Default for FullCalibrationSettings {
    fn default() -> Self {
        Self {
            lm: LmSettings {
                max_iterations: 100,
                step_tolerance: 1e-9,
                relative_tolerance: 1e-12,
                ..LmSettings::default()
            },
            difference_step: 1e-6,
        }
    }
}

struct MapProblem<'a> {
    anchor_index: usize,
    anchor_coil: &'a CoilSpec,
    prior: &'a PosePrior,
    deployments: &'a [Deployment],
    agent_coil: &'a CoilSpec,
    env: &'a Environment,
    noise_std: f64,
    step: f64,
}

impl MapProblem<'_> {
    fn pose(&self, x: &DVector<f64>) -> Option<Pose> {
        let o = chart_to_unit(&self.prior.orientation_mean, x[3], x[4]);
        Pose::new(Vector3::new(x[0], x[1], x[2]), o).ok()
    }

    fn prior_deviations(&self, x: &DVector<f64>) -> [f64; 5] {
        let p = &self.prior;
        [
            (x[0] - p.position_mean[0]) / p.position_stddev[0],
            (x[1] - p.position_mean[1]) / p.position_stddev[1],
            (x[2] - p.position_mean[2]) / p.position_stddev[2],
            x[3] / p.angle_stddev,
            x[4] / p.angle_stddev,
        ]
    }
}

impl LeastSquaresProblem for MapProblem<'_> {
    fn residuals(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let pose = self.pose(x)?;
        let (_, r) = solve_essential(
            self.anchor_index,
            &pose,
            self.anchor_coil,
            self.deployments,
            self.agent_coil,
            self.env,
        )
        .ok()?;
        let m = r.len();
        let mut out = DVector::zeros(2 * m + 5);
        for i in 0..m {
            out[i] = r[i].re / self.noise_std;
            out[m + i] = r[i].im / self.noise_std;
        }
        for (j, dev) in self.prior_deviations(x).iter().enumerate() {
            out[2 * m + j] = *dev;
        }
        Some(out)
    }

    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let rows = 2 * self.deployments.len() + 5;
        let mut jac = DMatrix::zeros(rows, 5);
        for j in 0..5 {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += self.step;
            minus[j] -= self.step;
            let diff = (self.residuals(&plus)? - self.residuals(&minus)?) / (2.0 * self.step);
            jac.set_column(j, &diff);
        }
        Some(jac)
    }
}

/// MAP refinement of every anchor pose with `(ξ, b_NLOS)` profiled out.
///
/// The likelihood variance of each anchor is its essential-calibration mean
/// squared residual at the prior mean pose.
pub fn full_calibrate(
    anchors: &[Anchor],
    deployments: &[Deployment],
    priors: &[PosePrior],
    agent_coil: &CoilSpec,
    env: &Environment,
    settings: &FullCalibrationSettings,
) -> Result<FullCalibration, CalibrationError> {
    if priors.len() != anchors.len() {
        return Err(CalibrationError::PriorCount {
            anchors: anchors.len(),
            priors: priors.len(),
        });
    }
    if deployments.len() < 4 {
        return Err(CalibrationError::TooFewDeployments(deployments.len()));
    }
    check_dimensions(deployments, anchors.len())?;
    let results: Vec<(Anchor, AnchorCalibrationReport)> = (0..anchors.len())
        .into_par_iter()
        .map(|n| calibrate_anchor(n, &anchors[n], &priors[n], deployments, agent_coil, env, settings))
        .collect::<Result<_, _>>()?;
    let (anchors, reports) = results.into_iter().unzip();
    Ok(FullCalibration { anchors, reports })
}

fn calibrate_anchor(
    n: usize,
    anchor: &Anchor,
    prior: &PosePrior,
    deployments: &[Deployment],
    agent_coil: &CoilSpec,
    env: &Environment,
    settings: &FullCalibrationSettings,
) -> Result<(Anchor, AnchorCalibrationReport), CalibrationError> {
    let mean_pose = Pose::new(prior.position_mean, prior.orientation_mean)?;
    let (nominal, _) = solve_essential(n, &mean_pose, &anchor.coil, deployments, agent_coil, env)?;
    let signal: f64 = deployments.iter().map(|d| d.measured[n].norm_sqr()).sum::<f64>() / deployments.len() as f64;
    let variance = (nominal.residual_sum_of_squares / deployments.len() as f64).max(1e-24 * signal);

    let mut problem = MapProblem {
        anchor_index: n,
        anchor_coil: &anchor.coil,
        prior,
        deployments,
        agent_coil,
        env,
        noise_std: variance.sqrt(),
        step: settings.difference_step,
    };
    let (a0, b0) = unit_to_chart(&prior.orientation_mean, &anchor.pose.orientation);
    let p0 = anchor.pose.position;
    let x0 = DVector::from_vec(vec![p0.x, p0.y, p0.z, a0, b0]);
    let report = lm::minimize(&mut problem, x0, &settings.lm)
        .ok_or(CalibrationError::RankDeficient { anchor: n })?;

    let pose = problem.pose(&report.x).ok_or(CalibrationError::RankDeficient { anchor: n })?;
    let (fit, _) = solve_essential(n, &pose, &anchor.coil, deployments, agent_coil, env)?;
    let max_dev = problem
        .prior_deviations(&report.x)
        .iter()
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    let prior_violation = max_dev > 5.0;
    if prior_violation {
        warn!("anchor {n}: calibrated pose is {max_dev:.1} prior stddevs from the installed pose");
    }
    if !report.converged() {
        warn!("anchor {n}: pose calibration hit the iteration limit");
    }
    let calibrated = Anchor::new(pose, anchor.coil).with_calibration(fit.matching_factor, fit.multipath_field);
    Ok((
        calibrated,
        AnchorCalibrationReport {
            converged: report.converged(),
            prior_violation,
            max_prior_deviation: max_dev,
            noise_variance: variance,
            objective_history: report.cost_history,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorReport {
    /// `|h_meas − h_model| / |h_meas|` per included link.
    pub values: Vec<f64>,
    /// `(deployment index, anchor index)` of links with `|h_meas| < 1e-12`.
    pub excluded: Vec<(usize, usize)>,
    pub median: f64,
    pub p90: f64,
}

const MIN_MEASURED_MAGNITUDE: f64 = 1e-12;

/// Relative model error over every link of `deployments`.
pub fn relative_model_error(
    deployments: &[Deployment],
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<ModelErrorReport, CalibrationError> {
    check_dimensions(deployments, anchors.len())?;
    let mut values = Vec::with_capacity(deployments.len() * anchors.len());
    let mut excluded = Vec::new();
    for d in deployments {
        let modeled = model::channel_vector(anchors, &d.agent_pose, agent_coil, env)?;
        for (n, (meas, m)) in d.measured.iter().zip(modeled.iter()).enumerate() {
            if meas.norm() < MIN_MEASURED_MAGNITUDE {
                excluded.push((d.index, n));
                continue;
            }
            values.push((meas - m).norm() / meas.norm());
        }
    }
    if !excluded.is_empty() {
        warn!("{} link(s) excluded from the model-error statistics", excluded.len());
    }
    let median = stats::quantile(&values, 0.5).map_err(|_| CalibrationError::NoValidLinks)?;
    let p90 = stats::quantile(&values, 0.9).map_err(|_| CalibrationError::NoValidLinks)?;
    Ok(ModelErrorReport {
        values,
        excluded,
        median,
        p90,
    })
}

/// Model residuals `h_meas − h_model` per deployment.
pub fn model_residuals(
    deployments: &[Deployment],
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Vec<ChannelVector>, CalibrationError> {
    check_dimensions(deployments, anchors.len())?;
    deployments
        .iter()
        .map(|d| {
            let modeled = model::channel_vector(anchors, &d.agent_pose, agent_coil, env)?;
            Ok(ChannelVector(
                d.measured.iter().zip(modeled.iter()).map(|(a, b)| a - b).collect(),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn coil() -> CoilSpec {
        CoilSpec::circular(0.115, 10, 0.36).unwrap()
    }

    fn layout() -> Vec<Anchor> {
        [
            [0.0, 0.0, 2.0],
            [1.5, 0.0, 0.68],
            [3.0, 0.0, 2.0],
            [3.0, 1.5, 0.68],
        ]
        .iter()
        .map(|p| {
            let p = Vector3::from(*p);
            Anchor::new(Pose::from_direction(p, Vector3::new(1.5, 1.5, 1.0) - p).unwrap(), coil())
        })
        .collect()
    }

    fn deployments(truth: &[Anchor], env: &Environment) -> Vec<Deployment> {
        let dirs = [
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
        ];
        let mut out = Vec::new();
        for (k, pos) in [[0.9, 1.2, 0.6], [1.8, 1.5, 1.2], [1.2, 2.1, 0.9], [2.1, 0.9, 1.5], [1.5, 1.5, 0.3]]
            .iter()
            .enumerate()
        {
            for (j, dir) in dirs.iter().enumerate() {
                let pose = Pose::from_direction(Vector3::from(*pos), *dir).unwrap();
                out.push(Deployment {
                    index: k * dirs.len() + j + 1,
                    agent_pose: pose,
                    measured: model::channel_vector(truth, &pose, &coil(), env).unwrap(),
                });
            }
        }
        out
    }

    #[test]
    fn split_follows_parity() {
        let env = Environment::free_space(500e3);
        let deps = deployments(&layout(), &env);
        let split = split_odd_even(&deps[..4]).unwrap();
        let ids = |v: &[Deployment]| v.iter().map(|d| d.index).collect::<Vec<_>>();
        assert_eq!(ids(&split.evaluation), vec![1, 3]);
        assert_eq!(ids(&split.calibration), vec![2, 4]);
        let odd: Vec<_> = deps.iter().filter(|d| d.index % 2 == 1).cloned().collect();
        assert!(matches!(split_odd_even(&odd), Err(CalibrationError::TooFewDeployments(_))));
    }

    #[test]
    fn essential_recovers_matching_factor() {
        let env = Environment::free_space(500e3);
        let xi = Complex64::from_polar(0.8, -0.17);
        let truth: Vec<Anchor> = layout().into_iter().map(|a| a.with_calibration(xi, Default::default())).collect();
        let deps = deployments(&truth, &env);
        let fit = essential_calibrate(1, &layout(), &deps, &coil(), &env).unwrap();
        assert!((fit.matching_factor - xi).norm() < 1e-9 * xi.norm());
        assert!(fit.multipath_field.norm() < 1e-9);
    }

    #[test]
    fn essential_recovers_multipath() {
        let env = Environment::free_space(500e3);
        let b = model::CVector3::new(Complex64::new(0.1, 0.2), Complex64::ZERO, Complex64::new(0.0, -0.05));
        let truth: Vec<Anchor> = layout().into_iter().map(|a| a.with_calibration(Complex64::ONE, b)).collect();
        let deps = deployments(&truth, &env);
        let fit = essential_calibrate(2, &layout(), &deps, &coil(), &env).unwrap();
        assert!((fit.matching_factor - Complex64::ONE).norm() < 1e-9);
        assert!((fit.multipath_field - b).norm() < 1e-9 * b.norm());
    }

    #[test]
    fn essential_needs_diverse_poses() {
        let env = Environment::free_space(500e3);
        let deps = deployments(&layout(), &env);
        let same: Vec<Deployment> = (0..6).map(|i| Deployment { index: i + 1, ..deps[0].clone() }).collect();
        assert!(matches!(
            essential_calibrate(0, &layout(), &same, &coil(), &env),
            Err(CalibrationError::RankDeficient { anchor: 0 })
        ));
        assert!(matches!(
            essential_calibrate(0, &layout(), &deps[..3], &coil(), &env),
            Err(CalibrationError::TooFewDeployments(3))
        ));
    }

    #[test]
    fn chart_round_trip() {
        for o in [Vector3::z(), -Vector3::z(), Vector3::new(0.3, -0.4, 0.5).normalize()] {
            let target = chart_to_unit(&o, 0.03, -0.02);
            assert_relative_eq!(target.dot(&o).acos(), 0.03f64.hypot(0.02), epsilon = 1e-12);
            let (a, b) = unit_to_chart(&o, &target);
            assert_relative_eq!(a, 0.03, epsilon = 1e-12);
            assert_relative_eq!(b, -0.02, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_calibration_finds_displaced_anchor() {
        let env = Environment::free_space(500e3);
        let nominal = layout();
        let mut truth = nominal.clone();
        truth[0].pose.position += Vector3::new(0.02, -0.01, 0.005);
        let deps = deployments(&truth, &env);
        let priors: Vec<PosePrior> = nominal
            .iter()
            .map(|a| PosePrior::new(&a.pose, Vector3::repeat(0.5), 0.5).unwrap())
            .collect();
        let result = full_calibrate(&nominal, &deps, &priors, &coil(), &env, &Default::default()).unwrap();
        let err = (result.anchors[0].pose.position - truth[0].pose.position).norm();
        assert!(err < 1e-3, "position error {err}");
        let report = &result.reports[0];
        assert!(report.objective_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(!report.prior_violation);
    }

    #[test]
    fn stiff_prior_keeps_pose() {
        let env = Environment::free_space(500e3);
        let nominal = layout();
        let mut truth = nominal.clone();
        truth[1].pose.position += Vector3::new(0.0, 0.02, 0.0);
        let deps = deployments(&truth, &env);
        let priors: Vec<PosePrior> = nominal
            .iter()
            .map(|a| PosePrior::new(&a.pose, Vector3::repeat(1e-9), 1e-9).unwrap())
            .collect();
        let full = full_calibrate(&nominal, &deps, &priors, &coil(), &env, &Default::default()).unwrap();
        let essential = calibrate_essential(&nominal, &deps, &coil(), &env).unwrap();
        let a = &full.anchors[1];
        assert!((a.pose.position - nominal[1].pose.position).norm() < 1e-8);
        assert!((a.matching_factor - essential[1].matching_factor).norm() < 1e-6);
    }

    #[test]
    fn model_error_values() {
        let env = Environment::free_space(500e3);
        let anchors = layout();
        let mut deps = deployments(&anchors, &env);
        let report = relative_model_error(&deps, &anchors, &coil(), &env).unwrap();
        assert!(report.values.iter().all(|v| *v < 1e-12));
        deps[0].measured.0[0] *= 1.0 / 0.9;
        deps[1].measured.0[2] = Complex64::ZERO;
        let report = relative_model_error(&deps[..2], &anchors, &coil(), &env).unwrap();
        assert_relative_eq!(report.values[0], 0.1, epsilon = 1e-12);
        assert_eq!(report.excluded, vec![(2, 2)]);
        assert_eq!(report.values.len(), 7);
    }

    #[test]
    fn prior_validation() {
        let pose = layout()[0].pose;
        assert!(PosePrior::new(&pose, Vector3::new(0.01, 0.0, 0.01), 0.1).is_err());
        assert!(PosePrior::new(&pose, Vector3::repeat(0.01), -1.0).is_err());
        let p = PosePrior::around(&pose);
        assert_relative_eq!(p.angle_stddev, 2f64.to_radians());
    }
}
