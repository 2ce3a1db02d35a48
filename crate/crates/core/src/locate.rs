//! Weighted least-squares localization of a single-coil agent.
//!
//! The agent position is found with Levenberg–Marquardt on
//!
//! ```text
//! p̂ = argmin_p ‖W(p) (h_meas − A(p)ᵀ ô(p))‖²
//! ```
//!
//! where `W = diag(d_n³ / |γ_n|)` balances anchors whose channel gains
//! differ by orders of magnitude, `A` stacks the per-anchor field columns
//! `γ_n (b_LOS,n + b_NLOS,n)` and `ô(p)` is the exact unit-norm
//! least-squares orientation, recomputed whenever `p` changes. Several
//! random initializations are tried and the lowest weighted residual wins.
//!
//! A plain 5D nonlinear least-squares estimator over position and
//! spherical orientation angles is provided as a baseline.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Matrix4, SymmetricEigen, Vector3, Vector4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crlb::{model_jacobian, EstimationParameter};
use crate::lm::{self, LeastSquaresProblem, LmSettings};
use crate::model::{
    self, coupling_coefficient, direct_path_field_gradient, link_geometry, spherical_to_unit,
    Anchor, ChannelVector, CoilSpec, Environment, ModelError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} anchor(s) given, at least 3 are required")]
    TooFewAnchors(usize),
    #[error("channel vector has {found} entries for {expected} anchors")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no initialization produced a valid estimate")]
    AllDiverged,
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self, LocateError> {
        if (0..3).any(|i| !(min[i] <= max[i]) || !min[i].is_finite() || !max[i].is_finite()) {
            return Err(LocateError::InvalidConfig("empty initialization box"));
        }
        Ok(Self { min, max })
    }

    /// Bounding box of the anchor positions, grown by `fraction` of its
    /// extent on every side.
    pub fn around_anchors(anchors: &[Anchor], fraction: f64) -> Self {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for a in anchors {
            min = min.inf(&a.pose.position);
            max = max.sup(&a.pose.position);
        }
        let margin = (max - min) * fraction;
        Self {
            min: min - margin,
            max: max + margin,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..self.max[i])
            } else {
                self.min[i]
            }
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsConfig {
    pub num_initializations: usize,
    /// Box for the random initial positions; `None` uses the anchor
    /// bounding box inflated by 10 %.
    pub init_bounds: Option<Bounds>,
    pub lm_max_iterations: usize,
    pub lm_initial_damping: f64,
    /// Meters.
    pub step_tolerance: f64,
    /// On the weighted squared residual.
    pub residual_tolerance: f64,
    pub rng_seed: u64,
}

impl Default for WlsConfig {
    fn default() -> Self {
        Self {
            num_initializations: 3,
            init_bounds: None,
            lm_max_iterations: 100,
            lm_initial_damping: 1e-3,
            step_tolerance: 1e-6,
            residual_tolerance: 1e-12,
            rng_seed: 0,
        }
    }
}

impl WlsConfig {
    fn validate(&self) -> Result<(), LocateError> {
        if self.num_initializations == 0 {
            return Err(LocateError::InvalidConfig("at least one initialization is required"));
        }
        if self.lm_max_iterations == 0 {
            return Err(LocateError::InvalidConfig("iteration budget must be positive"));
        }
        if let Some(b) = &self.init_bounds {
            Bounds::new(b.min, b.max)?;
        }
        Ok(())
    }

    fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.lm_max_iterations,
            initial_damping: self.lm_initial_damping,
            step_tolerance: self.step_tolerance,
            cost_tolerance: self.residual_tolerance,
            ..LmSettings::default()
        }
    }

    fn bounds(&self, anchors: &[Anchor]) -> Bounds {
        self.init_bounds
            .unwrap_or_else(|| Bounds::around_anchors(anchors, 0.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationEstimate {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
    pub weighted_residual: f64,
    pub converged: bool,
    pub initialization_index: usize,
}

/// Diagonal of `W`: `d_n³ / |γ_n|`.
pub fn weight_matrix(
    agent_position: &Vector3<f64>,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<DVector<f64>, LocateError> {
    let mut w = DVector::zeros(anchors.len());
    for (n, anchor) in anchors.iter().enumerate() {
        let g = link_geometry(&anchor.pose, agent_position).map_err(|e| e.at_anchor(n))?;
        let gamma = coupling_coefficient(agent_coil, &anchor.coil, env, anchor.matching_factor);
        w[n] = g.distance.powi(3) / gamma.norm();
    }
    Ok(w)
}

/// `A ∈ C^{3×N}` with columns `γ_n (b_LOS,n + b_NLOS,n)`, so that
/// `h_model = Aᵀ o_ag`.
pub fn steering_matrix(
    agent_position: &Vector3<f64>,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Matrix3xX<Complex64>, LocateError> {
    let mut a = Matrix3xX::zeros(anchors.len());
    for (n, anchor) in anchors.iter().enumerate() {
        let gamma = coupling_coefficient(agent_coil, &anchor.coil, env, anchor.matching_factor);
        let field = model::total_field(anchor, agent_position, env).map_err(|e| e.at_anchor(n))?;
        a.set_column(n, &(field * gamma));
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationSolution {
    pub orientation: Vector3<f64>,
    /// `‖W(h − Aᵀô)‖²`
    pub objective: f64,
    /// Set when the system matrix vanishes and every unit vector is optimal.
    pub degenerate: bool,
}

/// Global minimizer of `‖W(h − Aᵀo)‖²` subject to `‖o‖ = 1`.
///
/// Real and imaginary parts are stacked into `‖C o − y‖²`. With the
/// eigendecomposition `CᵀC = V Λ Vᵀ` and `z = Vᵀ Cᵀ y`, the optimum is
/// `o = V (Λ + μI)⁻¹ z` for the unique root `μ ≥ −λ_min` of the secular
/// equation `Σ z_i² / (λ_i + μ)² = 1`, or a point of the eigenspace of
/// `λ_min` when that root does not exist.
pub fn orientation_solve(
    weights: &DVector<f64>,
    steering: &Matrix3xX<Complex64>,
    h_meas: &ChannelVector,
) -> Result<OrientationSolution, LocateError> {
    let n = steering.ncols();
    if weights.len() != n || h_meas.len() != n {
        return Err(LocateError::DimensionMismatch {
            expected: n,
            found: if weights.len() != n { weights.len() } else { h_meas.len() },
        });
    }
    let (c, y) = stack_system(weights, steering, h_meas);
    let objective = |o: &Vector3<f64>| (&c * DVector::from_column_slice(o.as_slice()) - &y).norm_squared();

    let hessian: Matrix3<f64> = Matrix3::from_fn(|i, j| c.column(i).dot(&c.column(j)));
    if hessian.amax() == 0.0 {
        let o = Vector3::z();
        return Ok(OrientationSolution {
            orientation: o,
            objective: objective(&o),
            degenerate: true,
        });
    }
    let rhs = Vector3::from_fn(|i, _| c.column(i).dot(&y));
    let orientation = constrained_unit_lsq(&hessian, &rhs);
    Ok(OrientationSolution {
        orientation,
        objective: objective(&orientation),
        degenerate: false,
    })
}

/// Real-stacked `C = [Re; Im](W Aᵀ)` and `y = [Re; Im](W h)`.
fn stack_system(
    weights: &DVector<f64>,
    steering: &Matrix3xX<Complex64>,
    h_meas: &ChannelVector,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = steering.ncols();
    let mut c = DMatrix::zeros(2 * n, 3);
    let mut y = DVector::zeros(2 * n);
    for k in 0..n {
        let w = weights[k];
        for i in 0..3 {
            c[(k, i)] = w * steering[(i, k)].re;
            c[(n + k, i)] = w * steering[(i, k)].im;
        }
        y[k] = w * h_meas[k].re;
        y[n + k] = w * h_meas[k].im;
    }
    (c, y)
}

/// Minimizes `oᵀHo − 2bᵀo` over the unit sphere for symmetric PSD `H`.
fn constrained_unit_lsq(hessian: &Matrix3<f64>, rhs: &Vector3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(*hessian);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let basis = Matrix3::from_fn(|r, i| eig.eigenvectors[(r, order[i])]);
    let z = basis.transpose() * rhs;
    let znorm = z.norm();
    let scale = lambda[2].abs().max(znorm);

    // eigen-directions tied with the smallest eigenvalue
    let tied: Vec<bool> = (0..3).map(|i| lambda[i] - lambda[0] <= 1e-13 * scale).collect();
    let tied_mass: f64 = (0..3).filter(|&i| tied[i]).map(|i| z[i] * z[i]).sum();

    if tied_mass.sqrt() <= 1e-13 * scale {
        // possible hard case: μ = −λ_min
        let partial = Vector3::from_fn(|i, _| if tied[i] { 0.0 } else { z[i] / (lambda[i] - lambda[0]) });
        let norm2 = partial.norm_squared();
        if norm2 <= 1.0 {
            let free = (0..3).find(|&i| tied[i]).expect("index 0 is always tied");
            let mut coeffs = partial;
            coeffs[free] = (1.0 - norm2).sqrt();
            return (basis * coeffs).normalize();
        }
    }

    let secular = |mu: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for i in 0..3 {
            let denom = lambda[i] + mu;
            s += z[i] * z[i] / (denom * denom);
            ds -= 2.0 * z[i] * z[i] / (denom * denom * denom);
        }
        (s, ds)
    };
    // φ(μ) = 1/√s(μ) − 1 is increasing on (−λ_min, ∞) and nearly linear
    let mut lo = -lambda[0];
    let mut hi = -lambda[0] + znorm;
    let mut mu = hi;
    for _ in 0..200 {
        let (s, ds) = secular(mu);
        let phi = 1.0 / s.sqrt() - 1.0;
        if phi.abs() < 1e-15 {
            break;
        }
        if phi < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let dphi = -0.5 * ds / (s * s.sqrt());
        let newton = mu - phi / dphi;
        mu = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * (hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) {
            break;
        }
    }
    let coeffs = Vector3::from_fn(|i, _| z[i] / (lambda[i] + mu));
    (basis * coeffs).normalize()
}

/// LM problem over the agent position with the orientation profiled out.
struct WlsProblem<'a> {
    h_meas: &'a ChannelVector,
    anchors: &'a [Anchor],
    agent_coil: &'a CoilSpec,
    env: &'a Environment,
}

impl WlsProblem<'_> {
    fn solve_at(&self, p: &Vector3<f64>) -> Option<(DVector<f64>, Matrix3xX<Complex64>, OrientationSolution)> {
        let w = weight_matrix(p, self.anchors, self.agent_coil, self.env).ok()?;
        let a = steering_matrix(p, self.anchors, self.agent_coil, self.env).ok()?;
        let o = orientation_solve(&w, &a, self.h_meas).ok()?;
        Some((w, a, o))
    }
}

fn position_of(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

impl LeastSquaresProblem for WlsProblem<'_> {
    fn residuals(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let p = position_of(x);
        let (w, a, sol) = self.solve_at(&p)?;
        let n = self.anchors.len();
        let mut r = DVector::zeros(2 * n);
        for k in 0..n {
            let e = (self.h_meas[k] - model::project(&a.column(k).into_owned(), &sol.orientation)) * w[k];
            r[k] = e.re;
            r[n + k] = e.im;
        }
        Some(r)
    }

    /// Exact variable-projection Jacobian. The orientation sensitivity
    /// `∂ô/∂p` follows from differentiating the optimality conditions
    /// `(H + μI) ô = b`, `ôᵀô = 1`; where that bordered system is singular
    /// the orientation is held fixed instead.
    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let p = position_of(x);
        let (w, a, sol) = self.solve_at(&p)?;
        let o = sol.orientation;
        let (c, y) = stack_system(&w, &a, self.h_meas);
        let k_wave = self.env.wave_number();
        let n = self.anchors.len();

        // derivatives of C and y along each position axis
        let mut dc = [DMatrix::zeros(2 * n, 3), DMatrix::zeros(2 * n, 3), DMatrix::zeros(2 * n, 3)];
        let mut dy = [DVector::zeros(2 * n), DVector::zeros(2 * n), DVector::zeros(2 * n)];
        for (k, anchor) in self.anchors.iter().enumerate() {
            let gamma = coupling_coefficient(self.agent_coil, &anchor.coil, self.env, anchor.matching_factor);
            let (_, grad) = direct_path_field_gradient(&anchor.pose, &p, k_wave).ok()?;
            let offset = p - anchor.pose.position;
            let d = offset.norm();
            for j in 0..3 {
                let dw = 3.0 * d * offset[j] / gamma.norm();
                for i in 0..3 {
                    let v = a[(i, k)] * dw + gamma * grad[(i, j)] * w[k];
                    dc[j][(k, i)] = v.re;
                    dc[j][(n + k, i)] = v.im;
                }
                dy[j][k] = dw * self.h_meas[k].re;
                dy[j][n + k] = dw * self.h_meas[k].im;
            }
        }

        let hessian = c.tr_mul(&c);
        let ov = DVector::from_column_slice(o.as_slice());
        let mu = ov.dot(&c.tr_mul(&y)) - ov.dot(&(&hessian * &ov));
        let mut bordered = Matrix4::zeros();
        for r in 0..3 {
            for q in 0..3 {
                bordered[(r, q)] = hessian[(r, q)] + if r == q { mu } else { 0.0 };
            }
            bordered[(r, 3)] = o[r];
            bordered[(3, r)] = o[r];
        }
        let lu = bordered.lu();

        let mut jac = DMatrix::zeros(2 * n, 3);
        for j in 0..3 {
            let dh = dc[j].tr_mul(&c) + c.tr_mul(&dc[j]);
            let db = dc[j].tr_mul(&y) + c.tr_mul(&dy[j]);
            let rhs = db - dh * &ov;
            let rhs4 = Vector4::new(rhs[0], rhs[1], rhs[2], 0.0);
            let d_o = lu
                .solve(&rhs4)
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .map_or_else(|| DVector::zeros(3), |s| DVector::from_column_slice(&s.as_slice()[..3]));
            // the stored residual is y − C ô, the negative of `residual`
            let col = -(&dc[j] * &ov + &c * d_o - &dy[j]);
            jac.set_column(j, &col);
        }
        Some(jac)
    }
}

fn check_inputs(h_meas: &ChannelVector, anchors: &[Anchor]) -> Result<(), LocateError> {
    if anchors.len() < 3 {
        return Err(LocateError::TooFewAnchors(anchors.len()));
    }
    if h_meas.len() != anchors.len() {
        return Err(LocateError::DimensionMismatch {
            expected: anchors.len(),
            found: h_meas.len(),
        });
    }
    Ok(())
}

/// WLS estimate from a single initial position.
pub fn wls_from(
    h_meas: &ChannelVector,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
    init: &Vector3<f64>,
    config: &WlsConfig,
) -> Result<LocationEstimate, LocateError> {
    check_inputs(h_meas, anchors)?;
    config.validate()?;
    let mut problem = WlsProblem {
        h_meas,
        anchors,
        agent_coil,
        env,
    };
    let x0 = DVector::from_column_slice(init.as_slice());
    let report = lm::minimize(&mut problem, x0, &config.lm_settings()).ok_or(LocateError::AllDiverged)?;
    let position = position_of(&report.x);
    let (_, _, sol) = problem.solve_at(&position).ok_or(LocateError::AllDiverged)?;
    Ok(LocationEstimate {
        position,
        orientation: sol.orientation,
        weighted_residual: report.cost,
        converged: report.converged(),
        initialization_index: 0,
    })
}

/// Multi-start WLS localization. Deterministic for a given `rng_seed`.
pub fn wls_localize(
    h_meas: &ChannelVector,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
    config: &WlsConfig,
) -> Result<LocationEstimate, LocateError> {
    check_inputs(h_meas, anchors)?;
    config.validate()?;
    if anchors.len() < 5 {
        warn!("{} anchors cannot resolve all five pose unknowns reliably", anchors.len());
    }
    let bounds = config.bounds(anchors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let inits: Vec<Vector3<f64>> = (0..config.num_initializations).map(|_| bounds.sample(&mut rng)).collect();

    let mut best: Option<LocationEstimate> = None;
    for (index, init) in inits.iter().enumerate() {
        let Ok(mut estimate) = wls_from(h_meas, anchors, agent_coil, env, init, config) else {
            continue;
        };
        estimate.initialization_index = index;
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|b| estimate.weighted_residual < b.weighted_residual) {
            best = Some(estimate);
        }
    }
    let best = best.ok_or(LocateError::AllDiverged)?;
    if !best.converged {
        warn!("WLS localization hit the iteration limit for every initialization");
    }
    Ok(best)
}

struct BaselineProblem<'a> {
    target: DVector<f64>,
    anchors: &'a [Anchor],
    agent_coil: &'a CoilSpec,
    env: &'a Environment,
}

impl LeastSquaresProblem for BaselineProblem<'_> {
    fn residuals(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let eta = EstimationParameter::from_slice(x.as_slice());
        let g = crate::crlb::model_vector(&eta, self.anchors, self.agent_coil, self.env).ok()?;
        Some(g - &self.target)
    }

    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = EstimationParameter::from_slice(x.as_slice());
        model_jacobian(&eta, self.anchors, self.agent_coil, self.env).ok()
    }
}

/// Unweighted 5D nonlinear least squares over `(p, φ, θ)` from `init`.
pub fn baseline_5d_nls(
    h_meas: &ChannelVector,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
    init: &EstimationParameter,
    config: &WlsConfig,
) -> Result<LocationEstimate, LocateError> {
    check_inputs(h_meas, anchors)?;
    config.validate()?;
    let mut problem = BaselineProblem {
        target: h_meas.stacked(),
        anchors,
        agent_coil,
        env,
    };
    let settings = LmSettings {
        cost_tolerance: 0.0,
        ..config.lm_settings()
    };
    let report = lm::minimize(&mut problem, init.to_vector(), &settings).ok_or(LocateError::AllDiverged)?;
    let eta = EstimationParameter::from_slice(report.x.as_slice());
    Ok(LocationEstimate {
        position: eta.position,
        orientation: eta.orientation(),
        weighted_residual: report.cost,
        converged: report.converged(),
        initialization_index: 0,
    })
}

/// Uniformly distributed random unit vector.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let cos_polar: f64 = rng.random_range(-1.0..1.0);
    spherical_to_unit(azimuth, cos_polar.clamp(-1.0, 1.0).acos())
}

/// Angle between two unit vectors in degrees, in `[0°, 180°]`.
pub fn orientation_error(estimate: &Vector3<f64>, truth: &Vector3<f64>) -> f64 {
    estimate.dot(truth).clamp(-1.0, 1.0).acos().to_degrees()
}
