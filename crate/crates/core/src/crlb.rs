//! Fisher information and position error bound (PEB) for a Gaussian model
//! error on the stacked real/imaginary channel vector.
//!
//! With `g(η) = [Re h_model; Im h_model]` and `η = [p, φ, θ]`,
//!
//! ```text
//! J   = (∂g/∂η)ᵀ Σ⁻¹ (∂g/∂η)
//! PEB = √ trace((J⁻¹)_{1:3,1:3})
//! ```


use log::debug;
use nalgebra::{DMatrix, DVector, Matrix5, SymmetricEigen, Vector3};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{
    self, coupling_coefficient, direct_path_field_gradient, spherical_tangents, spherical_to_unit,
    unit_to_spherical, Anchor, ChannelVector, CoilSpec, Environment, ModelError, Pose,
};

/// Relative eigenvalue threshold below which a scaled FIM counts as singular.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrlbError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("covariance is not positive definite")]
    SingularCovariance,
    #[error("covariance has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),
}

/// Agent deployment in the parametrization used by the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationParameter {
    pub position: Vector3<f64>,
    pub azimuth: f64,
    /// Polar angle in `[0, π]`.
    pub polar: f64,
}

impl EstimationParameter {
    pub fn from_pose(pose: &Pose) -> Self {
        let (azimuth, polar) = unit_to_spherical(&pose.orientation);
        Self {
            position: pose.position,
            azimuth,
            polar,
        }
    }

    pub fn orientation(&self) -> Vector3<f64> {
        spherical_to_unit(self.azimuth, self.polar)
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_angles(self.position, self.azimuth, self.polar)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.position.x,
            self.position.y,
            self.position.z,
            self.azimuth,
            self.polar,
        ])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            azimuth: v[3],
            polar: v[4],
        }
    }

    /// Whether the orientation sits on a pole of the spherical chart.
    pub fn at_pole(&self) -> bool {
        self.polar.sin().abs() < 1e-12
    }
}

/// `[Re h; Im h]` of the model at `η`.
pub fn model_vector(
    eta: &EstimationParameter,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<DVector<f64>, CrlbError> {
    Ok(model::channel_vector(anchors, &eta.to_pose(), agent_coil, env)?.stacked())
}

/// Per-anchor complex derivatives `∂h_n/∂p` (3) and `∂h_n/∂o · t` for the
/// given orientation tangents.
fn complex_jacobian<const T: usize>(
    position: &Vector3<f64>,
    orientation: &Vector3<f64>,
    tangents: [Vector3<f64>; T],
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Vec<([Complex64; 3], [Complex64; T])>, ModelError> {
    if anchors.is_empty() {
        return Err(ModelError::NoAnchors);
    }
    let k = env.wave_number();
    anchors
        .iter()
        .enumerate()
        .map(|(n, anchor)| {
            let gamma = coupling_coefficient(agent_coil, &anchor.coil, env, anchor.matching_factor);
            let (field, grad) = direct_path_field_gradient(&anchor.pose, position, k)
                .map_err(|e| e.at_anchor(n))?;
            let total = field + anchor.multipath_field;
            let mut dp = [Complex64::new(0.0, 0.0); 3];
            for (j, d) in dp.iter_mut().enumerate() {
                *d = gamma * model::project(&grad.column(j).into_owned(), orientation);
            }
            let dt = tangents.map(|t| gamma * model::project(&total, &t));
            Ok((dp, dt))
        })
        .collect()
}

fn stack<const T: usize>(rows: &[([Complex64; 3], [Complex64; T])]) -> DMatrix<f64> {
    let n = rows.len();
    let mut jac = DMatrix::zeros(2 * n, 3 + T);
    for (i, (dp, dt)) in rows.iter().enumerate() {
        for (j, v) in dp.iter().chain(dt.iter()).enumerate() {
            jac[(i, j)] = v.re;
            jac[(n + i, j)] = v.im;
        }
    }
    jac
}

/// Analytic `∂g/∂η`, a `2N × 5` real matrix with columns `(p_x, p_y, p_z, φ, θ)`.
pub fn model_jacobian(
    eta: &EstimationParameter,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<DMatrix<f64>, CrlbError> {
    let (t_phi, t_theta) = spherical_tangents(eta.azimuth, eta.polar);
    let rows = complex_jacobian(
        &eta.position,
        &eta.orientation(),
        [t_phi, t_theta],
        anchors,
        agent_coil,
        env,
    )?;
    Ok(stack(&rows))
}

/// Jacobian with the orientation block taken along an orthonormal tangent
/// basis of the sphere. Regular at the poles.
fn tangent_jacobian(
    eta: &EstimationParameter,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<DMatrix<f64>, CrlbError> {
    let (sp, cp) = eta.azimuth.sin_cos();
    let (st, ct) = eta.polar.sin_cos();
    let t_phi = Vector3::new(-sp, cp, 0.0);
    let t_theta = Vector3::new(ct * cp, ct * sp, -st);
    let rows = complex_jacobian(
        &eta.position,
        &eta.orientation(),
        [t_phi, t_theta],
        anchors,
        agent_coil,
        env,
    )?;
    Ok(stack(&rows))
}

/// Label of a noise hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoiseLabel {
    /// One of the six standard hypotheses, numbered 1 to 6.
    Case(u8),
    Custom(String),
}

impl std::fmt::Display for NoiseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseLabel::Case(c) => write!(f, "{c}"),
            NoiseLabel::Custom(s) => f.write_str(s),
        }
    }
}

/// Covariance of the stacked `[Re ε; Im ε]` model error.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub covariance: DMatrix<f64>,
    pub label: NoiseLabel,
    /// Set when a ridge was added to an otherwise singular estimate.
    pub regularized: bool,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>, label: NoiseLabel) -> Result<Self, CrlbError> {
        let (r, c) = covariance.shape();
        if r != c || r % 2 != 0 {
            return Err(CrlbError::DimensionMismatch {
                expected: r.max(c) + r.max(c) % 2,
                found: c,
            });
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(CrlbError::NotSymmetric);
        }
        Ok(Self {
            covariance,
            label,
            regularized: false,
        })
    }

    /// Number of anchors `N` (the covariance is `2N × 2N`).
    pub fn anchor_count(&self) -> usize {
        self.covariance.nrows() / 2
    }

    pub fn is_positive_definite(&self) -> bool {
        self.covariance.clone().cholesky().is_some()
    }

    /// The same hypothesis with covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            covariance: &self.covariance * factor,
            ..self.clone()
        }
    }
}

fn whitened(jac: &DMatrix<f64>, noise: &NoiseModel) -> Result<DMatrix<f64>, CrlbError> {
    if noise.covariance.nrows() != jac.nrows() {
        return Err(CrlbError::DimensionMismatch {
            expected: jac.nrows(),
            found: noise.covariance.nrows(),
        });
    }
    let chol = noise
        .covariance
        .clone()
        .cholesky()
        .ok_or(CrlbError::SingularCovariance)?;
    Ok(chol
        .l()
        .solve_lower_triangular(jac)
        .expect("Cholesky factor has a nonzero diagonal"))
}

fn gram(x: &DMatrix<f64>) -> Matrix5<f64> {
    let g = x.tr_mul(x);
    let sym = (&g + g.transpose()) * 0.5;
    Matrix5::from_fn(|i, j| sym[(i, j)])
}

/// The 5×5 Fisher information in the spherical parametrization.
pub fn fisher_information(
    eta: &EstimationParameter,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
    noise: &NoiseModel,
) -> Result<Matrix5<f64>, CrlbError> {
    let jac = model_jacobian(eta, anchors, agent_coil, env)?;
    Ok(gram(&whitened(&jac, noise)?))
}

/// Numerical rank of a symmetric PSD matrix after diagonal equilibration.
pub fn numerical_rank(fim: &Matrix5<f64>) -> usize {
    let d = fim.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let scaled = Matrix5::from_fn(|i, j| fim[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.amax();
    if max == 0.0 {
        return 0;
    }
    eig.iter().filter(|&&v| v > RANK_TOLERANCE * max).count()
}

/// `√ trace((J⁻¹)_{1:3,1:3})` from a Fisher information matrix, `+∞` when
/// the matrix is singular.
pub fn peb_from_fisher(fim: &Matrix5<f64>) -> f64 {
    if numerical_rank(fim) < 5 {
        debug!("singular Fisher information, reporting an infinite bound");
        return f64::INFINITY;
    }
    let d = fim.diagonal().map(|v| 1.0 / v.sqrt());
    let scaled = Matrix5::from_fn(|i, j| fim[(i, j)] * d[i] * d[j]);
    let Some(chol) = scaled.cholesky() else {
        return f64::INFINITY;
    };
    let inv = chol.inverse();
    (0..3).map(|i| inv[(i, i)] * d[i] * d[i]).sum::<f64>().sqrt()
}

/// Position error bound in meters.
///
/// The orientation nuisance is parametrized along an orthonormal tangent
/// basis, which yields the same bound as the spherical chart away from the
/// poles and stays regular on them. Returns `+∞` if the information is
/// singular.
pub fn position_error_bound(
    eta: &EstimationParameter,
    anchors: &[Anchor],
    agent_coil: &CoilSpec,
    env: &Environment,
    noise: &NoiseModel,
) -> Result<f64, CrlbError> {
    let jac = tangent_jacobian(eta, anchors, agent_coil, env)?;
    Ok(peb_from_fisher(&gram(&whitened(&jac, noise)?)))
}

/// Mean-subtracted sample covariance of stacked residual vectors.
///
/// With fewer than `2N + 1` samples the estimate is singular; a ridge of
/// `1e-12 · trace / 2N` is then added and the result flagged.
pub fn cov_empirical(residuals: &[ChannelVector], label: NoiseLabel) -> Result<NoiseModel, CrlbError> {
    if residuals.len() < 2 {
        return Err(CrlbError::TooFewSamples(residuals.len()));
    }
    let n = residuals[0].len();
    if let Some(bad) = residuals.iter().find(|r| r.len() != n) {
        return Err(CrlbError::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let samples: Vec<DVector<f64>> = residuals.iter().map(ChannelVector::stacked).collect();
    let count = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(2 * n), |acc, s| acc + s) / count;
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for s in &samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= count - 1.0;
    let cov = (&cov + cov.transpose()) * 0.5;

    let mut model = NoiseModel::new(cov, label)?;
    if residuals.len() < 2 * n + 1 {
        let ridge = 1e-12 * model.covariance.trace() / (2 * n) as f64;
        log::warn!(
            "{} samples for a {}-dimensional covariance; adding ridge {ridge:e}",
            residuals.len(),
            2 * n
        );
        for i in 0..2 * n {
            model.covariance[(i, i)] += ridge;
        }
        model.regularized = true;
    }
    Ok(model)
}

/// Noise power relative to the probe power, `10^((N₀ − P)/10) · B`.
pub fn relative_noise_power(density_dbm_hz: f64, bandwidth: f64, probe_dbm: f64) -> f64 {
    10f64.powf((density_dbm_hz - probe_dbm) / 10.0) * bandwidth
}

/// Independent thermal noise at every anchor: `Σ = σ²/2 · I`.
pub fn cov_thermal_independent(
    anchor_count: usize,
    density_dbm_hz: f64,
    bandwidth: f64,
    probe_dbm: f64,
) -> NoiseModel {
    let variance = relative_noise_power(density_dbm_hz, bandwidth, probe_dbm);
    NoiseModel {
        covariance: DMatrix::identity(2 * anchor_count, 2 * anchor_count) * (0.5 * variance),
        label: NoiseLabel::Case(6),
        regularized: false,
    }
}

/// Zeroth-order spherical Bessel function `sin x / x`.
pub fn spherical_bessel_j0(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Background noise picked up by the anchors on top of a thermal floor.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundNoise {
    /// Background spectral density at the anchors, dBm/Hz.
    pub background_dbm_hz: f64,
    /// Thermal floor, dBm/Hz.
    pub thermal_dbm_hz: f64,
    pub bandwidth: f64,
    pub probe_dbm: f64,
    /// Spatial correlation as a function of `k·d`.
    pub kernel: fn(f64) -> f64,
}

impl Default for BackgroundNoise {
    /// Placeholder background density of −120 dBm/Hz over a −174 dBm/Hz floor.
    fn default() -> Self {
        Self {
            background_dbm_hz: -120.0,
            thermal_dbm_hz: -174.0,
            bandwidth: 5e3,
            probe_dbm: 6.0,
            kernel: spherical_bessel_j0,
        }
    }
}

/// Spatially correlated background plus independent thermal noise.
///
/// The background correlation between anchors `m` and `n` is
/// `kernel(k d_mn) · (o_m · o_n)`; the same block applies to the real and
/// imaginary parts, which are mutually uncorrelated.
pub fn cov_background_correlated(
    anchors: &[Anchor],
    env: &Environment,
    params: &BackgroundNoise,
) -> Result<NoiseModel, CrlbError> {
    let n = anchors.len();
    let k = env.wave_number();
    let background = relative_noise_power(params.background_dbm_hz, params.bandwidth, params.probe_dbm);
    let thermal = relative_noise_power(params.thermal_dbm_hz, params.bandwidth, params.probe_dbm);

    let block = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&anchors[i].pose, &anchors[j].pose);
        let d = (a.position - b.position).norm();
        background * (params.kernel)(k * d) * a.orientation.dot(&b.orientation)
    });
    let block = (&block + block.transpose()) * 0.5;
    let eig = SymmetricEigen::new(block);
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -1e-9 * max {
        return Err(CrlbError::NotPsd(min));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let block = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let block = (&block + block.transpose()) * 0.5;

    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = 0.5 * block[(i, j)] + if i == j { 0.5 * thermal } else { 0.0 };
            cov[(i, j)] = v;
            cov[(n + i, n + j)] = v;
        }
    }
    Ok(NoiseModel {
        covariance: cov,
        label: NoiseLabel::Case(5),
        regularized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use approx::assert_relative_eq;

    fn setup() -> (Vec<Anchor>, CoilSpec, Environment) {
        let coil = CoilSpec::circular(0.115, 10, 0.36).unwrap();
        let env = Environment::free_space(500e3);
        let positions = [
            [0.0, 0.0, 2.0],
            [1.5, 0.0, 0.68],
            [3.0, 0.0, 2.0],
            [3.0, 1.5, 0.68],
            [3.0, 3.0, 2.0],
            [1.5, 3.0, 0.68],
            [0.0, 3.0, 2.0],
            [0.0, 1.5, 0.68],
        ];
        let anchors = positions
            .iter()
            .map(|p| {
                let p = Vector3::from(*p);
                let pose = Pose::from_direction(p, Vector3::new(1.5, 1.5, 1.0) - p).unwrap();
                Anchor::new(pose, coil)
            })
            .collect();
        (anchors, coil, env)
    }

    fn eta() -> EstimationParameter {
        EstimationParameter {
            position: Vector3::new(1.2, 1.7, 0.9),
            azimuth: 0.4,
            polar: 1.1,
        }
    }

    #[test]
    fn thermal_noise_level() {
        let noise = cov_thermal_independent(8, -174.0, 5e3, 6.0);
        let sigma2 = 2.0 * noise.covariance[(0, 0)];
        assert_relative_eq!(sigma2, 5.0e-15, max_relative = 1e-12);
        assert_relative_eq!(sigma2.sqrt(), 7.07e-8, max_relative = 1e-3);
        let wide = cov_thermal_independent(8, -174.0, 10e3, 6.0);
        assert_relative_eq!(wide.covariance[(3, 3)], 2.0 * noise.covariance[(3, 3)], max_relative = 1e-12);
        let loud = cov_thermal_independent(8, -174.0, 5e3, 16.0);
        assert_relative_eq!(loud.covariance[(3, 3)], 0.1 * noise.covariance[(3, 3)], max_relative = 1e-12);
    }

    #[test]
    fn fim_scales_inversely_with_noise() {
        let (anchors, coil, env) = setup();
        let noise = cov_thermal_independent(8, -174.0, 5e3, 6.0);
        let j1 = fisher_information(&eta(), &anchors, &coil, &env, &noise).unwrap();
        let j4 = fisher_information(&eta(), &anchors, &coil, &env, &noise.scaled(4.0)).unwrap();
        assert_relative_eq!(j4 * 4.0, j1, max_relative = 1e-12);
        assert_eq!(numerical_rank(&j1), 5);
        assert_eq!(j1, j1.transpose());
    }

    #[test]
    fn pole_makes_spherical_fim_singular() {
        let (anchors, coil, env) = setup();
        let noise = cov_thermal_independent(8, -174.0, 5e3, 6.0);
        let pole = EstimationParameter { polar: 0.0, ..eta() };
        let jac = model_jacobian(&pole, &anchors, &coil, &env).unwrap();
        assert!(jac.column(3).amax() == 0.0);
        let fim = fisher_information(&pole, &anchors, &coil, &env, &noise).unwrap();
        assert!(numerical_rank(&fim) <= 4);
        assert!(peb_from_fisher(&fim).is_infinite());
        // the tangent chart stays regular
        let peb = position_error_bound(&pole, &anchors, &coil, &env, &noise).unwrap();
        assert!(peb.is_finite() && peb > 0.0);
    }

    #[test]
    fn tangent_and_spherical_charts_agree() {
        let (anchors, coil, env) = setup();
        let noise = cov_thermal_independent(8, -174.0, 5e3, 6.0);
        let fim = fisher_information(&eta(), &anchors, &coil, &env, &noise).unwrap();
        let peb = position_error_bound(&eta(), &anchors, &coil, &env, &noise).unwrap();
        assert_relative_eq!(peb_from_fisher(&fim), peb, max_relative = 1e-8);
    }

    #[test]
    fn empirical_covariance_of_constant_input() {
        let r = vec![ChannelVector(vec![Complex64::new(1.0, 2.0); 2]); 10];
        let m = cov_empirical(&r, NoiseLabel::Case(1)).unwrap();
        assert!(m.covariance.amax() == 0.0);
        assert!(!m.regularized);
        assert!(!m.is_positive_definite());
        assert!(matches!(cov_empirical(&r[..1], NoiseLabel::Case(1)), Err(CrlbError::TooFewSamples(1))));
    }

    #[test]
    fn empirical_covariance_flags_few_samples() {
        let r: Vec<_> = (0..4)
            .map(|i| ChannelVector(vec![Complex64::new(i as f64, 1.0), Complex64::new(0.0, (i * i) as f64)]))
            .collect();
        let m = cov_empirical(&r, NoiseLabel::Case(2)).unwrap();
        assert!(m.regularized);
        assert!(m.is_positive_definite());
    }

    #[test]
    fn background_single_anchor() {
        let (anchors, _, env) = setup();
        let params = BackgroundNoise::default();
        let m = cov_background_correlated(&anchors[..1], &env, &params).unwrap();
        let expected = relative_noise_power(-120.0, 5e3, 6.0) + relative_noise_power(-174.0, 5e3, 6.0);
        assert_eq!(m.covariance.shape(), (2, 2));
        assert_relative_eq!(m.covariance[(0, 0)] + m.covariance[(1, 1)], expected, max_relative = 1e-12);
        assert_eq!(m.covariance[(0, 1)], 0.0);
    }

    #[test]
    fn background_correlation_structure() {
        let (_, coil, env) = setup();
        let params = BackgroundNoise { thermal_dbm_hz: -400.0, ..BackgroundNoise::default() };
        let at = |p: [f64; 3], o: Vector3<f64>| Anchor::new(Pose::new(Vector3::from(p), o).unwrap(), coil);
        let parallel = [at([0.0; 3], Vector3::z()), at([0.0, 0.0, 1e-6], Vector3::z())];
        let m = cov_background_correlated(&parallel, &env, &params).unwrap();
        let rho = m.covariance[(0, 1)] / (m.covariance[(0, 0)] * m.covariance[(1, 1)]).sqrt();
        assert_relative_eq!(rho, 1.0, epsilon = 1e-9);
        let orthogonal = [at([0.0; 3], Vector3::z()), at([1.0, 0.0, 0.0], Vector3::x())];
        let m = cov_background_correlated(&orthogonal, &env, &params).unwrap();
        assert_eq!(m.covariance[(0, 1)], 0.0);
        assert_eq!(m.covariance[(2, 3)], 0.0);
    }

    #[test]
    fn bessel_kernel() {
        assert_eq!(spherical_bessel_j0(0.0), 1.0);
        assert_relative_eq!(spherical_bessel_j0(PI), 0.0, epsilon = 1e-15);
        assert_relative_eq!(spherical_bessel_j0(1e-4 * 0.999), (1e-4f64 * 0.999).sin() / (1e-4 * 0.999), max_relative = 1e-15);
    }
}
