//! Complex baseband channel model for a magneto-inductive coil-to-coil link.
//!
//! A link between an anchor coil and the agent coil is described by
//!
//! ```text
//! h = γ (b_LOS + b_NLOS)ᵀ o_ag
//! ```
//!
//! where `b_LOS` is the direct-path field (reactive and radiative terms of a
//! small loop), `b_NLOS` a spatially constant multipath field found by
//! calibration and `γ` the technical coupling coefficient which collects coil
//! parameters, the carrier frequency and the matching factor `ξ`.
//!
//! All quantities are SI. Channel coefficients are unitless power-wave ratios.

use std::f64::consts::PI;
use std::ops::Index;

use nalgebra::{DVector, Matrix3, Vector3};
use num_complex::Complex64;
use thiserror::Error;

/// Complex 3-vector used for field vectors.
pub type CVector3 = Vector3<Complex64>;

pub const VACUUM_PERMEABILITY: f64 = 4.0e-7 * PI;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Links shorter than this are rejected as degenerate colocation.
pub const DEFAULT_MIN_DISTANCE: f64 = 1e-3;

const UNIT_NORM_TOLERANCE: f64 = 1e-9;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("link distance {distance:e} m is below the minimum of {min:e} m")]
    ZeroDistance { distance: f64, min: f64 },
    #[error("orientation is not a unit vector (norm {norm})")]
    NonUnitOrientation { norm: f64 },
    #[error("invalid coil: {0}")]
    InvalidCoil(&'static str),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(&'static str),
    #[error("anchor {index}: {source}")]
    Anchor {
        index: usize,
        #[source]
        source: Box<ModelError>,
    },
    #[error("at least one anchor is required")]
    NoAnchors,
}

impl ModelError {
    pub(crate) fn at_anchor(self, index: usize) -> Self {
        ModelError::Anchor {
            index,
            source: Box::new(self),
        }
    }

    /// Strips anchor index wrappers.
    pub fn root(&self) -> &ModelError {
        match self {
            ModelError::Anchor { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Coil center position and unit axis orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Result<Self, ModelError> {
        let norm = orientation.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(ModelError::NonUnitOrientation { norm });
        }
        Ok(Self {
            position,
            orientation,
        })
    }

    /// Builds a pose from an arbitrary nonzero axis direction.
    pub fn from_direction(
        position: Vector3<f64>,
        direction: Vector3<f64>,
    ) -> Result<Self, ModelError> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(ModelError::NonUnitOrientation { norm });
        }
        Ok(Self {
            position,
            orientation: direction / norm,
        })
    }

    pub fn from_angles(position: Vector3<f64>, azimuth: f64, polar: f64) -> Self {
        Self {
            position,
            orientation: spherical_to_unit(azimuth, polar),
        }
    }

    /// `(azimuth, polar)` of the orientation.
    pub fn angles(&self) -> (f64, f64) {
        unit_to_spherical(&self.orientation)
    }
}

/// Electrical and geometric coil parameters entering the coupling coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilSpec {
    /// Mean enclosed area over all turns, m².
    pub surface_area: f64,
    pub turns: u32,
    /// Ohmic resistance, Ω.
    pub resistance: f64,
}

impl CoilSpec {
    pub fn new(surface_area: f64, turns: u32, resistance: f64) -> Result<Self, ModelError> {
        if !(surface_area.is_finite() && surface_area > 0.0) {
            return Err(ModelError::InvalidCoil("surface area must be positive"));
        }
        if turns == 0 {
            return Err(ModelError::InvalidCoil("at least one turn is required"));
        }
        if !(resistance.is_finite() && resistance > 0.0) {
            return Err(ModelError::InvalidCoil("resistance must be positive"));
        }
        Ok(Self {
            surface_area,
            turns,
            resistance,
        })
    }

    /// Coil whose mean turn is a circle of the given diameter.
    pub fn circular(mean_diameter: f64, turns: u32, resistance: f64) -> Result<Self, ModelError> {
        let r = 0.5 * mean_diameter;
        Self::new(PI * r * r, turns, resistance)
    }
}

/// Carrier frequency and propagation medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    pub carrier_frequency: f64,
    pub permeability: f64,
    pub wave_speed: f64,
}

impl Environment {
    /// Free space at the given carrier frequency.
    pub fn free_space(carrier_frequency: f64) -> Self {
        Self {
            carrier_frequency,
            permeability: VACUUM_PERMEABILITY,
            wave_speed: SPEED_OF_LIGHT,
        }
    }

    pub fn new(
        carrier_frequency: f64,
        permeability: f64,
        wave_speed: f64,
    ) -> Result<Self, ModelError> {
        for (value, what) in [
            (carrier_frequency, "carrier frequency must be positive"),
            (permeability, "permeability must be positive"),
            (wave_speed, "wave speed must be positive"),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidEnvironment(what));
            }
        }
        Ok(Self {
            carrier_frequency,
            permeability,
            wave_speed,
        })
    }

    pub fn wave_number(&self) -> f64 {
        2.0 * PI * self.carrier_frequency / self.wave_speed
    }

    pub fn wavelength(&self) -> f64 {
        self.wave_speed / self.carrier_frequency
    }
}

/// A stationary coil with its calibration state.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub pose: Pose,
    pub coil: CoilSpec,
    /// Matching factor ξ; physical values satisfy |ξ| ≤ 1.
    pub matching_factor: Complex64,
    /// Constant multipath field b_NLOS.
    pub multipath_field: CVector3,
}

impl Anchor {
    /// Uncalibrated anchor: ξ = 1, b_NLOS = 0.
    pub fn new(pose: Pose, coil: CoilSpec) -> Self {
        Self {
            pose,
            coil,
            matching_factor: Complex64::new(1.0, 0.0),
            multipath_field: CVector3::zeros(),
        }
    }

    pub fn with_calibration(mut self, matching_factor: Complex64, multipath_field: CVector3) -> Self {
        self.matching_factor = matching_factor;
        self.multipath_field = multipath_field;
        self
    }

    /// Whether the matching factor is within the passive bound |ξ| ≤ 1.
    pub fn is_passive(&self) -> bool {
        self.matching_factor.norm() <= 1.0
    }
}

/// Geometry of one anchor-to-agent link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub distance: f64,
    /// Unit vector from anchor to agent.
    pub direction: Vector3<f64>,
    /// ½(3eeᵀ − I) o_an
    pub near_field: Vector3<f64>,
    /// (I − eeᵀ) o_an
    pub far_field: Vector3<f64>,
}

pub fn link_geometry(
    anchor_pose: &Pose,
    agent_position: &Vector3<f64>,
) -> Result<LinkGeometry, ModelError> {
    link_geometry_with_min(anchor_pose, agent_position, DEFAULT_MIN_DISTANCE)
}

pub fn link_geometry_with_min(
    anchor_pose: &Pose,
    agent_position: &Vector3<f64>,
    min_distance: f64,
) -> Result<LinkGeometry, ModelError> {
    let offset = agent_position - anchor_pose.position;
    let distance = offset.norm();
    if !(distance >= min_distance) {
        return Err(ModelError::ZeroDistance {
            distance,
            min: min_distance,
        });
    }
    let e = offset / distance;
    let o = anchor_pose.orientation;
    let eo = e.dot(&o);
    Ok(LinkGeometry {
        distance,
        direction: e,
        near_field: (3.0 * eo * e - o) * 0.5,
        far_field: o - eo * e,
    })
}

/// Direct-path field b_LOS for wave number `k`.
pub fn direct_path_field(geometry: &LinkGeometry, k: f64) -> CVector3 {
    let (c1, c2) = radial_terms(k * geometry.distance);
    let phase = J * Complex64::from_polar(1.0, -k * geometry.distance);
    (geometry.near_field.map(Complex64::from) * c1 + geometry.far_field.map(Complex64::from) * c2)
        * phase
}

/// `(1/x³ + j/x², 1/(2x))`
fn radial_terms(x: f64) -> (Complex64, Complex64) {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (
        Complex64::new(inv2 * inv, inv2),
        Complex64::new(0.5 * inv, 0.0),
    )
}

/// b_LOS together with its Jacobian with respect to the agent position.
///
/// Column `j` of the returned matrix is ∂b_LOS/∂p_j.
pub fn direct_path_field_gradient(
    anchor_pose: &Pose,
    agent_position: &Vector3<f64>,
    k: f64,
) -> Result<(CVector3, Matrix3<Complex64>), ModelError> {
    let g = link_geometry(anchor_pose, agent_position)?;
    let d = g.distance;
    let x = k * d;
    let e = g.direction;
    let o = anchor_pose.orientation;

    let (c1, c2) = radial_terms(x);
    let inv = 1.0 / x;
    let dc1 = Complex64::new(-3.0 * inv.powi(4), -2.0 * inv.powi(3)) * k;
    let dc2 = Complex64::new(-0.5 * inv * inv * k, 0.0);
    let f = J * Complex64::from_polar(1.0, -x);
    let df = -J * k * f;

    let bnf = g.near_field.map(Complex64::from);
    let bff = g.far_field.map(Complex64::from);
    let field = (bnf * c1 + bff * c2) * f;

    // d(e eᵀ o)/dp = [(eᵀo) I + e oᵀ] (I − eeᵀ) / d
    let projector = Matrix3::identity() - e * e.transpose();
    let p = (Matrix3::identity() * e.dot(&o) + e * o.transpose()) * projector / d;

    let radial = (bnf * c1 + bff * c2) * df + (bnf * dc1 + bff * dc2) * f;
    let grad = radial * e.transpose().map(Complex64::from)
        + p.map(Complex64::from) * (f * (c1 * 1.5 - c2));
    Ok((field, grad))
}

/// Technical coupling coefficient γ.
pub fn coupling_coefficient(
    agent_coil: &CoilSpec,
    anchor_coil: &CoilSpec,
    env: &Environment,
    matching_factor: Complex64,
) -> Complex64 {
    let k = env.wave_number();
    let magnitude = env.permeability
        * agent_coil.surface_area
        * anchor_coil.surface_area
        * f64::from(agent_coil.turns)
        * f64::from(anchor_coil.turns)
        / (4.0 * agent_coil.resistance * anchor_coil.resistance).sqrt()
        * k.powi(3)
        * env.carrier_frequency;
    matching_factor * magnitude
}

/// Total field `b_LOS + b_NLOS` seen by the agent at `agent_position`.
pub fn total_field(
    anchor: &Anchor,
    agent_position: &Vector3<f64>,
    env: &Environment,
) -> Result<CVector3, ModelError> {
    let g = link_geometry(&anchor.pose, agent_position)?;
    Ok(direct_path_field(&g, env.wave_number()) + anchor.multipath_field)
}

/// `γ (b_LOS + b_NLOS)ᵀ o_ag` (unconjugated transpose).
pub fn channel_coefficient(
    anchor: &Anchor,
    agent: &Pose,
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Complex64, ModelError> {
    let gamma = coupling_coefficient(agent_coil, &anchor.coil, env, anchor.matching_factor);
    let field = total_field(anchor, &agent.position, env)?;
    Ok(gamma * project(&field, &agent.orientation))
}

/// Magnetoquasistatic part of the link: `j γ (kd)⁻³ b_nfᵀ o_ag`.
///
/// Ignores multipath, the retardation phase and the radiative terms.
pub fn near_field_coefficient(
    anchor: &Anchor,
    agent: &Pose,
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<Complex64, ModelError> {
    let gamma = coupling_coefficient(agent_coil, &anchor.coil, env, anchor.matching_factor);
    let g = link_geometry(&anchor.pose, &agent.position)?;
    let x = env.wave_number() * g.distance;
    Ok(J * gamma * g.near_field.dot(&agent.orientation) / (x * x * x))
}

pub fn channel_vector(
    anchors: &[Anchor],
    agent: &Pose,
    agent_coil: &CoilSpec,
    env: &Environment,
) -> Result<ChannelVector, ModelError> {
    if anchors.is_empty() {
        return Err(ModelError::NoAnchors);
    }
    anchors
        .iter()
        .enumerate()
        .map(|(n, a)| channel_coefficient(a, agent, agent_coil, env).map_err(|e| e.at_anchor(n)))
        .collect::<Result<Vec<_>, _>>()
        .map(ChannelVector)
}

/// `fᵀ o` for a complex field and a real direction.
pub fn project(field: &CVector3, direction: &Vector3<f64>) -> Complex64 {
    field[0] * direction[0] + field[1] * direction[1] + field[2] * direction[2]
}

/// Channel coefficients of all anchors for one agent deployment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelVector(pub Vec<Complex64>);

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|h| h.re.is_finite() && h.im.is_finite())
    }

    /// `[Re h; Im h]`
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.0.len();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.0[i].re
            } else {
                self.0[i - n].im
            }
        })
    }
}

impl Index<usize> for ChannelVector {
    type Output = Complex64;

    fn index(&self, index: usize) -> &Complex64 {
        &self.0[index]
    }
}

impl From<Vec<Complex64>> for ChannelVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

/// `(sinθ cosφ, sinθ sinφ, cosθ)`
pub fn spherical_to_unit(azimuth: f64, polar: f64) -> Vector3<f64> {
    let (st, ct) = polar.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Inverse of [`spherical_to_unit`]; the azimuth is 0 at the poles.
pub fn unit_to_spherical(o: &Vector3<f64>) -> (f64, f64) {
    let rho = o[0].hypot(o[1]);
    let polar = rho.atan2(o[2]);
    let azimuth = if rho == 0.0 { 0.0 } else { o[1].atan2(o[0]) };
    (azimuth, polar)
}

/// ∂o/∂φ and ∂o/∂θ of the spherical parametrization.
pub fn spherical_tangents(azimuth: f64, polar: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (st, ct) = polar.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    (
        Vector3::new(-st * sp, st * cp, 0.0),
        Vector3::new(ct * cp, ct * sp, -st),
    )
}
