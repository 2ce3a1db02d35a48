//! JSON scenario configuration.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CalibrationMode, HarnessError};
use crate::calib::PosePrior;
use crate::crlb::BackgroundNoise;
use crate::emsim::{SimulatedCoil, SpiderwebSpec};
use crate::locate::{Bounds, WlsConfig};
use crate::model::{
    spherical_to_unit, unit_to_spherical, Anchor, CoilSpec, Environment, Pose, SPEED_OF_LIGHT,
    VACUUM_PERMEABILITY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub f_hz: f64,
    pub mu: f64,
    pub c: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            f_hz: 500e3,
            mu: VACUUM_PERMEABILITY,
            c: SPEED_OF_LIGHT,
        }
    }
}

/// Spiderweb winding plus series resistance. Shared by agent and anchors
/// unless an anchor overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoilConfig {
    pub inner_diameter: f64,
    pub outer_diameter: f64,
    pub turns: u32,
    pub segments_per_turn: u32,
    pub include_feed: bool,
    pub feed_length: f64,
    pub feed_spacing: f64,
    pub resistance: f64,
}

impl Default for CoilConfig {
    fn default() -> Self {
        let s = SpiderwebSpec::default();
        Self {
            inner_diameter: s.inner_diameter,
            outer_diameter: s.outer_diameter,
            turns: s.turns,
            segments_per_turn: s.segments_per_turn,
            include_feed: s.include_feed,
            feed_length: s.feed_length,
            feed_spacing: s.feed_spacing,
            resistance: 0.36,
        }
    }
}

impl CoilConfig {
    pub fn spiderweb(&self) -> SpiderwebSpec {
        SpiderwebSpec {
            inner_diameter: self.inner_diameter,
            outer_diameter: self.outer_diameter,
            turns: self.turns,
            segments_per_turn: self.segments_per_turn,
            include_feed: self.include_feed,
            feed_length: self.feed_length,
            feed_spacing: self.feed_spacing,
        }
    }

    /// Dipole-model parameters: mean turn area, turns and resistance.
    pub fn model(&self) -> Result<CoilSpec, HarnessError> {
        self.spiderweb().validate()?;
        Ok(CoilSpec::new(self.spiderweb().mean_turn_area(), self.turns, self.resistance)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub pos: [f64; 3],
    /// Radians.
    pub azimuth: f64,
    /// Radians.
    pub polar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<CoilConfig>,
}

impl AnchorConfig {
    fn facing(pos: [f64; 3], target: Vector3<f64>) -> Self {
        let (azimuth, polar) = unit_to_spherical(&(target - Vector3::from(pos)).normalize());
        Self {
            pos,
            azimuth,
            polar,
            spec: None,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::from_angles(Vector3::from(self.pos), self.azimuth, self.polar)
    }
}

/// Eight anchors on the border of a 3 m × 3 m area, corners at 2 m and edge
/// midpoints at 0.68 m, each pointing at (1.5, 1.5, 1.0).
pub fn default_anchors() -> Vec<AnchorConfig> {
    let center = Vector3::new(1.5, 1.5, 1.0);
    [
        [0.0, 0.0, 2.0],
        [1.5, 0.0, 0.68],
        [3.0, 0.0, 2.0],
        [3.0, 1.5, 0.68],
        [3.0, 3.0, 2.0],
        [1.5, 3.0, 0.68],
        [0.0, 3.0, 2.0],
        [0.0, 1.5, 0.68],
    ]
    .into_iter()
    .map(|p| AnchorConfig::facing(p, center))
    .collect()
}

/// Agent deployments: every orientation at every lattice point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Need not be normalized.
    pub orientations: Vec<[f64; 3]>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            x: vec![0.75, 1.5, 2.25],
            y: vec![0.75, 1.5, 2.25],
            z: vec![0.3, 0.6, 0.9, 1.2, 1.5],
            orientations: vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [h, h, 0.0],
                [0.0, h, h],
                [h, 0.0, h],
            ],
        }
    }
}

impl GridConfig {
    /// Orientation-major order, so deployment `i` (1-based) has orientation
    /// block `(i − 1) / positions` and position `(i − 1) % positions`.
    pub fn poses(&self) -> Result<Vec<Pose>, HarnessError> {
        let mut positions = Vec::new();
        for &x in &self.x {
            for &y in &self.y {
                for &z in &self.z {
                    positions.push(Vector3::new(x, y, z));
                }
            }
        }
        let mut poses = Vec::with_capacity(positions.len() * self.orientations.len());
        for o in &self.orientations {
            for p in &positions {
                poses.push(Pose::from_direction(*p, Vector3::from(*o))?);
            }
        }
        if poses.is_empty() {
            return Err(HarnessError::Config("deployment grid is empty".into()));
        }
        Ok(poses)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsSettings {
    pub num_initializations: usize,
    pub lm_max_iterations: usize,
    pub lm_initial_damping: f64,
    pub step_tolerance: f64,
    pub residual_tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_bounds: Option<BoundsConfig>,
}

impl Default for WlsSettings {
    fn default() -> Self {
        let d = WlsConfig::default();
        Self {
            num_initializations: d.num_initializations,
            lm_max_iterations: d.lm_max_iterations,
            lm_initial_damping: d.lm_initial_damping,
            step_tolerance: d.step_tolerance,
            residual_tolerance: d.residual_tolerance,
            init_bounds: None,
        }
    }
}

impl WlsSettings {
    pub fn to_config(&self, seed: u64) -> Result<WlsConfig, HarnessError> {
        let init_bounds = match &self.init_bounds {
            Some(b) => Some(Bounds::new(Vector3::from(b.min), Vector3::from(b.max))?),
            None => None,
        };
        Ok(WlsConfig {
            num_initializations: self.num_initializations,
            init_bounds,
            lm_max_iterations: self.lm_max_iterations,
            lm_initial_damping: self.lm_initial_damping,
            step_tolerance: self.step_tolerance,
            residual_tolerance: self.residual_tolerance,
            rng_seed: seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    /// Prior stddev per axis, meters.
    pub position_stddev: f64,
    pub angle_stddev_deg: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: CalibrationMode::Full,
            position_stddev: PosePrior::DEFAULT_POSITION_STDDEV,
            angle_stddev_deg: PosePrior::DEFAULT_ANGLE_STDDEV_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PebConfig {
    /// Noise cases evaluated by the pipeline.
    pub cases: Vec<u8>,
    pub thermal_dbm_hz: f64,
    /// Placeholder level for case 5; not a measured value.
    pub background_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub probe_dbm: f64,
}

impl Default for PebConfig {
    fn default() -> Self {
        let b = BackgroundNoise::default();
        Self {
            cases: vec![4, 5, 6],
            thermal_dbm_hz: b.thermal_dbm_hz,
            background_dbm_hz: b.background_dbm_hz,
            bandwidth_hz: b.bandwidth,
            probe_dbm: b.probe_dbm,
        }
    }
}

impl PebConfig {
    pub fn background(&self) -> BackgroundNoise {
        BackgroundNoise {
            background_dbm_hz: self.background_dbm_hz,
            thermal_dbm_hz: self.thermal_dbm_hz,
            bandwidth: self.bandwidth_hz,
            probe_dbm: self.probe_dbm,
            ..BackgroundNoise::default()
        }
    }
}

/// Random installation error: the simulated anchors deviate from the
/// configured (nominal) poses that calibration and localization start from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub position_stddev: f64,
    pub angle_stddev_deg: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            position_stddev: 0.01,
            angle_stddev_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub environment: EnvironmentConfig,
    pub coil: CoilConfig,
    pub anchors: Vec<AnchorConfig>,
    pub grid: GridConfig,
    pub wls: WlsSettings,
    pub calibration: CalibrationConfig,
    pub peb: PebConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            environment: EnvironmentConfig::default(),
            coil: CoilConfig::default(),
            anchors: default_anchors(),
            grid: GridConfig::default(),
            wls: WlsSettings::default(),
            calibration: CalibrationConfig::default(),
            peb: PebConfig::default(),
            perturbation: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A fully built experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub environment: Environment,
    pub agent_coil: CoilSpec,
    pub agent_winding: SpiderwebSpec,
    pub agent_resistance: f64,
    /// Installed (nominal) anchors, uncalibrated.
    pub anchors: Vec<Anchor>,
    /// Anchors as simulated; differ from `anchors` only under perturbation.
    pub simulated_anchors: Vec<SimulatedCoil>,
    pub deployments: Vec<Pose>,
    pub wls: WlsSettings,
    pub calibration: CalibrationConfig,
    pub peb: PebConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, HarnessError> {
        let env_cfg = &config.environment;
        let environment = Environment::new(env_cfg.f_hz, env_cfg.mu, env_cfg.c)?;
        if config.anchors.is_empty() {
            return Err(HarnessError::Config("at least one anchor is required".into()));
        }
        if config.wls.num_initializations == 0 {
            return Err(HarnessError::Config("wls.num_initializations must be at least 1".into()));
        }
        if config.calibration.position_stddev <= 0.0 || config.calibration.angle_stddev_deg <= 0.0 {
            return Err(HarnessError::Config("calibration prior stddevs must be positive".into()));
        }
        config.wls.to_config(config.seed)?;
        let agent_coil = config.coil.model()?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a11c_e000_0001);
        let mut anchors = Vec::with_capacity(config.anchors.len());
        let mut simulated_anchors = Vec::with_capacity(config.anchors.len());
        for a in &config.anchors {
            let coil_cfg = a.spec.as_ref().unwrap_or(&config.coil);
            let nominal = a.pose();
            anchors.push(Anchor::new(nominal, coil_cfg.model()?));
            let actual = match &config.perturbation {
                Some(p) => perturb(&nominal, p, &mut rng)?,
                None => nominal,
            };
            simulated_anchors.push(SimulatedCoil {
                spec: coil_cfg.spiderweb(),
                pose: actual,
                resistance: coil_cfg.resistance,
            });
        }

        Ok(Self {
            environment,
            agent_coil,
            agent_winding: config.coil.spiderweb(),
            agent_resistance: config.coil.resistance,
            anchors,
            simulated_anchors,
            deployments: config.grid.poses()?,
            wls: config.wls.clone(),
            calibration: config.calibration.clone(),
            peb: config.peb.clone(),
            seed: config.seed,
        })
    }

    /// WLS settings for deployment `index`, with a seed derived from the
    /// scenario seed so results do not depend on processing order.
    pub fn wls_config(&self, index: usize) -> WlsConfig {
        let seed = self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.wls
            .to_config(seed)
            .expect("validated when the scenario was built")
    }

    pub fn priors(&self) -> Vec<PosePrior> {
        self.anchors
            .iter()
            .map(|a| {
                PosePrior::new(
                    &a.pose,
                    Vector3::repeat(self.calibration.position_stddev),
                    self.calibration.angle_stddev_deg.to_radians(),
                )
                .expect("validated when the scenario was built")
            })
            .collect()
    }
}

fn perturb(nominal: &Pose, p: &PerturbationConfig, rng: &mut ChaCha8Rng) -> Result<Pose, HarnessError> {
    let position = Normal::new(0.0, p.position_stddev)
        .map_err(|_| HarnessError::Config("perturbation position_stddev must be non-negative".into()))?;
    let angle = Normal::new(0.0, p.angle_stddev_deg.to_radians())
        .map_err(|_| HarnessError::Config("perturbation angle_stddev_deg must be non-negative".into()))?;
    let dp = Vector3::from_fn(|_, _| position.sample(rng));
    let (az, polar) = unit_to_spherical(&nominal.orientation);
    let o = spherical_to_unit(az + angle.sample(rng), polar + angle.sample(rng));
    Ok(Pose::new(nominal.position + dp, o)?)
}
