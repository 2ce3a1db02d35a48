//! Magnetoquasistatic thin-wire simulation.
//!
//! Coils are represented as closed polylines. The mutual inductance between
//! two of them follows from the Neumann double line integral
//!
//! ```text
//! M = μ/(4π) ∮∮ (dl_a · dl_b) / r
//! ```
//!
//! evaluated as a double sum over segment midpoints. From `M`, the
//! channel coefficient of two conjugately matched, resonant coils in the
//! weak-coupling regime is `h = j ω M / (2 √(R_a R_b))`.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ChannelVector, Environment, Pose};

/// Paths must be farther apart than this many segment lengths.
const PROXIMITY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmsimError {
    #[error("invalid coil spec: {0}")]
    InvalidSpec(&'static str),
    #[error("invalid wire path: {0}")]
    InvalidPath(String),
    #[error("paths are {distance:e} m apart, at least {required:e} m needed for the segment size")]
    PathsTooClose { distance: f64, required: f64 },
    #[error("segment of {length:e} m exceeds the quasistatic limit of {limit:e} m")]
    SegmentTooLong { length: f64, limit: f64 },
    #[error("deployment {deployment}, anchor {anchor}: {source}")]
    Link {
        deployment: usize,
        anchor: usize,
        #[source]
        source: Box<EmsimError>,
    },
    #[error("{} link(s) failed, first: {}", .0.len(), .0[0])]
    Dataset(Vec<EmsimError>),
    #[error("csv: {0}")]
    Csv(String),
}

/// Ordered polyline of a thin wire, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct WirePath {
    points: Vec<Vector3<f64>>,
    closed: bool,
}

impl WirePath {
    pub fn new(points: Vec<Vector3<f64>>, closed: bool) -> Result<Self, EmsimError> {
        if points.len() < 3 {
            return Err(EmsimError::InvalidPath(format!(
                "{} points given, at least 3 required",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(EmsimError::InvalidPath(format!("point {i} is not finite")));
        }
        let path = Self { points, closed };
        if let Some(i) = path.segments().position(|(a, b)| a == b) {
            return Err(EmsimError::InvalidPath(format!(
                "segment {i} has coincident end points"
            )));
        }
        Ok(path)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn segments(&self) -> impl Iterator<Item = (&Vector3<f64>, &Vector3<f64>)> + '_ {
        let closing = self
            .closed
            .then(|| (&self.points[self.points.len() - 1], &self.points[0]));
        self.points.windows(2).map(|w| (&w[0], &w[1])).chain(closing)
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1 + usize::from(self.closed)
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b - a).norm()).sum()
    }

    pub fn max_segment_length(&self) -> f64 {
        self.segments().map(|(a, b)| (b - a).norm()).fold(0.0, f64::max)
    }

    /// `½ Σ p_i × p_{i+1}` over the polygon closed by its first point.
    pub fn vector_area(&self) -> Vector3<f64> {
        let n = self.points.len();
        (0..n)
            .map(|i| self.points[i].cross(&self.points[(i + 1) % n]))
            .sum::<Vector3<f64>>()
            * 0.5
    }

    /// `(midpoint, dl)` per segment, flattened.
    fn elements(&self) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        self.segments()
            .map(|(a, b)| {
                let m = (a + b) * 0.5;
                let dl = b - a;
                ([m.x, m.y, m.z], [dl.x, dl.y, dl.z])
            })
            .unzip()
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.points.len().cmp(&other.points.len()).then_with(|| {
            self.points
                .iter()
                .flat_map(|p| p.iter())
                .zip(other.points.iter().flat_map(|p| p.iter()))
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), EmsimError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| EmsimError::Csv(e.to_string());
        w.write_record(["x", "y", "z"]).map_err(csv_err)?;
        for p in &self.points {
            w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| EmsimError::Csv(e.to_string()))
    }

    pub fn from_csv<R: Read>(reader: R, closed: bool) -> Result<Self, EmsimError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers().map_err(|e| EmsimError::Csv(e.to_string()))?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| EmsimError::Csv(format!("missing column `{name}`")))
        };
        let cols = [column("x")?, column("y")?, column("z")?];
        let mut points = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| EmsimError::Csv(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let mut xyz = [0.0; 3];
            for (v, &c) in xyz.iter_mut().zip(&cols) {
                *v = record
                    .get(c)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| EmsimError::Csv(format!("line {line}: bad number in column {c}")))?;
            }
            points.push(Vector3::from(xyz));
        }
        Self::new(points, closed)
    }
}

/// Flat spiral coil wound between two diameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiderwebSpec {
    pub inner_diameter: f64,
    pub outer_diameter: f64,
    pub turns: u32,
    pub segments_per_turn: u32,
    pub include_feed: bool,
    pub feed_length: f64,
    /// Axial offset of the return lead, which crosses over the winding.
    pub feed_spacing: f64,
}

impl Default for SpiderwebSpec {
    /// 10 turns between 100 mm and 130 mm. The feed runs 10 cm radially
    /// outward with the return lead 1 cm above the winding plane.
    fn default() -> Self {
        Self {
            inner_diameter: 0.100,
            outer_diameter: 0.130,
            turns: 10,
            segments_per_turn: 72,
            include_feed: true,
            feed_length: 0.10,
            feed_spacing: 0.01,
        }
    }
}

impl SpiderwebSpec {
    pub fn validate(&self) -> Result<(), EmsimError> {
        if !(self.inner_diameter.is_finite() && self.inner_diameter > 0.0) {
            return Err(EmsimError::InvalidSpec("inner diameter must be positive"));
        }
        if !(self.outer_diameter.is_finite() && self.outer_diameter >= self.inner_diameter) {
            return Err(EmsimError::InvalidSpec(
                "outer diameter must not be smaller than the inner diameter",
            ));
        }
        if self.turns == 0 {
            return Err(EmsimError::InvalidSpec("at least one turn is required"));
        }
        if self.segments_per_turn < 16 {
            return Err(EmsimError::InvalidSpec("at least 16 segments per turn are required"));
        }
        if self.include_feed && !(self.feed_length.is_finite() && self.feed_length > 0.0) {
            return Err(EmsimError::InvalidSpec("feed length must be positive"));
        }
        if self.include_feed && !(self.feed_spacing.is_finite() && self.feed_spacing > 0.0) {
            return Err(EmsimError::InvalidSpec("feed spacing must be positive"));
        }
        Ok(())
    }

    /// Mean over all turns of the enclosed area of a linear spiral.
    pub fn mean_turn_area(&self) -> f64 {
        let r0 = 0.5 * self.inner_diameter;
        let r1 = 0.5 * self.outer_diameter;
        let mean = 0.5 * (r0 + r1);
        PI * (mean * mean + (r1 - r0).powi(2) / 12.0)
    }
}

/// Orthonormal in-plane axes for a coil with normal `n`.
fn plane_axes(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if n.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = n.cross(&reference).normalize();
    let v = n.cross(&u);
    (u, v)
}

fn push_line(points: &mut Vec<Vector3<f64>>, to: Vector3<f64>, max_len: f64) {
    let from = *points.last().expect("line starts at an existing point");
    let len = (to - from).norm();
    let n = (len / max_len).ceil().max(1.0) as usize;
    for i in 1..=n {
        points.push(from + (to - from) * (i as f64 / n as f64));
    }
}

/// Closed wire path of a planar spiral coil centered at `pose.position`
/// with its normal along `pose.orientation`.
///
/// The spiral runs from the inner to the outer radius. The optional feed is
/// a pair of radial leads leaving from the outer end. The return lead runs
/// `feed_spacing` above the winding plane and continues over the turns back
/// to the inner start, so the feed loop has an in-plane magnetic moment.
pub fn build_spiderweb(spec: &SpiderwebSpec, pose: &Pose) -> Result<WirePath, EmsimError> {
    spec.validate()?;
    let c = pose.position;
    let (u, v) = plane_axes(&pose.orientation);
    let r0 = 0.5 * spec.inner_diameter;
    let r1 = 0.5 * spec.outer_diameter;
    let per_turn = spec.segments_per_turn as usize;
    let total = per_turn * spec.turns as usize;
    let n = pose.orientation;
    let at = |r: f64, angle: f64, axial: f64| {
        let (s, co) = angle.sin_cos();
        c + u * (r * co) + v * (r * s) + n * axial
    };

    let mut points: Vec<Vector3<f64>> = (0..=total)
        .map(|k| {
            let t = k as f64 / total as f64;
            let angle = 2.0 * PI * k as f64 / per_turn as f64;
            at(r0 + (r1 - r0) * t, angle, 0.0)
        })
        .collect();
    let max_len = 2.0 * PI * r1 / per_turn as f64;
    // the spiral ends on the u axis at the outer radius
    points.pop();
    points.push(at(r1, 0.0, 0.0));

    if spec.include_feed {
        let g = spec.feed_spacing;
        push_line(&mut points, at(r1 + spec.feed_length, 0.0, 0.0), max_len);
        push_line(&mut points, at(r1 + spec.feed_length, 0.0, g), max_len);
        push_line(&mut points, at(r1, 0.0, g), max_len);
        if r1 > r0 {
            push_line(&mut points, at(r0, 0.0, g), max_len);
        }
    } else if r1 > r0 {
        push_line(&mut points, at(r0, 0.0, 0.0), max_len);
    }
    // closing segment returns to the first point
    if points.last() == points.first() {
        points.pop();
    }
    points.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    WirePath::new(points, true)
}

/// Neumann mutual inductance between two wire paths, H.
///
/// The result is bit-identical under swapping the operands.
pub fn mutual_inductance(a: &WirePath, b: &WirePath, permeability: f64) -> Result<f64, EmsimError> {
    let (first, second) = match a.canonical_cmp(b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let (ma, la) = first.elements();
    let (mb, lb) = second.elements();

    let mut min_r2 = f64::INFINITY;
    let mut total = 0.0;
    for (pa, da) in ma.iter().zip(&la) {
        let mut row = 0.0;
        for (pb, db) in mb.iter().zip(&lb) {
            let dx = pa[0] - pb[0];
            let dy = pa[1] - pb[1];
            let dz = pa[2] - pb[2];
            let r2 = dx * dx + dy * dy + dz * dz;
            min_r2 = min_r2.min(r2);
            row += (da[0] * db[0] + da[1] * db[1] + da[2] * db[2]) / r2.sqrt();
        }
        total += row;
    }

    let required = PROXIMITY_FACTOR * a.max_segment_length().max(b.max_segment_length());
    let distance = min_r2.sqrt();
    if !(distance > required) {
        return Err(EmsimError::PathsTooClose { distance, required });
    }
    Ok(permeability / (4.0 * PI) * total)
}

/// `j 2πf M / (2 √(R_a R_b))` for two matched coils.
pub fn synthetic_channel(
    a: &WirePath,
    b: &WirePath,
    resistance_a: f64,
    resistance_b: f64,
    env: &Environment,
) -> Result<Complex64, EmsimError> {
    let limit = env.wavelength() / 1000.0;
    let longest = a.max_segment_length().max(b.max_segment_length());
    if longest >= limit {
        return Err(EmsimError::SegmentTooLong {
            length: longest,
            limit,
        });
    }
    let m = mutual_inductance(a, b, env.permeability)?;
    let omega = 2.0 * PI * env.carrier_frequency;
    Ok(Complex64::new(0.0, omega * m / (2.0 * (resistance_a * resistance_b).sqrt())))
}

/// A simulated coil: winding geometry, pose and resistance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedCoil {
    pub spec: SpiderwebSpec,
    pub pose: Pose,
    pub resistance: f64,
}

/// Synthetic channel vectors for every agent deployment.
///
/// Deployments are processed in parallel; each link is computed
/// independently so the result does not depend on scheduling.
pub fn synthesize_dataset(
    anchors: &[SimulatedCoil],
    deployments: &[Pose],
    agent_spec: &SpiderwebSpec,
    agent_resistance: f64,
    env: &Environment,
) -> Result<Vec<ChannelVector>, EmsimError> {
    if anchors.is_empty() || deployments.is_empty() {
        return Err(EmsimError::InvalidSpec("anchors and deployments must be nonempty"));
    }
    let anchor_paths = anchors
        .iter()
        .map(|a| build_spiderweb(&a.spec, &a.pose))
        .collect::<Result<Vec<_>, _>>()?;

    let results: Vec<Result<ChannelVector, Vec<EmsimError>>> = deployments
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let agent = build_spiderweb(agent_spec, pose).map_err(|e| {
                vec![EmsimError::Link {
                    deployment: i,
                    anchor: 0,
                    source: Box::new(e),
                }]
            })?;
            let mut h = Vec::with_capacity(anchors.len());
            let mut failures = Vec::new();
            for (n, (coil, path)) in anchors.iter().zip(&anchor_paths).enumerate() {
                match synthetic_channel(path, &agent, coil.resistance, agent_resistance, env) {
                    Ok(v) => h.push(v),
                    Err(e) => failures.push(EmsimError::Link {
                        deployment: i,
                        anchor: n,
                        source: Box::new(e),
                    }),
                }
            }
            if failures.is_empty() {
                Ok(ChannelVector(h))
            } else {
                Err(failures)
            }
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(h) => out.push(h),
            Err(mut f) => failures.append(&mut f),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(EmsimError::Dataset(failures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VACUUM_PERMEABILITY;
    use approx::assert_relative_eq;

    fn pose(p: [f64; 3], o: [f64; 3]) -> Pose {
        Pose::from_direction(Vector3::from(p), Vector3::from(o)).unwrap()
    }

    fn circle(diameter: f64, segments: u32) -> SpiderwebSpec {
        SpiderwebSpec {
            inner_diameter: diameter,
            outer_diameter: diameter,
            turns: 1,
            segments_per_turn: segments,
            include_feed: false,
            feed_length: 0.0,
            feed_spacing: 0.0,
        }
    }

    #[test]
    fn single_turn_is_a_circle() {
        let path = build_spiderweb(&circle(0.1, 256), &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        assert_eq!(path.segment_count(), 256);
        assert_relative_eq!(path.length(), PI * 0.1, max_relative = 1e-3);
        for p in path.points() {
            assert_relative_eq!(p.norm(), 0.05, max_relative = 1e-12);
        }
    }

    #[test]
    fn default_spiral_area() {
        let spec = SpiderwebSpec::default();
        let path = build_spiderweb(&spec, &pose([0.3, -0.2, 1.0], [0.0, 1.0, 1.0])).unwrap();
        let area = path.vector_area();
        let axis = Vector3::new(0.0, 1.0, 1.0).normalize();
        let expected = 10.0 * PI * 0.0575f64.powi(2);
        let axial = area.dot(&axis);
        assert!((axial / expected - 1.0).abs() < 0.01, "{}", axial / expected);
        // the raised return lead adds an in-plane rectangle g × (r1 + L − r0)
        let lateral = (area - axis * axial).norm();
        assert_relative_eq!(lateral, 0.01 * (0.065 + 0.10 - 0.05), max_relative = 1e-9);
    }

    #[test]
    fn spiral_stays_between_radii() {
        let spec = SpiderwebSpec { include_feed: false, ..SpiderwebSpec::default() };
        let path = build_spiderweb(&spec, &pose([0.0; 3], [1.0, 0.0, 0.0])).unwrap();
        for p in path.points() {
            assert!(p.norm() >= 0.05 - 1e-12 && p.norm() <= 0.065 + 1e-12);
            assert!(p.x.abs() < 1e-15);
        }
    }

    #[test]
    fn orientation_change_is_rigid() {
        let spec = SpiderwebSpec::default();
        let a = build_spiderweb(&spec, &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        let b = build_spiderweb(&spec, &pose([0.0; 3], [0.3, -0.5, 0.2])).unwrap();
        assert_eq!(a.points().len(), b.points().len());
        let pa = a.points();
        let pb = b.points();
        for i in (0..pa.len()).step_by(7) {
            for j in (0..pa.len()).step_by(11) {
                let da = (pa[i] - pa[j]).norm();
                let db = (pb[i] - pb[j]).norm();
                assert!((da - db).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let p = pose([0.0; 3], [0.0, 0.0, 1.0]);
        let bad = [
            SpiderwebSpec { inner_diameter: 0.0, ..SpiderwebSpec::default() },
            SpiderwebSpec { outer_diameter: 0.05, ..SpiderwebSpec::default() },
            SpiderwebSpec { turns: 0, ..SpiderwebSpec::default() },
            SpiderwebSpec { segments_per_turn: 8, ..SpiderwebSpec::default() },
            SpiderwebSpec { feed_length: 0.0, ..SpiderwebSpec::default() },
            SpiderwebSpec { feed_spacing: -1e-3, ..SpiderwebSpec::default() },
        ];
        for spec in bad {
            assert!(matches!(build_spiderweb(&spec, &p), Err(EmsimError::InvalidSpec(_))));
        }
    }

    #[test]
    fn wire_path_invariants() {
        let p = Vector3::new(0.0, 0.0, 0.0);
        let q = Vector3::new(1.0, 0.0, 0.0);
        assert!(WirePath::new(vec![p, q], false).is_err());
        assert!(WirePath::new(vec![p, q, q], false).is_err());
        assert!(WirePath::new(vec![p, q, p], true).is_err());
        assert!(WirePath::new(vec![p, q, Vector3::new(0.0, 1.0, 0.0)], true).is_ok());
    }

    #[test]
    fn mutual_inductance_is_symmetric_and_linear() {
        let spec = SpiderwebSpec::default();
        let a = build_spiderweb(&spec, &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        let b = build_spiderweb(&spec, &pose([0.7, 0.4, 0.9], [1.0, 0.2, -0.4])).unwrap();
        let mab = mutual_inductance(&a, &b, VACUUM_PERMEABILITY).unwrap();
        let mba = mutual_inductance(&b, &a, VACUUM_PERMEABILITY).unwrap();
        assert_eq!(mab.to_bits(), mba.to_bits());
        let doubled = mutual_inductance(&a, &b, 2.0 * VACUUM_PERMEABILITY).unwrap();
        assert_relative_eq!(doubled, 2.0 * mab, max_relative = 1e-15);
    }

    #[test]
    fn close_paths_are_rejected() {
        let spec = circle(0.1, 32);
        let a = build_spiderweb(&spec, &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        let b = build_spiderweb(&spec, &pose([0.0, 0.0, 0.05], [0.0, 0.0, 1.0])).unwrap();
        assert!(matches!(
            mutual_inductance(&a, &b, VACUUM_PERMEABILITY),
            Err(EmsimError::PathsTooClose { .. })
        ));
    }

    #[test]
    fn synthetic_channel_scaling() {
        let env = Environment::free_space(500e3);
        let spec = SpiderwebSpec::default();
        let a = build_spiderweb(&spec, &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        let b = build_spiderweb(&spec, &pose([0.0, 0.0, 1.0], [0.0, 0.0, 1.0])).unwrap();
        let h = synthetic_channel(&a, &b, 0.36, 0.36, &env).unwrap();
        let h4 = synthetic_channel(&a, &b, 1.44, 1.44, &env).unwrap();
        assert_relative_eq!(h4.norm(), 0.25 * h.norm(), max_relative = 1e-14);
        let h2 = synthetic_channel(&a, &b, 4.0 * 0.36, 0.36, &env).unwrap();
        assert_relative_eq!(h2.norm(), 0.5 * h.norm(), max_relative = 1e-14);
        assert_eq!(h.re, 0.0);
        assert!(h.im > 0.0);
    }

    #[test]
    fn perpendicular_on_axis_gives_zero_channel() {
        let env = Environment::free_space(500e3);
        let spec = circle(0.1, 128);
        let a = build_spiderweb(&spec, &pose([0.0; 3], [0.0, 0.0, 1.0])).unwrap();
        let b = build_spiderweb(&spec, &pose([0.0, 0.0, 0.5], [1.0, 0.0, 0.0])).unwrap();
        let coaxial = build_spiderweb(&spec, &pose([0.0, 0.0, 0.5], [0.0, 0.0, 1.0])).unwrap();
        let h = synthetic_channel(&a, &b, 0.36, 0.36, &env).unwrap();
        let reference = synthetic_channel(&a, &coaxial, 0.36, 0.36, &env).unwrap();
        assert!(h.norm() < 1e-9 * reference.norm(), "{h}");
    }

    #[test]
    fn dataset_single_link_matches_channel() {
        let env = Environment::free_space(500e3);
        let spec = SpiderwebSpec::default();
        let anchor = SimulatedCoil {
            spec,
            pose: pose([0.0; 3], [0.0, 0.0, 1.0]),
            resistance: 0.36,
        };
        let agent = pose([0.2, 0.1, 1.2], [0.0, 1.0, 1.0]);
        let data = synthesize_dataset(&[anchor], &[agent], &spec, 0.36, &env).unwrap();
        assert_eq!(data.len(), 1);
        let a = build_spiderweb(&spec, &anchor.pose).unwrap();
        let b = build_spiderweb(&spec, &agent).unwrap();
        assert_eq!(data[0][0], synthetic_channel(&a, &b, 0.36, 0.36, &env).unwrap());
    }

    #[test]
    fn dataset_reports_failing_links() {
        let env = Environment::free_space(500e3);
        let spec = SpiderwebSpec::default();
        let anchor = SimulatedCoil {
            spec,
            pose: pose([0.0; 3], [0.0, 0.0, 1.0]),
            resistance: 0.36,
        };
        let deployments = [pose([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]), pose([0.0, 0.0, 0.01], [0.0, 0.0, 1.0])];
        match synthesize_dataset(&[anchor], &deployments, &spec, 0.36, &env) {
            Err(EmsimError::Dataset(f)) => {
                assert_eq!(f.len(), 1);
                assert!(matches!(f[0], EmsimError::Link { deployment: 1, anchor: 0, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let path = build_spiderweb(&SpiderwebSpec::default(), &pose([0.1, 0.2, 0.3], [1.0, 1.0, 0.0])).unwrap();
        let mut buf = Vec::new();
        path.to_csv(&mut buf).unwrap();
        let back = WirePath::from_csv(buf.as_slice(), true).unwrap();
        assert_eq!(back, path);
        let err = WirePath::from_csv("x,y\n1,2\n".as_bytes(), true).unwrap_err();
        assert!(err.to_string().contains("`z`"));
    }
}
