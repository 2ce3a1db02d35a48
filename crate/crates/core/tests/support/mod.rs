//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use miloc::model::{spherical_to_unit, CVector3};
use miloc::{Anchor, CoilSpec, Complex64, Pose, Vector3};
use rand::Rng;

/// Complete elliptic integrals `(K(k), E(k))` by the arithmetic-geometric mean.
pub fn elliptic_ke(k: f64) -> (f64, f64) {
    let mut a = 1.0;
    let mut b = (1.0 - k * k).sqrt();
    let mut c = k;
    let mut sum = 0.5 * c * c;
    let mut pow = 0.5;
    for _ in 0..32 {
        if c.abs() < 1e-15 * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let kk = PI / (2.0 * a);
    (kk, kk * (1.0 - sum))
}

/// Maxwell's closed form for two coaxial circular filaments.
pub fn coaxial_loops_mutual_inductance(ra: f64, rb: f64, separation: f64, mu: f64) -> f64 {
    let k2 = 4.0 * ra * rb / ((ra + rb).powi(2) + separation * separation);
    let k = k2.sqrt();
    let (kk, ee) = elliptic_ke(k);
    mu * (ra * rb).sqrt() * ((2.0 / k - k) * kk - 2.0 / k * ee)
}

/// Grid search over the unit sphere at `step_deg` resolution followed by a
/// local pattern search from the best few grid points.
pub fn sphere_grid_minimum<F: Fn(&[f64; 3]) -> f64>(f: F, step_deg: f64) -> f64 {
    let step = step_deg.to_radians();
    let n_theta = (PI / step).round() as usize;
    let mut candidates: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..=n_theta {
        let theta = i as f64 * step;
        let n_phi = ((2.0 * PI * theta.sin() / step).ceil() as usize).max(1);
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let v = f(&dir(phi, theta));
            candidates.push((v, phi, theta));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = candidates[0].0;
    for &(mut v, mut phi, mut theta) in candidates.iter().take(5) {
        let mut h = step;
        while h > 1e-12 {
            let mut improved = false;
            for (dp, dt) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
                let w = f(&dir(phi + dp, theta + dt));
                if w < v {
                    v = w;
                    phi += dp;
                    theta += dt;
                    improved = true;
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        best = best.min(v);
    }
    best
}

/// The 10-turn coil with 115 mm mean diameter and 0.36 Ω used throughout.
pub fn reference_coil() -> CoilSpec {
    CoilSpec::circular(0.115, 10, 0.36).unwrap()
}

/// Eight anchors around a 3 m × 3 m room, alternating between 2 m and
/// 0.68 m height, each facing the point (1.5, 1.5, 1.0).
pub fn room_anchors() -> Vec<Anchor> {
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
    positions
        .iter()
        .map(|p| {
            let p = Vector3::from(*p);
            Anchor::new(Pose::from_direction(p, Vector3::new(1.5, 1.5, 1.0) - p).unwrap(), reference_coil())
        })
        .collect()
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let phi = rng.random_range(0.0..2.0 * PI);
    let cos_theta: f64 = rng.random_range(-1.0..1.0);
    spherical_to_unit(phi, cos_theta.acos())
}

/// Uniform pose over the deployment area, at heights within the span of
/// the anchors (0.68 m to 2 m), with a uniform orientation.
pub fn random_interior_pose<R: Rng>(rng: &mut R) -> Pose {
    let p = Vector3::new(
        rng.random_range(0.75..2.25),
        rng.random_range(0.75..2.25),
        rng.random_range(0.68..2.0),
    );
    Pose::new(p, random_unit(rng)).unwrap()
}

fn random_complex<R: Rng>(rng: &mut R, scale: f64) -> Complex64 {
    Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

/// Calibration state with |ξ| in [0.6, 0.95] and a multipath field of
/// the given per-component scale.
pub fn random_calibration<R: Rng>(anchor: Anchor, rng: &mut R, multipath: f64) -> Anchor {
    let xi = Complex64::from_polar(rng.random_range(0.6..0.95), rng.random_range(-0.5..0.5));
    let b = CVector3::from_fn(|_, _| random_complex(rng, multipath));
    anchor.with_calibration(xi, b)
}

fn dir(phi: f64, theta: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

#[test]
fn elliptic_reference_values() {
    // K(1/√2) = Γ(1/4)² / (4√π)
    let (k, e) = elliptic_ke(0.5f64.sqrt());
    assert!((k - 1.854_074_677_301_372).abs() < 1e-14);
    assert!((e - 1.350_643_881_047_675_5).abs() < 1e-14);
    let (k0, e0) = elliptic_ke(0.0);
    assert!((k0 - PI / 2.0).abs() < 1e-15 && (e0 - PI / 2.0).abs() < 1e-15);
}
