mod support;

use miloc::lm::{self, LeastSquaresProblem, LmSettings};
use miloc::locate::{
    baseline_5d_nls, orientation_error, orientation_solve, steering_matrix, weight_matrix,
    wls_localize, Bounds,
};
use miloc::model::{channel_vector, project};
use miloc::{Anchor, ChannelVector, Complex64, Environment, EstimationParameter, Pose, Vector3, WlsConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{
    random_calibration, random_interior_pose, random_unit, reference_coil, room_anchors,
    sphere_grid_minimum,
};

fn env() -> Environment {
    Environment::free_space(500e3)
}

/// Multiplies every coefficient by `1 + ε` with ε uniform in a complex
/// square of half-width `level`.
fn distort<R: Rng>(h: &ChannelVector, rng: &mut R, level: f64) -> ChannelVector {
    ChannelVector(
        h.iter()
            .map(|v| v * Complex64::new(1.0 + rng.random_range(-level..level), rng.random_range(-level..level)))
            .collect(),
    )
}

#[test]
fn orientation_solve_matches_sphere_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let anchors = room_anchors();
    for _ in 0..5 {
        let p = random_interior_pose(&mut rng).position;
        let w = weight_matrix(&p, &anchors, &reference_coil(), &env()).unwrap();
        let a = steering_matrix(&p, &anchors, &reference_coil(), &env()).unwrap();
        // data that no unit orientation explains exactly
        let h = ChannelVector(
            (0..anchors.len())
                .map(|n| {
                    let v = project(&a.column(n).into_owned(), &random_unit(&mut rng));
                    v * Complex64::new(rng.random_range(0.2..2.0), rng.random_range(-1.0..1.0))
                })
                .collect(),
        );
        let sol = orientation_solve(&w, &a, &h).unwrap();
        let objective = |o: &[f64; 3]| {
            let o = Vector3::from(*o);
            (0..anchors.len())
                .map(|n| ((h[n] - project(&a.column(n).into_owned(), &o)) * w[n]).norm_sqr())
                .sum::<f64>()
        };
        let oracle = sphere_grid_minimum(objective, 0.5);
        assert!((sol.orientation.norm() - 1.0).abs() < 1e-12);
        assert!(sol.objective <= oracle * (1.0 + 1e-6), "{} vs grid {oracle}", sol.objective);
    }
}

#[test]
fn noiseless_success_rate_with_three_starts() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let anchors = room_anchors();
    let mut successes = 0;
    for i in 0..100 {
        let truth = random_interior_pose(&mut rng);
        let h = channel_vector(&anchors, &truth, &reference_coil(), &env()).unwrap();
        let config = WlsConfig { rng_seed: i, ..WlsConfig::default() };
        let est = wls_localize(&h, &anchors, &reference_coil(), &env(), &config).unwrap();
        if (est.position - truth.position).norm() < 0.01 {
            successes += 1;
        }
    }
    assert!(successes >= 99, "{successes}/100");
}

#[test]
fn translation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let anchors: Vec<Anchor> = room_anchors().into_iter().map(|a| random_calibration(a, &mut rng, 1e4)).collect();
    let t = Vector3::new(3.25, -1.5, 0.75);
    let shifted: Vec<Anchor> = anchors
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.pose.position += t;
            a
        })
        .collect();
    let bounds = Bounds::around_anchors(&anchors, 0.1);
    let shifted_bounds = Bounds::new(bounds.min + t, bounds.max + t).unwrap();
    for i in 0..10 {
        let truth = random_interior_pose(&mut rng);
        let moved = Pose::new(truth.position + t, truth.orientation).unwrap();
        let clean = channel_vector(&anchors, &truth, &reference_coil(), &env()).unwrap();
        let clean_moved = channel_vector(&shifted, &moved, &reference_coil(), &env()).unwrap();
        // the same distortion on both copies, so the optimum is not the truth
        let mut noise_rng = ChaCha8Rng::seed_from_u64(i);
        let h = distort(&clean, &mut noise_rng, 0.02);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(i);
        let h_moved = distort(&clean_moved, &mut noise_rng, 0.02);

        let config = WlsConfig { rng_seed: i, init_bounds: Some(bounds), ..WlsConfig::default() };
        let config_moved = WlsConfig { init_bounds: Some(shifted_bounds), ..config };
        let a = wls_localize(&h, &anchors, &reference_coil(), &env(), &config).unwrap();
        let b = wls_localize(&h_moved, &shifted, &reference_coil(), &env(), &config_moved).unwrap();
        assert!((b.position - a.position - t).norm() < 1e-5, "{i}: {:?} vs {:?}", a.position, b.position);
        assert!(orientation_error(&a.orientation, &b.orientation) < 1e-3);
        let noiseless = wls_localize(&clean_moved, &shifted, &reference_coil(), &env(), &config_moved).unwrap();
        assert!((noiseless.position - moved.position).norm() < 1e-6);
    }
}

#[test]
fn common_complex_scale_leaves_estimate_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let anchors: Vec<Anchor> = room_anchors().into_iter().map(|a| random_calibration(a, &mut rng, 1e4)).collect();
    let scale = Complex64::from_polar(3.7, 2.1);
    let scaled: Vec<Anchor> = anchors
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.matching_factor *= scale;
            a
        })
        .collect();
    for i in 0..10 {
        let truth = random_interior_pose(&mut rng);
        let h = distort(&channel_vector(&anchors, &truth, &reference_coil(), &env()).unwrap(), &mut rng, 0.02);
        let h_scaled = ChannelVector(h.iter().map(|v| v * scale).collect());
        let config = WlsConfig { rng_seed: i, ..WlsConfig::default() };
        let a = wls_localize(&h, &anchors, &reference_coil(), &env(), &config).unwrap();
        let b = wls_localize(&h_scaled, &scaled, &reference_coil(), &env(), &config).unwrap();
        // rounding differs along the two LM paths
        assert!((a.position - b.position).norm() < 1e-7);
        assert!((a.orientation - b.orientation).norm() < 1e-7);
    }
}

#[test]
fn weights_and_steering_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let anchors: Vec<Anchor> = room_anchors().into_iter().map(|a| random_calibration(a, &mut rng, 1e4)).collect();
    let bounds = Bounds::around_anchors(&anchors, 0.0);
    for _ in 0..1000 {
        let p = bounds.sample(&mut rng);
        let w = weight_matrix(&p, &anchors, &reference_coil(), &env()).unwrap();
        let a = steering_matrix(&p, &anchors, &reference_coil(), &env()).unwrap();
        assert!(w.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(a.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }
}

#[test]
fn baseline_agrees_with_wls_near_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let anchors = room_anchors();
    let mut compared = 0;
    for i in 0..20 {
        let truth = random_interior_pose(&mut rng);
        let h = channel_vector(&anchors, &truth, &reference_coil(), &env()).unwrap();
        let config = WlsConfig { rng_seed: i, ..WlsConfig::default() };
        let wls = wls_localize(&h, &anchors, &reference_coil(), &env(), &config).unwrap();
        let mut init = EstimationParameter::from_pose(&truth);
        init.position += Vector3::new(0.03, -0.02, 0.02);
        init.azimuth += 0.05;
        init.polar = (init.polar + 0.05).min(3.1);
        let baseline = baseline_5d_nls(&h, &anchors, &reference_coil(), &env(), &init, &config).unwrap();
        if wls.converged && baseline.converged {
            compared += 1;
            assert!((wls.position - baseline.position).norm() < 1e-3);
        }
    }
    assert!(compared >= 10, "{compared}");
}

/// `y = a · exp(b t) + c` sampled with a fixed perturbation.
struct ExpFit {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl LeastSquaresProblem for ExpFit {
    fn residuals(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_iterator(
            self.t.len(),
            self.t.iter().zip(&self.y).map(|(t, y)| x[0] * (x[1] * t).exp() + x[2] - y),
        ))
    }

    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.t.len(), 3, |i, j| {
            let e = (x[1] * self.t[i]).exp();
            match j {
                0 => e,
                1 => x[0] * self.t[i] * e,
                _ => 1.0,
            }
        }))
    }
}

proptest! {
    #[test]
    fn lm_cost_never_increases(a in 0.5..3.0f64, b in -2.0..0.5f64, start in [-2.0..2.0f64, -2.0..2.0, -2.0..2.0]) {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().enumerate().map(|(i, t)| a * (b * t).exp() + 0.3 + 0.01 * (i as f64).sin()).collect();
        let mut problem = ExpFit { t, y };
        if let Some(report) = lm::minimize(&mut problem, DVector::from_column_slice(&start), &LmSettings::default()) {
            prop_assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(*report.cost_history.last().unwrap(), report.cost);
        }
    }
}
