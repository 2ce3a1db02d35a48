use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use miloc::crlb::{cov_thermal_independent, position_error_bound};
use miloc::emsim::{build_spiderweb, mutual_inductance};
use miloc::locate::wls_localize;
use miloc::model::{channel_vector, VACUUM_PERMEABILITY};
use miloc::{EstimationParameter, Pose, Scenario, ScenarioConfig, Vector3};

fn scenario() -> Scenario {
    Scenario::from_config(&ScenarioConfig::default()).expect("default scenario")
}

fn agent() -> Pose {
    Pose::from_direction(Vector3::new(1.2, 1.7, 1.1), Vector3::new(0.3, -0.5, 0.8)).expect("valid pose")
}

fn localization(c: &mut Criterion) {
    let s = scenario();
    let h = channel_vector(&s.anchors, &agent(), &s.agent_coil, &s.environment).expect("channel");
    let config = s.wls_config(1);
    c.bench_function("wls_localize_3_starts", |b| {
        b.iter(|| wls_localize(black_box(&h), &s.anchors, &s.agent_coil, &s.environment, &config))
    });
}

fn neumann(c: &mut Criterion) {
    let s = scenario();
    let anchor = &s.simulated_anchors[0];
    let a = build_spiderweb(&anchor.spec, &anchor.pose).expect("anchor wire");
    let b = build_spiderweb(&s.agent_winding, &agent()).expect("agent wire");
    c.bench_function("mutual_inductance_spiderweb_pair", |bench| {
        bench.iter(|| mutual_inductance(black_box(&a), black_box(&b), VACUUM_PERMEABILITY))
    });
}

fn peb(c: &mut Criterion) {
    let s = scenario();
    let eta = EstimationParameter::from_pose(&agent());
    let p = &s.peb;
    let noise = cov_thermal_independent(s.anchors.len(), p.thermal_dbm_hz, p.bandwidth_hz, p.probe_dbm);
    c.bench_function("position_error_bound", |b| {
        b.iter(|| position_error_bound(black_box(&eta), &s.anchors, &s.agent_coil, &s.environment, &noise))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = localization, neumann, peb
}
criterion_main!(benches);
