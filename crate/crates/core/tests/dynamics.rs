use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use surftrap::constants::{ev_to_joules, joules_to_ev};
use surftrap::dynamics::*;
use surftrap::fieldsolver::{GridBox, StaticField};
use surftrap::geometry::Species;
use surftrap::trap_analysis::{secular_frequencies, PseudoField, QuadraticPotential};

const OMEGA: f64 = 2.0 * PI * 8e6;
const R0: f64 = 1e-3;

fn sr() -> Species {
    Species::sr88()
}

/// rf amplitude giving Mathieu `q` along x for `(x^2 + y^2 - 2 z^2) / (2 r0^2)`.
fn amplitude_for_q(q: f64) -> f64 {
    let s = sr();
    q * s.mass * R0 * R0 * OMEGA * OMEGA / (2.0 * s.charge_c())
}

fn quadrupole(q: f64) -> PseudoField {
    let rf = Arc::new(QuadraticPotential::quadrupole(R0, [1.0, 1.0, -2.0], [0.0; 3]));
    PseudoField::new(rf, None, amplitude_for_q(q), OMEGA, sr())
}

/// Static isotropic well of angular frequency `w`, no rf.
fn static_well(w: f64) -> (PseudoField, QuadraticPotential) {
    let s = sr();
    let c = s.mass * w * w / s.charge_c();
    let well = QuadraticPotential { center: [0.0; 3], curvature: [c; 3] };
    let rf = Arc::new(QuadraticPotential::linear(R0, [0.0; 3]));
    (PseudoField::new(rf, Some(Arc::new(well)), 0.0, OMEGA, s), well)
}

fn big_box() -> GridBox {
    GridBox::new([-5e-3; 3], [5e-3; 3])
}

fn energy(s: &State, well: &QuadraticPotential) -> f64 {
    let sp = sr();
    0.5 * sp.mass * s.vel.iter().map(|v| v * v).sum::<f64>() + sp.charge_c() * well.potential(s.pos)
}

#[test]
fn static_well_conserves_energy_over_ten_thousand_periods() {
    let w = 2.0 * PI * 1e6;
    let (f, well) = static_well(w);
    let d = Dynamics::new(&f, VoltageTimeline::steady(0.0));
    let dt = 2.0 * PI / OMEGA / 200.0;
    let steps = (1e4 * 2.0 * PI / w / dt).round() as usize;
    let mut s = State { t: 0.0, pos: [1e-4, -5e-5, 2e-5], vel: [3.0, 10.0, -7.0] };
    let e0 = energy(&s, &well);
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        s = d.rk4(&s, dt, 0.0);
        if k % 1000 == 0 {
            worst = worst.max((energy(&s, &well) / e0 - 1.0).abs());
        }
    }
    worst = worst.max((energy(&s, &well) / e0 - 1.0).abs());
    assert!(worst < 1e-6, "relative energy drift {worst:e}");
}

#[test]
fn rf_trajectory_retraces_under_negative_steps() {
    let f = quadrupole(0.2);
    let d = Dynamics::new(&f, VoltageTimeline::steady(0.3));
    let dt = 2.0 * PI / OMEGA / 200.0;
    let s0 = State { t: 0.0, pos: [1e-4, 2e-5, -3e-5], vel: [5.0, -2.0, 1.0] };
    let fwd = d.propagate(s0, dt, 20_000, 0.0).unwrap();
    let back = d.propagate(*fwd.last().unwrap(), -dt, 20_000, 0.0).unwrap();
    let end = back.last().unwrap();
    for k in 0..3 {
        assert!((end.pos[k] - s0.pos[k]).abs() < 1e-12, "{end:?}");
        assert!((end.vel[k] - s0.vel[k]).abs() < 1e-6, "{end:?}");
    }
    assert!(end.t.abs() < 1e-15);
}

fn quadrupole_cfg(max_periods: usize) -> IntegratorConfig {
    let mut c = IntegratorConfig::new([0.0; 3], GridBox::new([-0.5e-3; 3], [0.5e-3; 3]));
    c.capture_radius = 0.4e-3;
    c.max_rf_periods = max_periods;
    c.capture_window_periods = max_periods / 2;
    c
}

#[test]
fn halving_the_step_keeps_classifications() {
    use rand::{Rng, SeedableRng};
    let f = quadrupole(0.2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let coarse = quadrupole_cfg(300);
    let fine = IntegratorConfig { steps_per_rf_period: 400, ..coarse };
    let mut changed = 0;
    let mut kinds = [0usize; 2];
    for _ in 0..100 {
        let pos = [0, 1, 2].map(|_| 2e-4 * (2.0 * rng.random::<f64>() - 1.0));
        let vel = [0, 1, 2].map(|_| 1500.0 * (2.0 * rng.random::<f64>() - 1.0));
        let tl = VoltageTimeline::steady(2.0 * PI * rng.random::<f64>());
        let a = integrate(State { t: 0.0, pos, vel }, &f, &tl, &coarse).unwrap();
        let b = integrate(State { t: 0.0, pos, vel }, &f, &tl, &fine).unwrap();
        kinds[a.captured() as usize] += 1;
        if a.captured() != b.captured() {
            changed += 1;
        }
    }
    assert!(kinds[0] > 10 && kinds[1] > 10, "corpus should mix outcomes: {kinds:?}");
    assert!(changed < 1, "{changed} classifications changed");
}

fn pseudo_energy_ev(f: &PseudoField, s: &State) -> f64 {
    joules_to_ev(0.5 * f.species.mass * s.vel.iter().map(|v| v * v).sum::<f64>() + f.psi(s.pos))
}

#[test]
fn damping_lowers_secular_energy_monotonically() {
    let f = quadrupole(0.2);
    let mut cfg = quadrupole_cfg(400);
    cfg.damping_rate = 2e4;
    cfg.trace_every = Some(1);
    let s0 = State { t: 0.0, pos: [1.5e-4, -1e-4, 5e-5], vel: [0.0; 3] };
    let out = integrate(s0, &f, &VoltageTimeline::steady(0.0), &cfg).unwrap();
    let tr = out.trace.unwrap();
    let n = cfg.steps_per_rf_period;
    let e: Vec<f64> = (0..tr.len() / n / 10).map(|k| secular_energy(&tr[k * 10 * n..k * 10 * n + 2 * n - 1], &f, 0.0)).collect();
    assert!(e.len() > 30);
    for w in e.windows(2) {
        assert!(w[1] < w[0], "{e:?}");
    }
    assert!(e[e.len() - 1] < 0.5 * e[0]);
    assert!(pseudo_energy_ev(&f, &s0) > 0.0);
}

#[test]
fn zero_short_duration_is_the_steady_timeline() {
    let f = quadrupole(0.2);
    let cfg = quadrupole_cfg(100);
    let s0 = State { t: 0.0, pos: [1e-4, 0.0, -5e-5], vel: [3.0, 1.0, 0.0] };
    let steady = integrate(s0, &f, &VoltageTimeline::steady(0.7), &cfg).unwrap();
    let step = integrate(s0, &f, &VoltageTimeline::shorted(0.0, 0.0, Recovery::Step, 0.7), &cfg).unwrap();
    assert_eq!(steady, step);
    let none = VoltageTimeline::shorted(0.0, 0.0, Recovery::Exponential { tau: 1e-6 }, 0.7);
    assert_eq!(integrate(s0, &f, &none, &cfg).unwrap(), steady);
    let fast = VoltageTimeline::shorted(0.0, 1e-15, Recovery::Exponential { tau: 1e-15 }, 0.7);
    let exp = integrate(s0, &f, &fast, &cfg).unwrap();
    for k in 0..3 {
        assert!((exp.final_state.pos[k] - steady.final_state.pos[k]).abs() < 1.5e-6, "{:?} vs {:?}", exp.final_state, steady.final_state);
    }
}

#[test]
fn three_times_the_depth_escapes() {
    let f = quadrupole(0.2);
    let cfg = quadrupole_cfg(300);
    // The weakest pseudopotential direction is x (and y); the escape box face sits at 0.5 mm.
    let depth = f.psi([0.5e-3, 0.0, 0.0]);
    for (dir, phase) in [([1.0, 0.0, 0.0], 0.0), ([0.0, -1.0, 0.0], 1.0), ([0.0, 0.0, 1.0], 2.0)] {
        let v = (2.0 * 3.0 * depth / f.species.mass).sqrt();
        let s0 = State { t: 0.0, pos: [0.0; 3], vel: dir.map(|c| c * v) };
        let out = integrate(s0, &f, &VoltageTimeline::steady(phase), &cfg).unwrap();
        assert!(matches!(out.classification, Classification::Escaped { .. }), "{:?}", out.classification);
    }
    assert!(joules_to_ev(depth) > 0.0 && ev_to_joules(1.0) > 0.0);
}

fn spectral_trace(f: &PseudoField, s0: State, periods: usize, every: usize, gamma: f64) -> Vec<State> {
    let mut cfg = IntegratorConfig::new([0.0; 3], big_box());
    cfg.max_rf_periods = periods;
    cfg.capture_window_periods = 1;
    cfg.trace_every = Some(every);
    cfg.damping_rate = gamma;
    integrate(s0, f, &VoltageTimeline::steady(0.0), &cfg).unwrap().trace.unwrap()
}

const AXES: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[test]
fn spectral_frequency_matches_pseudopotential_hessian() {
    let f = quadrupole(0.15);
    let sec = secular_frequencies(&f, [0.0; 3]).unwrap();
    let s0 = State { t: 0.0, pos: [1e-4, 7e-5, 4e-5], vel: [0.0; 3] };
    let tr = spectral_trace(&f, s0, 4000, 10, 0.0);
    let got = spectral_secular_frequency(&tr, &AXES, 0.5 * OMEGA / (2.0 * PI)).unwrap();
    let hess = [sec.frequencies[0], sec.frequencies[1], sec.frequencies[2]];
    // Isotropic in x, y; z has twice the curvature.
    let analytic = 0.15 * OMEGA / (2.0 * SQRT_2) / (2.0 * PI);
    assert!((hess[0] / analytic - 1.0).abs() < 5e-3 && (hess[2] / (2.0 * analytic) - 1.0).abs() < 5e-3, "{hess:?}");
    for (g, e) in got.iter().zip([analytic, analytic, 2.0 * analytic]) {
        assert!((g / e - 1.0).abs() < 0.02, "spectral {got:?} vs {e}");
    }
}

#[test]
fn static_well_frequency_is_resolved() {
    let w = 2.0 * PI * 0.7e6;
    let (f, _) = static_well(w);
    let s0 = State { t: 0.0, pos: [1e-4, -2e-4, 5e-5], vel: [0.0; 3] };
    let tr = spectral_trace(&f, s0, 4000, 10, 0.0);
    let got = spectral_secular_frequency(&tr, &AXES, 4e6).unwrap();
    for g in got {
        assert!((g / 0.7e6 - 1.0).abs() < 1e-3, "{got:?}");
    }
}

#[test]
fn damped_peak_sits_at_the_damped_frequency() {
    let w = 2.0 * PI * 0.7e6;
    let gamma = 0.1 * w;
    let (f, _) = static_well(w);
    let s0 = State { t: 0.0, pos: [1e-4, -2e-4, 5e-5], vel: [0.0; 3] };
    let tr = spectral_trace(&f, s0, 150, 4, gamma);
    let expect = (w * w - 0.25 * gamma * gamma).sqrt() / (2.0 * PI);
    let got = spectral_secular_frequency(&tr, &AXES, 4e6).unwrap();
    for g in got {
        assert!((g / expect - 1.0).abs() < 0.02, "{got:?} vs {expect}");
    }
}

#[test]
fn secular_energy_is_constant_without_damping() {
    let f = quadrupole(0.15);
    let s0 = State { t: 0.0, pos: [1.2e-4, -6e-5, 3e-5], vel: [0.0; 3] };
    let tr = spectral_trace(&f, s0, 600, 1, 0.0);
    let n = 200;
    let e: Vec<f64> = (0..tr.len() / n - 2).step_by(7).map(|k| secular_energy(&tr[k * n..(k + 2) * n - 1], &f, 0.0)).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    for v in &e {
        assert!((v / mean - 1.0).abs() < 0.02, "{v} vs mean {mean}");
    }
    assert!(mean > 0.0);
}

#[test]
fn trace_csv_round_trip_is_exact() {
    let f = quadrupole(0.2);
    let s0 = State { t: 0.0, pos: [1e-4, 2e-5, 0.0], vel: [1.0, 0.0, -2.0] };
    let tr = spectral_trace(&f, s0, 20, 7, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.csv");
    write_trace_csv(&tr, &p).unwrap();
    let back = read_trace_csv(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(back, tr);
}

mod timeline_properties {
    use proptest::prelude::*;
    use surftrap::dynamics::{Recovery, VoltageTimeline};

    fn recovery() -> impl Strategy<Value = Recovery> {
        prop_oneof![Just(Recovery::Step), (1e-8f64..1e-4).prop_map(|tau| Recovery::Exponential { tau })]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn scale_is_bounded_and_recovers_monotonically(
            t0 in -1e-5f64..1e-5,
            dur in 0.0f64..5e-5,
            rec in recovery(),
            ts in proptest::collection::vec(-1e-4f64..1e-3, 2..40),
        ) {
            let tl = VoltageTimeline::shorted(t0, dur, rec, 0.0);
            prop_assert!(tl.validate().is_ok());
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            let end = tl.recovery_start();
            let mut last = 0.0;
            for &t in &ts {
                let s = tl.scale(t);
                prop_assert!((0.0..=1.0).contains(&s));
                if t < t0 {
                    prop_assert_eq!(s, 1.0);
                } else if t < end {
                    prop_assert_eq!(s, 0.0);
                } else {
                    prop_assert!(s >= last);
                    last = s;
                }
            }
        }

        #[test]
        fn zero_duration_is_steady(t0 in -1e-5f64..1e-5, rec in recovery(), t in -1e-4f64..1e-3) {
            prop_assert_eq!(VoltageTimeline::shorted(t0, 0.0, rec, 0.0).scale(t), 1.0);
        }
    }
}
