mod common;

use std::f64::consts::PI;

use nmon::dynamics::{simulate_drive, DriveProtocol, InitialState, SimulationOptions};
use nmon::sweeps::{phase_diagram, sweep_parameter, SweepParam};
use nmon::{Analysis, AnalysisOptions, CircuitSpec};
use proptest::prelude::*;

fn coprime_arms() -> impl Strategy<Value = (usize, usize)> {
    prop::sample::select(vec![(1, 1), (1, 2), (2, 1), (2, 3), (3, 2), (3, 4), (5, 2)])
}

fn circuit() -> impl Strategy<Value = CircuitSpec> {
    (coprime_arms(), 0.5..60.0f64, 0.5..30.0f64, 0.0..=1.0f64, -1.0..1.0f64, -PI..PI).prop_map(
        |((n, m), beta, eta, kappa, ng, phi)| CircuitSpec {
            n_arm: n,
            m_arm: m,
            ej_n: beta,
            ej_m: eta,
            ec: 1.0,
            kappa,
            ng,
            phi_ext: phi,
        },
    )
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn operators_hermitian(spec in circuit()) {
        prop_assert!(common::hermiticity(&spec) < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences(spec in circuit()) {
        prop_assert!(common::derivative_vs_fd(&spec, 1e-6) < 1e-6);
    }

    #[test]
    fn hellmann_feynman_diagonal(spec in circuit()) {
        prop_assert!(common::hellmann_feynman(&spec, 1e-5) < 1e-6);
    }

    #[test]
    fn spectrum_independent_of_kappa(spec in circuit(), other in 0.0..=1.0f64) {
        prop_assert!(common::kappa_invariance(&spec, other) < 1e-9);
    }

    #[test]
    fn offset_charge_period_one(spec in circuit()) {
        prop_assert!(common::ng_periodicity(&spec) < 1e-8);
    }

    #[test]
    fn flux_period_two_pi(spec in circuit()) {
        prop_assert!(common::flux_periodicity(&spec) < 1e-8);
    }

    #[test]
    fn parity_selection_at_symmetric_point(spec in circuit()) {
        prop_assert!(common::parity_selection(&spec) < 1e-10);
    }

    #[test]
    fn energy_scale_invariance(
        beta in 20.0..150.0f64,
        eta in 5.0..60.0f64,
        kappa in 0.0..=1.0f64,
        log_s in -3.0..3.0f64,
    ) {
        let spec = CircuitSpec::from_ratios(2, 3, beta, eta).unwrap().with_kappa(kappa).unwrap();
        prop_assume!(Analysis::new(&spec, &AnalysisOptions::default()).is_ok());
        prop_assert!(common::scale_invariance(&spec, 10f64.powf(log_s)) < 1e-9);
    }

    #[test]
    fn zero_drive_keeps_moduli(f0 in 0.5..8.0f64, d in 0.0..2.0f64, theta in 0.0..PI) {
        let sys = common::ladder(4, f0, -0.1, d);
        let amp = vec![
            faer::c64::new(theta.cos(), 0.0),
            faer::c64::new(0.0, theta.sin()),
            faer::c64::new(0.0, 0.0),
            faer::c64::new(0.0, 0.0),
        ];
        let p = DriveProtocol::new(0.0, f0, 3.0).unwrap();
        let t = simulate_drive(&sys, &p, &InitialState::Amplitudes(amp.clone()), &SimulationOptions::default()).unwrap();
        for s in 0..t.times.len() {
            for k in 0..4 {
                prop_assert!((t.population(s, k) - amp[k].norm_sqr()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn global_energy_shift_invariance(shift in -500.0..500.0f64) {
        prop_assert!(common::energy_shift_invariance(shift) < 1e-8);
    }
}

#[test]
fn norm_drift_and_step_order() {
    let (drift, ratio) = common::norm_drift_convergence();
    assert!(drift < 1e-6, "drift {drift}");
    assert!(ratio >= 8.0, "halving ratio {ratio}");
}

#[test]
fn flux_sweep_endpoints_periodic() {
    let spec = CircuitSpec::from_ratios(2, 3, 75.0, 15.0).unwrap().with_kappa(0.3).unwrap();
    let r = sweep_parameter(&spec, SweepParam::PhiExt, &[0.7, 0.7 + 2.0 * PI], &AnalysisOptions::default()).unwrap();
    let (a, b) = (&r.points[0].energies, &r.points[1].energies);
    let span = a[7] - a[0];
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-8 * span);
    }
}

#[test]
fn phase_diagram_independent_of_thread_count() {
    let betas = [30.0, 75.0, 120.0];
    let etas = [5.0, 15.0, 40.0];
    let opts = AnalysisOptions::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| phase_diagram(2, 3, 0.5, &betas, &etas, &opts).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one.cells.len(), 9);
    for (a, b) in one.cells.iter().zip(&four.cells) {
        assert_eq!(a.alpha_r.to_bits(), b.alpha_r.to_bits());
        assert_eq!(a.me_flux_01.to_bits(), b.me_flux_01.to_bits());
        assert_eq!((a.i1, a.i2), (b.i1, b.i2));
    }
}

#[test]
fn code_space_selection_repeatable() {
    let spec = CircuitSpec::from_ratios(13, 2, 140.0, 55.0).unwrap().with_kappa(1.0).unwrap();
    let a = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
    let b = Analysis::new(&spec, &AnalysisOptions::default()).unwrap();
    assert_eq!(a.code, b.code);
}
