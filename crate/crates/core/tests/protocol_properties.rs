use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64 as C64;
use photonic_qubit::fock::annihilation_matrix;
use photonic_qubit::protocol::{
    adiabatic_emission_probability, evolve_qubit, integrate_single_excitation, map_to_photon,
    photon_flux_adiabatic, quadrature_stats_closed_form, read_ramp, required_step, AtomicQubitState,
    ProtocolParams,
};
use proptest::prelude::*;

/// `tr(ρ O)` for the quadrature `X_φ` and its square built from the ladder matrix.
fn operator_moments(rho: &DMatrix<C64>, phase: f64) -> (f64, f64) {
    let dim = rho.nrows();
    let a = annihilation_matrix(dim).unwrap();
    let rot = C64::from_polar(1.0, phase);
    let x = (&a * rot + a.adjoint() * rot.conj()) / C64::new(2f64.sqrt(), 0.0);
    let mean = (rho * &x).trace().re;
    let second = (rho * &x * &x).trace().re;
    (mean, second - mean * mean)
}

/// Independent oracle: RK4 integration of the storage Lindblad equation with
/// jump operators √(2γ₁)|G⟩⟨R| and √(2γ₂)|R⟩⟨R|.
fn lindblad_rk4(rho0: Matrix2<C64>, gamma1: f64, gamma2: f64, t: f64, steps: usize) -> Matrix2<C64> {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let lower = Matrix2::new(zero, one, zero, zero) * C64::new((2.0 * gamma1).sqrt(), 0.0);
    let deph = Matrix2::new(zero, zero, zero, one) * C64::new((2.0 * gamma2).sqrt(), 0.0);
    let rhs = |r: &Matrix2<C64>| {
        let mut out = Matrix2::zeros();
        for l in [&lower, &deph] {
            let ld = l.adjoint();
            let ldl = ld * l;
            out += l * r * ld - (ldl * r + r * ldl) * C64::new(0.5, 0.0);
        }
        out
    };
    let h = C64::new(t / steps as f64, 0.0);
    let half = C64::new(0.5, 0.0);
    let sixth = C64::new(1.0 / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    let mut r = rho0;
    for _ in 0..steps {
        let k1 = rhs(&r);
        let k2 = rhs(&(r + k1 * h * half));
        let k3 = rhs(&(r + k2 * h * half));
        let k4 = rhs(&(r + k3 * h));
        r += (k1 + k2 * two + k3 * two + k4) * h * sixth;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_form_matches_state_pipeline(theta in 0.0f64..TAU, eta in 0.0f64..=1.0, gt in 0.0f64..=1.0) {
        let t_s = 0.48e-6;
        let gamma2 = gt / t_s;
        let stored = evolve_qubit(&AtomicQubitState::prepared(theta), 0.0, gamma2, t_s).unwrap();
        let rho = map_to_photon(&stored, eta, 6).unwrap();
        let closed = quadrature_stats_closed_form(theta, eta, gamma2, t_s).unwrap();
        let (mx, vx) = operator_moments(rho.matrix(), 0.0);
        let (mp, vp) = operator_moments(rho.matrix(), -PI / 2.0);
        prop_assert!((mx - closed.mean_x).abs() < 1e-9);
        prop_assert!((vx - closed.var_x).abs() < 1e-9);
        prop_assert!((mp - closed.mean_p).abs() < 1e-9);
        prop_assert!((vp - closed.var_p).abs() < 1e-9);
        // energy bookkeeping
        prop_assert!((closed.var_p - 0.5 - rho.mean_photon_number()).abs() < 1e-12);
        prop_assert!((closed.var_p - 0.5 - eta * (theta / 2.0).sin().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn storage_matches_numerical_lindblad(
        theta in 0.0f64..TAU,
        g1 in 0.0f64..3e5,
        g2 in 0.0f64..1e6,
        t in 0.0f64..2e-6,
    ) {
        let initial = AtomicQubitState::prepared(theta);
        let exact = evolve_qubit(&initial, g1, g2, t).unwrap();
        let numeric = lindblad_rk4(*initial.matrix(), g1, g2, t, 400);
        let diff = (exact.matrix() - numeric).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-9, "max deviation {}", diff);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adiabatic_flux_integral_matches_closed_form(
        ramp_ns in 100.0f64..1500.0,
        omega_mhz in 3.0f64..20.0,
        eta_rem in 0.1f64..=1.0,
    ) {
        let p = ProtocolParams { omega_max: TAU * omega_mhz * 1e6, ..ProtocolParams::default() };
        let omega = read_ramp(p.omega_max, ramp_ns * 1e-9, 3e-6, 20_001).unwrap();
        let flux = photon_flux_adiabatic(&omega, &p, eta_rem).unwrap();
        let analytic = adiabatic_emission_probability(&omega, &p, eta_rem).unwrap();
        prop_assert!((flux.integral() - analytic).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ode_oracle_agrees_with_adiabatic_flux(
        ramp_kappa in 20.0f64..40.0,
        omega_mhz in 8.0f64..14.0,
    ) {
        let p = ProtocolParams { omega_max: TAU * omega_mhz * 1e6, ..ProtocolParams::default() };
        let ramp = ramp_kappa / p.kappa;
        let window = ramp + 1.5e-6;
        let n = (window / required_step(&p, p.omega_max)).ceil() as usize + 1;
        let omega = read_ramp(p.omega_max, ramp, window, n).unwrap();
        let ode = integrate_single_excitation(&omega, &p).unwrap();
        let adiabatic = adiabatic_emission_probability(&omega, &p, 1.0).unwrap();
        prop_assert!(((ode.total_emission - adiabatic) / adiabatic).abs() < 0.02,
            "ode {} vs adiabatic {}", ode.total_emission, adiabatic);
    }
}
