use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use photonic_qubit::fock::{apply_loss, fidelity, DensityMatrix};
use photonic_qubit::measurement::{default_phases, sample_dataset};
use photonic_qubit::numerics::linspace;
use photonic_qubit::protocol::{emitted_state, ProtocolParams, PulseProfile};
use photonic_qubit::tomography::{
    filter_trace, maxlik_reconstruct, mode_from_flux, quadrature_povm, vacuum_trace, ReconstructionConfig,
};
use proptest::prelude::*;

fn povm_sum(config: &ReconstructionConfig, phase: f64) -> DMatrix<C64> {
    let dim = config.dim();
    let edges = config.bin_edges();
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    for w in edges.windows(2) {
        sum += quadrature_povm(config, phase, 0.5 * (w[0] + w[1])).unwrap();
    }
    sum
}

fn is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn povms_resolve_the_identity(phase in 0.0f64..PI, eta_idx in 0usize..3) {
        let eta = [1.0, 0.722, 0.405][eta_idx];
        let config = ReconstructionConfig { detection_efficiency: eta, ..ReconstructionConfig::default() };
        let sum = povm_sum(&config, phase);
        let dev = (sum - DMatrix::<C64>::identity(config.dim(), config.dim()))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        prop_assert!(dev < 1e-6, "deviation {}", dev);
    }

    #[test]
    fn povm_elements_are_positive(phase in 0.0f64..PI, x in -5.95f64..5.95, eta in 0.3f64..=1.0) {
        let config = ReconstructionConfig { detection_efficiency: eta, ..ReconstructionConfig::default() };
        let povm = quadrature_povm(&config, phase, x).unwrap();
        let herm = (&povm + povm.adjoint()) * C64::new(0.5, 0.0);
        prop_assert!((&povm - &herm).iter().all(|z| z.norm() < 1e-14));
        prop_assert!(herm.symmetric_eigenvalues().iter().all(|&l| l > -1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn likelihood_never_decreases(theta in 0.0f64..(2.0 * PI), seed in any::<u64>(), eta_idx in 0usize..3) {
        let eta = [1.0, 0.722, 0.405][eta_idx];
        let truth = emitted_state(&ProtocolParams::default(), theta, 6).unwrap();
        let data = sample_dataset(&truth, &default_phases(), eta, 4000, seed).unwrap();
        let config = ReconstructionConfig { iterations: 150, detection_efficiency: eta, ..ReconstructionConfig::default() };
        let rec = maxlik_reconstruct(&data, &config).unwrap();
        prop_assert!(is_monotone(&rec.loglik_trace));
        prop_assert_eq!(rec.loglik_trace.len(), 151);
    }
}

#[test]
fn reconstruction_is_deterministic() {
    let truth = emitted_state(&ProtocolParams::default(), PI / 2.0, 6).unwrap();
    let data = sample_dataset(&truth, &default_phases(), 0.722, 3000, 5).unwrap();
    let config = ReconstructionConfig { iterations: 50, ..ReconstructionConfig::default() };
    let a = maxlik_reconstruct(&data, &config).unwrap();
    let b = maxlik_reconstruct(&data, &config).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.loglik_trace, b.loglik_trace);
}

#[test]
fn efficiency_correction_is_dual_to_loss() {
    let eta_det = 0.722;
    let truth = emitted_state(&ProtocolParams::default(), 0.76 * PI, 6).unwrap();
    let data = sample_dataset(&truth, &default_phases(), eta_det, 32_800, 19).unwrap();
    let corrected = maxlik_reconstruct(
        &data,
        &ReconstructionConfig { detection_efficiency: eta_det, ..ReconstructionConfig::default() },
    )
    .unwrap();
    let naive = maxlik_reconstruct(
        &data,
        &ReconstructionConfig { detection_efficiency: 1.0, ..ReconstructionConfig::default() },
    )
    .unwrap();
    assert!(is_monotone(&corrected.loglik_trace) && is_monotone(&naive.loglik_trace));
    let pushed = apply_loss(&corrected.state, eta_det).unwrap();
    let f = fidelity(&pushed, &naive.state).unwrap();
    assert!(f >= 0.995, "fidelity {f}");
}

#[test]
fn filtered_vacuum_has_half_variance() {
    let times = linspace(0.0, 2e-6, 301);
    let flux = PulseProfile::sample(0.0, 2e-6, 301, |t| {
        let s = (t - 0.6e-6) / 0.25e-6;
        C64::new((-s * s).exp(), 0.0)
    })
    .unwrap();
    let phase = PulseProfile::from_real(times.clone(), &linspace(0.0, 2.2, 301)).unwrap();
    let mode = mode_from_flux(&flux, Some(&phase)).unwrap();
    let n = 10_000;
    let xs: Vec<f64> = (0..n as u64)
        .map(|k| filter_trace(&vacuum_trace(&times, k).unwrap(), &mode).value)
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sigma = 0.5 * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - 0.5).abs() <= 3.0 * sigma, "variance {var}");
}

#[test]
fn vacuum_stays_vacuum_under_correction() {
    let vac = DensityMatrix::vacuum(6).unwrap();
    for eta in [1.0, 0.722, 0.405] {
        let data = sample_dataset(&vac, &default_phases(), eta, 32_800, 2).unwrap();
        let config = ReconstructionConfig { detection_efficiency: eta, ..ReconstructionConfig::default() };
        let rec = maxlik_reconstruct(&data, &config).unwrap();
        assert!(is_monotone(&rec.loglik_trace));
        assert!(fidelity(&rec.state, &vac).unwrap() >= 0.995, "eta {eta}");
    }
}
