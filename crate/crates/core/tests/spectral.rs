use brwlab::spectral::{beta_critical, classify, lambda0, lambda0_with, SpectralOptions};
use brwlab::walk_kernel::{build_kernel, KernelSpec};
use brwlab::{OffspringLaw, Regime, WalkKernel};

/// `1 / G_0(0,0)` for the nearest-neighbour walk on `Z^3` with unit total
/// rate, from the closed-form Watson integral.
const BETA_C_3D: f64 = 0.659_462_670_449_201;

fn srw(d: usize) -> WalkKernel {
    build_kernel(&KernelSpec::simple_symmetric(d, 1.0)).unwrap()
}

#[test]
fn three_dimensional_threshold_matches_watson() {
    let b = beta_critical(&srw(3)).unwrap();
    assert!((b - BETA_C_3D).abs() < 1e-9, "{b}");
}

#[test]
fn two_dimensional_heavy_tail_is_transient() {
    let k = build_kernel(&KernelSpec::heavy_tail(2, 1.0)).unwrap();
    let b = beta_critical(&k).unwrap();
    assert!(b > 0.0 && b < 1.0, "{b}");
}

#[test]
fn eigenvalues_on_the_cubic_lattice() {
    // reference roots from an independent arbitrary-precision evaluation of
    // G_lambda(0,0) = int_0^inf e^{-(1 + lambda) t} I_0(t/3)^3 dt
    let k = srw(3);
    let expected = [
        (1.5, 0.175_670_265_451_166),
        (2.0, 0.452_131_567_059_569),
        (4.0, 1.701_812_832_869_785),
    ];
    let mut last = 0.0;
    for (factor, reference) in expected {
        let beta = factor * BETA_C_3D;
        let (l, residual) = lambda0_with(&k, beta, &SpectralOptions::default())
            .unwrap()
            .unwrap();
        assert!(residual.abs() < 1e-8);
        assert!((l - reference).abs() < 1e-7 * reference, "{factor}: {l}");
        assert!(l > last && l <= beta);
        last = l;
    }
}

#[test]
fn boundary_and_weak_regimes() {
    let k = srw(3);
    assert_eq!(lambda0(&k, BETA_C_3D * (1.0 - 1e-6)).unwrap(), None);
    let weak = OffspringLaw::binary(0.5 * BETA_C_3D, 0.1).unwrap();
    assert_eq!(classify(&k, &weak).unwrap().regime, Regime::SubcriticalWeak);
    let beta_c = beta_critical(&k).unwrap();
    let boundary = OffspringLaw::binary(beta_c, 0.1).unwrap();
    let report = classify(&k, &boundary).unwrap();
    assert_eq!(report.regime, Regime::SubcriticalBoundary);
    assert_eq!(report.lambda0, None);
}

#[test]
fn eigenvalue_increases_with_reproduction() {
    let k = srw(1);
    let mut last = 0.0;
    for beta in [0.2, 0.5, 1.0, 2.0, 5.0] {
        let l = lambda0(&k, beta).unwrap().unwrap();
        assert!(l > last && l <= beta);
        last = l;
    }
}
