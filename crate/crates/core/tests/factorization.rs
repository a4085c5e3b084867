use mmwave_backhaul::channel::*;
use mmwave_backhaul::hybrid::*;
use mmwave_backhaul::linalg::{fro, CMat, C64};
use mmwave_backhaul::precoding::truncated_svd;
use mmwave_backhaul::rng::substream;
use mmwave_backhaul::Error;
use proptest::prelude::*;

fn backhaul_channel(l: usize, seed: u64) -> ChannelMatrix {
    let dist = PathDistribution::fixed(l, 0.0).unwrap();
    let paths = sample_paths(&dist, &mut substream(seed, 0));
    assemble_channel(
        &ArrayGeometry::half_wavelength(512).unwrap(),
        &ArrayGeometry::half_wavelength(32).unwrap(),
        &paths,
    )
}

fn complex_matrix(rows: usize, cols: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), rows * cols)
        .prop_map(move |v| CMat::from_iterator(rows, cols, v.into_iter().map(|(re, im)| C64::new(re, im))))
        .prop_filter("non-zero target", |m| fro(m) > 1e-3)
}

fn has_modulus(m: &CMat, c: f64) -> bool {
    m.iter().all(|z| (z.norm() - c).abs() <= 1e-15)
}

#[test]
fn phase_projection_examples() {
    let m = CMat::from_row_slice(1, 3, &[C64::new(2.0, 0.0), C64::new(0.0, -3.0), C64::new(0.0, 0.0)]);
    let p = phase_project(&m, 0.5);
    assert!((p[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-15);
    assert!((p[(0, 1)] - C64::new(0.0, -0.5)).norm() < 1e-15);
    assert_eq!(p[(0, 2)], C64::new(0.5, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // For the returned analog factor the digital factor solves the least
    // squares problem, so the residual is orthogonal to the analog rows.
    #[test]
    fn digital_factor_is_least_squares(target in complex_matrix(3, 12)) {
        let f = factorize(&target, &FactorizeOptions::default()).unwrap();
        let residual = &target - f.product();
        let gradient = &residual * f.analog.adjoint();
        prop_assert!(fro(&gradient) <= 1e-10 * fro(&target) * fro(&f.analog));
        prop_assert!(has_modulus(&f.analog, 1.0 / 12f64.sqrt()));
    }

    #[test]
    fn returned_iterate_never_worse_than_first(target in complex_matrix(2, 8)) {
        let f = factorize(&target, &FactorizeOptions::default()).unwrap();
        let trace = &f.objective_trace;
        prop_assert_eq!(trace.len(), f.iterations_used);
        prop_assert!(trace[f.best_iteration] <= trace[0]);
        prop_assert!(trace.iter().all(|&o| o >= trace[f.best_iteration]));
        prop_assert!((f.residual * fro(&target) - trace[f.best_iteration]).abs() <= 1e-12 * fro(&target));
    }
}

#[test]
fn constant_modulus_row_is_factored_in_one_step() {
    let n = 16;
    let row = CMat::from_fn(1, n, |_, j| C64::from_polar(3.0, 0.37 * j as f64));
    let f = factorize(&row, &FactorizeOptions::default()).unwrap();
    assert_eq!(f.best_iteration, 0);
    assert!(f.residual < 1e-14);
    // digital = 3 * sqrt(N) so the product reproduces the modulus-3 row
    assert!((f.digital[(0, 0)] - C64::new(3.0 * (n as f64).sqrt(), 0.0)).norm() < 1e-12);
}

#[test]
fn factorization_is_deterministic() {
    let target = truncated_svd(&backhaul_channel(4, 5), 4).unwrap().precoder_target();
    let a = factorize(&target, &FactorizeOptions::default()).unwrap();
    let b = factorize(&target, &FactorizeOptions::default()).unwrap();
    assert_eq!(a.digital, b.digital);
    assert_eq!(a.analog, b.analog);
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn full_scale_precoders_factor_well() {
    for seed in 0..10 {
        let target = truncated_svd(&backhaul_channel(4, 100 + seed), 4).unwrap().precoder_target();
        let f = factorize(&target, &FactorizeOptions::default()).unwrap();
        assert!(f.residual <= 0.1, "seed {seed}: residual {}", f.residual);
        assert!(f.iterations_used <= 100);
        assert_eq!(f.analog.shape(), (4, 512));
        assert!(has_modulus(&f.analog, 1.0 / 512f64.sqrt()));
    }
}

#[test]
fn explicit_modulus_is_respected() {
    let target = truncated_svd(&backhaul_channel(3, 7), 3).unwrap().precoder_target();
    let opts = FactorizeOptions { modulus: Some(1.0), ..Default::default() };
    let f = factorize(&target, &opts).unwrap();
    assert!(has_modulus(&f.analog, 1.0));
    assert_eq!(f.modulus, 1.0);
}

#[test]
fn combiner_factors_are_transposed() {
    let svd = truncated_svd(&backhaul_channel(4, 9), 4).unwrap();
    let c = factorize_combiner(&svd.right, &FactorizeOptions::default()).unwrap();
    assert_eq!(c.analog.shape(), (32, 4));
    assert_eq!(c.digital.shape(), (4, 4));
    assert!(has_modulus(&c.analog, 1.0 / 32f64.sqrt()));
    let rel = fro(&(&svd.right - c.product())) / fro(&svd.right);
    assert!((rel - c.residual).abs() < 1e-12);
}

#[test]
fn invalid_inputs() {
    let opts = FactorizeOptions::default();
    assert!(matches!(factorize(&CMat::zeros(0, 4), &opts), Err(Error::InvalidArgument(_))));
    assert!(matches!(factorize(&CMat::identity(4, 2), &opts), Err(Error::InvalidArgument(_))));
    assert!(matches!(factorize(&CMat::zeros(2, 4), &opts), Err(Error::InvalidArgument(_))));
    let none = FactorizeOptions { max_iterations: 0, ..Default::default() };
    assert!(factorize(&CMat::identity(2, 4), &none).is_err());
    let bad = FactorizeOptions { modulus: Some(-1.0), ..Default::default() };
    assert!(factorize(&CMat::identity(2, 4), &bad).is_err());
}
