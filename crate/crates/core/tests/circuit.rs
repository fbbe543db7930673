mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use proptest::prelude::*;
use qnngp::circuit::{
    build_unitary, model_output, random_circuit, sample_outputs, zz_feature_map, zz_feature_vector, CircuitSpec,
    EnsembleOptions, FeatureMapOptions, Layer, ObservableSet, RandomCircuit, SpectralState,
};
use qnngp::gp::fidelity_kernel;
use qnngp::linalg::{
    pauli_string_matrix, sample_haar_unitary, CMatrix, CVector, DensityMatrix, HermitianObservable, UnitaryOperator,
};
use qnngp::stats::MomentEstimate;
use qnngp::Error;

fn single_layer(w: UnitaryOperator, x: &str) -> CircuitSpec {
    let n = x.len();
    CircuitSpec::new(
        n,
        vec![Layer {
            w,
            x: HermitianObservable::pauli(x).unwrap(),
        }],
    )
    .unwrap()
}

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn plus_state() -> DensityMatrix {
    let s = 1.0 / 2f64.sqrt();
    DensityMatrix::from_pure(&CVector::from_vec(vec![Complex64::new(s, 0.0); 2])).unwrap()
}

#[test]
fn identity_layer_at_zero_angle() {
    let spec = single_layer(UnitaryOperator::identity(2).unwrap(), "Z");
    let u = build_unitary(&spec, &[0.0]).unwrap();
    assert!(max_diff(u.matrix(), &CMatrix::identity(2, 2)) < 1e-15);
}

#[test]
fn z_generator_at_half_pi() {
    let spec = single_layer(UnitaryOperator::identity(2).unwrap(), "Z");
    let u = build_unitary(&spec, &[FRAC_PI_2]).unwrap();
    let want = CMatrix::from_diagonal(&CVector::from_vec(vec![
        Complex64::from_polar(1.0, FRAC_PI_2),
        Complex64::from_polar(1.0, -FRAC_PI_2),
    ]));
    assert!(max_diff(u.matrix(), &want) < 1e-12);
}

#[test]
fn commuting_generators_add() {
    let id = UnitaryOperator::identity(2).unwrap();
    let z = HermitianObservable::pauli("Z").unwrap();
    let spec = CircuitSpec::new(
        1,
        vec![
            Layer { w: id.clone(), x: z.clone() },
            Layer { w: id.clone(), x: z.clone() },
        ],
    )
    .unwrap();
    let (a, b) = (0.37, -1.21);
    let two = build_unitary(&spec, &[a, b]).unwrap();
    let one = build_unitary(&single_layer(id, "Z"), &[a + b]).unwrap();
    assert!(max_diff(two.matrix(), one.matrix()) < 1e-12);
}

#[test]
fn arity_mismatch_is_rejected() {
    let spec = single_layer(UnitaryOperator::identity(2).unwrap(), "Z");
    assert!(matches!(build_unitary(&spec, &[0.1, 0.2]), Err(Error::Arity { expected: 1, got: 2 })));
}

#[test]
fn identity_observable_gives_one() {
    let mut rng = common::rng(1, "identity-obs");
    let (spec, theta) = random_circuit(2, 4, &mut rng).unwrap();
    let obs = ObservableSet::new(vec![HermitianObservable::identity(4).unwrap()]).unwrap();
    let rho = common::random_mixed_state(4, &mut rng);
    let f = model_output(&spec, &theta, &rho, &obs).unwrap();
    assert!((f[0] - 1.0).abs() < 1e-12);
}

#[test]
fn z_on_ground_state_with_identity_circuit() {
    let spec = single_layer(UnitaryOperator::identity(2).unwrap(), "Z");
    let obs = ObservableSet::paulis(&["Z"]).unwrap();
    let f = model_output(&spec, &[0.0], &DensityMatrix::basis(2, 0).unwrap(), &obs).unwrap();
    assert!((f[0] - 1.0).abs() < 1e-15);
}

#[test]
fn x_expectation_is_cos_two_theta() {
    let spec = single_layer(UnitaryOperator::identity(2).unwrap(), "Z");
    let obs = ObservableSet::paulis(&["X"]).unwrap();
    for k in 0..17 {
        let theta = -PI + k as f64 * PI / 8.0;
        let f = model_output(&spec, &[theta], &plus_state(), &obs).unwrap();
        assert!((f[0] - (2.0 * theta).cos()).abs() < 1e-12, "θ = {theta}");
    }
}

#[test]
fn random_circuit_shapes() {
    let mut rng = common::rng(2, "shapes");
    let (spec, theta) = random_circuit(1, 1, &mut rng).unwrap();
    assert_eq!((spec.dim(), spec.depth(), theta.len()), (2, 1, 1));
    assert!(spec.layers()[0].w.unitarity_error() < 1e-10);

    let (spec, theta) = random_circuit(2, 3, &mut rng).unwrap();
    assert_eq!((spec.dim(), spec.depth(), theta.len()), (4, 3, 3));
    for layer in spec.layers() {
        assert!(layer.w.unitarity_error() < 1e-10);
    }
    assert!(build_unitary(&spec, &theta).unwrap().unitarity_error() < 1e-10);
    assert!(theta.iter().all(|t| (0.0..2.0 * PI).contains(t)));
}

#[test]
fn random_circuit_is_deterministic() {
    let a = random_circuit(3, 5, &mut common::rng(7, "det")).unwrap();
    let b = random_circuit(3, 5, &mut common::rng(7, "det")).unwrap();
    assert_eq!(a, b);
    let c = random_circuit(3, 5, &mut common::rng(8, "det")).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn gate_level_and_dense_paths_agree() {
    let mut rng = common::rng(3, "paths");
    let rc = RandomCircuit::sample(3, 6, &mut rng).unwrap();
    let spec = rc.to_spec().unwrap();
    let obs = ObservableSet::paulis(&["ZII", "IXI", "YYZ"]).unwrap();
    let rho = common::random_mixed_state(8, &mut rng);
    let dense = model_output(&spec, &rc.theta, &rho, &obs).unwrap();
    let fast = rc.outputs_with(&rc.theta, &SpectralState::new(&rho), &obs);
    for (a, b) in dense.iter().zip(&fast) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn feature_map_single_qubit_at_zero_is_plus() {
    let opts = FeatureMapOptions { reps: 1, full_pairs: false };
    let rho = zz_feature_map(&[0.0], 1, opts).unwrap();
    let x = HermitianObservable::pauli("X").unwrap();
    assert!((rho.expectation(&x).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn feature_map_states_are_pure() {
    let mut rng = common::rng(4, "fm");
    use rand::Rng;
    for n in 1..=4 {
        for reps in 1..=3 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            for full_pairs in [false, true] {
                let rho = zz_feature_map(&x, n, FeatureMapOptions { reps, full_pairs }).unwrap();
                assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
                assert!((rho.purity() - 1.0).abs() < 1e-12);
                assert!((fidelity_kernel(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn feature_map_length_is_checked() {
    assert!(matches!(
        zz_feature_vector(&[0.1, 0.2], 3, FeatureMapOptions::default()),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn feature_map_matches_dense_construction() {
    // Independent construction from full matrices.
    let x = [0.3, 1.7, 2.9];
    let n = 3;
    let d = 8;
    let h = CMatrix::from_fn(2, 2, |r, c| {
        Complex64::new(if r == 1 && c == 1 { -1.0 } else { 1.0 } / 2f64.sqrt(), 0.0)
    });
    let mut hall = CMatrix::identity(1, 1);
    for _ in 0..n {
        hall = hall.kronecker(&h);
    }
    let mut phase = vec![0.0; d];
    for (k, ph) in phase.iter_mut().enumerate() {
        let z = |w: usize| if (k >> (n - 1 - w)) & 1 == 0 { 1.0 } else { -1.0 };
        for w in 0..n {
            *ph += x[w] * z(w);
        }
        for w in 0..n - 1 {
            *ph += (PI - x[w]) * (PI - x[w + 1]) * z(w) * z(w + 1);
        }
    }
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(d, phase.iter().map(|p| Complex64::from_polar(1.0, *p))));
    let layer = &diag * &hall;
    let mut v = CVector::zeros(d);
    v[0] = Complex64::new(1.0, 0.0);
    let v = &layer * (&layer * v);
    let got = zz_feature_vector(&x, n, FeatureMapOptions::default()).unwrap();
    let overlap = v.dotc(&got).norm();
    assert!((overlap - 1.0).abs() < 1e-12);
}

#[test]
fn global_phase_leaves_outputs_unchanged() {
    let mut rng = common::rng(5, "phase");
    let u = sample_haar_unitary(4, &mut rng).unwrap();
    let rho = common::random_pure_state(4, &mut rng);
    let o = common::random_observable(4, &mut rng);
    let a = rho.evolve(&u).unwrap().expectation(&o).unwrap();
    let b = rho.evolve(&u.with_phase(1.234)).unwrap().expectation(&o).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn concatenation_composes_unitaries() {
    let mut rng = common::rng(6, "concat");
    let (a, ta) = random_circuit(2, 3, &mut rng).unwrap();
    let (b, tb) = random_circuit(2, 2, &mut rng).unwrap();
    let ab = a.concat(&b).unwrap();
    let theta: Vec<f64> = ta.iter().chain(&tb).copied().collect();
    let u = build_unitary(&ab, &theta).unwrap();
    let ua = build_unitary(&a, &ta).unwrap();
    let ub = build_unitary(&b, &tb).unwrap();
    // b acts after a
    assert!(max_diff(u.matrix(), &(ub.matrix() * ua.matrix())) < 1e-12);
    let obs = ObservableSet::paulis(&["ZZ", "XI"]).unwrap();
    let rho = common::random_pure_state(4, &mut rng);
    let f = model_output(&ab, &theta, &rho, &obs).unwrap();
    let g: Vec<f64> = obs
        .iter()
        .map(|o| rho.evolve(&ua).unwrap().evolve(&ub).unwrap().expectation(o).unwrap())
        .collect();
    for (x, y) in f.iter().zip(&g) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn spec_json_round_trip() {
    let (spec, _) = random_circuit(2, 2, &mut common::rng(9, "json")).unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    let back: CircuitSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, back);
}

#[test]
fn spec_json_rejects_non_unitary_layer() {
    let (spec, _) = random_circuit(1, 1, &mut common::rng(10, "json-bad")).unwrap();
    let mut v: serde_json::Value = serde_json::to_value(&spec).unwrap();
    let w = &mut v["layers"][0]["w"];
    *w = serde_json::json!({"matrix": [[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]});
    assert!(serde_json::from_value::<CircuitSpec>(v).is_err());
}

#[test]
fn identity_column_is_constant() {
    let obs = ObservableSet::new(vec![
        HermitianObservable::identity(4).unwrap(),
        HermitianObservable::pauli("ZI").unwrap(),
    ])
    .unwrap();
    let rho = DensityMatrix::basis(4, 0).unwrap();
    let t = sample_outputs(EnsembleOptions { n_qubits: 2, depth: 3 }, &[rho], &obs, 200, 11).unwrap();
    assert!(t.column(0).iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert_eq!(t.n_samples(), 200);
}

#[test]
fn ensemble_mean_of_traceless_observable_vanishes() {
    let obs = ObservableSet::paulis(&["ZI"]).unwrap();
    let rho = DensityMatrix::basis(4, 0).unwrap();
    let t = sample_outputs(EnsembleOptions { n_qubits: 2, depth: 4 }, &[rho], &obs, 100_000, 12).unwrap();
    let est = MomentEstimate::from_samples(&t.column(0));
    assert!(est.z_score(0.0) < 4.0, "{est:?}");
}

#[test]
fn disjoint_seeds_are_compatible() {
    let obs = ObservableSet::paulis(&["ZZ"]).unwrap();
    let rho = zz_feature_map(&[0.4, 2.2], 2, FeatureMapOptions::default()).unwrap();
    let opts = EnsembleOptions { n_qubits: 2, depth: 3 };
    let a = MomentEstimate::from_samples(&sample_outputs(opts, std::slice::from_ref(&rho), &obs, 20_000, 100).unwrap().column(0));
    let b = MomentEstimate::from_samples(&sample_outputs(opts, &[rho], &obs, 20_000, 200).unwrap().column(0));
    let z = (a.value - b.value).abs() / (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(z < 4.0, "z = {z}");
}

#[test]
fn sample_outputs_is_reproducible() {
    let obs = ObservableSet::paulis(&["ZI", "IZ"]).unwrap();
    let rho = DensityMatrix::basis(4, 1).unwrap();
    let opts = EnsembleOptions { n_qubits: 2, depth: 2 };
    let a = sample_outputs(opts, std::slice::from_ref(&rho), &obs, 50, 3).unwrap();
    let b = sample_outputs(opts, &[rho], &obs, 50, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pauli_strings_have_expected_matrices() {
    let zz = pauli_string_matrix("ZZ").unwrap();
    let diag: Vec<f64> = (0..4).map(|k| zz[(k, k)].re).collect();
    assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_unitaries_are_unitary(seed in any::<u64>(), n in 1usize..=3, depth in 1usize..=5) {
        let (spec, theta) = random_circuit(n, depth, &mut common::rng(seed, "prop-u")).unwrap();
        prop_assert!(build_unitary(&spec, &theta).unwrap().unitarity_error() < 1e-10);
    }

    #[test]
    fn outputs_are_bounded_by_spectral_radius(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = common::rng(seed, "prop-f");
        let d = 1 << n;
        let (spec, theta) = random_circuit(n, 3, &mut rng).unwrap();
        let o = common::random_observable(d, &mut rng);
        let r = o.spectral_radius();
        let rho = common::random_mixed_state(d, &mut rng);
        let f = model_output(&spec, &theta, &rho, &ObservableSet::new(vec![o]).unwrap()).unwrap();
        prop_assert!(f[0].abs() <= r + 1e-12);
    }

    #[test]
    fn feature_map_self_fidelity_is_one(a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let rho = zz_feature_map(&[a, b], 2, FeatureMapOptions::default()).unwrap();
        prop_assert!((fidelity_kernel(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
    }
}
