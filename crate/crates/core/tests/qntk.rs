mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use proptest::prelude::*;
use qnngp::circuit::{random_circuit, zz_feature_map, CircuitSpec, FeatureMapOptions, Layer, ObservableSet, RandomCircuit};
use qnngp::gp::{gp_posterior, ObservedSet};
use qnngp::haar::{connected_moment, Connection, MomentSpec};
use qnngp::linalg::{CVector, DensityMatrix, HermitianObservable, RMatrix, RVector, UnitaryOperator};
use qnngp::qntk::{
    flat_outputs, gradient_descent_train, haar_averaged_qntk, haar_averaged_qntk_exact, haar_averaged_qntk_leading,
    linearized_dynamics, meta_kernel, meta_kernel_estimate, monte_carlo_qntk_diagonal, parameter_shift_gradient,
    qntk, theta_star, CircuitEnsemble, GradientMethod, LinearizedOptions, MetaKernelOrder, Parametrized,
    QNTKMatrix, TailedCircuit, TimeModel,
};
use qnngp::stats::log_log_slope;
use qnngp::Error;
use rand::Rng;

fn z_layer_spec() -> CircuitSpec {
    CircuitSpec::new(
        1,
        vec![Layer {
            w: UnitaryOperator::identity(2).unwrap(),
            x: HermitianObservable::pauli("Z").unwrap(),
        }],
    )
    .unwrap()
}

fn plus_state() -> DensityMatrix {
    DensityMatrix::from_unnormalized(&CVector::from_element(2, Complex64::new(1.0, 0.0))).unwrap()
}

fn z0(n: usize) -> String {
    (0..n).map(|k| if k == 0 { 'Z' } else { 'I' }).collect()
}

fn feature_states(n: usize, count: usize, rng: &mut qnngp::rng::StreamRng) -> Vec<DensityMatrix> {
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            zz_feature_map(&x, n, FeatureMapOptions::default()).unwrap()
        })
        .collect()
}

#[test]
fn identity_observable_has_zero_gradient() {
    let mut rng = common::rng(1, "grad-id");
    let rc = RandomCircuit::sample(2, 4, &mut rng).unwrap();
    let obs = ObservableSet::new(vec![HermitianObservable::identity(4).unwrap()]).unwrap();
    let states = feature_states(2, 2, &mut rng);
    let g = parameter_shift_gradient(&rc, &rc.theta, &states, &obs, GradientMethod::Auto).unwrap();
    assert!(g.jacobian.amax() < 1e-13);
}

#[test]
fn derivative_of_cos_two_theta() {
    let spec = z_layer_spec();
    let obs = ObservableSet::paulis(&["X"]).unwrap();
    for k in 0..12 {
        let t = -1.3 + 0.27 * k as f64;
        let g = parameter_shift_gradient(&spec, &[t], &[plus_state()], &obs, GradientMethod::ParameterShift).unwrap();
        assert!((g.get(0, 0, 0) + 2.0 * (2.0 * t).sin()).abs() < 1e-12);
    }
}

#[test]
fn shift_rule_matches_finite_differences() {
    let mut rng = common::rng(2, "ps-vs-fd");
    let obs = ObservableSet::paulis(&["ZI", "XY"]).unwrap();
    for _ in 0..10 {
        let (spec, theta) = random_circuit(2, 4, &mut rng).unwrap();
        let states = feature_states(2, 2, &mut rng);
        let ps = parameter_shift_gradient(&spec, &theta, &states, &obs, GradientMethod::ParameterShift).unwrap();
        let fd = parameter_shift_gradient(&spec, &theta, &states, &obs, GradientMethod::FiniteDifference).unwrap();
        assert!(fd.finite_difference && !ps.finite_difference);
        assert!((&ps.jacobian - &fd.jacobian).amax() < 1e-6);
    }
}

#[test]
fn shift_rule_requires_involutory_generators() {
    let mut rng = common::rng(3, "non-inv");
    let x = common::random_observable(2, &mut rng);
    let spec = CircuitSpec::new(1, vec![Layer { w: UnitaryOperator::identity(2).unwrap(), x }]).unwrap();
    let obs = ObservableSet::paulis(&["Z"]).unwrap();
    let rho = common::random_pure_state(2, &mut rng);
    assert!(matches!(
        parameter_shift_gradient(&spec, &[0.1], std::slice::from_ref(&rho), &obs, GradientMethod::ParameterShift),
        Err(Error::ContractViolation(_))
    ));
    let auto = parameter_shift_gradient(&spec, &[0.1], &[rho], &obs, GradientMethod::Auto).unwrap();
    assert!(auto.finite_difference);
}

#[test]
fn single_point_qntk_is_squared_gradient_norm() {
    let mut rng = common::rng(4, "single");
    let rc = RandomCircuit::sample(2, 5, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZZ"]).unwrap();
    let states = feature_states(2, 1, &mut rng);
    let g = parameter_shift_gradient(&rc, &rc.theta, &states, &obs, GradientMethod::Auto).unwrap();
    let q = qntk(&rc, &rc.theta, &states, &obs).unwrap();
    assert!((q.entry(0, 0, 0, 0) - g.jacobian.row(0).norm_squared()).abs() < 1e-14);
    assert!(q.entry(0, 0, 0, 0) >= 0.0);
}

#[test]
fn duplicated_point_gives_rank_one_block() {
    let mut rng = common::rng(5, "dup");
    let rc = RandomCircuit::sample(2, 6, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI"]).unwrap();
    let s = feature_states(2, 1, &mut rng).remove(0);
    let q = qntk(&rc, &rc.theta, &[s.clone(), s], &obs).unwrap();
    let ev = q.matrix.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    assert!(hi > 1e-3 && lo.abs() < 1e-12 * hi);
}

#[test]
fn qntk_is_psd_and_phase_invariant() {
    let mut rng = common::rng(6, "psd");
    let (spec, theta) = random_circuit(2, 8, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI", "IZ", "XX"]).unwrap();
    let states = feature_states(2, 4, &mut rng);
    let q = qntk(&spec, &theta, &states, &obs).unwrap();
    assert!(q.matrix.symmetric_eigenvalues().min() > -1e-10);
    assert!((&q.matrix - q.matrix.transpose()).amax() < 1e-14);
    // a global phase on the trailing unitary changes nothing
    let tailed = TailedCircuit {
        spec: spec.clone(),
        tail: UnitaryOperator::identity(4).unwrap().with_phase(0.81),
    };
    let qt = qntk(&tailed, &theta, &states, &obs).unwrap();
    assert!((&q.matrix - &qt.matrix).amax() < 1e-12);
}

#[test]
fn closed_form_examples() {
    let d = 4;
    let z = HermitianObservable::pauli("ZI").unwrap();
    let rho = DensityMatrix::basis(d, 0).unwrap();
    let y = HermitianObservable::pauli("YI").unwrap();
    let x = HermitianObservable::pauli("IX").unwrap();
    assert_eq!(haar_averaged_qntk(&z, &z, &rho, &rho, &y, &x).unwrap(), 0.0);
    let v = haar_averaged_qntk(&z, &z, &rho, &rho, &y, &y).unwrap();
    assert!((v - 128.0 / 300.0).abs() < 1e-14);
    // the exact single-gate average coincides here (traceless O, pure equal states)
    let e = haar_averaged_qntk_exact(&z, &z, &rho, &rho, &y, &y).unwrap();
    assert!((v - e).abs() < 1e-14);
    assert!(matches!(
        haar_averaged_qntk_exact(&z, &z, &rho, &rho, &HermitianObservable::identity(4).unwrap(), &y),
        Err(Error::ContractViolation(_))
    ));
}

/// The closed form agrees with a Haar-sandwiched Monte Carlo at d = 4.
#[test]
fn closed_form_matches_monte_carlo_at_d4() {
    let z = HermitianObservable::pauli("ZI").unwrap();
    let rho = DensityMatrix::basis(4, 0).unwrap();
    let ens = CircuitEnsemble::HaarLayers { n_qubits: 2, depth: 2 };
    let est = monte_carlo_qntk_diagonal(ens, [&rho, &rho], [&z, &z], 4000, 17).unwrap();
    for e in est {
        assert!(e.z_score(128.0 / 300.0) < 4.0, "{e:?}");
    }
}

/// Leading forms of `E[ff]` and `E[⟨∇f,∇f⟩]` per parameter differ by the
/// constant `2c`; the exact forms approach that ratio as `d²/(d²-1)`.
#[test]
fn ntk_heuristic_ratio() {
    for n in 1..=5usize {
        let d = (1usize << n) as f64;
        let o = HermitianObservable::pauli(&z0(n)).unwrap();
        let y: String = (0..n).map(|k| if k == 0 { 'Y' } else { 'I' }).collect();
        let x = HermitianObservable::pauli(&y).unwrap();
        let rho = DensityMatrix::basis(1 << n, 0).unwrap();
        let c = 1.0;
        let ff_lead = 1.0 / (d * d) * d;
        let grad_lead = haar_averaged_qntk_leading(&o, &o, &rho, &rho, &x, &x).unwrap();
        assert!((grad_lead / ff_lead - 2.0 * c).abs() < 1e-12);
        let spec = MomentSpec::new(vec![(rho.clone(), o.clone()), (rho.clone(), o.clone())]).unwrap();
        let ff = connected_moment(&spec, 2, Connection::Pairing).unwrap();
        let grad = haar_averaged_qntk_exact(&o, &o, &rho, &rho, &x, &x).unwrap();
        let ratio = grad / ff / (2.0 * c);
        assert!((ratio - d * d / (d * d - 1.0)).abs() < 1e-10, "d = {d}: {ratio}");
    }
}

#[test]
fn training_is_constant_at_labels_or_zero_rate() {
    let mut rng = common::rng(7, "train-trivial");
    let rc = RandomCircuit::sample(2, 4, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI"]).unwrap();
    let states = feature_states(2, 2, &mut rng);
    let f0 = flat_outputs(&rc, &rc.theta, &states.iter().map(qnngp::circuit::SpectralState::new).collect::<Vec<_>>(), &obs).unwrap();
    let at_labels = ObservedSet::new(states.clone(), RMatrix::from_row_slice(1, 2, f0.as_slice())).unwrap();
    let t = gradient_descent_train(&rc, &rc.theta, &at_labels, &obs, 0.05, 10).unwrap();
    assert!(t.theta.iter().all(|th| th == &rc.theta));
    assert_eq!(t.steps(), 10);

    let other = ObservedSet::new(states, RMatrix::from_row_slice(1, 2, &[0.3, -0.3])).unwrap();
    let t = gradient_descent_train(&rc, &rc.theta, &other, &obs, 0.0, 10).unwrap();
    assert!(t.loss.windows(2).all(|w| w[0] == w[1]));
    assert!(t.f.iter().all(|f| f == &t.f[0]));
}

#[test]
fn divergence_guard_triggers() {
    let spec = z_layer_spec();
    let obs = ObservableSet::paulis(&["X"]).unwrap();
    let observed = ObservedSet::new(vec![plus_state()], RMatrix::from_element(1, 1, 1e6)).unwrap();
    assert!(gradient_descent_train(&spec, &[0.0], &observed, &obs, 1.0, 5).is_ok());
    // start next to the label so one oversized step grows the loss past the guard
    let t0 = 0.3f64;
    let at = ObservedSet::new(vec![plus_state()], RMatrix::from_element(1, 1, (2.0 * t0).cos() - 1e-6)).unwrap();
    let err = gradient_descent_train(&spec, &[t0], &at, &obs, 1e3, 3).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

/// n = 2, L = 48, one datapoint, η = 0.01, seed 11.
#[test]
fn deep_circuit_fits_single_point() {
    let mut rng = common::rng(11, "deep-fit");
    let rc = RandomCircuit::sample(2, 48, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI"]).unwrap();
    let states = feature_states(2, 1, &mut rng);
    let observed = ObservedSet::new(states, RMatrix::from_element(1, 1, 0.4)).unwrap();
    let t = gradient_descent_train(&rc, &rc.theta, &observed, &obs, 0.01, 200).unwrap();
    let (first, last) = (t.loss[0], t.loss[200]);
    assert!(last < 1e-3 * first, "{first} -> {last}");
}

fn random_problem(seed: u64, n_train: usize, n_test: usize) -> (QNTKMatrix, RVector, RVector) {
    let mut rng = common::rng(seed, "lin-problem");
    let rc = RandomCircuit::sample(2, 12, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI", "IZ"]).unwrap();
    let states = feature_states(2, n_train + n_test, &mut rng);
    let q = qntk(&rc, &rc.theta, &states, &obs).unwrap();
    let prepared: Vec<_> = states.iter().map(qnngp::circuit::SpectralState::new).collect();
    let f0 = flat_outputs(&rc, &rc.theta, &prepared, &obs).unwrap();
    let y = RVector::from_fn(2 * n_train, |_, _| rng.random_range(-0.5..0.5));
    (q, f0, y)
}

#[test]
fn linearized_at_time_zero() {
    let (q, f0, y) = random_problem(12, 3, 2);
    let p = linearized_dynamics(&q, 3, &f0, &y, 0.0, &LinearizedOptions::new(0.05)).unwrap();
    assert!((&p.f - &f0).amax() < 1e-15);
    assert!(p.mean.amax() < 1e-15);
    assert!((&p.covariance - &q.matrix).amax() < 1e-15);
}

#[test]
fn linearized_scalar_solution() {
    let q = QNTKMatrix {
        n_outputs: 1,
        n_points: 1,
        matrix: RMatrix::from_element(1, 1, 0.8),
    };
    let (f0, y, eta) = (0.3, -0.2, 0.1);
    let mut opts = LinearizedOptions::new(eta);
    opts.jitter = Some(0.0);
    for t in [0.5, 3.0, 40.0] {
        let p = linearized_dynamics(&q, 1, &RVector::from_element(1, f0), &RVector::from_element(1, y), t, &opts).unwrap();
        let want = y + (f0 - y) * (-eta * 0.8 * t).exp();
        assert!((p.f[0] - want).abs() < 1e-14);
    }
    opts.time = TimeModel::Discrete;
    let p = linearized_dynamics(&q, 1, &RVector::from_element(1, f0), &RVector::from_element(1, y), 5.0, &opts).unwrap();
    let want = y + (f0 - y) * (1.0 - eta * 0.8f64).powi(5);
    assert!((p.f[0] - want).abs() < 1e-14);
}

#[test]
fn linearized_limit_is_kernel_regression() {
    for seed in 0..5 {
        let (q, f0, y) = random_problem(100 + seed, 3, 2);
        let p = linearized_dynamics(&q, 3, &f0, &y, f64::INFINITY, &LinearizedOptions::new(0.01)).unwrap();
        let post = gp_posterior(&q.to_kernel().unwrap(), &RMatrix::from_row_slice(2, 3, y.as_slice()), 3, Some(p.jitter)).unwrap();
        for i in 0..2 {
            for a in 0..2 {
                assert!((post.mean[(i, a)] - p.mean[i * 5 + 3 + a]).abs() < 1e-10);
            }
        }
    }
}

/// Discrete linearized recursion reproduced step by step.
#[test]
fn discrete_time_model_matches_recursion() {
    let (q, f0, y) = random_problem(13, 2, 1);
    let mut opts = LinearizedOptions::new(0.05);
    opts.time = TimeModel::Discrete;
    opts.jitter = Some(0.0);
    let train = [0usize, 1, 3, 4];
    let mut f = f0.clone();
    for _ in 0..7 {
        let eps: Vec<f64> = train.iter().zip(y.iter()).map(|(&r, yv)| f[r] - yv).collect();
        let step = RVector::from_fn(f.len(), |r, _| train.iter().zip(&eps).map(|(&c, e)| q.matrix[(r, c)] * e).sum::<f64>());
        f -= step * 0.05;
    }
    let p = linearized_dynamics(&q, 2, &f0, &y, 7.0, &opts).unwrap();
    assert!((&p.f - &f).amax() < 1e-10);
}

#[test]
fn theta_star_cases() {
    let mut rng = common::rng(14, "theta-star");
    let rc = RandomCircuit::sample(2, 10, &mut rng).unwrap();
    let obs = ObservableSet::paulis(&["ZI"]).unwrap();
    let states = feature_states(2, 3, &mut rng);
    let g = parameter_shift_gradient(&rc, &rc.theta, &states, &obs, GradientMethod::Auto).unwrap();
    let prepared: Vec<_> = states.iter().map(qnngp::circuit::SpectralState::new).collect();
    let f = flat_outputs(&rc, &rc.theta, &prepared, &obs).unwrap();
    assert_eq!(theta_star(&rc.theta, &g.jacobian, &f, &f, 0.1).unwrap(), rc.theta);

    let y = RVector::from_vec(vec![0.1, -0.2, 0.3]);
    let star = theta_star(&rc.theta, &g.jacobian, &f, &y, 0.1).unwrap();
    let delta = RVector::from_iterator(star.len(), star.iter().zip(&rc.theta).map(|(a, b)| a - b));
    assert!((&f + &g.jacobian * delta - &y).amax() < 1e-8);
    // η cancels
    let other = theta_star(&rc.theta, &g.jacobian, &f, &y, 3.0).unwrap();
    assert!(star.iter().zip(&other).all(|(a, b)| (a - b).abs() < 1e-10));

    // scalar: θ* = θ₀ - (f - y)/f'
    let j = RMatrix::from_element(1, 1, -0.7);
    let s = theta_star(&[0.4], &j, &RVector::from_element(1, 0.2), &RVector::from_element(1, 0.5), 0.3).unwrap();
    assert!((s[0] - (0.4 - (0.2 - 0.5) / -0.7)).abs() < 1e-14);
}

#[test]
fn meta_kernels_vanish_for_identity_observable() {
    let mut rng = common::rng(15, "meta-id");
    let rc = RandomCircuit::sample(2, 3, &mut rng).unwrap();
    let id = HermitianObservable::identity(4).unwrap();
    let st = qnngp::circuit::SpectralState::new(&DensityMatrix::basis(4, 0).unwrap());
    for order in [MetaKernelOrder::DQntk, MetaKernelOrder::DdQntkI, MetaKernelOrder::DdQntkII] {
        assert!(meta_kernel(&rc, &rc.theta, &st, &id, order).unwrap().abs() < 1e-12);
    }
}

#[test]
fn meta_kernel_contractions_match_finite_differences() {
    let spec = z_layer_spec().concat(&z_layer_spec()).unwrap();
    let spec = CircuitSpec::new(
        1,
        spec.layers()
            .iter()
            .enumerate()
            .map(|(k, l)| Layer {
                w: l.w.clone(),
                x: HermitianObservable::pauli(if k == 0 { "Z" } else { "Y" }).unwrap(),
            })
            .collect(),
    )
    .unwrap();
    let o = HermitianObservable::pauli("X").unwrap();
    let rho = plus_state();
    let st = qnngp::circuit::SpectralState::new(&rho);
    let theta = [0.3, -0.8];
    let set = ObservableSet::new(vec![o.clone()]).unwrap();
    let f = |t: &[f64]| spec.outputs(t, &st, &set).unwrap()[0];
    let h = 1e-3;
    let d1 = |t: &[f64], m: usize| {
        let (mut a, mut b) = (t.to_vec(), t.to_vec());
        a[m] += h;
        b[m] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    };
    let d2 = |t: &[f64], m: usize, n: usize| {
        let (mut a, mut b) = (t.to_vec(), t.to_vec());
        a[n] += h;
        b[n] -= h;
        (d1(&a, m) - d1(&b, m)) / (2.0 * h)
    };
    let g = [d1(&theta, 0), d1(&theta, 1)];
    let mut dq = 0.0;
    for m in 0..2 {
        for n in 0..2 {
            dq += d2(&theta, m, n) * g[m] * g[n];
        }
    }
    let got = meta_kernel(&spec, &theta, &st, &o, MetaKernelOrder::DQntk).unwrap();
    assert!((got - dq).abs() < 1e-4, "{got} vs {dq}");
}

/// The first meta-kernel averages to zero at n = 2.
#[test]
fn dqntk_is_consistent_with_zero() {
    let rho = DensityMatrix::basis(4, 0).unwrap();
    let o = HermitianObservable::pauli("ZI").unwrap();
    let ens = CircuitEnsemble::HaarLayers { n_qubits: 2, depth: 2 };
    let e = meta_kernel_estimate(ens, &rho, &o, MetaKernelOrder::DQntk, 10_000, 21).unwrap();
    assert!(e.estimate.z_score(0.0) < 4.0, "{:?}", e.estimate);
}

/// Raw second meta-kernels fall off as roughly `1/d²`, set by their
/// disconnected Gaussian part; a `1/d⁴` fall-off is not observed.
#[test]
fn ddqntk_magnitude_scaling() {
    let dims = [2.0, 4.0, 8.0];
    for order in [MetaKernelOrder::DdQntkI, MetaKernelOrder::DdQntkII] {
        let mags: Vec<f64> = (1..=3)
            .map(|n| {
                let rho = DensityMatrix::basis(1 << n, 0).unwrap();
                let o = HermitianObservable::pauli(&z0(n)).unwrap();
                let ens = CircuitEnsemble::HaarLayers { n_qubits: n, depth: 2 };
                meta_kernel_estimate(ens, &rho, &o, order, 4000, 22).unwrap().estimate.value.abs()
            })
            .collect();
        let slope = log_log_slope(&dims, &mags);
        assert!((-2.6..=-1.6).contains(&slope), "{order:?}: {mags:?} slope {slope}");
    }
}

#[test]
fn ensemble_members_are_valid() {
    let mut rng = common::rng(23, "members");
    for ens in [
        CircuitEnsemble::Brickwork { n_qubits: 3, depth: 4 },
        CircuitEnsemble::HaarLayers { n_qubits: 3, depth: 4 },
    ] {
        let m = ens.sample(&mut rng).unwrap();
        assert_eq!(m.theta().len(), 4);
        assert_eq!(m.model().n_params(), 4);
        assert_eq!(m.model().dim(), 8);
        assert!(m.model().involutory());
    }
    let text = serde_json::to_string(&CircuitEnsemble::HaarLayers { n_qubits: 2, depth: 3 }).unwrap();
    assert!(text.contains("haar-layers"));
}

#[test]
fn half_pi_shift_sanity() {
    // f(θ) = cos 2θ at θ = π/4 has slope -2
    let spec = z_layer_spec();
    let obs = ObservableSet::paulis(&["X"]).unwrap();
    let g = parameter_shift_gradient(&spec, &[FRAC_PI_2 / 2.0], &[plus_state()], &obs, GradientMethod::Auto).unwrap();
    assert!((g.get(0, 0, 0) + 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn qntk_psd_on_random_circuits(seed in any::<u64>(), depth in 1usize..10) {
        let mut rng = common::rng(seed, "prop-psd");
        let rc = RandomCircuit::sample(2, depth, &mut rng).unwrap();
        let obs = ObservableSet::paulis(&["ZI", "YX"]).unwrap();
        let states = feature_states(2, 3, &mut rng);
        let q = qntk(&rc, &rc.theta, &states, &obs).unwrap();
        let scale = q.matrix.amax().max(1.0);
        prop_assert!(q.matrix.symmetric_eigenvalues().min() > -1e-10 * scale);
    }

    #[test]
    fn shift_matches_fd_property(seed in any::<u64>()) {
        let mut rng = common::rng(seed, "prop-ps");
        let (spec, theta) = random_circuit(2, 4, &mut rng).unwrap();
        let obs = ObservableSet::paulis(&["ZZ"]).unwrap();
        let states = feature_states(2, 1, &mut rng);
        let ps = parameter_shift_gradient(&spec, &theta, &states, &obs, GradientMethod::ParameterShift).unwrap();
        let fd = parameter_shift_gradient(&spec, &theta, &states, &obs, GradientMethod::FiniteDifference).unwrap();
        prop_assert!((&ps.jacobian - &fd.jacobian).amax() < 1e-6);
    }
}
