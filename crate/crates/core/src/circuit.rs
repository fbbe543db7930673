//! Layered variational circuits `U(θ) = Π_ℓ exp(iθ_ℓ X_ℓ) W_ℓ`, model
//! outputs, the ZZ feature map and the random-circuit ensemble.
//!
//! Application order: `W_1` acts first, then `exp(iθ_1 X_1)`, then layer 2,
//! so `U = G_L ⋯ G_1` with `G_ℓ = exp(iθ_ℓ X_ℓ) W_ℓ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, expm_hermitian_generator, haar_matrix, CMatrix, CVector, DensityMatrix,
    HermitianObservable, UnitaryOperator, I, ONE, ZERO,
};
use crate::rng::{substream, StreamRng};

/// One layer: a fixed unitary `W` followed by `exp(iθX)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: UnitaryOperator,
    pub x: HermitianObservable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitRepr", into = "CircuitRepr")]
pub struct CircuitSpec {
    n_qubits: usize,
    layers: Vec<Layer>,
    involutory: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct CircuitRepr {
    n_qubits: usize,
    layers: Vec<Layer>,
}

impl TryFrom<CircuitRepr> for CircuitSpec {
    type Error = Error;
    fn try_from(r: CircuitRepr) -> Result<Self> {
        CircuitSpec::new(r.n_qubits, r.layers)
    }
}

impl From<CircuitSpec> for CircuitRepr {
    fn from(c: CircuitSpec) -> Self {
        Self {
            n_qubits: c.n_qubits,
            layers: c.layers,
        }
    }
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, layers: Vec<Layer>) -> Result<Self> {
        if n_qubits == 0 || n_qubits >= usize::BITS as usize {
            return Err(Error::InvalidDimension(format!("bad qubit count {n_qubits}")));
        }
        if layers.is_empty() {
            return Err(Error::InvalidDimension("a circuit needs at least one layer".into()));
        }
        let d = 1usize << n_qubits;
        for layer in &layers {
            for got in [layer.w.dim(), layer.x.dim()] {
                if got != d {
                    return Err(Error::DimensionMismatch { expected: d, got });
                }
            }
        }
        let involutory = layers.iter().map(|l| l.x.is_involutory()).collect();
        Ok(Self {
            n_qubits,
            layers,
            involutory,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Whether every generator squares to the identity.
    pub fn all_involutory(&self) -> bool {
        self.involutory.iter().all(|&b| b)
    }

    /// Layers of `self` followed by layers of `next`.
    pub fn concat(&self, next: &CircuitSpec) -> Result<CircuitSpec> {
        if next.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: next.n_qubits,
            });
        }
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        CircuitSpec::new(self.n_qubits, layers)
    }

    fn check_arity(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.depth() {
            return Err(Error::Arity {
                expected: self.depth(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Apply `U(θ)` to a state vector in place.
    pub fn apply(&self, theta: &[f64], v: &mut CVector) -> Result<()> {
        self.check_arity(theta)?;
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        for ((layer, &t), &inv) in self.layers.iter().zip(theta).zip(&self.involutory) {
            *v = layer.w.matrix() * &*v;
            if inv {
                let xv = layer.x.matrix() * &*v;
                *v = &*v * Complex64::new(t.cos(), 0.0) + xv * (I * t.sin());
            } else {
                *v = expm_hermitian_generator(&layer.x, t).matrix() * &*v;
            }
        }
        Ok(())
    }
}

/// `exp(iθX)` for one layer, using `cos θ I + i sin θ X` when `X² = I`.
fn layer_gate(x: &HermitianObservable, involutory: bool, theta: f64) -> CMatrix {
    if involutory {
        let d = x.dim();
        CMatrix::identity(d, d) * Complex64::new(theta.cos(), 0.0) + x.matrix() * (I * theta.sin())
    } else {
        expm_hermitian_generator(x, theta).into_matrix()
    }
}

/// `U(θ) = G_L ⋯ G_1`.
pub fn build_unitary(spec: &CircuitSpec, theta: &[f64]) -> Result<UnitaryOperator> {
    spec.check_arity(theta)?;
    let d = spec.dim();
    let mut u = CMatrix::identity(d, d);
    for ((layer, &t), &inv) in spec.layers.iter().zip(theta).zip(&spec.involutory) {
        let g = layer_gate(&layer.x, inv, t) * layer.w.matrix();
        u = g * u;
    }
    UnitaryOperator::new(u)
}

/// A list of observables sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<HermitianObservable>", into = "Vec<HermitianObservable>")]
pub struct ObservableSet {
    observables: Vec<HermitianObservable>,
}

impl TryFrom<Vec<HermitianObservable>> for ObservableSet {
    type Error = Error;
    fn try_from(v: Vec<HermitianObservable>) -> Result<Self> {
        ObservableSet::new(v)
    }
}

impl From<ObservableSet> for Vec<HermitianObservable> {
    fn from(s: ObservableSet) -> Self {
        s.observables
    }
}

impl ObservableSet {
    pub fn new(observables: Vec<HermitianObservable>) -> Result<Self> {
        let Some(first) = observables.first() else {
            return Err(Error::InvalidDimension("empty observable set".into()));
        };
        let d = first.dim();
        if let Some(bad) = observables.iter().find(|o| o.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { observables })
    }

    /// Pauli strings, e.g. `["ZI", "IZ", "ZZ"]`.
    pub fn paulis(strings: &[&str]) -> Result<Self> {
        Self::new(
            strings
                .iter()
                .map(|s| HermitianObservable::pauli(s))
                .collect::<Result<_>>()?,
        )
    }

    /// All `2^n - 1` non-identity Z strings on `n` qubits, ordered by the
    /// binary mask with wire 0 as the most significant bit.
    pub fn z_strings(n: usize) -> Result<Self> {
        let strings: Vec<String> = (1..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|w| if mask >> (n - 1 - w) & 1 == 1 { 'Z' } else { 'I' })
                    .collect()
            })
            .collect();
        Self::paulis(&strings.iter().map(String::as_str).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.observables[0].dim()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, HermitianObservable> {
        self.observables.iter()
    }

    pub fn as_slice(&self) -> &[HermitianObservable] {
        &self.observables
    }

    pub fn labels(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.label().to_string()).collect()
    }
}

/// Spectral form `ρ = Σ λ_r |v_r⟩⟨v_r|`, dropping null eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub terms: Vec<(f64, CVector)>,
}

impl SpectralState {
    pub fn new(rho: &DensityMatrix) -> Self {
        let (vals, vecs) = eigh(rho.matrix());
        let terms = vals
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 1e-14)
            .map(|(k, &l)| (l, vecs.column(k).into_owned()))
            .collect();
        Self { terms }
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map_or(0, |(_, v)| v.len())
    }
}

/// `⟨v|O|v⟩` for Hermitian `O`.
fn quad_form(o: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(o * v)).re
}

/// Evaluate `[Tr(U ρ U† O_i)]_i` for prepared states; the hot path shared by
/// gradients and ensemble sampling.
pub(crate) fn outputs_prepared(
    spec: &CircuitSpec,
    theta: &[f64],
    state: &SpectralState,
    obs: &ObservableSet,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; obs.len()];
    for (lambda, v) in &state.terms {
        let mut w = v.clone();
        spec.apply(theta, &mut w)?;
        for (o, acc) in obs.iter().zip(out.iter_mut()) {
            *acc += lambda * quad_form(o.matrix(), &w);
        }
    }
    Ok(out)
}

/// `f_i = Tr(U(θ) ρ U(θ)† O_i)`.
pub fn model_output(
    spec: &CircuitSpec,
    theta: &[f64],
    rho: &DensityMatrix,
    obs: &ObservableSet,
) -> Result<Vec<f64>> {
    let d = spec.dim();
    for got in [rho.dim(), obs.dim()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    outputs_prepared(spec, theta, &SpectralState::new(rho), obs)
}

/// Outputs for several states: `result[α][i] = f_{i,α}`.
pub fn model_outputs(
    spec: &CircuitSpec,
    theta: &[f64],
    states: &[DensityMatrix],
    obs: &ObservableSet,
) -> Result<Vec<Vec<f64>>> {
    states
        .iter()
        .map(|rho| model_output(spec, theta, rho, obs))
        .collect()
}

/// Apply a 2x2 gate to `wire` of an `n`-qubit vector (wire 0 most significant).
fn apply_1q(v: &mut CVector, g: &[[Complex64; 2]; 2], wire: usize, n: usize) {
    let stride = 1usize << (n - 1 - wire);
    let d = v.len();
    let mut base = 0;
    while base < d {
        for i in base..base + stride {
            let a0 = v[i];
            let a1 = v[i + stride];
            v[i] = g[0][0] * a0 + g[0][1] * a1;
            v[i + stride] = g[1][0] * a0 + g[1][1] * a1;
        }
        base += 2 * stride;
    }
}

/// Apply a 4x4 gate to wires `(wire, wire + 1)`.
fn apply_2q(v: &mut CVector, g: &CMatrix, wire: usize, n: usize) {
    let hi = 1usize << (n - 1 - wire);
    let lo = hi >> 1;
    let d = v.len();
    for i in 0..d {
        if i & hi != 0 || i & lo != 0 {
            continue;
        }
        let idx = [i, i | lo, i | hi, i | hi | lo];
        let a = [v[idx[0]], v[idx[1]], v[idx[2]], v[idx[3]]];
        for (r, &out) in idx.iter().enumerate() {
            v[out] = g[(r, 0)] * a[0] + g[(r, 1)] * a[1] + g[(r, 2)] * a[2] + g[(r, 3)] * a[3];
        }
    }
}

fn apply_cz_chain(v: &mut CVector, n: usize) {
    for (i, amp) in v.iter_mut().enumerate() {
        let mut parity = 0;
        for w in 0..n.saturating_sub(1) {
            let b0 = i >> (n - 1 - w) & 1;
            let b1 = i >> (n - 2 - w) & 1;
            parity ^= b0 & b1;
        }
        if parity == 1 {
            *amp = -*amp;
        }
    }
}

/// Generator wire for layer `ℓ` (0-based) of the random ensemble.
pub fn generator_wire(layer: usize, n: usize) -> usize {
    layer % n
}

/// Gate-level description of one draw from the random-circuit ensemble.
///
/// Each `W_ℓ` is a chain of Haar two-qubit gates on `(0,1), (1,2), ..`
/// followed by a CZ chain on the same pairs; for one qubit it is a single
/// Haar 2x2 gate. The generator of layer `ℓ` is Pauli-Y on wire `ℓ mod n`.
#[derive(Debug, Clone)]
pub struct RandomCircuit {
    pub n_qubits: usize,
    /// Per layer, the Haar gates in application order.
    pub gates: Vec<Vec<CMatrix>>,
    pub theta: Vec<f64>,
}

impl RandomCircuit {
    pub fn sample(n_qubits: usize, depth: usize, rng: &mut StreamRng) -> Result<Self> {
        if n_qubits == 0 || depth == 0 {
            return Err(Error::InvalidDimension("need n >= 1 and L >= 1".into()));
        }
        let d = 1usize << n_qubits;
        if d > crate::linalg::tolerances().max_dim {
            return Err(Error::Resource(format!("2^{n_qubits} exceeds the dense limit")));
        }
        let gates = (0..depth)
            .map(|_| {
                if n_qubits == 1 {
                    vec![haar_matrix(2, rng)]
                } else {
                    (0..n_qubits - 1).map(|_| haar_matrix(4, rng)).collect()
                }
            })
            .collect();
        let theta = (0..depth).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self {
            n_qubits,
            gates,
            theta,
        })
    }

    pub fn depth(&self) -> usize {
        self.gates.len()
    }

    fn apply_w(&self, layer: usize, v: &mut CVector) {
        let n = self.n_qubits;
        if n == 1 {
            let g = &self.gates[layer][0];
            let m = [[g[(0, 0)], g[(0, 1)]], [g[(1, 0)], g[(1, 1)]]];
            apply_1q(v, &m, 0, 1);
            return;
        }
        for (w, g) in self.gates[layer].iter().enumerate() {
            apply_2q(v, g, w, n);
        }
        apply_cz_chain(v, n);
    }

    /// Apply `U(θ)` for the given angles (not necessarily `self.theta`).
    pub fn apply_with(&self, theta: &[f64], v: &mut CVector) {
        let n = self.n_qubits;
        for (layer, &t) in theta.iter().enumerate() {
            self.apply_w(layer, v);
            let (c, s) = (t.cos(), t.sin());
            let ry = [
                [Complex64::new(c, 0.0), Complex64::new(s, 0.0)],
                [Complex64::new(-s, 0.0), Complex64::new(c, 0.0)],
            ];
            apply_1q(v, &ry, generator_wire(layer, n), n);
        }
    }

    /// Dense `W_ℓ`.
    pub fn w_matrix(&self, layer: usize) -> CMatrix {
        let d = 1usize << self.n_qubits;
        let mut w = CMatrix::identity(d, d);
        for c in 0..d {
            let mut col = w.column(c).into_owned();
            self.apply_w(layer, &mut col);
            w.set_column(c, &col);
        }
        w
    }

    pub fn to_spec(&self) -> Result<CircuitSpec> {
        let n = self.n_qubits;
        let layers = (0..self.depth())
            .map(|l| {
                let wire = generator_wire(l, n);
                let label: String = (0..n).map(|k| if k == wire { 'Y' } else { 'I' }).collect();
                Ok(Layer {
                    w: UnitaryOperator::new(self.w_matrix(l))?,
                    x: HermitianObservable::pauli(&label)?,
                })
            })
            .collect::<Result<_>>()?;
        CircuitSpec::new(n, layers)
    }

    /// `[Tr(U ρ U† O_i)]_i` with angles `theta`.
    pub fn outputs_with(&self, theta: &[f64], state: &SpectralState, obs: &ObservableSet) -> Vec<f64> {
        let mut out = vec![0.0; obs.len()];
        for (lambda, v) in &state.terms {
            let mut w = v.clone();
            self.apply_with(theta, &mut w);
            for (o, acc) in obs.iter().zip(out.iter_mut()) {
                *acc += lambda * quad_form(o.matrix(), &w);
            }
        }
        out
    }
}

/// Draw a circuit and its angles from the random ensemble.
pub fn random_circuit(n_qubits: usize, depth: usize, rng: &mut StreamRng) -> Result<(CircuitSpec, Vec<f64>)> {
    let rc = RandomCircuit::sample(n_qubits, depth, rng)?;
    Ok((rc.to_spec()?, rc.theta))
}

/// Options for [`zz_feature_map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMapOptions {
    pub reps: usize,
    /// Couple every pair instead of adjacent pairs only.
    pub full_pairs: bool,
}

impl Default for FeatureMapOptions {
    fn default() -> Self {
        Self {
            reps: 2,
            full_pairs: false,
        }
    }
}

/// Pure state of the ZZ feature map, starting from `|0..0⟩`. Each repetition
/// applies Hadamards, `exp(i x_j Z_j)` and `exp(i (π−x_j)(π−x_k) Z_j Z_k)`.
pub fn zz_feature_vector(x: &[f64], n_qubits: usize, opts: FeatureMapOptions) -> Result<CVector> {
    if x.len() != n_qubits {
        return Err(Error::DimensionMismatch {
            expected: n_qubits,
            got: x.len(),
        });
    }
    if n_qubits == 0 || opts.reps == 0 {
        return Err(Error::InvalidDimension("need n >= 1 and reps >= 1".into()));
    }
    let d = 1usize << n_qubits;
    if d > crate::linalg::tolerances().max_dim {
        return Err(Error::Resource(format!("2^{n_qubits} exceeds the dense limit")));
    }
    let pairs: Vec<(usize, usize)> = if opts.full_pairs {
        (0..n_qubits)
            .flat_map(|j| (j + 1..n_qubits).map(move |k| (j, k)))
            .collect()
    } else {
        (0..n_qubits.saturating_sub(1)).map(|j| (j, j + 1)).collect()
    };
    // the diagonal phase per basis state is the same in every repetition
    let phases: Vec<Complex64> = (0..d)
        .map(|b| {
            let z = |w: usize| if b >> (n_qubits - 1 - w) & 1 == 1 { -1.0 } else { 1.0 };
            let mut angle: f64 = (0..n_qubits).map(|j| x[j] * z(j)).sum();
            for &(j, k) in &pairs {
                angle += (PI - x[j]) * (PI - x[k]) * z(j) * z(k);
            }
            Complex64::from_polar(1.0, angle)
        })
        .collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let hadamard = [
        [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
        [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
    ];
    let mut v = CVector::from_element(d, ZERO);
    v[0] = ONE;
    for _ in 0..opts.reps {
        for w in 0..n_qubits {
            apply_1q(&mut v, &hadamard, w, n_qubits);
        }
        for (amp, ph) in v.iter_mut().zip(&phases) {
            *amp *= ph;
        }
    }
    Ok(v)
}

/// `ρ(x) = |φ(x)⟩⟨φ(x)|`.
pub fn zz_feature_map(x: &[f64], n_qubits: usize, opts: FeatureMapOptions) -> Result<DensityMatrix> {
    let v = zz_feature_vector(x, n_qubits, opts)?;
    DensityMatrix::from_unnormalized(&v)
}

/// Per-sample outputs from the random ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTable {
    /// Column labels; `"{obs}@{state}"` when several states are used.
    pub labels: Vec<String>,
    /// `values[sample][column]`.
    pub values: Vec<Vec<f64>>,
}

impl OutputTable {
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[c]).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    /// Long-format CSV with header `sample_id,obs_label,value`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sample_id", "obs_label", "value"])?;
        for (s, row) in self.values.iter().enumerate() {
            for (label, v) in self.labels.iter().zip(row) {
                wr.write_record([s.to_string(), label.clone(), format!("{v:.17e}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// How each ensemble member is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub n_qubits: usize,
    pub depth: usize,
}

/// `n` independent draws of [`RandomCircuit`] (Haar `W`s and uniform `θ`),
/// recording `Tr(U ρ_α U† O_i)` for every state and observable. Sample `s`
/// uses substream `("circuit", s)` of `seed`.
pub fn sample_outputs(
    ensemble: EnsembleOptions,
    states: &[DensityMatrix],
    obs: &ObservableSet,
    n: usize,
    seed: u64,
) -> Result<OutputTable> {
    if n == 0 {
        return Err(Error::InvalidDimension("need at least one sample".into()));
    }
    if states.is_empty() {
        return Err(Error::InvalidDimension("need at least one state".into()));
    }
    let d = 1usize << ensemble.n_qubits;
    for got in states.iter().map(DensityMatrix::dim).chain([obs.dim()]) {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    let prepared: Vec<SpectralState> = states.iter().map(SpectralState::new).collect();
    let values = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, "circuit", s as u64);
            let rc = RandomCircuit::sample(ensemble.n_qubits, ensemble.depth, &mut rng)?;
            Ok(prepared
                .iter()
                .flat_map(|st| rc.outputs_with(&rc.theta, st, obs))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let labels = if states.len() == 1 {
        obs.labels()
    } else {
        (0..states.len())
            .flat_map(|a| obs.labels().into_iter().map(move |l| format!("{l}@{a}")))
            .collect()
    };
    Ok(OutputTable { labels, values })
}
