//! Parameter-space quantities: shift-rule gradients, the tangent kernel
//! `ℍ = J Jᵀ`, its Haar average, gradient-descent training, the linearized
//! (frozen-kernel) dynamics and derivative meta-kernels.
//!
//! Rows of a Jacobian are flattened `(output i, point α)` pairs with index
//! `i * n_points + α`, the same layout as [`crate::gp::KernelMatrix`].

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{outputs_prepared, CircuitSpec, Layer, ObservableSet, RandomCircuit, SpectralState};
use crate::error::{Error, Result};
use crate::gp::default_jitter;
use crate::linalg::{
    eigh_real, haar_matrix, trace, trace_of_product, DensityMatrix, HermitianObservable, RMatrix, RVector,
    UnitaryOperator,
};
use crate::rng::{substream, StreamRng};
use crate::stats::MomentEstimate;

/// Anything that maps angles and a prepared state to observable values.
pub trait Parametrized: Sync {
    fn n_params(&self) -> usize;
    fn dim(&self) -> usize;
    /// Whether every generator squares to the identity.
    fn involutory(&self) -> bool;
    fn outputs(&self, theta: &[f64], state: &SpectralState, obs: &ObservableSet) -> Result<Vec<f64>>;
}

impl Parametrized for CircuitSpec {
    fn n_params(&self) -> usize {
        self.depth()
    }
    fn dim(&self) -> usize {
        CircuitSpec::dim(self)
    }
    fn involutory(&self) -> bool {
        self.all_involutory()
    }
    fn outputs(&self, theta: &[f64], state: &SpectralState, obs: &ObservableSet) -> Result<Vec<f64>> {
        outputs_prepared(self, theta, state, obs)
    }
}

impl Parametrized for RandomCircuit {
    fn n_params(&self) -> usize {
        self.depth()
    }
    fn dim(&self) -> usize {
        1 << self.n_qubits
    }
    fn involutory(&self) -> bool {
        true
    }
    fn outputs(&self, theta: &[f64], state: &SpectralState, obs: &ObservableSet) -> Result<Vec<f64>> {
        if theta.len() != self.depth() {
            return Err(Error::Arity {
                expected: self.depth(),
                got: theta.len(),
            });
        }
        Ok(self.outputs_with(theta, state, obs))
    }
}

/// A circuit followed by a fixed unitary before measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailedCircuit {
    pub spec: CircuitSpec,
    pub tail: UnitaryOperator,
}

impl Parametrized for TailedCircuit {
    fn n_params(&self) -> usize {
        self.spec.depth()
    }
    fn dim(&self) -> usize {
        self.spec.dim()
    }
    fn involutory(&self) -> bool {
        self.spec.all_involutory()
    }
    fn outputs(&self, theta: &[f64], state: &SpectralState, obs: &ObservableSet) -> Result<Vec<f64>> {
        let mut out = vec![0.0; obs.len()];
        for (lambda, v) in &state.terms {
            let mut w = v.clone();
            self.spec.apply(theta, &mut w)?;
            let w = self.tail.matrix() * w;
            for (o, acc) in obs.iter().zip(out.iter_mut()) {
                *acc += lambda * w.dotc(&(o.matrix() * &w)).re;
            }
        }
        Ok(out)
    }
}

/// Circuit ensembles used for Haar-averaged parameter-space quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CircuitEnsemble {
    /// [`RandomCircuit`]: Haar two-qubit gates in a brickwork chain.
    Brickwork { n_qubits: usize, depth: usize },
    /// Each `W_ℓ` Haar on the full space, generator Pauli-Y on wire `ℓ mod n`,
    /// and one more Haar unitary before measurement, so every rotation sits
    /// between independent Haar unitaries.
    HaarLayers { n_qubits: usize, depth: usize },
}

/// One draw from a [`CircuitEnsemble`] together with its angles.
pub enum EnsembleMember {
    Brickwork(RandomCircuit),
    Dense(TailedCircuit, Vec<f64>),
}

impl CircuitEnsemble {
    pub fn n_qubits(&self) -> usize {
        match *self {
            Self::Brickwork { n_qubits, .. } | Self::HaarLayers { n_qubits, .. } => n_qubits,
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            Self::Brickwork { depth, .. } | Self::HaarLayers { depth, .. } => depth,
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Result<EnsembleMember> {
        match *self {
            Self::Brickwork { n_qubits, depth } => Ok(EnsembleMember::Brickwork(RandomCircuit::sample(
                n_qubits, depth, rng,
            )?)),
            Self::HaarLayers { n_qubits, depth } => {
                use rand::Rng;
                let d = 1usize << n_qubits;
                if n_qubits == 0 || depth == 0 {
                    return Err(Error::InvalidDimension("need n >= 1 and L >= 1".into()));
                }
                let layers = (0..depth)
                    .map(|l| {
                        let wire = crate::circuit::generator_wire(l, n_qubits);
                        let label: String = (0..n_qubits).map(|k| if k == wire { 'Y' } else { 'I' }).collect();
                        Ok(Layer {
                            w: UnitaryOperator::new(haar_matrix(d, rng))?,
                            x: HermitianObservable::pauli(&label)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let theta = (0..depth).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                let tail = UnitaryOperator::new(haar_matrix(d, rng))?;
                Ok(EnsembleMember::Dense(
                    TailedCircuit {
                        spec: CircuitSpec::new(n_qubits, layers)?,
                        tail,
                    },
                    theta,
                ))
            }
        }
    }
}

impl EnsembleMember {
    pub fn theta(&self) -> &[f64] {
        match self {
            Self::Brickwork(rc) => &rc.theta,
            Self::Dense(_, t) => t,
        }
    }

    pub fn model(&self) -> &dyn Parametrized {
        match self {
            Self::Brickwork(rc) => rc,
            Self::Dense(spec, _) => spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    /// Shift rule when every generator is involutory, otherwise finite differences.
    Auto,
    ParameterShift,
    /// Five-point central differences with step `1e-4`.
    FiniteDifference,
}

pub const FD_STEP: f64 = 1e-4;

/// `∂f_{i,α}/∂θ_μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTensor {
    pub n_outputs: usize,
    pub n_points: usize,
    pub n_params: usize,
    /// Rows `i * n_points + α`, columns `μ`.
    #[serde(with = "crate::linalg::real_rows")]
    pub jacobian: RMatrix,
    pub finite_difference: bool,
}

impl GradientTensor {
    pub fn get(&self, i: usize, alpha: usize, mu: usize) -> f64 {
        self.jacobian[(i * self.n_points + alpha, mu)]
    }
}

/// Outputs at every point, flattened as `i * n_points + α`.
pub fn flat_outputs(model: &dyn Parametrized, theta: &[f64], states: &[SpectralState], obs: &ObservableSet) -> Result<RVector> {
    let np = states.len();
    let mut f = RVector::zeros(obs.len() * np);
    for (a, st) in states.iter().enumerate() {
        for (i, v) in model.outputs(theta, st, obs)?.into_iter().enumerate() {
            f[i * np + a] = v;
        }
    }
    Ok(f)
}

fn check_inputs(model: &dyn Parametrized, theta: &[f64], states: &[DensityMatrix], obs: &ObservableSet) -> Result<()> {
    if theta.len() != model.n_params() {
        return Err(Error::Arity {
            expected: model.n_params(),
            got: theta.len(),
        });
    }
    let d = model.dim();
    for got in states.iter().map(DensityMatrix::dim).chain([obs.dim()]) {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    if states.is_empty() {
        return Err(Error::InvalidDimension("need at least one state".into()));
    }
    Ok(())
}

fn shifted(theta: &[f64], mu: usize, delta: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[mu] += delta;
    t
}

fn jacobian_prepared(
    model: &dyn Parametrized,
    theta: &[f64],
    states: &[SpectralState],
    obs: &ObservableSet,
    fd: bool,
) -> Result<RMatrix> {
    let l = model.n_params();
    let cols = (0..l)
        .into_par_iter()
        .map(|mu| {
            let f = |delta: f64| flat_outputs(model, &shifted(theta, mu, delta), states, obs);
            if fd {
                let h = FD_STEP;
                Ok((-f(2.0 * h)? + f(h)? * 8.0 - f(-h)? * 8.0 + f(-2.0 * h)?) / (12.0 * h))
            } else {
                Ok(f(FRAC_PI_4)? - f(-FRAC_PI_4)?)
            }
        })
        .collect::<Result<Vec<RVector>>>()?;
    Ok(RMatrix::from_columns(&cols))
}

/// Gradient of every output at every state.
pub fn parameter_shift_gradient(
    model: &dyn Parametrized,
    theta: &[f64],
    states: &[DensityMatrix],
    obs: &ObservableSet,
    method: GradientMethod,
) -> Result<GradientTensor> {
    check_inputs(model, theta, states, obs)?;
    let fd = match method {
        GradientMethod::Auto => !model.involutory(),
        GradientMethod::ParameterShift => {
            if !model.involutory() {
                return Err(Error::ContractViolation(
                    "the shift rule needs generators with X² = I".into(),
                ));
            }
            false
        }
        GradientMethod::FiniteDifference => true,
    };
    let prepared: Vec<SpectralState> = states.iter().map(SpectralState::new).collect();
    Ok(GradientTensor {
        n_outputs: obs.len(),
        n_points: states.len(),
        n_params: model.n_params(),
        jacobian: jacobian_prepared(model, theta, &prepared, obs, fd)?,
        finite_difference: fd,
    })
}

/// Mixed derivative `∂^k f / ∂θ_{μ_1} ⋯ ∂θ_{μ_k}` by nested shifts (repeated
/// indices allowed); requires involutory generators.
pub fn nested_shift_derivative(
    model: &dyn Parametrized,
    theta: &[f64],
    state: &SpectralState,
    obs: &ObservableSet,
    indices: &[usize],
) -> Result<Vec<f64>> {
    if !model.involutory() {
        return Err(Error::ContractViolation(
            "nested shifts need generators with X² = I".into(),
        ));
    }
    let k = indices.len();
    let mut acc = vec![0.0; obs.len()];
    let mut t = theta.to_vec();
    for signs in 0..1usize << k {
        t.copy_from_slice(theta);
        let mut sign = 1.0;
        for (b, &mu) in indices.iter().enumerate() {
            if signs >> b & 1 == 1 {
                t[mu] -= FRAC_PI_4;
                sign = -sign;
            } else {
                t[mu] += FRAC_PI_4;
            }
        }
        for (a, v) in acc.iter_mut().zip(model.outputs(&t, state, obs)?) {
            *a += sign * v;
        }
    }
    Ok(acc)
}

/// `ℍ_{ij,αβ} = Σ_μ ∂_μ f_{i,α} ∂_μ f_{j,β}` (identity metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNTKMatrix {
    pub n_outputs: usize,
    pub n_points: usize,
    #[serde(with = "crate::linalg::real_rows")]
    pub matrix: RMatrix,
}

impl QNTKMatrix {
    pub fn from_gradient(g: &GradientTensor) -> Self {
        Self {
            n_outputs: g.n_outputs,
            n_points: g.n_points,
            matrix: &g.jacobian * g.jacobian.transpose(),
        }
    }

    pub fn entry(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        self.matrix[(i * self.n_points + a, j * self.n_points + b)]
    }

    pub fn to_kernel(&self) -> Result<crate::gp::KernelMatrix> {
        crate::gp::KernelMatrix::dense(self.matrix.clone(), self.n_outputs, self.n_points)
    }
}

pub fn qntk(model: &dyn Parametrized, theta: &[f64], states: &[DensityMatrix], obs: &ObservableSet) -> Result<QNTKMatrix> {
    let g = parameter_shift_gradient(model, theta, states, obs, GradientMethod::Auto)?;
    Ok(QNTKMatrix::from_gradient(&g))
}

/// Per-parameter Haar average in closed form:
/// `2d/((d-1)(d+1)(d²+d)) [Tr(O_iO_j)Tr(ρ_αρ_β) - Tr O_i Tr O_j Tr ρ_α Tr ρ_β] Tr(X_μX_ν)`.
pub fn haar_averaged_qntk(
    oi: &HermitianObservable,
    oj: &HermitianObservable,
    ra: &DensityMatrix,
    rb: &DensityMatrix,
    xm: &HermitianObservable,
    xn: &HermitianObservable,
) -> Result<f64> {
    let d = common_dim(&[oi.dim(), oj.dim(), ra.dim(), rb.dim(), xm.dim(), xn.dim()])? as f64;
    let oo = trace_of_product(oi.matrix(), oj.matrix()).re;
    let rr = trace_of_product(ra.matrix(), rb.matrix()).re;
    let tt = trace(oi.matrix()).re * trace(oj.matrix()).re * trace(ra.matrix()).re * trace(rb.matrix()).re;
    let xx = trace_of_product(xm.matrix(), xn.matrix()).re;
    Ok(2.0 * d / ((d - 1.0) * (d + 1.0) * (d * d + d)) * (oo * rr - tt) * xx)
}

/// Large-`d` limit of [`haar_averaged_qntk`]: `(2c/d²) Tr(O_iO_j) Tr(ρ_αρ_β)`
/// with `c = Tr(X_μX_ν)/d`.
pub fn haar_averaged_qntk_leading(
    oi: &HermitianObservable,
    oj: &HermitianObservable,
    ra: &DensityMatrix,
    rb: &DensityMatrix,
    xm: &HermitianObservable,
    xn: &HermitianObservable,
) -> Result<f64> {
    let d = common_dim(&[oi.dim(), oj.dim(), ra.dim(), rb.dim(), xm.dim(), xn.dim()])? as f64;
    let c = trace_of_product(xm.matrix(), xn.matrix()).re / d;
    Ok(2.0 * c / (d * d)
        * trace_of_product(oi.matrix(), oj.matrix()).re
        * trace_of_product(ra.matrix(), rb.matrix()).re)
}

/// Exact average of `∂_μ f_{i,α} ∂_ν f_{j,β}` for one gate `exp(iθX)` placed
/// between two independent Haar unitaries, valid for traceless generators:
/// `2 Tr(X_μX_ν) [d Tr(O_iO_j) - Tr O_i Tr O_j] [d Tr(ρ_αρ_β) - 1] / (d (d²-1)²)`.
pub fn haar_averaged_qntk_exact(
    oi: &HermitianObservable,
    oj: &HermitianObservable,
    ra: &DensityMatrix,
    rb: &DensityMatrix,
    xm: &HermitianObservable,
    xn: &HermitianObservable,
) -> Result<f64> {
    let d = common_dim(&[oi.dim(), oj.dim(), ra.dim(), rb.dim(), xm.dim(), xn.dim()])? as f64;
    for x in [xm, xn] {
        if trace(x.matrix()).norm() > 1e-10 * d {
            return Err(Error::ContractViolation("generators must be traceless".into()));
        }
    }
    let xx = trace_of_product(xm.matrix(), xn.matrix()).re;
    let oo = d * trace_of_product(oi.matrix(), oj.matrix()).re - trace(oi.matrix()).re * trace(oj.matrix()).re;
    let rr = d * trace_of_product(ra.matrix(), rb.matrix()).re - 1.0;
    Ok(2.0 * xx * oo * rr / (d * (d * d - 1.0).powi(2)))
}

fn common_dim(dims: &[usize]) -> Result<usize> {
    let d = dims[0];
    if d < 2 {
        return Err(Error::InvalidDimension("need d >= 2".into()));
    }
    match dims.iter().find(|&&x| x != d) {
        Some(&got) => Err(Error::DimensionMismatch { expected: d, got }),
        None => Ok(d),
    }
}

/// Full-batch gradient descent on `½ Σ (f - y)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrajectory {
    pub eta: f64,
    /// `theta[t]`, `f[t]` (flattened), `loss[t]` for `t = 0..=steps`.
    pub theta: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

impl TrainingTrajectory {
    pub fn steps(&self) -> usize {
        self.loss.len().saturating_sub(1)
    }
}

/// Abort once the loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

pub fn gradient_descent_train(
    model: &dyn Parametrized,
    theta0: &[f64],
    observed: &crate::gp::ObservedSet,
    obs: &ObservableSet,
    eta: f64,
    steps: usize,
) -> Result<TrainingTrajectory> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::ContractViolation(format!("learning rate {eta} must be finite and >= 0")));
    }
    check_inputs(model, theta0, &observed.states, obs)?;
    if observed.labels.nrows() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            got: observed.labels.nrows(),
        });
    }
    let np = observed.states.len();
    let y = RVector::from_fn(obs.len() * np, |r, _| observed.labels[(r / np, r % np)]);
    let prepared: Vec<SpectralState> = observed.states.iter().map(SpectralState::new).collect();
    let fd = !model.involutory();
    let mut theta = theta0.to_vec();
    let mut traj = TrainingTrajectory {
        eta,
        theta: Vec::with_capacity(steps + 1),
        f: Vec::with_capacity(steps + 1),
        loss: Vec::with_capacity(steps + 1),
    };
    let mut guard = f64::INFINITY;
    for step in 0..=steps {
        let f = flat_outputs(model, &theta, &prepared, obs)?;
        let eps = &f - &y;
        let loss = 0.5 * eps.norm_squared();
        if step == 0 {
            guard = DIVERGENCE_FACTOR * loss.max(f64::MIN_POSITIVE);
        }
        if !loss.is_finite() || loss > guard {
            return Err(Error::Diverged { step, loss, guard });
        }
        traj.theta.push(theta.clone());
        traj.f.push(f.iter().copied().collect());
        traj.loss.push(loss);
        if step == steps || eta == 0.0 {
            continue;
        }
        let j = jacobian_prepared(model, &theta, &prepared, obs, fd)?;
        let grad = j.transpose() * eps;
        for (t, g) in theta.iter_mut().zip(grad.iter()) {
            *t -= eta * g;
        }
    }
    Ok(traj)
}

/// Frozen-kernel prediction over all points `[train.., rest..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedPrediction {
    pub t: f64,
    /// Ensemble mean `ℚ_{·O} ℚ_OO⁻¹ (1 - e^{-ηℚ_OO t}) y`.
    #[serde(with = "crate::linalg::real_vec")]
    pub mean: RVector,
    /// Mean plus the transient of the supplied initial function.
    #[serde(with = "crate::linalg::real_vec")]
    pub f: RVector,
    #[serde(with = "crate::linalg::real_rows")]
    pub covariance: RMatrix,
    pub jitter: f64,
}

/// Time model for [`linearized_dynamics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeModel {
    /// Gradient flow, `e^{-ηℚt}`.
    Continuous,
    /// The linearized gradient-descent recursion, `(1 - ηℚ)^t` for integer `t`.
    Discrete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedOptions {
    pub eta: f64,
    pub time: TimeModel,
    /// Covariance of the initial function; defaults to the kernel itself.
    pub prior: Option<RMatrix>,
    pub jitter: Option<f64>,
}

impl LinearizedOptions {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            time: TimeModel::Continuous,
            prior: None,
            jitter: None,
        }
    }
}

/// Linearized dynamics under a kernel `q` (all points, flattened with
/// `n_points` points per output; the first `n_train` points of each output
/// are the training set). `f0` is the initial function on all points and `y`
/// the labels on the training indices (output-major). `t = ∞` gives the
/// converged limit.
pub fn linearized_dynamics(
    q: &QNTKMatrix,
    n_train: usize,
    f0: &RVector,
    y: &RVector,
    t: f64,
    opts: &LinearizedOptions,
) -> Result<LinearizedPrediction> {
    let eta = opts.eta;
    let np = q.n_points;
    let n = q.matrix.nrows();
    if f0.len() != n || y.len() != q.n_outputs * n_train || n_train > np {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: f0.len(),
        });
    }
    let train: Vec<usize> = (0..q.n_outputs)
        .flat_map(|i| (0..n_train).map(move |a| i * np + a))
        .collect();
    let k_oo = RMatrix::from_fn(train.len(), train.len(), |r, c| q.matrix[(train[r], train[c])]);
    let jitter = opts.jitter.unwrap_or_else(|| default_jitter(&k_oo));
    let mut a = k_oo;
    for x in 0..a.nrows() {
        a[(x, x)] += jitter;
    }
    let (lam, v) = eigh_real(&a);
    let cond = lam[lam.len() - 1] / lam[0];
    if lam[0] <= 0.0 || !cond.is_finite() || cond > 1e15 {
        return Err(Error::Conditioning {
            condition_number: if lam[0] <= 0.0 { f64::INFINITY } else { cond },
            context: "frozen kernel on the training set".into(),
        });
    }
    // ℚ_OO⁻¹ (1 - e^{-ηℚt}) in the eigenbasis
    let weights = lam.map(|l| {
        let decay = match (t.is_infinite(), opts.time) {
            (true, _) => 0.0,
            (false, TimeModel::Continuous) => (-eta * l * t).exp(),
            (false, TimeModel::Discrete) => (1.0 - eta * l).powf(t),
        };
        (1.0 - decay) / l
    });
    let filt = &v * RMatrix::from_diagonal(&weights) * v.transpose();
    let q_all_o = RMatrix::from_fn(n, train.len(), |r, c| q.matrix[(r, train[c])]);
    let gain = &q_all_o * filt;
    let mean = &gain * y;
    let f0_o = RVector::from_fn(train.len(), |r, _| f0[train[r]]);
    let f = &mean + f0 - &gain * f0_o;
    let k = opts.prior.as_ref().unwrap_or(&q.matrix);
    let k_o_all = RMatrix::from_fn(train.len(), n, |r, c| k[(train[r], c)]);
    let k_oo = RMatrix::from_fn(train.len(), train.len(), |r, c| k[(train[r], train[c])]);
    let cross = &gain * &k_o_all;
    let covariance = k - &cross - cross.transpose() + &gain * k_oo * gain.transpose();
    Ok(LinearizedPrediction {
        t,
        mean,
        f,
        covariance,
        jitter,
    })
}

/// One-shot update `θ* = θ₀ - η Jᵀ (ηℚ)⁻¹ (f - y)`, with `ℚ = J Jᵀ`; the
/// learning rate cancels, and the linearization at `θ*` interpolates `y`.
pub fn theta_star(theta0: &[f64], jacobian: &RMatrix, f: &RVector, y: &RVector, eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::ContractViolation("learning rate must be positive".into()));
    }
    if jacobian.ncols() != theta0.len() || jacobian.nrows() != f.len() || f.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: jacobian.nrows(),
            got: f.len(),
        });
    }
    let q = jacobian * jacobian.transpose() * eta;
    let step = crate::linalg::solve_spd(&q, &RMatrix::from_column_slice(f.len(), 1, (f - y).as_slice()), "tangent kernel")?;
    let delta = jacobian.transpose() * step * eta;
    Ok(theta0.iter().zip(delta.iter()).map(|(t, d)| t - d).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaKernelOrder {
    /// `Σ_{μν} ∂²_{μν}f ∂_μf ∂_νf`.
    DQntk,
    /// `Σ_{μνλ} ∂³_{μνλ}f ∂_μf ∂_νf ∂_λf`.
    DdQntkI,
    /// `Σ_{μνλ} ∂²_{μν}f ∂²_{νλ}f ∂_μf ∂_λf`.
    DdQntkII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaKernelEstimate {
    pub order: MetaKernelOrder,
    pub estimate: MomentEstimate,
}

/// Meta-kernel contraction for one circuit, one state and one observable.
pub fn meta_kernel(
    model: &dyn Parametrized,
    theta: &[f64],
    state: &SpectralState,
    obs: &HermitianObservable,
    order: MetaKernelOrder,
) -> Result<f64> {
    let set = ObservableSet::new(vec![obs.clone()])?;
    let l = model.n_params();
    let d1: Vec<f64> = (0..l)
        .map(|m| Ok(nested_shift_derivative(model, theta, state, &set, &[m])?[0]))
        .collect::<Result<_>>()?;
    let mut h = RMatrix::zeros(l, l);
    for m in 0..l {
        for n in m..l {
            let v = nested_shift_derivative(model, theta, state, &set, &[m, n])?[0];
            h[(m, n)] = v;
            h[(n, m)] = v;
        }
    }
    let g = RVector::from_vec(d1);
    Ok(match order {
        MetaKernelOrder::DQntk => g.dot(&(&h * &g)),
        MetaKernelOrder::DdQntkII => {
            let hg = &h * &g;
            hg.dot(&hg)
        }
        MetaKernelOrder::DdQntkI => {
            let mut acc = 0.0;
            for m in 0..l {
                for n in m..l {
                    for k in n..l {
                        let v = nested_shift_derivative(model, theta, state, &set, &[m, n, k])?[0];
                        // distinct orderings of the sorted triple
                        let mult = match (m == n, n == k) {
                            (true, true) => 1.0,
                            (false, false) => 6.0,
                            _ => 3.0,
                        };
                        acc += mult * v * g[m] * g[n] * g[k];
                    }
                }
            }
            acc
        }
    })
}

/// Monte Carlo mean of a meta-kernel over `n` ensemble draws; draw `s` uses
/// substream `("meta-kernel", s)`.
pub fn meta_kernel_estimate(
    ensemble: CircuitEnsemble,
    rho: &DensityMatrix,
    obs: &HermitianObservable,
    order: MetaKernelOrder,
    n: usize,
    seed: u64,
) -> Result<MetaKernelEstimate> {
    let d = 1usize << ensemble.n_qubits();
    for got in [rho.dim(), obs.dim()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    let state = SpectralState::new(rho);
    let samples = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, "meta-kernel", s as u64);
            let member = ensemble.sample(&mut rng)?;
            meta_kernel(member.model(), member.theta(), &state, obs, order)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetaKernelEstimate {
        order,
        estimate: MomentEstimate::from_samples(&samples),
    })
}

/// Monte Carlo estimate of `E[ℍ_{ij,αβ}]_{μμ}` per parameter `μ` over an
/// ensemble; returns one estimate per parameter. Draw `s` uses substream
/// `("qntk-mc", s)`.
pub fn monte_carlo_qntk_diagonal(
    ensemble: CircuitEnsemble,
    states: [&DensityMatrix; 2],
    obs: [&HermitianObservable; 2],
    n: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    let set = ObservableSet::new(vec![obs[0].clone(), obs[1].clone()])?;
    let prepared = [SpectralState::new(states[0]), SpectralState::new(states[1])];
    let samples = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, "qntk-mc", s as u64);
            let member = ensemble.sample(&mut rng)?;
            let j = jacobian_prepared(member.model(), member.theta(), &prepared, &set, false)?;
            // rows: (obs 0, state 0) = 0, (obs 1, state 1) = 3
            Ok((0..j.ncols()).map(|m| j[(0, m)] * j[(3, m)]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let l = ensemble.depth();
    Ok((0..l)
        .map(|m| MomentEstimate::from_samples(&samples.iter().map(|r| r[m]).collect::<Vec<_>>()))
        .collect())
}
