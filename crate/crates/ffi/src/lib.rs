//! C ABI for the `qnngp` library.
//!
//! Every fallible call returns a [`QnngpStatus`]; on failure the message is
//! kept per thread and can be read with [`qnngp_last_error`]. Objects are
//! opaque handles created by `*_new` and released by the matching `*_free`.
//! Matrices cross the boundary row-major, complex entries as interleaved
//! `(re, im)` pairs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;
use qnngp::circuit::{zz_feature_map, FeatureMapOptions, ObservableSet, RandomCircuit, SpectralState};
use qnngp::gp::{gp_posterior, KernelMatrix};
use qnngp::haar::{haar_expectation, weingarten_table_general, MomentSpec, WeingartenTable};
use qnngp::linalg::{CMatrix, DensityMatrix, HermitianObservable, RMatrix};
use qnngp::near_gaussian::excess_kurtosis;
use qnngp::perm::CycleType;
use qnngp::qntk::{parameter_shift_gradient, GradientMethod};
use qnngp::rng::substream;
use qnngp::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnngpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Ill-conditioned or singular linear algebra.
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque Weingarten table.
pub struct QnngpWeingarten(WeingartenTable);

/// Opaque random circuit (brickwork ensemble draw).
pub struct QnngpCircuit(RandomCircuit);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(err: &Error) -> QnngpStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::Arity { .. } => QnngpStatus::DimensionMismatch,
        Error::Conditioning { .. } | Error::SingularGram { .. } | Error::Diverged { .. } => QnngpStatus::Numerical,
        Error::Io(_) => QnngpStatus::Io,
        _ => QnngpStatus::InvalidArgument,
    }
}

enum Failure {
    Null,
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QnngpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QnngpStatus::Ok,
        Ok(Err(Failure::Null)) => {
            set_error("null pointer argument");
            QnngpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QnngpStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null);
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null)
}

unsafe fn string(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::ContractViolation("string is not UTF-8".into())))
}

fn complex_matrix(d: usize, data: &[f64]) -> CMatrix {
    CMatrix::from_fn(d, d, |r, c| {
        let k = 2 * (r * d + c);
        Complex64::new(data[k], data[k + 1])
    })
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qnngp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qnngp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build the Weingarten table for `1 <= p <= 4` (pseudo-inverse when `d < p`).
///
/// # Safety
/// `table` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn qnngp_weingarten_new(p: usize, d: usize, table: *mut *mut QnngpWeingarten) -> QnngpStatus {
    guard(|| {
        let slot = out(table)?;
        let t = weingarten_table_general(p, d)?;
        *slot = Box::into_raw(Box::new(QnngpWeingarten(t)));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle from [`qnngp_weingarten_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qnngp_weingarten_free(table: *mut QnngpWeingarten) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// `Wg` for the cycle type given as `n_parts` cycle lengths.
///
/// # Safety
/// `table` must be a live handle, `parts` must point to `n_parts` values and
/// `value` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn qnngp_weingarten_value(
    table: *const QnngpWeingarten,
    parts: *const usize,
    n_parts: usize,
    value: *mut f64,
) -> QnngpStatus {
    guard(|| {
        let t = &table.as_ref().ok_or(Failure::Null)?.0;
        let mut parts = slice(parts, n_parts)?.to_vec();
        let v = out(value)?;
        if parts.contains(&0) || parts.iter().sum::<usize>() != t.p {
            return Err(Error::ContractViolation(format!("cycle lengths must be positive and sum to p = {}", t.p)).into());
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        *v = t.get(&CycleType(parts));
        Ok(())
    })
}

/// `max_σ |Σ_τ G(σ, τ) Wg(τ) − δ(σ, e)|` for the table.
///
/// # Safety
/// `table` must be a live handle and `residual` writable.
#[no_mangle]
pub unsafe extern "C" fn qnngp_weingarten_residual(table: *const QnngpWeingarten, residual: *mut f64) -> QnngpStatus {
    guard(|| {
        let t = &table.as_ref().ok_or(Failure::Null)?.0;
        *out(residual)? = t.orthogonality_residual();
        Ok(())
    })
}

/// Exact Haar average `E[Π_k Tr(U ρ_k U† O_k)]` over `p` pairs of `d × d`
/// matrices. `rhos` and `observables` each hold `p · d · d` complex entries.
///
/// # Safety
/// `rhos` and `observables` must point to `2 p d²` doubles each; `value` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn qnngp_haar_expectation(
    d: usize,
    p: usize,
    rhos: *const f64,
    observables: *const f64,
    value: *mut f64,
) -> QnngpStatus {
    guard(|| {
        let len = 2 * p * d * d;
        let (r, o) = (slice(rhos, len)?, slice(observables, len)?);
        let v = out(value)?;
        let block = 2 * d * d;
        let pairs = (0..p)
            .map(|k| {
                let rho = DensityMatrix::new(complex_matrix(d, &r[k * block..(k + 1) * block]))?;
                let obs = HermitianObservable::new(complex_matrix(d, &o[k * block..(k + 1) * block]), format!("O{k}"))?;
                Ok((rho, obs))
            })
            .collect::<qnngp::Result<Vec<_>>>()?;
        *v = haar_expectation(&MomentSpec::new(pairs)?)?;
        Ok(())
    })
}

/// Draw a brickwork random circuit from `seed`.
///
/// # Safety
/// `circuit` must be writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_new(
    n_qubits: usize,
    depth: usize,
    seed: u64,
    circuit: *mut *mut QnngpCircuit,
) -> QnngpStatus {
    guard(|| {
        let slot = out(circuit)?;
        let mut rng = substream(seed, "ffi-circuit", 0);
        *slot = Box::into_raw(Box::new(QnngpCircuit(RandomCircuit::sample(n_qubits, depth, &mut rng)?)));
        Ok(())
    })
}

/// # Safety
/// `circuit` must be null or a live handle from [`qnngp_circuit_new`].
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_free(circuit: *mut QnngpCircuit) {
    if !circuit.is_null() {
        drop(Box::from_raw(circuit));
    }
}

/// Number of angles (the depth). Returns 0 for a null handle.
///
/// # Safety
/// `circuit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_n_params(circuit: *const QnngpCircuit) -> usize {
    circuit.as_ref().map_or(0, |c| c.0.theta.len())
}

/// Copy the sampled angles into `theta` (length `n_params`).
///
/// # Safety
/// `circuit` must be a live handle and `theta` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_theta(circuit: *const QnngpCircuit, theta: *mut f64, len: usize) -> QnngpStatus {
    guard(|| {
        let c = &circuit.as_ref().ok_or(Failure::Null)?.0;
        let dst = slice_mut(theta, len)?;
        if len != c.theta.len() {
            return Err(Error::Arity {
                expected: c.theta.len(),
                got: len,
            }
            .into());
        }
        dst.copy_from_slice(&c.theta);
        Ok(())
    })
}

struct Inputs {
    theta: Vec<f64>,
    state: DensityMatrix,
    obs: ObservableSet,
}

unsafe fn circuit_inputs(
    c: &RandomCircuit,
    theta: *const f64,
    n_theta: usize,
    features: *const f64,
    n_features: usize,
    pauli: *const c_char,
) -> Result<Inputs, Failure> {
    let theta = slice(theta, n_theta)?.to_vec();
    if theta.len() != c.theta.len() {
        return Err(Error::Arity {
            expected: c.theta.len(),
            got: theta.len(),
        }
        .into());
    }
    let x = slice(features, n_features)?;
    let state = zz_feature_map(x, c.n_qubits, FeatureMapOptions::default())?;
    let label = string(pauli)?;
    let obs = ObservableSet::paulis(&[label.as_str()])?;
    Ok(Inputs { theta, state, obs })
}

/// `Tr(U(θ) ρ(x) U(θ)† P)` with `ρ(x)` the ZZ feature-map state of the
/// features and `P` a Pauli string such as `"ZI"`.
///
/// # Safety
/// Pointers must reference `n_theta` and `n_features` doubles, a
/// NUL-terminated string and a writable double.
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_expectation(
    circuit: *const QnngpCircuit,
    theta: *const f64,
    n_theta: usize,
    features: *const f64,
    n_features: usize,
    pauli: *const c_char,
    value: *mut f64,
) -> QnngpStatus {
    guard(|| {
        let c = &circuit.as_ref().ok_or(Failure::Null)?.0;
        let inp = circuit_inputs(c, theta, n_theta, features, n_features, pauli)?;
        let v = out(value)?;
        *v = c.outputs_with(&inp.theta, &SpectralState::new(&inp.state), &inp.obs)[0];
        Ok(())
    })
}

/// Parameter-shift gradient of [`qnngp_circuit_expectation`] with respect to
/// all `n_theta` angles, written to `grad`.
///
/// # Safety
/// As for [`qnngp_circuit_expectation`]; `grad` must hold `n_theta` doubles.
#[no_mangle]
pub unsafe extern "C" fn qnngp_circuit_gradient(
    circuit: *const QnngpCircuit,
    theta: *const f64,
    n_theta: usize,
    features: *const f64,
    n_features: usize,
    pauli: *const c_char,
    grad: *mut f64,
) -> QnngpStatus {
    guard(|| {
        let c = &circuit.as_ref().ok_or(Failure::Null)?.0;
        let inp = circuit_inputs(c, theta, n_theta, features, n_features, pauli)?;
        let dst = slice_mut(grad, n_theta)?;
        let g = parameter_shift_gradient(c, &inp.theta, &[inp.state], &inp.obs, GradientMethod::ParameterShift)?;
        for (mu, slot) in dst.iter_mut().enumerate() {
            *slot = g.get(0, 0, mu);
        }
        Ok(())
    })
}

/// Single-output GP posterior mean. `kernel` is the row-major
/// `n_points × n_points` prior covariance whose first `n_obs` points carry
/// `labels`; the mean on the remaining points is written to `mean`. A
/// negative `jitter` selects the default.
///
/// # Safety
/// `kernel` must hold `n_points²` doubles, `labels` `n_obs` and `mean`
/// `n_points - n_obs`.
#[no_mangle]
pub unsafe extern "C" fn qnngp_gp_posterior_mean(
    kernel: *const f64,
    n_points: usize,
    n_obs: usize,
    labels: *const f64,
    jitter: f64,
    mean: *mut f64,
) -> QnngpStatus {
    guard(|| {
        if n_obs > n_points {
            return Err(Error::DimensionMismatch {
                expected: n_points,
                got: n_obs,
            }
            .into());
        }
        let k = RMatrix::from_row_slice(n_points, n_points, slice(kernel, n_points * n_points)?);
        let y = RMatrix::from_row_slice(1, n_obs, slice(labels, n_obs)?);
        let dst = slice_mut(mean, n_points - n_obs)?;
        let km = KernelMatrix::dense(k, 1, n_points)?;
        let post = gp_posterior(&km, &y, n_obs, (jitter >= 0.0).then_some(jitter))?;
        for (a, slot) in dst.iter_mut().enumerate() {
            *slot = post.mean[(0, a)];
        }
        Ok(())
    })
}

/// Excess kurtosis of `n` samples with its jackknife standard error.
///
/// # Safety
/// `samples` must hold `n` doubles; `value` and `std_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnngp_excess_kurtosis(
    samples: *const f64,
    n: usize,
    value: *mut f64,
    std_error: *mut f64,
) -> QnngpStatus {
    guard(|| {
        let x = slice(samples, n)?;
        let (v, se) = (out(value)?, out(std_error)?);
        if n < 4 || x.iter().any(|s| !s.is_finite()) {
            return Err(Error::ContractViolation("need at least 4 finite samples".into()).into());
        }
        let est = excess_kurtosis(x);
        *v = est.value;
        *se = est.std_error;
        Ok(())
    })
}
