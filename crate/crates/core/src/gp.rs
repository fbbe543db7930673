//! Gaussian-process inference over circuit outputs: fidelity kernel, block
//! prior kernel `K_{ij,αβ}` and the conditional mean/covariance.
//!
//! Flattened index of output `i` at point `α` is `i * n_points + α`.

use serde::{Deserialize, Serialize};

use crate::circuit::ObservableSet;
use crate::error::{Error, Result};
use crate::haar::{connected_moment, Connection, MomentSpec};
use crate::linalg::{condition_number_sym, trace_of_product, DensityMatrix, RMatrix, RVector};

/// `Tr(ρ ρ')`.
pub fn fidelity_kernel(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(trace_of_product(a.matrix(), b.matrix()).re)
}

/// Gram matrix `G_{αβ} = Tr(ρ_α ρ_β)`.
pub fn fidelity_gram(states: &[DensityMatrix]) -> Result<RMatrix> {
    let n = states.len();
    let mut g = RMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = fidelity_kernel(&states[a], &states[b])?;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// `K = (1/d) M ⊗ G`, `M_ij = Tr(O_i O_j)/d`, `G_αβ = Tr(ρ_α ρ_β)`.
    Leading,
    /// Exact Haar two-point connected correlators, entry by entry.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelBlocks {
    Separable {
        #[serde(with = "crate::linalg::real_rows")]
        output: RMatrix,
        #[serde(with = "crate::linalg::real_rows")]
        state: RMatrix,
    },
    Dense(#[serde(with = "crate::linalg::real_rows")] RMatrix),
}

/// Prior covariance of the outputs `f_{i,α}` over a list of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub n_outputs: usize,
    pub n_points: usize,
    /// Hilbert-space dimension entering the `1/d` scale of the separable form.
    pub d: usize,
    pub blocks: KernelBlocks,
}

impl KernelMatrix {
    pub fn separable(output: RMatrix, state: RMatrix, d: usize) -> Result<Self> {
        check_symmetric(&output, "output block")?;
        check_symmetric(&state, "state block")?;
        let (vals, _) = crate::linalg::eigh_real(&state);
        if !vals.is_empty() && vals[0] < -1e-10 * vals[vals.len() - 1].abs().max(1.0) {
            return Err(Error::ContractViolation(format!(
                "state block is not positive semidefinite (eigenvalue {:.3e})",
                vals[0]
            )));
        }
        Ok(Self {
            n_outputs: output.nrows(),
            n_points: state.nrows(),
            d,
            blocks: KernelBlocks::Separable { output, state },
        })
    }

    /// A general kernel over flattened indices.
    pub fn dense(full: RMatrix, n_outputs: usize, n_points: usize) -> Result<Self> {
        if full.nrows() != n_outputs * n_points {
            return Err(Error::DimensionMismatch {
                expected: n_outputs * n_points,
                got: full.nrows(),
            });
        }
        check_symmetric(&full, "kernel")?;
        Ok(Self {
            n_outputs,
            n_points,
            d: 1,
            blocks: KernelBlocks::Dense(full),
        })
    }

    pub fn entry(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        match &self.blocks {
            KernelBlocks::Separable { output, state } => {
                output[(i, j)] * state[(a, b)] / self.d as f64
            }
            KernelBlocks::Dense(k) => k[(i * self.n_points + a, j * self.n_points + b)],
        }
    }

    pub fn to_dense(&self) -> RMatrix {
        let np = self.n_points;
        let n = self.n_outputs * np;
        RMatrix::from_fn(n, n, |r, c| self.entry(r / np, r % np, c / np, c % np))
    }
}

fn check_symmetric(m: &RMatrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidDimension(format!("{what} is not square")));
    }
    let scale = m.amax().max(1e-300);
    for r in 0..m.nrows() {
        for c in r + 1..m.ncols() {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-10 * scale {
                return Err(Error::ContractViolation(format!("{what} is not symmetric")));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Prior kernel over `states` for the observables in `obs`.
pub fn prior_kernel(obs: &ObservableSet, states: &[DensityMatrix], mode: KernelMode) -> Result<KernelMatrix> {
    if states.is_empty() {
        return Err(Error::InvalidDimension("no states for the kernel".into()));
    }
    let d = obs.dim();
    if let Some(bad) = states.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    match mode {
        KernelMode::Leading => {
            let n = obs.len();
            let mut m = RMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = trace_of_product(obs.as_slice()[i].matrix(), obs.as_slice()[j].matrix()).re
                        / d as f64;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            KernelMatrix::separable(m, fidelity_gram(states)?, d)
        }
        KernelMode::Exact => {
            let np = states.len();
            let n = obs.len() * np;
            let mut k = RMatrix::zeros(n, n);
            for r in 0..n {
                for c in r..n {
                    let spec = MomentSpec::new(vec![
                        (states[r % np].clone(), obs.as_slice()[r / np].clone()),
                        (states[c % np].clone(), obs.as_slice()[c / np].clone()),
                    ])?;
                    let v = connected_moment(&spec, 2, Connection::Pairing)?;
                    k[(r, c)] = v;
                    k[(c, r)] = v;
                }
            }
            let mut km = KernelMatrix::dense(k, obs.len(), np)?;
            km.d = d;
            Ok(km)
        }
    }
}

/// Observed states with labels `labels[(i, β)] = y_{i,β}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSet {
    pub states: Vec<DensityMatrix>,
    pub labels: RMatrix,
}

impl ObservedSet {
    pub fn new(states: Vec<DensityMatrix>, labels: RMatrix) -> Result<Self> {
        if labels.ncols() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                got: labels.ncols(),
            });
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation("labels must be finite".into()));
        }
        if let Some(first) = states.first() {
            if let Some(bad) = states.iter().find(|s| s.dim() != first.dim()) {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        Ok(Self { states, labels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub states: Vec<DensityMatrix>,
}

/// Conditional distribution at the prediction points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPPosterior {
    /// `mean[(i, α)]`.
    #[serde(with = "crate::linalg::real_rows")]
    pub mean: RMatrix,
    /// Covariance over flattened prediction indices `i * n_pred + α`.
    #[serde(with = "crate::linalg::real_rows")]
    pub covariance: RMatrix,
    /// `log p(y_i)` for each output channel.
    pub log_marginal: Vec<f64>,
    /// Jitter added to the observed block diagonal.
    pub jitter: f64,
    /// Condition number of the jittered observed block.
    pub condition_number: f64,
}

impl GPPosterior {
    pub fn n_pred(&self) -> usize {
        self.mean.ncols()
    }

    pub fn cov(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        let np = self.n_pred();
        self.covariance[(i * np + a, j * np + b)]
    }

    /// Marginal variances as `var[(i, α)]`.
    pub fn variance(&self) -> RMatrix {
        let np = self.n_pred();
        RMatrix::from_fn(self.mean.nrows(), np, |i, a| self.cov(i, a, i, a))
    }
}

/// Default jitter `1e-10 · trace(A) / n` for an `n x n` observed block.
pub fn default_jitter(block: &RMatrix) -> f64 {
    if block.nrows() == 0 {
        0.0
    } else {
        1e-10 * block.trace().abs() / block.nrows() as f64
    }
}

struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition_number: f64,
    log_det: f64,
}

fn factor(a: &RMatrix, context: &str) -> Result<Factor> {
    let condition_number = condition_number_sym(a);
    let chol = a.clone().cholesky().ok_or_else(|| Error::Conditioning {
        condition_number,
        context: context.to_string(),
    })?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() || condition_number > 1e15 {
        return Err(Error::Conditioning {
            condition_number,
            context: context.to_string(),
        });
    }
    Ok(Factor {
        chol,
        condition_number,
        log_det,
    })
}

fn log_gaussian(f: &Factor, y: &RVector) -> f64 {
    let alpha = f.chol.solve(y);
    let n = y.len() as f64;
    -0.5 * y.dot(&alpha) - 0.5 * f.log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Posterior given a kernel whose first `n_obs` points are observed with
/// labels `labels[(i, β)]`; the remaining points are predicted.
pub fn gp_posterior(kernel: &KernelMatrix, labels: &RMatrix, n_obs: usize, jitter: Option<f64>) -> Result<GPPosterior> {
    let n_out = kernel.n_outputs;
    let np = kernel.n_points;
    if n_obs > np {
        return Err(Error::DimensionMismatch {
            expected: np,
            got: n_obs,
        });
    }
    if labels.nrows() != n_out || labels.ncols() != n_obs {
        return Err(Error::DimensionMismatch {
            expected: n_out * n_obs,
            got: labels.nrows() * labels.ncols(),
        });
    }
    let n_pred = np - n_obs;
    match &kernel.blocks {
        KernelBlocks::Separable { output, state } => {
            let scale = 1.0 / kernel.d as f64;
            let g_oo = state.view((0, 0), (n_obs, n_obs)).into_owned();
            let g_po = state.view((n_obs, 0), (n_pred, n_obs)).into_owned();
            let g_pp = state.view((n_obs, n_obs), (n_pred, n_pred)).into_owned();
            if n_obs == 0 {
                return Ok(GPPosterior {
                    mean: RMatrix::zeros(n_out, n_pred),
                    covariance: kron(&(output * scale), &g_pp),
                    log_marginal: vec![0.0; n_out],
                    jitter: 0.0,
                    condition_number: 1.0,
                });
            }
            let jitter = jitter.unwrap_or_else(|| default_jitter(&g_oo));
            let mut a = g_oo;
            for k in 0..n_obs {
                a[(k, k)] += jitter;
            }
            let f = factor(&a, "observed fidelity Gram block")?;
            // W = G_pO G_OO⁻¹, shared by every output channel
            let w = f.chol.solve(&g_po.transpose()).transpose();
            let mean = labels * w.transpose();
            let schur = &g_pp - &w * g_po.transpose();
            let covariance = kron(&(output * scale), &schur);
            let log_marginal = (0..n_out)
                .map(|i| {
                    let s = output[(i, i)] * scale;
                    if s <= 0.0 {
                        return f64::NAN;
                    }
                    let y: RVector = labels.row(i).transpose();
                    let fi = Factor {
                        chol: (&a * s).cholesky().expect("positive rescaling keeps SPD"),
                        condition_number: f.condition_number,
                        log_det: f.log_det + n_obs as f64 * s.ln(),
                    };
                    log_gaussian(&fi, &y)
                })
                .collect();
            Ok(GPPosterior {
                mean,
                covariance,
                log_marginal,
                jitter,
                condition_number: f.condition_number,
            })
        }
        KernelBlocks::Dense(k) => {
            let obs_idx: Vec<usize> = (0..n_out)
                .flat_map(|i| (0..n_obs).map(move |a| i * np + a))
                .collect();
            let pred_idx: Vec<usize> = (0..n_out)
                .flat_map(|i| (n_obs..np).map(move |a| i * np + a))
                .collect();
            let sub = |r: &[usize], c: &[usize]| RMatrix::from_fn(r.len(), c.len(), |x, y| k[(r[x], c[y])]);
            let k_pp = sub(&pred_idx, &pred_idx);
            if n_obs == 0 {
                return Ok(GPPosterior {
                    mean: RMatrix::zeros(n_out, n_pred),
                    covariance: k_pp,
                    log_marginal: vec![0.0; n_out],
                    jitter: 0.0,
                    condition_number: 1.0,
                });
            }
            let k_oo = sub(&obs_idx, &obs_idx);
            let k_po = sub(&pred_idx, &obs_idx);
            let jitter = jitter.unwrap_or_else(|| default_jitter(&k_oo));
            let mut a = k_oo;
            for x in 0..a.nrows() {
                a[(x, x)] += jitter;
            }
            let f = factor(&a, "observed kernel block")?;
            let y = RVector::from_iterator(
                n_out * n_obs,
                (0..n_out).flat_map(|i| (0..n_obs).map(move |b| labels[(i, b)])),
            );
            let alpha = f.chol.solve(&y);
            let m = &k_po * alpha;
            let mean = RMatrix::from_fn(n_out, n_pred, |i, a| m[i * n_pred + a]);
            let w = f.chol.solve(&k_po.transpose());
            let covariance = &k_pp - &k_po * w;
            let log_marginal = (0..n_out)
                .map(|i| {
                    let r = i * n_obs..(i + 1) * n_obs;
                    let block = a.view((r.start, r.start), (n_obs, n_obs)).into_owned();
                    let yi: RVector = labels.row(i).transpose();
                    factor(&block, "per-output observed block")
                        .map(|fi| log_gaussian(&fi, &yi))
                        .unwrap_or(f64::NAN)
                })
                .collect();
            Ok(GPPosterior {
                mean,
                covariance,
                log_marginal,
                jitter,
                condition_number: f.condition_number,
            })
        }
    }
}

/// The predictive distribution `p(f_𝕡 | f_𝕆)` obtained by marginalising the
/// joint prior; identical to [`gp_posterior`], including the per-channel log
/// marginal likelihood `log p(f_𝕆)`.
pub fn marginal_predictive(kernel: &KernelMatrix, labels: &RMatrix, n_obs: usize, jitter: Option<f64>) -> Result<GPPosterior> {
    gp_posterior(kernel, labels, n_obs, jitter)
}

/// Build the kernel over `[observed.., predicted..]` and condition.
pub fn fit_predict(
    obs: &ObservableSet,
    observed: &ObservedSet,
    predicted: &PredictionSet,
    mode: KernelMode,
    jitter: Option<f64>,
) -> Result<GPPosterior> {
    if observed.labels.nrows() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            got: observed.labels.nrows(),
        });
    }
    let states: Vec<DensityMatrix> = observed
        .states
        .iter()
        .chain(&predicted.states)
        .cloned()
        .collect();
    let kernel = prior_kernel(obs, &states, mode)?;
    gp_posterior(&kernel, &observed.labels, observed.states.len(), jitter)
}

/// Kernel-regression prediction `K(x, X) (K(X, X) + jitter I)⁻¹ y` for a
/// dense kernel over `[train.., test..]`.
pub fn kernel_regression(k: &RMatrix, y: &RVector, n_train: usize, jitter: f64) -> Result<RVector> {
    let n = k.nrows();
    let mut a = k.view((0, 0), (n_train, n_train)).into_owned();
    for x in 0..n_train {
        a[(x, x)] += jitter;
    }
    let f = factor(&a, "kernel regression block")?;
    let k_xx = k.view((n_train, 0), (n - n_train, n_train)).into_owned();
    Ok(k_xx * f.chol.solve(y))
}

fn kron(a: &RMatrix, b: &RMatrix) -> RMatrix {
    a.kronecker(b)
}
