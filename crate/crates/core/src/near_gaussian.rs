//! Quartic (nearly Gaussian) output distributions: coupling extraction from
//! measured moments, first-order corrected moments and Gaussianity
//! diagnostics of sample tables.
//!
//! The action is `S(f) = ½ Σ K^{μν} f_μ f_ν + (λ/4!) Σ V^{μνρσ} f_μ f_ν f_ρ f_σ`
//! with `K^{μν}` the inverse of the covariance coupling `K_{μν}`. To first
//! order in `λ` this gives
//!
//! ```text
//! E[f_a f_b]     = K_ab - (λ/2) Σ V^{cdef} K_ac K_bd K_ef
//! E[f_a f_b f_c f_d]_conn = -λ Σ V^{efgh} K_ae K_bf K_cg K_dh
//! ```
//!
//! Indices are flattened `(output i, point α) -> i * n_points + α`.

use serde::{Deserialize, Serialize};

use crate::circuit::ObservableSet;
use crate::error::{Error, Result};
use crate::haar::{connected_moment, Connection, MomentSpec};
use crate::linalg::{DensityMatrix, RMatrix, RVector};
use crate::stats::{jackknife_of_means, MomentEstimate};

/// A dense, fully symmetric 4-index array over `n` flattened indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor4Repr")]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct Tensor4Repr {
    n: usize,
    data: Vec<f64>,
}

impl TryFrom<Tensor4Repr> for Tensor4 {
    type Error = Error;
    fn try_from(r: Tensor4Repr) -> Result<Self> {
        let sym = Tensor4::symmetrized(r.n, r.data.clone())?;
        let t = Tensor4 { n: r.n, data: r.data };
        if t.asymmetry() > 1e-12 * t.max_abs().max(1.0) {
            return Err(Error::ContractViolation("4-index array is not fully symmetric".into()));
        }
        Ok(sym)
    }
}

const PERMS4: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n.pow(4)],
        }
    }

    /// Symmetrize raw data (row-major `[a][b][c][d]`) over all index orders.
    pub fn symmetrized(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n.pow(4) {
            return Err(Error::DimensionMismatch {
                expected: n.pow(4),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation("tensor has non-finite entries".into()));
        }
        let raw = Self { n, data };
        let mut out = Self::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let idx = [a, b, c, d];
                        let s: f64 = PERMS4
                            .iter()
                            .map(|p| raw.get(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]))
                            .sum();
                        let k = out.index(a, b, c, d);
                        out.data[k] = s / 24.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Build from a function that is already symmetric.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n.pow(4));
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        data.push(f(a, b, c, d));
                    }
                }
            }
        }
        Self::symmetrized(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn index(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.n + b) * self.n + c) * self.n + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.index(a, b, c, d)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest deviation from full index symmetry.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let v = self.get(a, b, c, d);
                        let idx = [a, b, c, d];
                        for p in &PERMS4 {
                            worst = worst.max((v - self.get(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]])).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `T_{abcd} = Σ M_{aa'} M_{bb'} M_{cc'} M_{dd'} V_{a'b'c'd'}`.
    pub fn transform(&self, m: &RMatrix) -> Self {
        let n = self.n;
        assert_eq!(m.nrows(), n);
        let mut cur = self.data.clone();
        // contract one axis at a time; the contracted axis is moved to the back
        for _ in 0..4 {
            let mut next = vec![0.0; n.pow(4)];
            for a in 0..n {
                for rest in 0..n.pow(3) {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += m[(a, k)] * cur[k * n.pow(3) + rest];
                    }
                    // (a, rest) -> (rest, a)
                    next[rest * n + a] = s;
                }
            }
            cur = next;
        }
        Self { n, data: cur }
    }

    /// `(V·KKK)_{ab} = Σ V^{cdef} K_ac K_bd K_ef`.
    pub fn contract_kkk(&self, k: &RMatrix) -> RMatrix {
        let n = self.n;
        let mut w = RMatrix::zeros(n, n);
        for c in 0..n {
            for d in 0..n {
                let mut s = 0.0;
                for e in 0..n {
                    for f in 0..n {
                        s += self.get(c, d, e, f) * k[(e, f)];
                    }
                }
                w[(c, d)] = s;
            }
        }
        k * w * k.transpose()
    }

    /// `Σ V^{abcd} x_a x_b x_c x_d`.
    pub fn quartic_form(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let xabc = x[a] * x[b] * x[c];
                    for d in 0..n {
                        s += self.get(a, b, c, d) * xabc * x[d];
                    }
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    Analytic,
    MonteCarlo,
}

/// Second moments `ℚ` and connected fourth moments `𝕍` over flattened indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    #[serde(with = "crate::linalg::real_rows")]
    pub second: RMatrix,
    pub fourth_connected: Tensor4,
    pub source: MomentSource,
}

impl MomentSet {
    pub fn new(second: RMatrix, fourth_connected: Tensor4, source: MomentSource) -> Result<Self> {
        let n = second.nrows();
        if second.ncols() != n || fourth_connected.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: fourth_connected.n(),
            });
        }
        let scale = second.amax().max(1e-300);
        if (&second - second.transpose()).amax() > 1e-10 * scale {
            return Err(Error::ContractViolation("second moments are not symmetric".into()));
        }
        if fourth_connected.asymmetry() > 1e-12 * fourth_connected.max_abs().max(1.0) {
            return Err(Error::ContractViolation("fourth moments are not symmetric".into()));
        }
        Ok(Self {
            second,
            fourth_connected,
            source,
        })
    }

    /// Exact Haar moments for every flattened `(observable, state)` index.
    pub fn analytic(obs: &ObservableSet, states: &[DensityMatrix]) -> Result<Self> {
        let np = states.len();
        let n = obs.len() * np;
        let pair = |r: usize| (states[r % np].clone(), obs.as_slice()[r / np].clone());
        let mut second = RMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = connected_moment(&MomentSpec::new(vec![pair(a), pair(b)])?, 2, Connection::Pairing)?;
                second[(a, b)] = v;
                second[(b, a)] = v;
            }
        }
        let mut raw = vec![0.0; n.pow(4)];
        let mut t = Tensor4::zeros(n);
        for a in 0..n {
            for b in a..n {
                for c in b..n {
                    for d in c..n {
                        let spec = MomentSpec::new(vec![pair(a), pair(b), pair(c), pair(d)])?;
                        let v = connected_moment(&spec, 4, Connection::Pairing)?;
                        let idx = [a, b, c, d];
                        for p in &PERMS4 {
                            raw[t.index(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]])] = v;
                        }
                    }
                }
            }
        }
        t.data = raw;
        Self::new(second, t, MomentSource::Analytic)
    }

    /// Sample covariance and fourth cumulants of `rows[sample][index]`.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let ns = rows.len();
        if ns < 2 {
            return Err(Error::InvalidDimension("need at least two samples".into()));
        }
        let n = rows[0].len();
        let mean: Vec<f64> = (0..n).map(|a| rows.iter().map(|r| r[a]).sum::<f64>() / ns as f64).collect();
        let c: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();
        let e2 = |a: usize, b: usize| c.iter().map(|r| r[a] * r[b]).sum::<f64>() / ns as f64;
        let second = RMatrix::from_fn(n, n, e2);
        let fourth = Tensor4::from_fn(n, |a, b, cc, d| {
            let m4 = c.iter().map(|r| r[a] * r[b] * r[cc] * r[d]).sum::<f64>() / ns as f64;
            m4 - second[(a, b)] * second[(cc, d)] - second[(a, cc)] * second[(b, d)] - second[(a, d)] * second[(b, cc)]
        })?;
        Self::new(second, fourth, MomentSource::MonteCarlo)
    }
}

/// Couplings of the quartic action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticAction {
    /// `K_{μν}`, the quadratic coupling in covariance form.
    #[serde(with = "crate::linalg::real_rows")]
    pub covariance: RMatrix,
    /// `K^{μν}`, its inverse.
    #[serde(with = "crate::linalg::real_rows")]
    pub precision: RMatrix,
    pub v: Tensor4,
    pub lambda: f64,
}

impl QuarticAction {
    /// From the covariance coupling; checks positive definiteness.
    pub fn new(covariance: RMatrix, v: Tensor4, lambda: f64) -> Result<Self> {
        let n = covariance.nrows();
        if covariance.ncols() != n || v.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.n(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-10 * covariance.amax().max(1e-300) {
            return Err(Error::ContractViolation("K is not symmetric".into()));
        }
        let precision = invert_spd(&covariance, "quadratic coupling")?;
        if v.asymmetry() > 1e-12 * v.max_abs().max(1.0) {
            return Err(Error::ContractViolation("V is not fully symmetric".into()));
        }
        Ok(Self {
            covariance,
            precision,
            v,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }
}

fn invert_spd(a: &RMatrix, context: &str) -> Result<RMatrix> {
    let n = a.nrows();
    crate::linalg::solve_spd(a, &RMatrix::identity(n, n), context)
}

/// `S(f) = ½ fᵀ K⁻¹ f + (λ/4!) V(f, f, f, f)`.
pub fn action_evaluate(action: &QuarticAction, f: &[f64]) -> Result<f64> {
    if f.len() != action.dim() {
        return Err(Error::DimensionMismatch {
            expected: action.dim(),
            got: f.len(),
        });
    }
    let x = RVector::from_column_slice(f);
    Ok(0.5 * x.dot(&(&action.precision * &x)) + action.lambda / 24.0 * action.v.quartic_form(f))
}

/// `E[f_a f_b] = K_ab - (λ/2) (V·KKK)_ab` to first order.
pub fn corrected_covariance(action: &QuarticAction) -> RMatrix {
    &action.covariance - action.v.contract_kkk(&action.covariance) * (0.5 * action.lambda)
}

/// `-λ V·KKKK`, the first-order connected four-point function.
pub fn predicted_connected_four(action: &QuarticAction) -> Tensor4 {
    action.v.transform(&action.covariance).scaled(-action.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounds {
    /// Fixed number of substitution rounds (first-order bookkeeping uses 2).
    Truncated(usize),
    /// Iterate the coupled equations to a relative tolerance.
    Converged { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    pub lambda: f64,
    pub rounds: Rounds,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rounds: Rounds::Truncated(2),
        }
    }
}

/// Above this, `max |𝕍_abcd| / sqrt(ℚ_aa ℚ_bb ℚ_cc ℚ_dd)` is flagged as
/// outside the perturbative regime.
pub const PERTURBATIVE_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub action: QuarticAction,
    /// Normalized size of the connected four-point input.
    pub interaction_strength: f64,
    pub warning: Option<String>,
    pub rounds_used: usize,
}

/// Invert `ℚ = K - (λ/2) V·KKK`, `𝕍 = -λ V·KKKK` for `(K, V)`.
pub fn couplings_from_moments(moments: &MomentSet, opts: CouplingOptions) -> Result<Couplings> {
    let lambda = opts.lambda;
    if !(lambda != 0.0 && lambda.is_finite()) {
        return Err(Error::ContractViolation("λ must be finite and non-zero".into()));
    }
    let q = &moments.second;
    let vq = &moments.fourth_connected;
    let n = q.nrows();
    let diag: Vec<f64> = (0..n).map(|a| q[(a, a)].abs().sqrt()).collect();
    let mut strength: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let s = diag[a] * diag[b] * diag[c] * diag[d];
                    if s > 0.0 {
                        strength = strength.max(vq.get(a, b, c, d).abs() / s);
                    }
                }
            }
        }
    }
    let extract = |k: &RMatrix| -> Result<Tensor4> {
        Ok(vq.transform(&invert_spd(k, "quadratic coupling")?).scaled(-1.0 / lambda))
    };
    let (max_rounds, tol) = match opts.rounds {
        Rounds::Truncated(r) => (r.max(1), None),
        Rounds::Converged { tol, max_iter } => (max_iter.max(1), Some(tol)),
    };
    let mut k = q.clone();
    let mut v = extract(&k)?;
    let mut used = 0;
    for _ in 0..max_rounds {
        v = extract(&k)?;
        let next = q + v.contract_kkk(&k) * (0.5 * lambda);
        let change = (&next - &k).amax();
        k = next;
        used += 1;
        if let Some(tol) = tol {
            if change <= tol * q.amax() {
                break;
            }
        }
    }
    if tol.is_some() {
        // make V consistent with the final K
        v = extract(&k)?;
    }
    let warning = (strength > PERTURBATIVE_LIMIT).then(|| {
        format!("connected four-point strength {strength:.3} exceeds {PERTURBATIVE_LIMIT}; first-order couplings are unreliable")
    });
    Ok(Couplings {
        action: QuarticAction::new(k, v, lambda)?,
        interaction_strength: strength,
        warning,
        rounds_used: used,
    })
}

/// First-order conditional mean `E[f_𝕡 | f_𝕆 = y]` under the quartic action.
///
/// With `u = (m^∞ on 𝕡, y on 𝕆)` and `C` the Gaussian conditional covariance
/// embedded in the full index space (zero on observed indices):
/// `E[f_a] = m^∞_a - (λ/6) Σ V C_aμ u_ν u_ρ u_σ - (λ/2) Σ V C_aμ C_νρ u_σ`.
///
/// Returns the corrected mean on the predicted indices (complement of
/// `observed`, in increasing order).
pub fn corrected_mean(action: &QuarticAction, observed: &[usize], y: &[f64]) -> Result<RVector> {
    let n = action.dim();
    if observed.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            got: y.len(),
        });
    }
    let mut is_obs = vec![false; n];
    for &o in observed {
        if o >= n || is_obs[o] {
            return Err(Error::ContractViolation(format!("bad observed index {o}")));
        }
        is_obs[o] = true;
    }
    let pred: Vec<usize> = (0..n).filter(|&a| !is_obs[a]).collect();
    let k = &action.covariance;
    let sub = |r: &[usize], c: &[usize]| RMatrix::from_fn(r.len(), c.len(), |x, z| k[(r[x], c[z])]);
    let k_oo = sub(observed, observed);
    let k_po = sub(&pred, observed);
    let k_pp = sub(&pred, &pred);
    let yv = RVector::from_column_slice(y);
    let (m_inf, cond) = if observed.is_empty() {
        (RVector::zeros(pred.len()), k_pp)
    } else {
        let w = crate::linalg::solve_spd(&k_oo, &k_po.transpose(), "observed block")?.transpose();
        (&w * &yv, &k_pp - &w * k_po.transpose())
    };
    let mut u = vec![0.0; n];
    for (&o, &v) in observed.iter().zip(y) {
        u[o] = v;
    }
    for (x, &p) in pred.iter().enumerate() {
        u[p] = m_inf[x];
    }
    let mut c = RMatrix::zeros(n, n);
    for (x, &p) in pred.iter().enumerate() {
        for (z, &q) in pred.iter().enumerate() {
            c[(p, q)] = cond[(x, z)];
        }
    }
    let v = &action.v;
    // t1_μ = Σ V^{μνρσ} u_ν u_ρ u_σ, t2_μ = Σ V^{μνρσ} C_νρ u_σ
    let mut t1 = RVector::zeros(n);
    let mut t2 = RVector::zeros(n);
    for mu in 0..n {
        let (mut s1, mut s2) = (0.0, 0.0);
        for nu in 0..n {
            for rho in 0..n {
                for sg in 0..n {
                    let vv = v.get(mu, nu, rho, sg);
                    s1 += vv * u[nu] * u[rho] * u[sg];
                    s2 += vv * c[(nu, rho)] * u[sg];
                }
            }
        }
        t1[mu] = s1;
        t2[mu] = s2;
    }
    let corr = &c * (t1 * (action.lambda / 6.0) + t2 * (action.lambda / 2.0));
    Ok(RVector::from_fn(pred.len(), |x, _| m_inf[x] - corr[pred[x]]))
}

/// Pairwise normalized connected fourth moment `κ(a,a,b,b) / (σ_a² σ_b²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFourth {
    pub a: String,
    pub b: String,
    pub estimate: MomentEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub labels: Vec<String>,
    pub n_samples: usize,
    /// Excess kurtosis with jackknife SE; `None` for zero-variance columns.
    pub kurtosis: Vec<Option<MomentEstimate>>,
    pub pairwise: Vec<PairwiseFourth>,
    /// Columns with `|kurtosis| > 4 SE`.
    pub flagged: Vec<String>,
    pub degenerate: Vec<String>,
    pub max_abs_kurtosis: f64,
}

pub const MIN_DIAGNOSTIC_SAMPLES: usize = 1000;

fn powers(x: &[f64], k: i32) -> Vec<f64> {
    x.iter().map(|v| v.powi(k)).collect()
}

/// Excess kurtosis of one column with its jackknife standard error.
pub fn excess_kurtosis(x: &[f64]) -> MomentEstimate {
    let n = x.len() as f64;
    let shift = x.iter().sum::<f64>() / n;
    let c: Vec<f64> = x.iter().map(|v| v - shift).collect();
    let cols = [c.clone(), powers(&c, 2), powers(&c, 3), powers(&c, 4)];
    jackknife_of_means(&cols, |m| {
        let (e1, e2, e3, e4) = (m[0], m[1], m[2], m[3]);
        let m2 = e2 - e1 * e1;
        let m4 = e4 - 4.0 * e3 * e1 + 6.0 * e2 * e1 * e1 - 3.0 * e1.powi(4);
        m4 / (m2 * m2) - 3.0
    })
}

fn pairwise_fourth(x: &[f64], y: &[f64]) -> MomentEstimate {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (sx, sy) = (mean(x), mean(y));
    let x: Vec<f64> = x.iter().map(|v| v - sx).collect();
    let y: Vec<f64> = y.iter().map(|v| v - sy).collect();
    let prod = |f: &dyn Fn(f64, f64) -> f64| x.iter().zip(&y).map(|(&a, &b)| f(a, b)).collect::<Vec<f64>>();
    let cols = [
        x.clone(),
        y.clone(),
        powers(&x, 2),
        powers(&y, 2),
        prod(&|a, b| a * b),
        prod(&|a, b| a * a * b),
        prod(&|a, b| a * b * b),
        prod(&|a, b| a * a * b * b),
    ];
    jackknife_of_means(&cols, |m| {
        let (a, b) = (m[0], m[1]);
        let vx = m[2] - a * a;
        let vy = m[3] - b * b;
        let cxy = m[4] - a * b;
        let e22 = m[7] - 2.0 * b * m[5] - 2.0 * a * m[6] + b * b * m[2] + a * a * m[3] + 4.0 * a * b * m[4]
            - 3.0 * a * a * b * b;
        (e22 - vx * vy - 2.0 * cxy * cxy) / (vx * vy)
    })
}

/// Diagnostics for `columns[c]` (one column per output) labelled by `labels`.
pub fn gaussianity_diagnostics(labels: &[String], columns: &[Vec<f64>]) -> Result<GaussianityReport> {
    if labels.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: columns.len(),
        });
    }
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::ContractViolation("columns have different lengths".into()));
    }
    if n < MIN_DIAGNOSTIC_SAMPLES {
        return Err(Error::ContractViolation(format!(
            "need at least {MIN_DIAGNOSTIC_SAMPLES} samples, got {n}"
        )));
    }
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation("samples must be finite".into()));
    }
    use rayon::prelude::*;
    let degenerate_col: Vec<bool> = columns
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let scale = c.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            var <= 1e-24 * scale.max(1e-300).powi(2) || var == 0.0
        })
        .collect();
    let kurtosis: Vec<Option<MomentEstimate>> = columns
        .par_iter()
        .zip(&degenerate_col)
        .map(|(c, &deg)| (!deg).then(|| excess_kurtosis(c)))
        .collect();
    let mut pairwise = Vec::new();
    for a in 0..columns.len() {
        for b in a + 1..columns.len() {
            if !degenerate_col[a] && !degenerate_col[b] {
                pairwise.push(PairwiseFourth {
                    a: labels[a].clone(),
                    b: labels[b].clone(),
                    estimate: pairwise_fourth(&columns[a], &columns[b]),
                });
            }
        }
    }
    let flagged = labels
        .iter()
        .zip(&kurtosis)
        .filter(|(_, k)| k.is_some_and(|k| k.value.abs() > 4.0 * k.std_error))
        .map(|(l, _)| l.clone())
        .collect();
    let degenerate = labels
        .iter()
        .zip(&degenerate_col)
        .filter(|(_, &d)| d)
        .map(|(l, _)| l.clone())
        .collect();
    let max_abs_kurtosis = kurtosis.iter().flatten().fold(0.0f64, |m, k| m.max(k.value.abs()));
    Ok(GaussianityReport {
        labels: labels.to_vec(),
        n_samples: n,
        kurtosis,
        pairwise,
        flagged,
        degenerate,
        max_abs_kurtosis,
    })
}
