//! Monte Carlo oracle: sample Haar unitaries and average products of
//! `Tr(ρ_k U O_k U†)`.

use rayon::prelude::*;

use super::moments::{wick_combine, Connection, MomentSpec};
use crate::error::{Error, Result};
use crate::linalg::{haar_matrix, CMatrix, CVector};
use crate::rng::substream;
use crate::stats::{jackknife_of_means, MomentEstimate};

/// Samples per RNG substream; fixes the sample table independently of the
/// thread count.
pub const BLOCK: usize = 1024;

/// Minimum sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 100;

enum Term {
    /// `c · Tr(ρ) = c`, independent of `U`.
    Constant(f64),
    /// Eigenpairs of `ρ` with `O`.
    Spectral(Vec<(f64, CVector)>, CMatrix),
}

/// Evaluates `f_k(U) = Tr(ρ_k U O_k U†)` for every pair of a spec through the
/// spectral decomposition of each `ρ_k`.
pub struct HaarOutputSampler {
    d: usize,
    terms: Vec<Term>,
}

fn scalar_multiple_of_identity(m: &CMatrix) -> Option<f64> {
    let c = m[(0, 0)];
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { c } else { num_complex::Complex64::new(0.0, 0.0) };
            if m[(i, j)] != expect {
                return None;
            }
        }
    }
    (c.im == 0.0).then_some(c.re)
}

impl HaarOutputSampler {
    pub fn new(spec: &MomentSpec) -> Self {
        let terms = spec
            .pairs()
            .iter()
            .map(|(rho, o)| match scalar_multiple_of_identity(o.matrix()) {
                Some(c) => Term::Constant(c),
                None => {
                    let (vals, vecs) = crate::linalg::eigh(rho.matrix());
                    let spectral = vals
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l.abs() > 1e-14)
                        .map(|(k, &l)| (l, vecs.column(k).into_owned()))
                        .collect();
                    Term::Spectral(spectral, o.matrix().clone())
                }
            })
            .collect();
        Self {
            d: spec.dim(),
            terms,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `[f_1(U), .., f_p(U)]`.
    pub fn outputs(&self, u: &CMatrix) -> Vec<f64> {
        let ud = u.adjoint();
        self.terms
            .iter()
            .map(|t| match t {
                Term::Constant(c) => *c,
                Term::Spectral(spec, o) => spec
                    .iter()
                    .map(|(l, v)| {
                        let w = &ud * v;
                        l * w.dotc(&(o * &w)).re
                    })
                    .sum(),
            })
            .collect()
    }
}

/// Draw `n` Haar unitaries of dimension `d` and apply `eval` to each, in
/// fixed blocks of [`BLOCK`] samples with one substream per block.
pub fn sample_haar<T, F>(d: usize, n: usize, seed: u64, eval: F) -> Vec<T>
where
    T: Send,
    F: Fn(&CMatrix) -> T + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    let per_block: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, "haar-mc", b as u64);
            let count = BLOCK.min(n - b * BLOCK);
            (0..count).map(|_| eval(&haar_matrix(d, &mut rng))).collect()
        })
        .collect();
    per_block.into_iter().flatten().collect()
}

/// Estimate of one correlator from per-sample outputs `f[s][k]`.
fn estimate(outputs: &[Vec<f64>], p: usize, connected: Option<Connection>) -> Result<MomentEstimate> {
    let full = (1usize << p) - 1;
    match connected {
        None => {
            let prods: Vec<f64> = outputs.iter().map(|f| f.iter().product()).collect();
            Ok(MomentEstimate::from_samples(&prods))
        }
        Some(mode) => {
            // surfaces unsupported orders before sampling-dependent work
            wick_combine(full, mode, &|_| 0.0)?;
            let columns: Vec<Vec<f64>> = (1..=full)
                .map(|mask| {
                    outputs
                        .iter()
                        .map(|f| (0..p).filter(|k| mask >> k & 1 == 1).map(|k| f[k]).product())
                        .collect()
                })
                .collect();
            Ok(jackknife_of_means(&columns, |means| {
                wick_combine(full, mode, &|mask| means[mask - 1]).unwrap_or(f64::NAN)
            }))
        }
    }
}

/// Monte Carlo estimate of `E[Π_k Tr(U O_k U† ρ_k)]`, or of its connected
/// part when `connected` is set (jackknife standard error).
pub fn monte_carlo_moment(
    spec: &MomentSpec,
    n: usize,
    seed: u64,
    connected: Option<Connection>,
) -> Result<MomentEstimate> {
    Ok(monte_carlo_moments(std::slice::from_ref(spec), n, seed, connected)?.remove(0))
}

/// Several correlators of a common dimension estimated from one shared set
/// of Haar samples.
pub fn monte_carlo_moments(
    specs: &[MomentSpec],
    n: usize,
    seed: u64,
    connected: Option<Connection>,
) -> Result<Vec<MomentEstimate>> {
    if n < MIN_SAMPLES {
        return Err(Error::ContractViolation(format!(
            "Monte Carlo needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let Some(first) = specs.first() else {
        return Ok(Vec::new());
    };
    let d = first.dim();
    if let Some(bad) = specs.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let samplers: Vec<HaarOutputSampler> = specs.iter().map(HaarOutputSampler::new).collect();
    let table: Vec<Vec<Vec<f64>>> = sample_haar(d, n, seed, |u| {
        samplers.iter().map(|s| s.outputs(u)).collect()
    });
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let outputs: Vec<Vec<f64>> = table.iter().map(|row| row[i].clone()).collect();
            estimate(&outputs, spec.order(), connected)
        })
        .collect()
}
