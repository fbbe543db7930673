//! Haar averages of products of traces `Π_k Tr(ρ_k U O_k U†)`.
//!
//! With `T_π(A) = Π_{cycles (m π(m) π²(m) ..)} Tr(A_m A_{π(m)} A_{π²(m)} ..)`,
//! the average is `Σ_{σ,τ ∈ S_p} Wg(στ, d) T_σ(ρ) T_τ(O)`.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::weingarten::{asymptotic_weingarten, cached_table, WeingartenTable, MAX_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{trace_of_product, CMatrix, DensityMatrix, HermitianObservable, ONE};
use crate::perm::Permutation;

/// Ordered list of `(ρ_k, O_k)` pairs defining the correlator
/// `E[Π_k Tr(U O_k U† ρ_k)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(DensityMatrix, HermitianObservable)>", into = "Vec<(DensityMatrix, HermitianObservable)>")]
pub struct MomentSpec {
    pairs: Vec<(DensityMatrix, HermitianObservable)>,
}

impl TryFrom<Vec<(DensityMatrix, HermitianObservable)>> for MomentSpec {
    type Error = Error;
    fn try_from(pairs: Vec<(DensityMatrix, HermitianObservable)>) -> Result<Self> {
        MomentSpec::new(pairs)
    }
}

impl From<MomentSpec> for Vec<(DensityMatrix, HermitianObservable)> {
    fn from(s: MomentSpec) -> Self {
        s.pairs
    }
}

impl MomentSpec {
    pub fn new(pairs: Vec<(DensityMatrix, HermitianObservable)>) -> Result<Self> {
        let p = pairs.len();
        if p == 0 || p > MAX_ORDER {
            return Err(Error::UnsupportedOrder(p));
        }
        let d = pairs[0].0.dim();
        for (rho, o) in &pairs {
            for got in [rho.dim(), o.dim()] {
                if got != d {
                    return Err(Error::DimensionMismatch { expected: d, got });
                }
            }
        }
        Ok(Self { pairs })
    }

    /// The same state paired with each observable in turn.
    pub fn with_common_state(rho: &DensityMatrix, obs: &[HermitianObservable]) -> Result<Self> {
        Self::new(obs.iter().map(|o| (rho.clone(), o.clone())).collect())
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].0.dim()
    }

    pub fn pairs(&self) -> &[(DensityMatrix, HermitianObservable)] {
        &self.pairs
    }

    /// Pairs selected by a bit mask (bit `k` keeps pair `k`).
    pub fn subset(&self, mask: usize) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, pr)| pr.clone())
                .collect(),
        }
    }

    /// Short content hash used to key result records.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Which Wick subtraction a connected correlator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connection {
    /// Subtract products of raw pair moments only:
    /// `E1234 − E12·E34 − E13·E24 − E14·E23` (and `E12 − E1·E2` at order 2).
    #[default]
    Pairing,
    /// The joint cumulant, subtracting every set partition.
    Cumulant,
}

/// `T_π(A)` with memoised cycle traces.
struct CycleTraces<'a> {
    mats: Vec<&'a CMatrix>,
    cache: HashMap<Vec<usize>, Complex64>,
}

impl<'a> CycleTraces<'a> {
    fn new(mats: Vec<&'a CMatrix>) -> Self {
        Self {
            mats,
            cache: HashMap::new(),
        }
    }

    fn cycle(&mut self, cycle: &[usize]) -> Complex64 {
        if let Some(v) = self.cache.get(cycle) {
            return *v;
        }
        let v = match cycle.len() {
            1 => self.mats[cycle[0]].trace(),
            2 => trace_of_product(self.mats[cycle[0]], self.mats[cycle[1]]),
            _ => {
                let mut prod = self.mats[cycle[0]] * self.mats[cycle[1]];
                for &k in &cycle[2..cycle.len() - 1] {
                    prod *= self.mats[k];
                }
                trace_of_product(&prod, self.mats[cycle[cycle.len() - 1]])
            }
        };
        self.cache.insert(cycle.to_vec(), v);
        v
    }

    fn of(&mut self, pi: &Permutation) -> Complex64 {
        pi.cycles().iter().map(|c| self.cycle(c)).product()
    }
}

/// Core contraction over general (not necessarily Hermitian) matrices.
/// Works for any `p <= 4` and any `d >= 1`.
pub fn haar_average_of_traces(rhos: &[CMatrix], obs: &[CMatrix]) -> Result<Complex64> {
    let p = rhos.len();
    if p != obs.len() {
        return Err(Error::Arity {
            expected: p,
            got: obs.len(),
        });
    }
    if p == 0 || p > MAX_ORDER {
        return Err(Error::UnsupportedOrder(p));
    }
    let d = rhos[0].nrows();
    let table = cached_table(p, d)?;
    Ok(contract(rhos, obs, |ct| table.get(ct)))
}

fn contract<F>(rhos: &[CMatrix], obs: &[CMatrix], wg: F) -> Complex64
where
    F: Fn(&crate::perm::CycleType) -> f64,
{
    let p = rhos.len();
    let perms = Permutation::all(p);
    let mut tr = CycleTraces::new(rhos.iter().collect());
    let mut to = CycleTraces::new(obs.iter().collect());
    let t_rho: Vec<Complex64> = perms.iter().map(|s| tr.of(s)).collect();
    let t_obs: Vec<Complex64> = perms.iter().map(|s| to.of(s)).collect();
    let mut wg_cache: HashMap<crate::perm::CycleType, f64> = HashMap::new();
    let mut total = Complex64::new(0.0, 0.0);
    for (s, trs) in perms.iter().zip(&t_rho) {
        if *trs == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut row = Complex64::new(0.0, 0.0);
        for (t, tob) in perms.iter().zip(&t_obs) {
            let ct = s.compose(t).cycle_type();
            let w = *wg_cache.entry(ct.clone()).or_insert_with(|| wg(&ct));
            row += tob * w;
        }
        total += trs * row;
    }
    total
}

fn split(spec: &MomentSpec) -> (Vec<CMatrix>, Vec<CMatrix>) {
    spec.pairs
        .iter()
        .map(|(r, o)| (r.matrix().clone(), o.matrix().clone()))
        .unzip()
}

/// `E_U[Π_k Tr(U O_k U† ρ_k)]` for Haar-random `U`.
pub fn haar_expectation(spec: &MomentSpec) -> Result<f64> {
    let (r, o) = split(spec);
    Ok(haar_average_of_traces(&r, &o)?.re)
}

/// Same contraction with a caller-supplied table (must match `p` and `d`).
pub fn haar_expectation_with_table(spec: &MomentSpec, table: &WeingartenTable) -> Result<f64> {
    if table.p != spec.order() {
        return Err(Error::Arity {
            expected: table.p,
            got: spec.order(),
        });
    }
    if table.d != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.d,
            got: spec.dim(),
        });
    }
    let (r, o) = split(spec);
    Ok(contract(&r, &o, |ct| table.get(ct)).re)
}

/// The contraction with every Weingarten value replaced by its leading
/// large-`d` form.
pub fn haar_expectation_asymptotic(spec: &MomentSpec) -> f64 {
    let d = spec.dim();
    let (r, o) = split(spec);
    contract(&r, &o, |ct| asymptotic_weingarten(ct, d)).re
}

/// All set partitions of the bits of `mask`, each as a list of block masks.
pub(crate) fn set_partitions(mask: usize) -> Vec<Vec<usize>> {
    if mask == 0 {
        return vec![vec![]];
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    // the block containing the lowest element is `low | sub` for sub ⊆ rest
    let mut sub = rest;
    loop {
        let block = low | sub;
        for mut tail in set_partitions(rest & !sub) {
            tail.push(block);
            out.push(tail);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Combine raw moments (indexed by subset mask) into a connected correlator
/// of the pairs in `full`.
pub(crate) fn wick_combine(full: usize, mode: Connection, m: &dyn Fn(usize) -> f64) -> Result<f64> {
    let p = full.count_ones() as usize;
    match (mode, p) {
        (_, 1) => Ok(m(full)),
        (_, 2) => {
            let a = full & full.wrapping_neg();
            Ok(m(full) - m(a) * m(full & !a))
        }
        (Connection::Pairing, 4) => {
            let bits: Vec<usize> = (0..usize::BITS as usize)
                .filter(|b| full >> b & 1 == 1)
                .map(|b| 1 << b)
                .collect();
            let pm = |a: usize, b: usize| m(bits[a] | bits[b]);
            Ok(m(full) - pm(0, 1) * pm(2, 3) - pm(0, 2) * pm(1, 3) - pm(0, 3) * pm(1, 2))
        }
        (Connection::Pairing, _) => Err(Error::UnsupportedOrder(p)),
        (Connection::Cumulant, _) => {
            let mut total = 0.0;
            for part in set_partitions(full) {
                let k = part.len();
                let coeff = (1..k).map(|x| x as f64).product::<f64>()
                    * if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
                total += coeff * part.iter().map(|&b| m(b)).product::<f64>();
            }
            Ok(total)
        }
    }
}

/// Connected correlator of order 2 or 4 built from exact Haar averages.
/// The cumulant mode also accepts orders 1 and 3.
pub fn connected_moment(spec: &MomentSpec, order: usize, mode: Connection) -> Result<f64> {
    check_order(spec, order, mode)?;
    let full = (1 << order) - 1;
    let mut raw = HashMap::new();
    for mask in 1..=full {
        raw.insert(mask, haar_expectation(&spec.subset(mask))?);
    }
    wick_combine(full, mode, &|mask| raw[&mask])
}

fn check_order(spec: &MomentSpec, order: usize, mode: Connection) -> Result<()> {
    let allowed = match mode {
        Connection::Pairing => order == 2 || order == 4,
        Connection::Cumulant => (1..=MAX_ORDER).contains(&order),
    };
    if !allowed {
        return Err(Error::UnsupportedOrder(order));
    }
    if spec.order() != order {
        return Err(Error::Arity {
            expected: order,
            got: spec.order(),
        });
    }
    Ok(())
}

/// Leading large-`d` term of the connected correlator.
///
/// Order 2 is `Tr(ρ₁ρ₂) Tr(O₁O₂) / d²`. Order 4 substitutes the leading
/// Weingarten asymptotics into every raw moment and applies the pairing
/// subtraction.
pub fn leading_order(spec: &MomentSpec, order: usize) -> Result<f64> {
    check_order(spec, order, Connection::Pairing)?;
    let d = spec.dim() as f64;
    match order {
        2 => {
            let (r1, o1) = &spec.pairs[0];
            let (r2, o2) = &spec.pairs[1];
            let rr = trace_of_product(r1.matrix(), r2.matrix()).re;
            let oo = trace_of_product(o1.matrix(), o2.matrix()).re;
            Ok(rr * oo / (d * d))
        }
        _ => {
            let full = (1 << order) - 1;
            let raw: HashMap<usize, f64> = (1..=full)
                .map(|mask| (mask, haar_expectation_asymptotic(&spec.subset(mask))))
                .collect();
            wick_combine(full, Connection::Pairing, &|mask| raw[&mask])
        }
    }
}

/// The identity-class (`Wg([1,1,1,1])`) part of the connected four-point
/// function written out term by term: the four-ρ trace times the six cyclic
/// orderings of the observables, plus the four three-ρ traces.
pub fn identity_class_four_point(spec: &MomentSpec) -> Result<f64> {
    check_order(spec, 4, Connection::Pairing)?;
    let d = spec.dim() as f64;
    let d2 = d * d;
    let prefactor =
        (d2 * d2 - 8.0 * d2 + 6.0) / (d2 * (d.powi(6) - 14.0 * d.powi(4) + 49.0 * d2 - 36.0));
    let r: Vec<&CMatrix> = spec.pairs.iter().map(|(r, _)| r.matrix()).collect();
    let o: Vec<&CMatrix> = spec.pairs.iter().map(|(_, o)| o.matrix()).collect();
    let tr = |ms: &[&CMatrix]| -> Complex64 {
        let mut prod = ms[0].clone();
        for m in &ms[1..] {
            prod *= *m;
        }
        prod.trace()
    };
    let t = |idx: &[usize], src: &[&CMatrix]| tr(&idx.iter().map(|&k| src[k]).collect::<Vec<_>>());
    let four_o: Complex64 = [
        [0, 1, 2, 3],
        [0, 1, 3, 2],
        [0, 2, 1, 3],
        [0, 2, 3, 1],
        [0, 3, 1, 2],
        [0, 3, 2, 1],
    ]
    .iter()
    .map(|ix| t(ix, &o))
    .sum();
    let mut total = t(&[0, 1, 2, 3], &r) * four_o;
    total += t(&[0, 1, 2], &r) * (t(&[1, 2, 0], &o) + t(&[2, 1, 0], &o)) * o[3].trace();
    total += t(&[0, 1, 3], &r) * (t(&[1, 3, 0], &o) + t(&[3, 1, 0], &o)) * o[2].trace();
    total += t(&[0, 2, 3], &r) * (t(&[2, 3, 0], &o) + t(&[3, 2, 0], &o)) * o[1].trace();
    let tr1 = o[1].trace();
    let tr2 = o[2].trace();
    let tr3 = o[3].trace();
    total += t(&[1, 2, 3], &r)
        * o[0].trace()
        * (t(&[2, 3, 1], &o) + t(&[3, 2, 1], &o) - 2.0 * ONE * tr1 * tr2 * tr3);
    Ok(prefactor * total.re)
}
