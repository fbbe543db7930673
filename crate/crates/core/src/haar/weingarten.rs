//! Unitary Weingarten function on `S_p` from the inverse of the Gram matrix
//! `G(σ, τ) = d^{#cycles(σ⁻¹τ)}`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_real, RMatrix};
use crate::perm::{CycleType, Permutation};

/// Largest order handled by the Gram construction.
pub const MAX_ORDER: usize = 4;

/// Relative eigenvalue cutoff used when `d < p` makes the Gram matrix singular.
const PINV_CUTOFF: f64 = 1e-10;

/// `Wg(σ, d)` for every cycle type of `S_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeingartenTable {
    pub p: usize,
    pub d: usize,
    /// Values keyed by cycle type.
    pub values: BTreeMap<CycleType, f64>,
    /// `max|λ| / min|λ|` over the retained Gram eigenvalues.
    pub condition_number: f64,
    /// Whether the Gram matrix was singular and pseudo-inverted.
    pub pseudo_inverse: bool,
}

fn gram(p: usize, d: usize, perms: &[Permutation]) -> RMatrix {
    let n = perms.len();
    let inverses: Vec<Permutation> = perms.iter().map(Permutation::inverse).collect();
    let df = d as f64;
    RMatrix::from_fn(n, n, |i, j| {
        let c = inverses[i].compose(&perms[j]).num_cycles();
        debug_assert!(c <= p);
        df.powi(c as i32)
    })
}

fn build(p: usize, d: usize, allow_singular: bool) -> Result<WeingartenTable> {
    if p == 0 || p > MAX_ORDER {
        return Err(Error::UnsupportedOrder(p));
    }
    if d == 0 {
        return Err(Error::InvalidDimension("Weingarten dimension must be positive".into()));
    }
    let singular = d < p;
    if singular && !allow_singular {
        return Err(Error::SingularGram { p, d });
    }
    let perms = Permutation::all(p);
    let g = gram(p, d, &perms);
    let (vals, vecs) = eigh_real(&g);
    let max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let keep: Vec<bool> = vals
        .iter()
        .map(|v| !singular || v.abs() > PINV_CUTOFF * max)
        .collect();
    let min_kept = vals
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .fold(f64::INFINITY, |m, (v, _)| m.min(v.abs()));
    // row of the identity permutation (index 0) of G⁺
    let n = perms.len();
    let row: Vec<f64> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&k| keep[k])
                .map(|k| vecs[(0, k)] * vecs[(j, k)] / vals[k])
                .sum()
        })
        .collect();

    let mut sums: BTreeMap<CycleType, (f64, usize, f64)> = BTreeMap::new();
    for (perm, &w) in perms.iter().zip(&row) {
        let e = sums
            .entry(perm.cycle_type())
            .or_insert((0.0, 0, f64::NAN));
        e.0 += w;
        e.1 += 1;
        e.2 = if e.2.is_nan() { w } else { e.2 };
    }
    let scale = row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut values = BTreeMap::new();
    for (ct, (sum, count, first)) in sums {
        let avg = sum / count as f64;
        debug_assert!((avg - first).abs() <= 1e-9 * scale.max(1e-300));
        values.insert(ct, avg);
    }
    for (perm, &w) in perms.iter().zip(&row) {
        let avg = values[&perm.cycle_type()];
        if (avg - w).abs() > 1e-8 * scale {
            return Err(Error::ContractViolation(format!(
                "Weingarten value for {:?} is not a class function",
                perm.map()
            )));
        }
    }
    Ok(WeingartenTable {
        p,
        d,
        values,
        condition_number: max / min_kept,
        pseudo_inverse: singular,
    })
}

/// Weingarten table for `1 <= p <= 4` and `d >= p`.
///
/// `d < p` leaves the Gram matrix singular and is refused; see
/// [`weingarten_table_general`] for the pseudo-inverse variant.
pub fn weingarten_table(p: usize, d: usize) -> Result<WeingartenTable> {
    build(p, d, false)
}

/// Like [`weingarten_table`] but pseudo-inverts the Gram matrix when `d < p`.
/// Haar integrals computed from the pseudo-inverse remain exact, because the
/// discarded kernel is annihilated by every trace contraction at that `d`.
pub fn weingarten_table_general(p: usize, d: usize) -> Result<WeingartenTable> {
    build(p, d, true)
}

/// Shared, lazily built tables.
pub fn cached_table(p: usize, d: usize) -> Result<Arc<WeingartenTable>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<WeingartenTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&(p, d)) {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(weingarten_table_general(p, d)?);
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert((p, d), Arc::clone(&table));
    Ok(table)
}

impl WeingartenTable {
    pub fn get(&self, ct: &CycleType) -> f64 {
        self.values[ct]
    }

    pub fn value(&self, sigma: &Permutation) -> f64 {
        self.values[&sigma.cycle_type()]
    }

    /// `max_σ |Σ_τ G(σ, τ) Wg(τ) − δ(σ, e)|`.
    pub fn orthogonality_residual(&self) -> f64 {
        let perms = Permutation::all(self.p);
        let g = gram(self.p, self.d, &perms);
        let wg: Vec<f64> = perms.iter().map(|s| self.value(s)).collect();
        (0..perms.len())
            .map(|i| {
                let s: f64 = (0..perms.len()).map(|j| g[(i, j)] * wg[j]).sum();
                let target = if i == 0 { 1.0 } else { 0.0 };
                (s - target).abs()
            })
            .fold(0.0, f64::max)
    }

    /// JSON-friendly map `"2,1,1" -> value`.
    pub fn to_label_map(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }
}

/// Leading large-`d` behaviour `Wg(σ) ≈ Möb(σ) d^{-p-|σ|}`, where `|σ|` is
/// `p` minus the number of cycles and `Möb(σ) = Π_c (-1)^{|c|-1} Cat(|c|-1)`.
pub fn asymptotic_weingarten(ct: &CycleType, d: usize) -> f64 {
    let p = ct.order();
    let length = p - ct.num_cycles();
    mobius(ct) * (d as f64).powi(-((p + length) as i32))
}

/// Möbius function of the non-crossing partition lattice on cycle type `ct`.
pub fn mobius(ct: &CycleType) -> f64 {
    ct.0.iter()
        .map(|&len| {
            let c = catalan(len - 1) as f64;
            if (len - 1) % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .product()
}

fn catalan(n: usize) -> u64 {
    let mut c = 1u64;
    for k in 0..n as u64 {
        c = c * 2 * (2 * k + 1) / (k + 2);
    }
    c
}
