#![allow(dead_code)]

pub mod quadrature;

use num_complex::Complex64;
use qnngp::linalg::{CMatrix, CVector, DensityMatrix, HermitianObservable};
use qnngp::rng::{substream, StreamRng};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64, name: &str) -> StreamRng {
    substream(seed, name, 0)
}

pub fn gaussian_matrix(d: usize, rng: &mut StreamRng) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

pub fn random_observable(d: usize, rng: &mut StreamRng) -> HermitianObservable {
    let g = gaussian_matrix(d, rng);
    let h = (&g + g.adjoint()) * Complex64::new(0.5 / (d as f64).sqrt(), 0.0);
    HermitianObservable::new(h, "random").unwrap()
}

pub fn random_pure_state(d: usize, rng: &mut StreamRng) -> DensityMatrix {
    let v = CVector::from_fn(d, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    DensityMatrix::from_unnormalized(&v).unwrap()
}

/// Random full-rank mixed state `G G† / Tr(G G†)`.
pub fn random_mixed_state(d: usize, rng: &mut StreamRng) -> DensityMatrix {
    let g = gaussian_matrix(d, rng);
    let m = &g * g.adjoint();
    let t = m.trace();
    let m = m / t;
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(m).unwrap()
}
