//! Trapezoid quadrature of low-dimensional quartic densities `exp(-S)`.

use qnngp::linalg::RMatrix;
use qnngp::near_gaussian::{action_evaluate, QuarticAction, Tensor4};

pub const NODES: usize = 801;
pub const SPAN: f64 = 12.0;

pub fn nodes(sigma: f64) -> (Vec<f64>, f64) {
    let h = 2.0 * SPAN * sigma / (NODES - 1) as f64;
    ((0..NODES).map(|k| -SPAN * sigma + k as f64 * h).collect(), h)
}

pub fn scalar_action(k: f64, v: f64, lambda: f64) -> QuarticAction {
    QuarticAction::new(
        RMatrix::from_element(1, 1, k),
        Tensor4::from_fn(1, |_, _, _, _| v).unwrap(),
        lambda,
    )
    .unwrap()
}

/// `(E[f²], E[f⁴] - 3E[f²]²)` of `exp(-S)` by trapezoid quadrature.
pub fn quad_1d(action: &QuarticAction) -> (f64, f64) {
    let (xs, _) = nodes(action.covariance[(0, 0)].sqrt());
    let w: Vec<f64> = xs.iter().map(|&x| (-action_evaluate(action, &[x]).unwrap()).exp()).collect();
    let z: f64 = w.iter().sum();
    let m = |p: i32| xs.iter().zip(&w).map(|(x, w)| x.powi(p) * w).sum::<f64>() / z;
    let (m2, m4) = (m(2), m(4));
    (m2, m4 - 3.0 * m2 * m2)
}

pub fn two_dim_v() -> Tensor4 {
    let w = [[1.0, 0.3], [-0.4, 0.8]];
    Tensor4::from_fn(2, |a, b, c, d| w.iter().map(|r| r[a] * r[b] * r[c] * r[d]).sum()).unwrap()
}

pub fn two_dim_k() -> RMatrix {
    RMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8])
}

/// `E[f_0 | f_1 = y]` by quadrature along the slice.
pub fn quad_conditional_mean(action: &QuarticAction, y: f64) -> f64 {
    let (xs, _) = nodes(action.covariance[(0, 0)].sqrt());
    let shift = action.covariance[(0, 1)] / action.covariance[(1, 1)] * y;
    let w: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| {
            let f0 = x + shift;
            (f0, (-action_evaluate(action, &[f0, y]).unwrap()).exp())
        })
        .collect();
    let z: f64 = w.iter().map(|p| p.1).sum();
    w.iter().map(|(f, p)| f * p).sum::<f64>() / z
}

/// Full covariance of the 2-dim density by a product rule.
pub fn quad_covariance_2d(action: &QuarticAction) -> RMatrix {
    let s = action.covariance[(0, 0)].max(action.covariance[(1, 1)]).sqrt();
    let (xs, _) = nodes(s);
    let mut z = 0.0;
    let mut m = RMatrix::zeros(2, 2);
    for &a in xs.iter().step_by(2) {
        for &b in xs.iter().step_by(2) {
            let p = (-action_evaluate(action, &[a, b]).unwrap()).exp();
            z += p;
            m[(0, 0)] += a * a * p;
            m[(0, 1)] += a * b * p;
            m[(1, 1)] += b * b * p;
        }
    }
    m[(1, 0)] = m[(0, 1)];
    m / z
}

