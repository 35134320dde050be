//! Central finite differences for checking analytic gradients and curvature.

use crate::matrix::SquareMatrix;
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_gradient<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let two_h = h + h;
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / two_h
        })
        .collect()
}

/// Second difference of `f` along `dir`: approximates `dirᵀ H dir`.
pub fn directional_curvature<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], dir: &[T], h: T) -> T {
    let shifted = |sign: T| -> Vec<T> { x.iter().zip(dir).map(|(&xi, &di)| xi + sign * h * di).collect() };
    let up = f(&shifted(T::one()));
    let down = f(&shifted(-T::one()));
    let centre = f(x);
    (up + down - centre - centre) / (h * h)
}

/// Full Hessian by central differences of `f` (four evaluations per entry).
pub fn numerical_hessian<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> SquareMatrix<T> {
    let n = x.len();
    let mut hess = SquareMatrix::zeros(n);
    let mut probe = x.to_vec();
    let four_hh = T::of(4.0) * h * h;
    for i in 0..n {
        for j in i..n {
            let mut eval = |si: T, sj: T| {
                probe.copy_from_slice(x);
                probe[i] = probe[i] + si * h;
                probe[j] = probe[j] + sj * h;
                f(&probe)
            };
            let (one, neg) = (T::one(), -T::one());
            let value = (eval(one, one) - eval(one, neg) - eval(neg, one) + eval(neg, neg)) / four_hh;
            hess.set(i, j, value);
            hess.set(j, i, value);
        }
    }
    hess
}

/// `‖analytic − numeric‖∞ / max(‖numeric‖∞, floor)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T], floor: T) -> T {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs())
        .fold(T::zero(), T::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(floor, T::max);
    diff / scale
}
