//! Sparsemax: Euclidean projection of a score vector onto the probability
//! simplex. Unlike softmax it assigns exact zeros outside a small support set,
//! which is what makes the feature masks in the tabular encoder sparse.

use super::scalar::Real;

/// Projects one row of scores onto the simplex.
///
/// Sort-based algorithm: sort scores descending, find the largest k such that
/// `1 + k*z_(k) > sum_{j<=k} z_(j)`, set `tau = (sum_{j<=k*} z_(j) - 1)/k*`,
/// and output `max(z_i - tau, 0)`.
pub fn sparsemax_row<T: Real>(z: &[T]) -> Vec<T> {
    let n = z.len();
    assert!(n > 0, "sparsemax of empty row");
    let mut sorted: Vec<T> = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("non-finite score in sparsemax"));

    let mut cumsum = T::zero();
    let mut k_star = 0usize;
    let mut cumsum_star = T::zero();
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let kk = T::from_f64((k + 1) as f64);
        if T::one() + kk * v > cumsum {
            k_star = k + 1;
            cumsum_star = cumsum;
        }
    }
    let tau = (cumsum_star - T::one()) / T::from_f64(k_star as f64);
    z.iter()
        .map(|&v| {
            let y = v - tau;
            if y > T::zero() {
                y
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Vector-Jacobian product for one row. `y` is the sparsemax output, `g` the
/// upstream gradient. On the support the Jacobian is `I - 1 1^T / |S|`, off
/// the support it is zero.
pub fn sparsemax_row_vjp<T: Real>(y: &[T], g: &[T]) -> Vec<T> {
    let support: Vec<usize> = (0..y.len()).filter(|&i| y[i] > T::zero()).collect();
    let s = T::from_f64(support.len() as f64);
    let mean: T = support.iter().map(|&i| g[i]).sum::<T>() / s;
    (0..y.len())
        .map(|i| {
            if y[i] > T::zero() {
                g[i] - mean
            } else {
                T::zero()
            }
        })
        .collect()
}
