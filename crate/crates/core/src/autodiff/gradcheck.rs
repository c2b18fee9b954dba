use super::Tensor;
use crate::scalar::Scalar;

/// Central-difference gradient of a scalar function.
///
/// Each coordinate is perturbed by `±h` in turn; `f` must be deterministic.
pub fn finite_difference_gradient<T, E, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>, E>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T, E>,
{
    assert!(h > T::zero(), "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (h + h));
    }
    Ok(Tensor::new(x.shape().to_vec(), grad).expect("same shape as x"))
}

/// `|a - b| / max(|a|, |b|, floor)`, the comparison used by gradient checks.
pub fn relative_error<T: Scalar>(a: T, b: T, floor: T) -> T {
    let scale = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / scale
}
