use super::{Scalar, Tensor};

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// for every coordinate of `x`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, eps: T) -> Tensor<T> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (eps + eps));
    }
    Tensor::from_parts(x.shape(), grad)
}
