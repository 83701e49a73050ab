//! Central finite differences, used as an independent oracle for the
//! analytic gradients.

use crate::tensor::Tensor;

/// Numerical gradient of a scalar function at `x` with step `h`.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * h);
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = a.sub(b);
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}
