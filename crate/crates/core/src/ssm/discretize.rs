use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zero-order-hold style discretisation of a diagonal system.
///
/// `delta: [T, C]`, `a: [C, S]`, `b: [T, S]` → `(Ā, B̄)` each `[T, C, S]`
/// with `Ā = exp(ΔA)` and `B̄ = ΔB`. Requires `Δ > 0` and `A < 0`.
pub fn discretize<T: Scalar>(delta: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ds, as_, bs) = (delta.shape(), a.shape(), b.shape());
    if ds.len() != 2 || as_.len() != 2 || bs.len() != 2 || ds[1] != as_[0] || bs[0] != ds[0] || bs[1] != as_[1] {
        return Err(Error::shape("discretize", format!("Δ {ds:?}, A {as_:?}, B {bs:?}")));
    }
    if delta.data().iter().any(|&v| v.is_nan() || v <= T::zero()) {
        return Err(Error::InvalidArgument("discretize: step sizes must be positive".into()));
    }
    if a.data().iter().any(|&v| v.is_nan() || v >= T::zero()) {
        return Err(Error::InvalidArgument("discretize: state matrix must be negative".into()));
    }
    let (tn, c, s) = (ds[0], ds[1], as_[1]);
    let mut abar = Vec::with_capacity(tn * c * s);
    let mut bbar = Vec::with_capacity(tn * c * s);
    for t in 0..tn {
        for ch in 0..c {
            let dt = delta.data()[t * c + ch];
            for k in 0..s {
                abar.push((dt * a.data()[ch * s + k]).exp());
                bbar.push(dt * b.data()[t * s + k]);
            }
        }
    }
    Ok((Tensor::new(vec![tn, c, s], abar)?, Tensor::new(vec![tn, c, s], bbar)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_stays_in_unit_interval() {
        let delta = Tensor::new(vec![2, 1], vec![0.01, 3.0]).unwrap();
        let a = Tensor::new(vec![1, 2], vec![-0.5, -4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (ab, bb) = discretize(&delta, &a, &b).unwrap();
        assert!(ab.data().iter().all(|&v: &f64| v > 0.0 && v < 1.0));
        assert_eq!(bb.data(), &[0.01, 0.02, 9.0, 12.0]);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let delta = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let a = Tensor::new(vec![1, 1], vec![-1.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(discretize::<f64>(&delta, &a, &b).is_err());
    }
}
