//! Magnitude compression used in front of the enhancement networks.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Magnitude compression law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compression {
    /// `ln(1 + m)`
    Log1p,
    /// `m^c` with `c ∈ (0, 1]`
    Power { exponent: f64 },
}

impl Compression {
    pub fn compress<T: Scalar>(&self, mag: &[T]) -> Result<Vec<T>> {
        match *self {
            Compression::Log1p => compress_log1p(mag),
            Compression::Power { exponent } => compress_power(mag, exponent),
        }
    }

    pub fn decompress<T: Scalar>(&self, cmag: &[T]) -> Result<Vec<T>> {
        match *self {
            Compression::Log1p => Ok(decompress_expm1(cmag)),
            Compression::Power { exponent } => decompress_power(cmag, exponent),
        }
    }

    pub fn compress_var<'t, T: Scalar>(&self, mag: Var<'t, T>) -> Result<Var<'t, T>> {
        match *self {
            Compression::Log1p => mag.log1p(),
            Compression::Power { exponent } => {
                check_exponent(exponent)?;
                mag.powf(T::of(exponent))
            }
        }
    }

    pub fn decompress_var<'t, T: Scalar>(&self, cmag: Var<'t, T>) -> Result<Var<'t, T>> {
        match *self {
            Compression::Log1p => cmag.expm1(),
            Compression::Power { exponent } => {
                check_exponent(exponent)?;
                cmag.powf(T::of(1.0 / exponent))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Compression::Log1p => Ok(()),
            Compression::Power { exponent } => check_exponent(exponent),
        }
    }
}

fn check_nonnegative<T: Scalar>(mag: &[T]) -> Result<()> {
    match mag.iter().position(|&m| !(m >= T::zero())) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "magnitude must be nonnegative, found {} at {i}",
            mag[i]
        ))),
        None => Ok(()),
    }
}

pub fn compress_log1p<T: Scalar>(mag: &[T]) -> Result<Vec<T>> {
    check_nonnegative(mag)?;
    Ok(mag.iter().map(|m| m.ln_1p()).collect())
}

pub fn decompress_expm1<T: Scalar>(cmag: &[T]) -> Vec<T> {
    cmag.iter().map(|c| c.exp_m1()).collect()
}

fn check_exponent(c: f64) -> Result<()> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("compression exponent {c} outside (0, 1]")));
    }
    Ok(())
}

pub fn compress_power<T: Scalar>(mag: &[T], c: f64) -> Result<Vec<T>> {
    check_exponent(c)?;
    check_nonnegative(mag)?;
    let c = T::of(c);
    Ok(mag.iter().map(|m| m.powf(c)).collect())
}

pub fn decompress_power<T: Scalar>(cmag: &[T], c: f64) -> Result<Vec<T>> {
    check_exponent(c)?;
    check_nonnegative(cmag)?;
    let inv = T::of(1.0 / c);
    Ok(cmag.iter().map(|m| m.powf(inv)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_values() {
        assert_eq!(compress_log1p(&[0.0f64]).unwrap(), vec![0.0]);
        let e1 = std::f64::consts::E - 1.0;
        assert!((compress_log1p(&[e1]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(compress_log1p(&[-1e-3f64]).is_err());
    }

    #[test]
    fn power_values() {
        assert_eq!(compress_power(&[4.0f64], 0.5).unwrap(), vec![2.0]);
        assert_eq!(compress_power(&[3.25f64], 1.0).unwrap(), vec![3.25]);
        assert!(compress_power(&[1.0f64], 0.0).is_err());
        assert!(compress_power(&[1.0f64], -0.3).is_err());
    }
}
