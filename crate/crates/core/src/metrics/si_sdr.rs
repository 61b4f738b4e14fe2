use crate::error::{Error, Result};

/// Ceiling reported when the residual vanishes.
pub const SI_SDR_MAX_DB: f64 = 140.0;

/// Scale-invariant SDR in dB: `10·log10(‖α·ref‖² / ‖est − α·ref‖²)` with
/// `α = ⟨est, ref⟩ / ‖ref‖²`, capped at [`SI_SDR_MAX_DB`].
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "si_sdr: lengths differ ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidArgument("si_sdr: reference is all zero".into()));
    }
    let alpha = est.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let target: f64 = alpha * alpha * ref_energy;
    let residual: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    if residual == 0.0 {
        return Ok(SI_SDR_MAX_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_MAX_DB))
}
