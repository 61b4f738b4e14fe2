//! Rational-rate polyphase resampling with a Kaiser-windowed sinc.

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Low-pass prototype for up/down factors: `20·max(up, down) + 1` taps,
/// cutoff at the narrower Nyquist, Kaiser β = 5, gain `up`.
fn design(up: usize, down: usize) -> Vec<f64> {
    let max = up.max(down);
    let half = 10 * max;
    let n = 2 * half + 1;
    let cutoff = 1.0 / max as f64;
    let beta = 5.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - half as f64;
            let sinc = if m == 0.0 {
                1.0
            } else {
                let a = std::f64::consts::PI * cutoff * m;
                a.sin() / a
            };
            let r = m / half as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            cutoff * sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / dc);
    h
}

/// Resamples `x` from `from_hz` to `to_hz`. The output has
/// `ceil(len · to / from)` samples and no group delay.
pub fn resample(x: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz {
        return x.to_vec();
    }
    let g = gcd(from_hz as usize, to_hz as usize);
    let (up, down) = (to_hz as usize / g, from_hz as usize / g);
    let h = design(up, down);
    let delay = (h.len() - 1) / 2;
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|k| {
            // upsampled position k·down + delay hits input n at tap p − n·up
            let p = k * down + delay;
            let n_hi = (p / up).min(x.len().saturating_sub(1));
            let n_lo = p.saturating_sub(h.len() - 1).div_ceil(up);
            (n_lo..=n_hi).map(|n| x[n] * h[p - n * up]).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_band_tone_survives() {
        let n = 16000;
        let f = 440.0;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()).collect();
        let y = resample(&x, 16000, 10000);
        assert_eq!(y.len(), 10000);
        for (i, &v) in y.iter().enumerate().skip(200).take(9600) {
            let want = (2.0 * std::f64::consts::PI * f * i as f64 / 10000.0).sin();
            assert!((v - want).abs() < 2e-3, "{i}: {v} vs {want}");
        }
    }

    #[test]
    fn identity_rate_is_a_copy() {
        assert_eq!(resample(&[1.0, 2.0], 8000, 8000), vec![1.0, 2.0]);
    }
}
