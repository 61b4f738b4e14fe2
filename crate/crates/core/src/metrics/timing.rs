use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ssm::{selective_scan_parallel, selective_scan_sequential, ScanMode};
use crate::tensor::Tensor;

/// Minimum wall-clock seconds over `reps` runs of one scan of length
/// `seq_len` with `channels × state` lanes.
pub fn time_scan(seq_len: usize, channels: usize, state: usize, reps: usize, mode: ScanMode) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seq_len as u64);
    let x = Tensor::<f64>::uniform(vec![seq_len, channels], -1.0, 1.0, &mut rng);
    let delta = Tensor::uniform(vec![seq_len, channels], 0.001, 0.1, &mut rng);
    let a = Tensor::uniform(vec![channels, state], -2.0, -0.5, &mut rng);
    let b = Tensor::uniform(vec![seq_len, state], -1.0, 1.0, &mut rng);
    let c = Tensor::uniform(vec![seq_len, state], -1.0, 1.0, &mut rng);
    let d = Tensor::ones(vec![channels]);
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let y = match mode {
            ScanMode::Sequential => selective_scan_sequential(&x, &delta, &a, &b, &c, &d)?,
            ScanMode::Parallel => selective_scan_parallel(&x, &delta, &a, &b, &c, &d)?,
        };
        best = best.min(start.elapsed().as_secs_f64());
        std::hint::black_box(y);
    }
    Ok(best)
}
