use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::settings::{LabError, Result};

/// Radius of the disk that sample points are drawn from.
pub const SAMPLE_RADIUS: f64 = 0.9;
/// Total number of rejected draws tolerated by [`sample_eval`].
pub const MAX_REJECTS: usize = 50;

/// Uniform point in the disk `|z| < radius`.
pub fn disk_point(rng: &mut impl Rng, radius: f64) -> Complex64 {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    Complex64::from_polar(r, theta)
}

/// Deterministic stream of candidate base points.
pub struct PointStream {
    rng: ChaCha8Rng,
}

impl PointStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Iterator for PointStream {
    type Item = Complex64;
    fn next(&mut self) -> Option<Complex64> {
        Some(disk_point(&mut self.rng, SAMPLE_RADIUS))
    }
}

pub fn sample_points(seed: u64, count: usize) -> Vec<Complex64> {
    PointStream::new(seed).take(count).collect()
}

/// Evaluates `f` at the first `count` candidate points (in draw order) where it does
/// not report a rank drop. Batches are evaluated in parallel; the result is independent
/// of the thread count.
pub fn sample_eval<T, F>(seed: u64, count: usize, f: F) -> Result<Vec<(Complex64, T)>>
where
    T: Send,
    F: Fn(Complex64) -> Result<T> + Sync,
{
    let mut stream = PointStream::new(seed);
    let mut out = Vec::with_capacity(count);
    let mut rejects = 0;
    while out.len() < count {
        let batch: Vec<Complex64> = stream.by_ref().take(count - out.len()).collect();
        let results: Vec<Result<T>> = batch.par_iter().map(|&z| f(z)).collect();
        for (z, r) in batch.into_iter().zip(results) {
            match r {
                Ok(v) => out.push((z, v)),
                Err(e) if e.is_resample() => {
                    rejects += 1;
                    if rejects > MAX_REJECTS {
                        return Err(LabError::Inconclusive(format!(
                            "more than {MAX_REJECTS} rejected sample points (last: {e})"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Like [`sample_eval`] but evaluates at the given points, skipping rejected ones.
pub fn eval_at<T, F>(points: &[Complex64], f: F) -> Result<Vec<(Complex64, T)>>
where
    T: Send,
    F: Fn(Complex64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = points.par_iter().map(|&z| f(z)).collect();
    let mut out = Vec::new();
    for (&z, r) in points.iter().zip(results) {
        match r {
            Ok(v) => out.push((z, v)),
            Err(e) if e.is_resample() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
