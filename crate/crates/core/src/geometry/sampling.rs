//! Sample placement along rays: stratified coarse samples and
//! inverse-transform refinement from a piecewise-constant weight density.

use rand::Rng;

use super::camera::Ray;
use crate::error::{Error, Result};

/// `n` stratified parametric distances in [near, far], one per bin.
/// `jitter` draws the in-bin offset; `None` uses bin midpoints.
pub fn sample_stratified(ray: &Ray, n: usize, mut jitter: Option<&mut dyn FnMut() -> f64>) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples per ray, got {n}"
        )));
    }
    let bin = (ray.far - ray.near) / n as f64;
    Ok((0..n)
        .map(|i| {
            let u = match jitter.as_mut() {
                Some(j) => j(),
                None => 0.5,
            };
            ray.near + (i as f64 + u) * bin
        })
        .collect())
}

/// Draws `m` distances from the piecewise-constant density given by
/// `bin_weights[i]` over [ts[i], ts[i+1]], merges them with `ts`, and
/// returns the strictly increasing union. All-zero weights degrade to a
/// uniform density over [ts.first(), ts.last()].
pub fn sample_hierarchical(
    ts: &[f64],
    bin_weights: &[f64],
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if ts.len() < 2 || bin_weights.len() + 1 != ts.len() {
        return Err(Error::InvalidArgument(format!(
            "need |ts| = |weights|+1 >= 2, got {} and {}",
            ts.len(),
            bin_weights.len()
        )));
    }
    if bin_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "bin weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = bin_weights.iter().sum();
    let uniform = vec![1.0; bin_weights.len()];
    let weights = if total > 0.0 { bin_weights } else { &uniform[..] };
    let total: f64 = weights.iter().sum();

    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;

    let mut out = ts.to_vec();
    for _ in 0..m {
        let u: f64 = rng.gen_range(0.0..1.0);
        let hi = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
        let bin = hi - 1;
        let span = cdf[hi] - cdf[bin];
        let frac = if span > 0.0 { (u - cdf[bin]) / span } else { 0.5 };
        out.push(ts[bin] + frac * (ts[bin + 1] - ts[bin]));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Enforce strict monotonicity against coincident draws.
    let span = ts[ts.len() - 1] - ts[0];
    for i in 1..out.len() {
        if out[i] <= out[i - 1] {
            out[i] = out[i - 1] + span * 1e-12;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn unit_ray() -> Ray {
        Ray::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), 1.0, 3.0).unwrap()
    }

    #[test]
    fn midpoints_without_jitter() {
        let ts = sample_stratified(&unit_ray(), 4, None).unwrap();
        assert_eq!(ts, vec![1.25, 1.75, 2.25, 2.75]);
    }

    #[test]
    fn sorted_within_range_with_jitter() {
        let mut rng = crate::rng::stream(3, "strat", &[]);
        let mut jit = || rng.gen_range(0.0..1.0);
        let ts = sample_stratified(&unit_ray(), 16, Some(&mut jit)).unwrap();
        for w in ts.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(ts.iter().all(|t| (1.0..=3.0).contains(t)));
        assert!(sample_stratified(&unit_ray(), 1, None).is_err());
    }

    #[test]
    fn stratified_occupancy_is_uniform() {
        // 10⁴ draws of 2 samples; histogram the in-bin offsets into 10
        // sub-bins and require counts within 3σ of the binomial law.
        let ray = unit_ray();
        let mut rng = crate::rng::stream(4, "strat-occ", &[]);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let mut jit = || rng.gen_range(0.0..1.0);
            let ts = sample_stratified(&ray, 2, Some(&mut jit)).unwrap();
            for (i, t) in ts.iter().enumerate() {
                let offset = (t - 1.0 - i as f64) / 1.0; // bin width 1.0
                let slot = ((offset * 10.0) as usize).min(9);
                counts[slot] += 1;
            }
        }
        let n = (2 * draws) as f64;
        let p = 0.1;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - n * p).abs() < 3.0 * sigma,
                "occupancy {c} vs expected {}",
                n * p
            );
        }
    }

    #[test]
    fn concentrated_weights_land_in_that_bin() {
        let ts = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let weights = vec![0.0, 0.0, 5.0, 0.0];
        let mut rng = crate::rng::stream(5, "hier", &[]);
        let out = sample_hierarchical(&ts, &weights, 64, &mut rng).unwrap();
        let new: Vec<f64> = out
            .iter()
            .copied()
            .filter(|t| !ts.contains(t))
            .collect();
        assert_eq!(new.len(), 64);
        assert!(new.iter().all(|t| (2.0..=3.0).contains(t)));
        for w in out.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let ts = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let weights = vec![0.0; 4];
        let mut rng = crate::rng::stream(6, "hier-uniform", &[]);
        let out = sample_hierarchical(&ts, &weights, 10_000, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for t in out.iter().filter(|t| !ts.contains(*t)) {
            counts[((t * 4.0) as usize).min(3)] += 1;
        }
        let n = 10_000f64;
        let sigma = (n * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n * 0.25).abs() < 3.0 * sigma, "count {c}");
        }
    }
}
