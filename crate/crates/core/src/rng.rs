//! Seeded random streams and order-stable parallel reduction.
//!
//! Every simulated path owns a ChaCha stream identified by
//! `(master seed, domain, index)`. Work is split into fixed-size batches whose
//! partial results are merged in batch order, so the outcome depends only on
//! the seed and never on how many worker threads ran the batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of paths handled by one parallel work item.
pub const BATCH_SIZE: usize = 1024;

/// Independent families of random streams. Two domains never share a stream
/// even when they are given the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Simulation,
    Oracle,
    Cloud,
    Hedging,
    Assumption,
    Sampler,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Simulation => 0x5349_4d55_4c41_5445,
            StreamDomain::Oracle => 0x4f52_4143_4c45_0001,
            StreamDomain::Cloud => 0x434c_4f55_4400_0002,
            StreamDomain::Hedging => 0x4845_4447_4500_0003,
            StreamDomain::Assumption => 0x4133_4553_5400_0004,
            StreamDomain::Sampler => 0x5341_4d50_4c45_0005,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream number `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ domain.tag()));
    rng.set_stream(index);
    rng
}

/// Runs `work` over `0..n` in batches of [`BATCH_SIZE`] and returns the batch
/// results in batch order.
pub fn batched<T, F>(n: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let batches = n.div_ceil(BATCH_SIZE);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * BATCH_SIZE;
            let hi = (lo + BATCH_SIZE).min(n);
            work(lo..hi)
        })
        .collect()
}

/// Streaming mean/variance accumulator with an order-stable merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let wa = self.count as f64;
        let wb = other.count as f64;
        self.mean += delta * wb / n;
        self.m2 += other.m2 + delta * delta * wa * wb / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Joint moments of a pair, for sample covariance and correlation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoMoments {
    pub x: Moments,
    pub y: Moments,
    cxy: f64,
}

impl CoMoments {
    pub fn push(&mut self, x: f64, y: f64) {
        let dx = x - self.x.mean;
        self.x.push(x);
        self.y.push(y);
        self.cxy += dx * (y - self.y.mean);
    }

    pub fn merge(&mut self, other: &CoMoments) {
        if other.x.count == 0 {
            return;
        }
        if self.x.count == 0 {
            *self = *other;
            return;
        }
        let na = self.x.count as f64;
        let nb = other.x.count as f64;
        let n = na + nb;
        let dx = other.x.mean - self.x.mean;
        let dy = other.y.mean - self.y.mean;
        self.cxy += other.cxy + dx * dy * na * nb / n;
        self.x.merge(&other.x);
        self.y.merge(&other.y);
    }

    pub fn covariance(&self) -> f64 {
        if self.x.count < 2 {
            0.0
        } else {
            self.cxy / (self.x.count - 1) as f64
        }
    }

    pub fn correlation(&self) -> f64 {
        let denom = self.x.std_dev() * self.y.std_dev();
        if denom > 0.0 {
            self.covariance() / denom
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_across_domains_and_indices() {
        let a: u64 = stream(7, StreamDomain::Oracle, 0).gen();
        let b: u64 = stream(7, StreamDomain::Cloud, 0).gen();
        let c: u64 = stream(7, StreamDomain::Oracle, 1).gen();
        let a2: u64 = stream(7, StreamDomain::Oracle, 0).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, a2);
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut seq = Moments::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut left = Moments::default();
        let mut right = Moments::default();
        xs[..313].iter().for_each(|&x| left.push(x));
        xs[313..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        assert!((left.mean - seq.mean).abs() < 1e-12);
        assert!((left.variance() - seq.variance()).abs() < 1e-10);
    }

    #[test]
    fn constant_sample_has_zero_variance() {
        let mut m = Moments::default();
        for _ in 0..10_000 {
            m.push(0.970_445_533_548_508);
        }
        assert_eq!(m.variance(), 0.0);
    }

    #[test]
    fn comoments_recover_known_covariance() {
        let mut cm = CoMoments::default();
        let mut parts = vec![CoMoments::default(); 3];
        for i in 0..3000 {
            let x = (i % 17) as f64;
            let y = 2.0 * x + ((i * 7) % 5) as f64;
            cm.push(x, y);
            parts[i % 3].push(x, y);
        }
        let mut merged = CoMoments::default();
        parts.iter().for_each(|p| merged.merge(p));
        // direct two-pass covariance
        let pts: Vec<(f64, f64)> = (0..3000)
            .map(|i| {
                let x = (i % 17) as f64;
                (x, 2.0 * x + ((i * 7) % 5) as f64)
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3000.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 3000.0;
        let cov = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / 2999.0;
        assert!((cm.covariance() - cov).abs() < 1e-9 * cov.abs());
        assert!((merged.covariance() - cov).abs() < 1e-9 * cov.abs());
    }
}
