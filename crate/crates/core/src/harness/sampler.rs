//! Two-stage weighted draw: a bucket by normalized weight, then a sample
//! uniformly within it.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::buckets::{assign_buckets, Bucket, BucketWeights};
use super::dataset::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct WeightedSampler {
    /// Non-empty buckets with their member indices, in `Bucket::ALL` order.
    pub buckets: Vec<(Bucket, Vec<usize>)>,
    weights: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(samples: &[Sample], weights: &BucketWeights, seed: u64) -> Result<Self> {
        weights.validate().map_err(Error::Config)?;
        let mut members: Vec<(Bucket, Vec<usize>)> = Bucket::ALL.into_iter().map(|b| (b, Vec::new())).collect();
        for (i, s) in samples.iter().enumerate() {
            for b in assign_buckets(s) {
                members
                    .iter_mut()
                    .find(|(k, _)| *k == b)
                    .expect("all buckets listed")
                    .1
                    .push(i);
            }
        }
        let mut buckets = Vec::new();
        for (b, idx) in members {
            if idx.is_empty() {
                log::warn!("bucket {b} is empty and is excluded from sampling");
            } else {
                buckets.push((b, idx));
            }
        }
        if buckets.is_empty() {
            return Err(Error::Data("cannot sample from an empty dataset".into()));
        }
        let w = WeightedIndex::new(buckets.iter().map(|(b, _)| weights.get(*b)))
            .map_err(|e| Error::Config(format!("bucket weights: {e}")))?;
        Ok(Self {
            buckets,
            weights: w,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws a bucket position and a sample index within that bucket.
    pub fn draw(&mut self) -> (usize, usize) {
        let b = self.weights.sample(&mut self.rng);
        let idx = &self.buckets[b].1;
        (b, idx[self.rng.gen_range(0..idx.len())])
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.draw().1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(WeightedSampler::new(&[], &BucketWeights::default(), 0).is_err());
    }
}
