//! Hash-based stand-ins for the networks and the world, for exercising the
//! runtime over long horizons at negligible cost.

use super::pipeline::{Backend, Environment, TickInput};
use crate::error::Result;
use crate::models::Mode;

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Features are a hash of the frame id; actions hash everything the
/// reactive path saw, so any change in inputs changes the action.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticBackend;

impl Backend for SyntheticBackend {
    type Frame = u64;
    type Cond = u64;
    type Features = u64;
    type Action = u64;

    fn encode_large(&self, frames: &[&u64]) -> Result<Vec<u64>> {
        Ok(frames.iter().map(|&&f| mix(f ^ 0x5151)).collect())
    }

    fn react(&self, mode: Mode, x: TickInput<'_, Self>) -> Result<u64> {
        let mut h = mix(*x.frame ^ mix(*x.cond) ^ mode as u64);
        if let Some(s) = x.stale {
            h = mix(h ^ *s.features);
            h = mix(h ^ *s.cond ^ s.action.copied().unwrap_or(u64::MAX));
        }
        Ok(h)
    }
}

/// A world of `len` ticks whose frame at tick `k` is `k`.
#[derive(Clone, Debug)]
pub struct SyntheticEnv {
    pub tick: u64,
    pub len: u64,
}

impl SyntheticEnv {
    pub fn new(len: u64) -> Self {
        Self { tick: 0, len }
    }
}

impl Environment<SyntheticBackend> for SyntheticEnv {
    fn observe(&mut self) -> Result<(u64, u64)> {
        Ok((self.tick, mix(self.tick.wrapping_mul(31))))
    }

    fn apply(&mut self, _action: &u64) -> Result<bool> {
        self.tick += 1;
        Ok(self.tick >= self.len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::pipeline::{run_sequential, Pipeline};
    use crate::scheduler::plan::{CostModel, PipelineConfig};

    #[test]
    fn simulated_threaded_and_sequential_agree() {
        let cfg = PipelineConfig::default();
        let costs = CostModel::default();
        for mode in Mode::ALL {
            let p = Pipeline::new(&costs, &PipelineConfig::new(200.0, 600.0), mode);
            let p = match p {
                Ok(p) => p,
                Err(_) => continue,
            };
            let sim = p.run(&mut SyntheticEnv::new(40), &SyntheticBackend, 1000).unwrap();
            let thr = p
                .run_threaded(&mut SyntheticEnv::new(40), &SyntheticBackend, 1000)
                .unwrap();
            let seq = run_sequential(&mut SyntheticEnv::new(40), &SyntheticBackend, &p.cfg, mode, 1000).unwrap();
            assert_eq!(sim.actions, seq, "{mode}");
            assert_eq!(thr.actions, seq, "{mode}");
            assert_eq!(sim.ticks, 40);
        }
        let p = Pipeline::new(&costs, &cfg, Mode::Full).unwrap();
        assert_eq!(p.batch, Some(2));
    }

    #[test]
    fn oversized_batch_misses_features() {
        let costs = CostModel::default();
        let cfg = PipelineConfig::new(50.0, 100.0);
        assert!(Pipeline::new(&costs, &cfg, Mode::Full).is_err());
        let p = Pipeline::with_batch(&costs, &cfg, Mode::Full, 2).unwrap();
        let run = p.run(&mut SyntheticEnv::new(20), &SyntheticBackend, 100).unwrap();
        assert!(run
            .trace
            .misses()
            .any(|(_, k)| k == crate::scheduler::MissKind::MissingFeatures));
    }
}
