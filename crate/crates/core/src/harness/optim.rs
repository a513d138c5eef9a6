//! Adam and the cosine schedule with warm restarts.

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamStore, Tensor};

/// Cosine annealing over `restarts + 1` equal segments. Each segment starts
/// at `lr0`; the last one reaches `min_lr` on the final step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub min_lr: f64,
    pub restarts: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64, restarts: usize, total_steps: usize) -> Self {
        Self {
            lr0,
            min_lr: 0.0,
            restarts,
            total_steps,
        }
    }

    fn segments(&self) -> usize {
        self.restarts + 1
    }

    /// Segment index and position within it for `step`.
    pub fn segment(&self, step: usize) -> (usize, usize, usize) {
        let n = self.segments();
        let base = self.total_steps / n;
        let extra = self.total_steps % n;
        // The first `extra` segments are one step longer.
        let mut start = 0;
        for s in 0..n {
            let len = base + usize::from(s < extra);
            if step < start + len || s == n - 1 {
                return (s, step - start, len);
            }
            start += len;
        }
        unreachable!()
    }

    pub fn lr(&self, step: usize) -> f64 {
        let (seg, pos, len) = self.segment(step);
        let last = seg == self.segments() - 1;
        let span = if last { len.saturating_sub(1).max(1) } else { len.max(1) };
        let frac = (pos as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.lr0 - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn curve(&self) -> Vec<f64> {
        (0..self.total_steps).map(|s| self.lr(s)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update; parameters without a gradient keep their moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(3e-5, 4, 103);
        let c = s.curve();
        assert_eq!(c[0], 3e-5);
        let ups = c.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(ups, 4);
        assert_eq!(*c.last().unwrap(), 0.0);
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let (seg, _, _) = s.segment(c.iter().position(|&x| x == min).unwrap());
        assert_eq!(seg, 4);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let id = p.insert("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
        opt.step(&mut p, &[Some(g)], 0.1);
        let w = p.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6, "{w:?}");
    }
}
