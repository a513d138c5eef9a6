//! Supervised training of any mode's graph, with loss records and
//! checkpoints that carry their provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buckets::BucketWeights;
use super::dataset::Sample;
use super::optim::{Adam, AdamConfig, LrSchedule};
use super::sampler::WeightedSampler;
use crate::error::{Error, Result};
use crate::losses::{action_loss, forecast_loss, mask_term, total_async, total_base, LossParts, LossWeights};
use crate::models::{cond_features, forecast_features, patchify, Batch, EtaModel, Mode, ModelConfig};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::world::ACTION_POINTS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Two-stage bucket draw.
    #[default]
    Weighted,
    /// A fresh permutation per epoch.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub restarts: usize,
    /// Overrides `epochs` with an exact step count.
    pub steps: Option<usize>,
    pub seed: u64,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub sampling: Sampling,
    /// Leaves the forecast term out of the graph entirely.
    pub detach_forecast: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 3e-5,
            restarts: 4,
            steps: None,
            seed: 0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            sampling: Sampling::default(),
            detach_forecast: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.epochs == 0 {
            return Err("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.steps == Some(0) {
            return Err("train.steps must be at least 1".into());
        }
        self.loss.validate()
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * dataset_len.div_ceil(self.batch_size).max(1))
    }

    pub fn schedule(&self, dataset_len: usize) -> LrSchedule {
        LrSchedule::new(self.lr, self.restarts, self.total_steps(dataset_len))
    }
}

/// Stacks samples into the model's batch layout.
pub fn make_batch(samples: &[&Sample]) -> Result<Batch> {
    let n = samples.len();
    let mut now = Vec::new();
    let mut prev = Vec::new();
    let mut cond = Vec::new();
    let mut fc = Vec::new();
    let mut target = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        now.extend_from_slice(patchify(&s.frame_now())?.data());
        prev.extend_from_slice(patchify(&s.frame_prev())?.data());
        cond.extend(cond_features(&s.cond_now));
        fc.extend(forecast_features(&s.plan_prev(), &s.cond_prev));
        target.extend_from_slice(&s.action_now);
        mask.extend(s.mask.to_f64());
    }
    let rows = |v: Vec<f64>, r: usize| -> Result<Tensor> {
        let c = v.len() / r.max(1);
        Ok(Tensor::new(vec![r, c], v)?)
    };
    let tokens = crate::models::TOKENS;
    let b = Batch {
        size: n,
        now: rows(now, n * tokens)?,
        prev: rows(prev, n * tokens)?,
        cond_now: rows(cond, n)?,
        forecast_cond: rows(fc, n)?,
        target: rows(target, n * ACTION_POINTS)?,
        mask: rows(mask, n)?,
    };
    crate::models::dual::check_batch(&b)?;
    Ok(b)
}

/// The mode's objective on one batch, and its components.
pub struct Objective<'g> {
    pub total: Var<'g>,
    pub action: Var<'g>,
    pub mask: Option<Var<'g>>,
    pub forecast: Option<Var<'g>>,
}

impl Objective<'_> {
    pub fn parts(&self) -> LossParts {
        LossParts {
            total: self.total.scalar(),
            action: self.action.scalar(),
            mask: self.mask.map(|m| m.scalar()),
            forecast: self.forecast.map(|f| f.scalar()),
        }
    }
}

/// Builds the training objective. The base mode supervises its mask on
/// large-encoder tokens; async modes on small-encoder tokens, except
/// `no_mask`, which drops the term.
pub fn objective<'g>(
    model: &EtaModel,
    g: &'g Graph,
    batch: &Batch,
    mode: Mode,
    weights: &LossWeights,
    detach_forecast: bool,
) -> Result<Objective<'g>> {
    let mode = mode.training_mode();
    let with_target = mode.uses_forecaster() && !detach_forecast;
    let out = model.forward(g, batch.constants(g), mode, with_target)?;
    let action = action_loss(out.residuals, g.constant(batch.target.clone()))?;
    let mask = match (mode, out.mask) {
        (Mode::NoMask, _) | (_, None) => None,
        (_, Some(m)) => Some(mask_term(g, m, &batch.mask)?),
    };
    let forecast = match out.forecast {
        Some((pred, gt)) => Some(forecast_loss(gt, pred)?),
        None => None,
    };
    let total = if mode == Mode::Base {
        let (m, _) = mask.expect("base mode has a mask head");
        total_base(action, m, weights)?
    } else {
        total_async(action, mask, forecast, weights)?
    };
    Ok(Objective {
        total,
        action,
        mask: mask.map(|(m, _)| m),
        forecast,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossParts,
}

pub struct TrainOutcome {
    pub model: EtaModel,
    pub records: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn write_records(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Order {
    Weighted(WeightedSampler),
    Shuffled {
        perm: Vec<usize>,
        pos: usize,
        rng: ChaCha8Rng,
    },
}

impl Order {
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        match self {
            Order::Weighted(s) => s.next_batch(n),
            Order::Shuffled { perm, pos, rng } => (0..n)
                .map(|_| {
                    if *pos == perm.len() {
                        perm.shuffle(rng);
                        *pos = 0;
                    }
                    *pos += 1;
                    perm[*pos - 1]
                })
                .collect(),
        }
    }
}

/// Trains a fresh model of `model_cfg` seeded from `cfg.seed`.
pub fn train(samples: &[Sample], mode: Mode, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = EtaModel::new(model_cfg, cfg.seed)?;
    train_from(model, samples, mode, cfg)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_from(mut model: EtaModel, samples: &[Sample], mode: Mode, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate().map_err(Error::Config)?;
    if samples.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let schedule = cfg.schedule(samples.len());
    let mut order = match cfg.sampling {
        Sampling::Weighted => Order::Weighted(WeightedSampler::new(
            samples,
            &BucketWeights::default(),
            cfg.seed ^ 0x5a4d_504c,
        )?),
        Sampling::Shuffled => Order::Shuffled {
            perm: (0..samples.len()).collect(),
            pos: samples.len(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546),
        },
    };
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut records = Vec::with_capacity(schedule.total_steps);
    for step in 0..schedule.total_steps {
        let idx = order.next_batch(cfg.batch_size.min(samples.len()));
        let picked: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let batch = make_batch(&picked)?;
        let g = Graph::new();
        let obj = objective(&model, &g, &batch, mode, &cfg.loss, cfg.detach_forecast)?;
        let parts = obj.parts();
        if !parts.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("{parts:?}"),
            });
        }
        let grads = g.backward(obj.total)?.for_params(model.params.len());
        let lr = schedule.lr(step);
        opt.step(&mut model.params, &grads, lr);
        records.push(StepRecord { step, lr, loss: parts });
    }
    Ok(TrainOutcome { model, records })
}

/// Mean objective of `mode` over `samples` without updating anything.
pub fn evaluate_loss(model: &EtaModel, samples: &[Sample], mode: Mode, weights: &LossWeights) -> Result<LossParts> {
    let picked: Vec<&Sample> = samples.iter().collect();
    let batch = make_batch(&picked)?;
    let g = Graph::new();
    Ok(objective(model, &g, &batch, mode, weights, false)?.parts())
}

/// What a checkpoint was trained as and from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub mode: Mode,
    pub model: ModelConfig,
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
}

const META_KEY: &str = "meta.header";

/// Writes the parameters with `meta` embedded as a byte tensor.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &EtaModel, meta: &CheckpointMeta) -> Result<()> {
    let mut store = model.params.clone();
    let json = serde_json::to_vec(meta)?;
    let bytes: Vec<f64> = json.iter().map(|&b| f64::from(b)).collect();
    store.insert(META_KEY, Tensor::new(vec![bytes.len()], bytes)?)?;
    store.save(path)?;
    Ok(())
}

pub fn read_meta(store: &ParamStore) -> Result<CheckpointMeta> {
    let id = store
        .id(META_KEY)
        .ok_or_else(|| Error::Data("checkpoint has no metadata header".into()))?;
    let bytes: Vec<u8> = store.get(id).data().iter().map(|&b| b as u8).collect();
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EtaModel, CheckpointMeta)> {
    let store = ParamStore::load(path)?;
    let meta = read_meta(&store)?;
    let model = EtaModel::from_params(&meta.model, &store)?;
    Ok((model, meta))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::harness::dataset::{collect_dataset, CollectOptions};
    use crate::world::{make_scenario, CameraModel, ExpertConfig, ScenarioKind};

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            dim: 8,
            heads: 2,
            large_depth: 3,
            decoder_depth: 1,
            forecast_depth: 1,
            ..ModelConfig::default()
        }
    }

    fn samples() -> Vec<Sample> {
        let opts = CollectOptions {
            delta_ticks: 5,
            max_ticks: Some(12),
            camera: CameraModel::default(),
            expert: ExpertConfig::default(),
            config_hash: String::new(),
            seed: 0,
        };
        collect_dataset(&[make_scenario(ScenarioKind::HardBrake, 0)], &opts)
            .unwrap()
            .samples
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let s = samples();
        let cfg = TrainConfig {
            steps: Some(3),
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&s, Mode::Full, &tiny_model(), &cfg).unwrap();
        let b = train(&s, Mode::Full, &tiny_model(), &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a
            .records
            .iter()
            .all(|r| r.loss.forecast.is_some() && r.loss.mask.is_some()));
    }

    #[test]
    fn objective_terms_per_mode() {
        let s = samples();
        let m = EtaModel::new(&tiny_model(), 1).unwrap();
        let w = LossWeights::default();
        let has = |mode| evaluate_loss(&m, &s[..2], mode, &w).unwrap();
        assert!(has(Mode::NoMask).mask.is_none());
        assert!(has(Mode::NoSmall).mask.is_none());
        assert!(has(Mode::NoForecast).forecast.is_none());
        assert!(has(Mode::Base).mask.is_some());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = EtaModel::new(&tiny_model(), 3).unwrap();
        let meta = CheckpointMeta {
            mode: Mode::Full,
            model: tiny_model(),
            config_hash: "abc".into(),
            seed: 3,
            steps: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &m, &meta).unwrap();
        let (back, meta2) = load_checkpoint(&p).unwrap();
        assert_eq!(meta2, meta);
        for ((n1, t1), (n2, t2)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }
}
