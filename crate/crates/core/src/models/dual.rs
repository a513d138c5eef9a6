//! Wiring of the four networks for every mode, for batched training and for
//! the per-tick reactive path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{ActionDecoder, MaskLogits, MaskSource};
use super::encoder::{patch_provenance, pooled_provenance, Encoder, TokenGrid, POOLED_TOKENS, TOKENS};
use super::forecast::Forecaster;
use super::layers::Init;
use super::{Mode, ModelConfig, COND_DIM, FORECAST_COND_DIM};
use crate::tensor::{Graph, ParamStore, Result, Tensor, TensorError, Var};
use crate::world::{ActionPlan, ACTION_POINTS};

#[derive(Clone, Debug)]
pub struct EtaModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub large: Encoder,
    pub small: Encoder,
    pub forecast: Forecaster,
    pub action: ActionDecoder,
}

/// Training inputs for `size` samples, stacked along the row axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `[size * 32, 256]` patches of the current frames.
    pub now: Tensor,
    /// `[size * 32, 256]` patches of the frames `Δ` earlier.
    pub prev: Tensor,
    /// `[size, COND_DIM]`.
    pub cond_now: Tensor,
    /// `[size, FORECAST_COND_DIM]`: the action and conditioning at `t - Δ`.
    pub forecast_cond: Tensor,
    /// `[size * 14, 2]` expert residuals at `t`.
    pub target: Tensor,
    /// `[size, 32]` ground-truth patch mask at `t`, grid order.
    pub mask: Tensor,
}

/// Graph handles for a [`Batch`].
#[derive(Clone, Copy, Debug)]
pub struct BatchVars<'g> {
    pub now: Var<'g>,
    pub prev: Var<'g>,
    pub cond_now: Var<'g>,
    pub forecast_cond: Var<'g>,
}

impl Batch {
    pub fn constants<'g>(&self, g: &'g Graph) -> BatchVars<'g> {
        BatchVars {
            now: g.constant(self.now.clone()),
            prev: g.constant(self.prev.clone()),
            cond_now: g.constant(self.cond_now.clone()),
            forecast_cond: g.constant(self.forecast_cond.clone()),
        }
    }
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward<'g> {
    pub residuals: Var<'g>,
    pub mask: Option<MaskLogits<'g>>,
    /// Forecast and its gradient-opaque target, when the mode forecasts.
    pub forecast: Option<(Var<'g>, Var<'g>)>,
}

/// Per-tick inputs of the reactive path. `stale_large` is the pooled large
/// feature grid of the frame `Δ` old; modes that encode the current frame
/// synchronously ignore it.
#[derive(Clone, Copy, Debug)]
pub struct ReactiveInputs<'a> {
    pub now: &'a Tensor,
    pub stale_large: Option<&'a Tensor>,
    pub forecast_cond: &'a [f64],
    pub cond_now: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactiveOutput {
    /// 28 residual components, point-major.
    pub residuals: Vec<f64>,
    /// 32 mask logits in grid order.
    pub mask_logits: Option<Vec<f64>>,
    pub mask_source: Option<MaskSource>,
}

impl ReactiveOutput {
    pub fn plan(&self) -> std::result::Result<ActionPlan, crate::world::WorldError> {
        ActionPlan::from_residual_slice(&self.residuals)
    }
}

impl EtaModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate().map_err(TensorError::Contract)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = cfg.dim * cfg.mlp_ratio;
        let (large, small, forecast, action) = {
            let mut init = Init::new(&mut params, &mut rng, cfg.init_std, "large");
            let large = Encoder::new(&mut init, cfg.large(), hidden);
            let mut init = Init::new(init.store, init.rng, cfg.init_std, "small");
            let small = Encoder::new(&mut init, cfg.small(), hidden);
            let mut init = Init::new(init.store, init.rng, cfg.init_std, "forecast");
            let forecast = Forecaster::new(
                &mut init,
                cfg.dim,
                FORECAST_COND_DIM,
                cfg.forecast_depth,
                cfg.heads,
                hidden,
                POOLED_TOKENS,
            );
            let mut init = Init::new(init.store, init.rng, cfg.init_std, "action");
            let action = ActionDecoder::new(&mut init, cfg.dim, COND_DIM, cfg.decoder_depth, cfg.heads, hidden);
            (large, small, forecast, action)
        };
        Ok(Self {
            cfg: cfg.clone(),
            params,
            large,
            small,
            forecast,
            action,
        })
    }

    /// Builds the architecture for `cfg` and loads `store` into it.
    pub fn from_params(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.assign_from(store)?;
        Ok(m)
    }

    /// Forward pass for training or batched evaluation.
    ///
    /// With `with_target` set, modes that forecast also encode the current
    /// frame with the large encoder behind a stop-gradient, as the target.
    pub fn forward<'g>(&self, g: &'g Graph, x: BatchVars<'g>, mode: Mode, with_target: bool) -> Result<Forward<'g>> {
        let target = if with_target && mode.training_mode().uses_forecaster() {
            Some(self.large.forward(g, &self.params, x.now)?.pooled.stop_grad())
        } else {
            None
        };
        self.forward_with_target(g, x, mode, target)
    }

    /// [`EtaModel::forward`] with the forecast target supplied by the caller;
    /// it is returned alongside the forecast unchanged.
    pub fn forward_with_target<'g>(
        &self,
        g: &'g Graph,
        x: BatchVars<'g>,
        mode: Mode,
        target: Option<Var<'g>>,
    ) -> Result<Forward<'g>> {
        let p = &self.params;
        let mode = mode.training_mode();
        let small = if mode.uses_small() {
            Some(self.small.forward(g, p, x.now)?)
        } else {
            None
        };
        let mut forecast = None;
        let (grids, mask_tokens) = match mode {
            Mode::Full | Mode::NoMask | Mode::NoSmall => {
                let stale = self.large.forward(g, p, x.prev)?;
                let pred = self.forecast.forward(g, p, stale.pooled, x.forecast_cond)?;
                forecast = target.map(|gt| (pred, gt));
                match small {
                    Some(s) => (vec![pred, s.pooled], Some((s.pre, MaskSource::Small))),
                    None => (vec![pred], None),
                }
            }
            Mode::NoForecast => {
                let stale = self.large.forward(g, p, x.prev)?;
                let s = small.expect("mode uses small");
                (vec![stale.pooled, s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::SmallOnly => {
                let s = small.expect("mode uses small");
                (vec![s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::GtForecast | Mode::GtForecastTestOnly => {
                let cur = self.large.forward(g, p, x.now)?;
                let s = small.expect("mode uses small");
                (vec![cur.pooled, s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::Base => {
                let cur = self.large.forward(g, p, x.now)?;
                (vec![cur.pooled], Some((cur.pre, MaskSource::Large)))
            }
        };
        let (residuals, mask) = self.action.forward(g, p, &grids, x.cond_now, mask_tokens)?;
        Ok(Forward {
            residuals,
            mask,
            forecast,
        })
    }

    /// Pooled large features for each frame's patch matrix, batched.
    pub fn encode_large_batch(&self, patches: &[&Tensor]) -> Result<Vec<Tensor>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let parts: Vec<Var<'_>> = patches.iter().map(|t| g.constant((*t).clone())).collect();
        let x = g.concat_rows(&parts)?;
        let out = self.large.forward(&g, &self.params, x)?.pooled.value();
        let d = self.cfg.dim;
        Ok(out
            .data()
            .chunks(POOLED_TOKENS * d)
            .map(|c| Tensor::new(vec![POOLED_TOKENS, d], c.to_vec()).expect("finite"))
            .collect())
    }

    pub fn encode_large(&self, patches: &Tensor) -> Result<(TokenGrid, TokenGrid)> {
        self.encode_grids(&self.large, patches)
    }

    pub fn encode_small(&self, patches: &Tensor) -> Result<(TokenGrid, TokenGrid)> {
        self.encode_grids(&self.small, patches)
    }

    fn encode_grids(&self, enc: &Encoder, patches: &Tensor) -> Result<(TokenGrid, TokenGrid)> {
        let g = Graph::new();
        let out = enc.forward(&g, &self.params, g.constant(patches.clone()))?;
        Ok((
            TokenGrid {
                tokens: out.pre.value(),
                provenance: patch_provenance(),
            },
            TokenGrid {
                tokens: out.pooled.value(),
                provenance: pooled_provenance(),
            },
        ))
    }

    /// Forecast of the current large features from a past pooled grid.
    pub fn forecast_grid(&self, past: &TokenGrid, forecast_cond: &[f64]) -> Result<TokenGrid> {
        let g = Graph::new();
        let c = g.constant(Tensor::new(vec![1, forecast_cond.len()], forecast_cond.to_vec())?);
        let out = self
            .forecast
            .forward(&g, &self.params, g.constant(past.tokens.clone()), c)?;
        Ok(TokenGrid {
            tokens: out.value(),
            provenance: past.provenance.clone(),
        })
    }

    /// The per-tick computation after the large features are available.
    pub fn reactive(&self, mode: Mode, x: ReactiveInputs<'_>) -> Result<ReactiveOutput> {
        let g = Graph::new();
        let p = &self.params;
        let now = g.constant(x.now.clone());
        let cond = g.constant(Tensor::new(vec![1, x.cond_now.len()], x.cond_now.to_vec())?);
        let stale = || -> Result<Var<'_>> {
            let t = x
                .stale_large
                .ok_or_else(|| TensorError::Contract(format!("mode {mode} needs stale large features")))?;
            Ok(g.constant(t.clone()))
        };
        let small = if mode.uses_small() {
            Some(self.small.forward(&g, p, now)?)
        } else {
            None
        };
        let (grids, mask_tokens) = match mode {
            Mode::Full | Mode::NoMask | Mode::NoSmall => {
                let fc = g.constant(Tensor::new(vec![1, x.forecast_cond.len()], x.forecast_cond.to_vec())?);
                let pred = self.forecast.forward(&g, p, stale()?, fc)?;
                match small {
                    Some(s) => (vec![pred, s.pooled], Some((s.pre, MaskSource::Small))),
                    None => (vec![pred], None),
                }
            }
            Mode::NoForecast => {
                let s = small.expect("mode uses small");
                (vec![stale()?, s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::SmallOnly => {
                let s = small.expect("mode uses small");
                (vec![s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::GtForecast | Mode::GtForecastTestOnly => {
                let cur = self.large.forward(&g, p, now)?;
                let s = small.expect("mode uses small");
                (vec![cur.pooled, s.pooled], Some((s.pre, MaskSource::Small)))
            }
            Mode::Base => {
                let cur = self.large.forward(&g, p, now)?;
                (vec![cur.pooled], Some((cur.pre, MaskSource::Large)))
            }
        };
        let (res, mask) = self.action.forward(&g, p, &grids, cond, mask_tokens)?;
        Ok(ReactiveOutput {
            residuals: res.value().into_data(),
            mask_logits: mask.map(|m| m.logits.value().into_data()),
            mask_source: mask.map(|m| m.source),
        })
    }
}

/// Shape checks shared by tests and callers assembling batches by hand.
pub fn check_batch(b: &Batch) -> Result<()> {
    let expect = [
        (&b.now, vec![b.size * TOKENS, super::encoder::PATCH_FEATURES]),
        (&b.prev, vec![b.size * TOKENS, super::encoder::PATCH_FEATURES]),
        (&b.cond_now, vec![b.size, COND_DIM]),
        (&b.forecast_cond, vec![b.size, FORECAST_COND_DIM]),
        (&b.target, vec![b.size * ACTION_POINTS, 2]),
        (&b.mask, vec![b.size, TOKENS]),
    ];
    for (t, shape) in expect {
        if t.shape() != shape.as_slice() {
            return Err(TensorError::Dim {
                op: "batch",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
    }
    Ok(())
}
