//! Parallel query decoder emitting the action residuals, with the
//! attention-score mask head.

use serde::{Deserialize, Serialize};

use super::encoder::{grid_order, TOKENS};
use super::layers::{tile_index, Attention, Init, Linear, Mlp};
use crate::tensor::{Graph, ParamId, ParamStore, Result, TensorError, Var};
use crate::world::ACTION_POINTS;

/// Which encoder produced the tokens a mask was scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSource {
    Small,
    Large,
}

/// `[batch, 32]` mask logits in patch-grid row-major order.
#[derive(Clone, Copy, Debug)]
pub struct MaskLogits<'g> {
    pub logits: Var<'g>,
    pub source: MaskSource,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attn: Attention,
    pub cross: Attention,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct ActionDecoder {
    pub dim: usize,
    pub queries: ParamId,
    pub cond: Linear,
    /// Embedding per memory segment: conditioning token, then each grid.
    pub segments: ParamId,
    pub blocks: Vec<DecoderBlock>,
    pub head: Linear,
    pub mask_q: Linear,
    pub mask_k: Linear,
    pub mask_bias: ParamId,
}

/// Largest number of token grids the decoder fuses.
pub const MAX_GRIDS: usize = 2;

impl ActionDecoder {
    pub fn new(init: &mut Init<'_>, dim: usize, cond_dim: usize, depth: usize, heads: usize, hidden: usize) -> Self {
        Self {
            dim,
            queries: init.normal("queries", &[ACTION_POINTS, dim]),
            cond: Linear::new(init, "cond", cond_dim, dim),
            segments: init.normal("segments", &[1 + MAX_GRIDS, dim]),
            blocks: (0..depth)
                .map(|i| {
                    let mut s = init.scoped(&format!("block{i}"));
                    DecoderBlock {
                        self_attn: Attention::new(&mut s, "self", dim, heads),
                        cross: Attention::new(&mut s, "cross", dim, heads),
                        mlp: Mlp::new(&mut s, "mlp", dim, hidden),
                    }
                })
                .collect(),
            head: Linear::zero(init, "head", dim, 2),
            mask_q: Linear::new(init, "mask_q", dim, dim),
            mask_k: Linear::new(init, "mask_k", dim, dim),
            mask_bias: init.zeros("mask_bias", &[1]),
        }
    }

    /// Per-sample memory `[cond; grid_0; grid_1; ...]` stacked over the batch.
    fn memory<'g>(&self, g: &'g Graph, p: &ParamStore, grids: &[Var<'g>], cond: Var<'g>) -> Result<(Var<'g>, usize)> {
        let batch = cond.shape()[0];
        if grids.is_empty() || grids.len() > MAX_GRIDS {
            return Err(TensorError::Contract(format!(
                "action decoder fuses 1..={MAX_GRIDS} grids, got {}",
                grids.len()
            )));
        }
        let per = grids[0].shape()[0] / batch;
        for grid in grids {
            let s = grid.shape();
            if s[0] != per * batch || s[1] != self.dim {
                return Err(TensorError::Dim {
                    op: "action decoder",
                    lhs: grids[0].shape(),
                    rhs: s,
                });
            }
        }
        let c = self.cond.forward(g, p, cond)?;
        let mut parts = vec![c];
        parts.extend_from_slice(grids);
        let all = g.concat_rows(&parts)?;
        let m = 1 + per * grids.len();
        let mut index = Vec::with_capacity(batch * m);
        let mut seg = Vec::with_capacity(batch * m);
        for s in 0..batch {
            index.push(s);
            seg.push(0);
            for k in 0..grids.len() {
                let base = batch + k * per * batch + s * per;
                index.extend(base..base + per);
                seg.extend(std::iter::repeat_n(k + 1, per));
            }
        }
        let mem = all
            .gather_rows(&index)?
            .add(g.param(p, self.segments).gather_rows(&seg)?)?;
        Ok((mem.layer_norm()?, m))
    }

    /// Returns `[batch * 14, 2]` residuals and, when `mask_tokens`
    /// (`[batch * 32, D]`) is given, the mask logits against those tokens.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &ParamStore,
        grids: &[Var<'g>],
        cond: Var<'g>,
        mask_tokens: Option<(Var<'g>, MaskSource)>,
    ) -> Result<(Var<'g>, Option<MaskLogits<'g>>)> {
        let batch = cond.shape()[0];
        let (mem, m) = self.memory(g, p, grids, cond)?;
        let nq = ACTION_POINTS;
        let mut q = g.param(p, self.queries).gather_rows(&tile_index(batch, nq))?;
        for b in &self.blocks {
            let h = q.layer_norm()?;
            q = q.add(b.self_attn.forward(g, p, h, h, Some((nq, nq)))?)?;
            let h = q.layer_norm()?;
            q = q.add(b.cross.forward(g, p, h, mem, Some((nq, m)))?)?;
            let h = q.layer_norm()?;
            q = q.add(b.mlp.forward(g, p, h)?)?;
        }
        let out = q.layer_norm()?;
        let residuals = self.head.forward(g, p, out)?;
        let mask = match mask_tokens {
            Some((tokens, source)) => Some(MaskLogits {
                logits: self.mask_logits(g, p, out, tokens, batch)?,
                source,
            }),
            None => None,
        };
        Ok((residuals, mask))
    }

    /// Scaled dot products between each action query and each patch token,
    /// maximized over queries.
    fn mask_logits<'g>(
        &self,
        g: &'g Graph,
        p: &ParamStore,
        out: Var<'g>,
        tokens: Var<'g>,
        batch: usize,
    ) -> Result<Var<'g>> {
        if tokens.shape()[0] != batch * TOKENS {
            return Err(TensorError::Dim {
                op: "mask head",
                lhs: tokens.shape(),
                rhs: vec![batch * TOKENS, self.dim],
            });
        }
        let qm = self.mask_q.forward(g, p, out)?;
        let km = self.mask_k.forward(g, p, tokens)?;
        let order = grid_order();
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut rows = Vec::with_capacity(batch);
        for s in 0..batch {
            let qs = qm.gather_rows(&(s * ACTION_POINTS..(s + 1) * ACTION_POINTS).collect::<Vec<_>>())?;
            let ks = km.gather_rows(&order.iter().map(|&t| s * TOKENS + t).collect::<Vec<_>>())?;
            rows.push(qs.matmul(ks.transpose()?)?.max_rows()?);
        }
        g.concat_rows(&rows)?.scale(scale)?.add(g.param(p, self.mask_bias))
    }
}
