use super::layers::{repeat_index, Block, Init, Linear};
use crate::tensor::{Graph, ParamStore, Result, TensorError, Var};

/// Rolls past large-encoder tokens forward in time, conditioned on the action
/// and conditioning observed with them.
///
/// The conditioning row of each sample is appended to every one of its tokens
/// along the feature axis, projected back to the model width and refined by a
/// short transformer. The output is a correction added to the input tokens;
/// its projection starts at zero, so an untrained forecaster is the identity.
#[derive(Clone, Debug)]
pub struct Forecaster {
    pub tokens: usize,
    pub proj: Linear,
    pub blocks: Vec<Block>,
    pub out: Linear,
}

impl Forecaster {
    pub fn new(
        init: &mut Init<'_>,
        dim: usize,
        cond_dim: usize,
        depth: usize,
        heads: usize,
        hidden: usize,
        tokens: usize,
    ) -> Self {
        Self {
            tokens,
            proj: Linear::new(init, "proj", dim + cond_dim, dim),
            blocks: (0..depth)
                .map(|i| Block::new(init, &format!("block{i}"), dim, heads, hidden))
                .collect(),
            out: Linear::zero(init, "out", dim, dim),
        }
    }

    /// `feat` is `[batch * tokens, D]`, `cond` is `[batch, cond_dim]`.
    pub fn forward<'g>(&self, g: &'g Graph, p: &ParamStore, feat: Var<'g>, cond: Var<'g>) -> Result<Var<'g>> {
        let batch = cond.shape()[0];
        if feat.shape()[0] != batch * self.tokens {
            return Err(TensorError::Dim {
                op: "forecast",
                lhs: feat.shape(),
                rhs: cond.shape(),
            });
        }
        let c = cond.gather_rows(&repeat_index(batch, self.tokens))?;
        let mut h = self.proj.forward(g, p, g.concat_cols(&[feat, c])?)?;
        for b in &self.blocks {
            h = b.forward(g, p, h, Some(self.tokens))?;
        }
        feat.add(self.out.forward(g, p, h.layer_norm()?)?)
    }
}
