//! Patch-transformer image encoder.
//!
//! The 64x32 frame is split into two 32x32 tiles, each tile into 4x4 patches
//! of 8x8 pixels. Tiles are encoded independently (block-diagonal attention)
//! and each tile's 4x4 token grid is mean-pooled 2x2, leaving 8 tokens.

use serde::{Deserialize, Serialize};

use super::layers::{tile_index, Block, Init, Linear};
use super::EncoderConfig;
use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};
use crate::world::render::{FrameTensor, CHANNELS};
use crate::world::PATCH;

pub const TILES: usize = 2;
/// Patches per tile side.
pub const GRID: usize = 4;
pub const TOKENS_PER_TILE: usize = GRID * GRID;
pub const TOKENS: usize = TILES * TOKENS_PER_TILE;
pub const POOLED_PER_TILE: usize = TOKENS_PER_TILE / 4;
pub const POOLED_TOKENS: usize = TILES * POOLED_PER_TILE;
pub const PATCH_FEATURES: usize = CHANNELS * PATCH * PATCH;
const TILE_PX: usize = GRID * PATCH;

/// Spatial origin of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Patch {
        tile: usize,
        row: usize,
        col: usize,
    },
    /// A 2x2 pooled cell; `row`/`col` index the pooled grid.
    Pooled {
        tile: usize,
        row: usize,
        col: usize,
    },
}

/// Token matrix with per-token provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub provenance: Vec<Provenance>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

pub fn patch_provenance() -> Vec<Provenance> {
    (0..TOKENS)
        .map(|t| Provenance::Patch {
            tile: t / TOKENS_PER_TILE,
            row: (t % TOKENS_PER_TILE) / GRID,
            col: t % GRID,
        })
        .collect()
}

pub fn pooled_provenance() -> Vec<Provenance> {
    (0..POOLED_TOKENS)
        .map(|t| Provenance::Pooled {
            tile: t / POOLED_PER_TILE,
            row: (t % POOLED_PER_TILE) / (GRID / 2),
            col: t % (GRID / 2),
        })
        .collect()
}

/// `[TOKENS, PATCH_FEATURES]` patch matrix. Token `t` covers tile
/// `t / 16`, patch row `(t % 16) / 4`, patch column `t % 4`; features are
/// ordered channel, pixel row, pixel column.
pub fn patchify(frame: &FrameTensor) -> Result<Tensor> {
    if frame.height != TILE_PX || frame.width != TILES * TILE_PX {
        return Err(TensorError::Dim {
            op: "patchify",
            lhs: vec![CHANNELS, frame.height, frame.width],
            rhs: vec![CHANNELS, TILE_PX, TILES * TILE_PX],
        });
    }
    let mut data = Vec::with_capacity(TOKENS * PATCH_FEATURES);
    for t in 0..TOKENS {
        let (tile, r, c) = (t / TOKENS_PER_TILE, (t % TOKENS_PER_TILE) / GRID, t % GRID);
        for ch in 0..CHANNELS {
            for py in 0..PATCH {
                for px in 0..PATCH {
                    data.push(frame.at(ch, r * PATCH + py, tile * TILE_PX + c * PATCH + px));
                }
            }
        }
    }
    Tensor::new(vec![TOKENS, PATCH_FEATURES], data)
}

/// Token index (within one frame) of mask cell `(row, col)` on the full
/// 4x8 patch grid.
pub fn grid_to_token(row: usize, col: usize) -> usize {
    (col / GRID) * TOKENS_PER_TILE + row * GRID + col % GRID
}

/// Rows of the per-frame token matrix in mask-grid (row-major) order.
pub fn grid_order() -> Vec<usize> {
    let cols = TILES * GRID;
    (0..GRID * cols).map(|i| grid_to_token(i / cols, i % cols)).collect()
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub embed: Linear,
    pub pos: ParamId,
    pub tile: ParamId,
    pub blocks: Vec<Block>,
}

/// Encoder activations for a batch of frames stacked along the token axis.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOut<'g> {
    /// `[batch * 32, D]`, per-patch tokens.
    pub pre: Var<'g>,
    /// `[batch * 8, D]` after pooling (or equal to `pre` when pooling is off).
    pub pooled: Var<'g>,
}

impl Encoder {
    pub fn new(init: &mut Init<'_>, cfg: EncoderConfig, mlp_hidden: usize) -> Self {
        let d = cfg.dim;
        Self {
            embed: Linear::new(init, "embed", PATCH_FEATURES, d),
            pos: init.normal("pos", &[TOKENS_PER_TILE, d]),
            tile: init.normal("tile", &[TILES, d]),
            blocks: (0..cfg.depth)
                .map(|i| Block::new(init, &format!("block{i}"), d, cfg.heads, mlp_hidden))
                .collect(),
            cfg,
        }
    }

    /// Encodes `batch` frames whose patch matrices are stacked in `patches`.
    pub fn forward<'g>(&self, g: &'g Graph, p: &ParamStore, patches: Var<'g>) -> Result<EncoderOut<'g>> {
        let n = patches.shape()[0];
        if !n.is_multiple_of(TOKENS) {
            return Err(TensorError::Dim {
                op: "encoder",
                lhs: patches.shape(),
                rhs: vec![TOKENS, PATCH_FEATURES],
            });
        }
        let batch = n / TOKENS;
        let pos = g
            .param(p, self.pos)
            .gather_rows(&tile_index(batch * TILES, TOKENS_PER_TILE))?;
        let tile_idx: Vec<usize> = (0..batch * TILES)
            .flat_map(|t| std::iter::repeat_n(t % TILES, TOKENS_PER_TILE))
            .collect();
        let tile = g.param(p, self.tile).gather_rows(&tile_idx)?;
        let mut x = self.embed.forward(g, p, patches)?.add(pos)?.add(tile)?;
        for b in &self.blocks {
            x = b.forward(g, p, x, Some(TOKENS_PER_TILE))?;
        }
        let pre = x.layer_norm()?;
        let pooled = if self.cfg.pool { pool(pre, batch)? } else { pre };
        Ok(EncoderOut { pre, pooled })
    }
}

/// Mean over each 2x2 block of every tile's 4x4 grid.
pub fn pool<'g>(x: Var<'g>, batch: usize) -> Result<Var<'g>> {
    let half = GRID / 2;
    let mut acc: Option<Var<'g>> = None;
    for dr in 0..2 {
        for dc in 0..2 {
            let idx: Vec<usize> = (0..batch * TILES)
                .flat_map(|bt| {
                    (0..half * half).map(move |q| {
                        let (pr, pc) = (q / half, q % half);
                        bt * TOKENS_PER_TILE + (2 * pr + dr) * GRID + 2 * pc + dc
                    })
                })
                .collect();
            let part = x.gather_rows(&idx)?;
            acc = Some(match acc {
                Some(a) => a.add(part)?,
                None => part,
            });
        }
    }
    acc.expect("four parts").scale(0.25)
}
