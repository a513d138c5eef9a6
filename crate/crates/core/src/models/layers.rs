//! Parameter initialization and the transformer building blocks shared by
//! every network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor, Var};

/// Registers freshly initialized parameters under a name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub std: f64,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, std: f64, prefix: &str) -> Self {
        Self {
            store,
            rng,
            std,
            prefix: prefix.to_string(),
        }
    }

    pub fn scoped<'b>(&'b mut self, name: &str) -> Init<'b> {
        Init {
            store: &mut *self.store,
            rng: &mut *self.rng,
            std: self.std,
            prefix: format!("{}.{}", self.prefix, name),
        }
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{}", self.prefix, leaf)
    }

    /// Normal draw rejected outside two standard deviations.
    fn truncated(&mut self) -> f64 {
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                return z * self.std;
            }
        }
    }

    pub fn normal(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.truncated()).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("finite init");
        self.store.insert(self.name(leaf), t).expect("unique parameter names")
    }

    pub fn zeros(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        self.store
            .insert(self.name(leaf), Tensor::zeros(shape))
            .expect("unique parameter names")
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut s = init.scoped(name);
        Self {
            w: s.normal("w", &[d_in, d_out]),
            b: s.zeros("b", &[d_out]),
        }
    }

    /// Both weight and bias start at zero.
    pub fn zero(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut s = init.scoped(name);
        Self {
            w: s.zeros("w", &[d_in, d_out]),
            b: s.zeros("b", &[d_out]),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, p: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.linear(g.param(p, self.w), g.param(p, self.b))
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub up: Linear,
    pub down: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, hidden: usize) -> Self {
        let mut s = init.scoped(name);
        Self {
            up: Linear::new(&mut s, "up", dim, hidden),
            down: Linear::new(&mut s, "down", hidden, dim),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, p: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.up.forward(g, p, x)?.gelu()?;
        self.down.forward(g, p, h)
    }
}

/// Multi-head attention with a fused query/key/value projection for
/// self-attention, or separate projections when attending to a memory.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub kv: Linear,
    pub out: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize) -> Self {
        let mut s = init.scoped(name);
        Self {
            q: Linear::new(&mut s, "q", dim, dim),
            kv: Linear::new(&mut s, "kv", dim, 2 * dim),
            out: Linear::new(&mut s, "out", dim, dim),
            dim,
            heads,
        }
    }

    /// `x` attends to `mem` under the given block-diagonal structure.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &ParamStore,
        x: Var<'g>,
        mem: Var<'g>,
        blocks: Option<(usize, usize)>,
    ) -> Result<Var<'g>> {
        let q = self.q.forward(g, p, x)?;
        let kv = self.kv.forward(g, p, mem)?;
        let k = kv.slice_cols(0, self.dim)?;
        let v = kv.slice_cols(self.dim, self.dim)?;
        let a = g.attention_blocked(q, k, v, self.heads, blocks)?;
        self.out.forward(g, p, a)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct Block {
    pub attn: Attention,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, hidden: usize) -> Self {
        let mut s = init.scoped(name);
        Self {
            attn: Attention::new(&mut s, "attn", dim, heads),
            mlp: Mlp::new(&mut s, "mlp", dim, hidden),
        }
    }

    /// `segment` restricts attention to consecutive groups of that many tokens.
    pub fn forward<'g>(&self, g: &'g Graph, p: &ParamStore, x: Var<'g>, segment: Option<usize>) -> Result<Var<'g>> {
        let h = x.layer_norm()?;
        let x = x.add(self.attn.forward(g, p, h, h, segment.map(|s| (s, s)))?)?;
        let h = x.layer_norm()?;
        x.add(self.mlp.forward(g, p, h)?)
    }
}

/// Row indices `[0; n], [1; n], ...` selecting one row per group of `n`.
pub fn repeat_index(groups: usize, n: usize) -> Vec<usize> {
    (0..groups).flat_map(|b| std::iter::repeat_n(b, n)).collect()
}

/// Row indices `0..n` repeated `groups` times.
pub fn tile_index(groups: usize, n: usize) -> Vec<usize> {
    (0..groups).flat_map(|_| 0..n).collect()
}
