//! Affine coupling blocks interleaved with fixed coordinate permutations.
//!
//! A block splits its input `v` into `a = v[..h]` (`h = ceil(D/2)`) and
//! `b = v[h..]`, then
//!
//! ```text
//! a' = a * exp(clamp(s1(b))) + t1(b)
//! b' = b * exp(clamp(s2(a'))) + t2(a')
//! ```
//!
//! where `clamp(s) = alpha * tanh(s / alpha)`, and finally permutes the
//! columns of `[a' | b']`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{BoundMlp, Mlp};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// A column permutation with its stored inverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (j, &p) in forward.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::InvalidInput(format!(
                    "{forward:?} is not a permutation"
                )));
            }
            inverse[p] = j;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect()).expect("identity")
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        forward.shuffle(rng);
        Self::new(forward).expect("shuffle is a bijection")
    }

    /// `out[j] = in[forward[j]]`.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingBlock {
    /// passive half -> (log-scale, shift) of the active half
    pub first: Mlp,
    /// updated active half -> (log-scale, shift) of the passive half
    pub second: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingStack {
    pub dim: usize,
    pub soft_clamp_alpha: f64,
    pub blocks: Vec<CouplingBlock>,
    pub perms: Vec<Permutation>,
}

#[derive(Debug, Clone)]
pub struct BoundStack {
    blocks: Vec<(BoundMlp, BoundMlp)>,
}

impl BoundStack {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.blocks
            .iter()
            .flat_map(|(a, b)| a.vars().chain(b.vars()))
    }
}

impl CouplingStack {
    pub fn new(
        dim: usize,
        n_blocks: usize,
        depth: usize,
        width: usize,
        soft_clamp_alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "coupling needs at least 2 dimensions, got {dim}"
            )));
        }
        if n_blocks == 0 {
            return Err(Error::Config("need at least one coupling block".into()));
        }
        let active = dim.div_ceil(2);
        let passive = dim - active;
        let blocks = (0..n_blocks)
            .map(|_| CouplingBlock {
                first: Mlp::new(passive, 2 * active, depth, width, rng),
                second: Mlp::new(active, 2 * passive, depth, width, rng),
            })
            .collect();
        let perms = (0..n_blocks)
            .map(|_| Permutation::random(dim, rng))
            .collect();
        Ok(Self {
            dim,
            soft_clamp_alpha,
            blocks,
            perms,
        })
    }

    fn split(&self) -> usize {
        self.dim.div_ceil(2)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundStack {
        BoundStack {
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.first.bind(g, trainable), b.second.bind(g, trainable)))
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.blocks
            .iter()
            .flat_map(|b| b.first.tensors().chain(b.second.tensors()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.first.tensors_mut().chain(b.second.tensors_mut()))
    }

    /// Log-scale and shift for a half of width `w` from subnet output.
    fn scale_shift(&self, g: &mut Graph, st: Var, w: usize) -> Result<(Var, Var)> {
        let raw = g.slice_cols(st, 0, w)?;
        let shift = g.slice_cols(st, w, 2 * w)?;
        let alpha = self.soft_clamp_alpha;
        let u = g.scale(raw, 1.0 / alpha);
        let th = g.tanh(u);
        Ok((g.scale(th, alpha), shift))
    }

    /// Maps `[n, dim]` rows through every block. Clamped log-scales are
    /// pushed onto `trace` when given.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundStack,
        x: Var,
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Var> {
        let h = self.split();
        let mut v = x;
        for (idx, ((first, second), perm)) in bound.blocks.iter().zip(&self.perms).enumerate() {
            let a = g.slice_cols(v, 0, h)?;
            let b = g.slice_cols(v, h, self.dim)?;
            let st = first.forward(g, b)?;
            let (s, t) = self.scale_shift(g, st, h)?;
            let es = g.exp(s);
            let a_scaled = g.mul(a, es)?;
            let a2 = g.add(a_scaled, t)?;
            let st2 = second.forward(g, a2)?;
            let (s2, t2) = self.scale_shift(g, st2, self.dim - h)?;
            let es2 = g.exp(s2);
            let b_scaled = g.mul(b, es2)?;
            let b2 = g.add(b_scaled, t2)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(g.value(s).clone());
                tr.push(g.value(s2).clone());
            }
            let joined = g.concat(&[a2, b2])?;
            v = g.permute_columns(joined, perm.forward())?;
            if !g.value(v).all_finite() {
                return Err(Error::NonFinite {
                    direction: "forward",
                    block: idx,
                });
            }
        }
        Ok(v)
    }

    /// Exact inverse of [`CouplingStack::forward`].
    pub fn inverse(&self, g: &mut Graph, bound: &BoundStack, y: Var) -> Result<Var> {
        let h = self.split();
        let mut v = y;
        for (idx, ((first, second), perm)) in bound.blocks.iter().zip(&self.perms).enumerate().rev()
        {
            let joined = g.permute_columns(v, perm.inverse())?;
            let a2 = g.slice_cols(joined, 0, h)?;
            let b2 = g.slice_cols(joined, h, self.dim)?;
            let st2 = second.forward(g, a2)?;
            let (s2, t2) = self.scale_shift(g, st2, self.dim - h)?;
            let b_shifted = g.sub(b2, t2)?;
            let neg = g.scale(s2, -1.0);
            let inv_s2 = g.exp(neg);
            let b = g.mul(b_shifted, inv_s2)?;
            let st = first.forward(g, b)?;
            let (s, t) = self.scale_shift(g, st, h)?;
            let a_shifted = g.sub(a2, t)?;
            let neg = g.scale(s, -1.0);
            let inv_s = g.exp(neg);
            let a = g.mul(a_shifted, inv_s)?;
            v = g.concat(&[a, b])?;
            if !g.value(v).all_finite() {
                return Err(Error::NonFinite {
                    direction: "inverse",
                    block: idx,
                });
            }
        }
        Ok(v)
    }
}
