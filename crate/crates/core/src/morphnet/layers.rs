//! Parameterized building blocks shared by the morphing network and the
//! fluency language model.

use rand::Rng;

use crate::error::Result;
use crate::tensorcore::{ParamId, ParamStore, Tape, Tensor, Var};

/// Registers uniformly initialized parameters.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub scale: f64,
}

impl<R: Rng> Init<'_, R> {
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::uniform(shape, self.scale, self.rng);
        self.store.add(name, t)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// u  = σ(W_u [x, h] + b_u)
/// r  = σ(W_r [x, h] + b_r)
/// h~ = tanh(W_h [x, r ⊙ h] + b_h)
/// h' = (1 - u) ⊙ h + u ⊙ h~
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_cand: ParamId,
    pub bias: Option<[ParamId; 3]>,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn register<R: Rng>(
        init: &mut Init<'_, R>,
        prefix: &str,
        input: usize,
        hidden: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let shape = [hidden, input + hidden];
        let w_update = init.param(&format!("{prefix}.w_update"), &shape)?;
        let w_reset = init.param(&format!("{prefix}.w_reset"), &shape)?;
        let w_cand = init.param(&format!("{prefix}.w_cand"), &shape)?;
        let bias = if with_bias {
            Some([
                init.param(&format!("{prefix}.b_update"), &[hidden])?,
                init.param(&format!("{prefix}.b_reset"), &[hidden])?,
                init.param(&format!("{prefix}.b_cand"), &[hidden])?,
            ])
        } else {
            None
        };
        Ok(Gru { w_update, w_reset, w_cand, bias, input, hidden })
    }

    /// Resolves the parameters by name in an existing store.
    pub fn lookup(store: &ParamStore, prefix: &str, with_bias: bool) -> Option<Self> {
        let get = |n: &str| store.id(&format!("{prefix}.{n}"));
        let w_update = get("w_update")?;
        let shape = store.get(w_update).shape().to_vec();
        let hidden = shape[0];
        let bias = if with_bias {
            Some([get("b_update")?, get("b_reset")?, get("b_cand")?])
        } else {
            None
        };
        Some(Gru {
            w_update,
            w_reset: get("w_reset")?,
            w_cand: get("w_cand")?,
            bias,
            input: shape[1] - hidden,
            hidden,
        })
    }

    fn affine(&self, tape: &mut Tape, w: ParamId, bias: Option<ParamId>, x: Var) -> Result<Var> {
        let wv = tape.param(w);
        let y = tape.matmul(wv, x)?;
        match bias {
            Some(b) => {
                let bv = tape.param(b);
                tape.add(y, bv)
            }
            None => Ok(y),
        }
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let (bu, br, bh) = match self.bias {
            Some([u, r, c]) => (Some(u), Some(r), Some(c)),
            None => (None, None, None),
        };
        let xh = tape.concat(&[x, h])?;
        let u = self.affine(tape, self.w_update, bu, xh)?;
        let u = tape.sigmoid(u)?;
        let r = self.affine(tape, self.w_reset, br, xh)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat(&[x, rh])?;
        let cand = self.affine(tape, self.w_cand, bh, xrh)?;
        let cand = tape.tanh(cand)?;
        gated_mix(tape, u, h, cand)
    }
}

/// `(1 - gate) ⊙ prev + gate ⊙ cand`.
pub fn gated_mix(tape: &mut Tape, gate: Var, prev: Var, cand: Var) -> Result<Var> {
    let n = tape.shape(gate)[0];
    let ones = tape.vector(vec![1.0; n])?;
    let keep = tape.sub(ones, gate)?;
    let kept = tape.mul(keep, prev)?;
    let fresh = tape.mul(gate, cand)?;
    tape.add(kept, fresh)
}

/// Additive attention score `v · tanh(W [a ⊕ b])`, with `W` stored as two
/// column blocks so the `a` half can be precomputed once per sequence.
#[derive(Clone, Debug)]
pub struct AdditiveScore {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub v: ParamId,
}

impl AdditiveScore {
    pub fn register<R: Rng>(
        init: &mut Init<'_, R>,
        prefix: &str,
        key_dim: usize,
        query_dim: usize,
        attn_dim: usize,
    ) -> Result<Self> {
        Ok(AdditiveScore {
            w_key: init.param(&format!("{prefix}.w_key"), &[attn_dim, key_dim])?,
            w_query: init.param(&format!("{prefix}.w_query"), &[attn_dim, query_dim])?,
            v: init.param(&format!("{prefix}.v"), &[attn_dim])?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Option<Self> {
        Some(AdditiveScore {
            w_key: store.id(&format!("{prefix}.w_key"))?,
            w_query: store.id(&format!("{prefix}.w_query"))?,
            v: store.id(&format!("{prefix}.v"))?,
        })
    }

    pub fn project_key(&self, tape: &mut Tape, key: Var) -> Result<Var> {
        let w = tape.param(self.w_key);
        tape.matmul(w, key)
    }

    pub fn project_query(&self, tape: &mut Tape, query: Var) -> Result<Var> {
        let w = tape.param(self.w_query);
        tape.matmul(w, query)
    }

    /// Softmax-normalized weights over the projected keys.
    pub fn weights(&self, tape: &mut Tape, keys: &[Var], query: Var) -> Result<Var> {
        let v = tape.param(self.v);
        let mut scores = Vec::with_capacity(keys.len());
        for &k in keys {
            let pre = tape.add(k, query)?;
            let act = tape.tanh(pre)?;
            scores.push(tape.dot(v, act)?);
        }
        let scores = tape.concat(&scores)?;
        tape.softmax(scores)
    }
}
