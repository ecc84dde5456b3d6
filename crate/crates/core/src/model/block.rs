use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::numerics::{AttnLayout, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Glorot-uniform `[fan_in × fan_out]` matrix.
pub(crate) fn xavier<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("finite by construction")
}

pub(crate) fn filled<T: Scalar>(n: usize, v: f64) -> Tensor<T> {
    Tensor::new(vec![n], vec![T::of(v); n]).expect("finite by construction")
}

/// Parameters of a linear map `x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, fan_in, fan_out), true);
        let b = bias.then(|| store.add(format!("{name}.b"), filled(fan_out, 0.0), false));
        Linear { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.affine(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), filled(dim, 1.0), false),
            beta: store.add(format!("{name}.beta"), filled(dim, 0.0), false),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        eps: f64,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, eps)
    }
}

/// Pre-norm transformer block:
/// `h = x + W_o·attn(LN₁(x))`, `out = h + W₂·gelu(W₁·LN₂(h))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformerBlock {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = dim * mlp_ratio;
        TransformerBlock {
            ln1: Norm::register(store, &format!("{name}.ln1"), dim),
            q: Linear::register(store, &format!("{name}.q"), dim, dim, true, rng),
            // A key bias shifts every score of a query equally and has zero gradient.
            k: Linear::register(store, &format!("{name}.k"), dim, dim, false, rng),
            v: Linear::register(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::register(store, &format!("{name}.o"), dim, dim, true, rng),
            ln2: Norm::register(store, &format!("{name}.ln2"), dim),
            fc1: Linear::register(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::register(store, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        layout: &Arc<AttnLayout>,
        eps: f64,
    ) -> Result<Var> {
        let n = self.ln1.forward(tape, store, x, eps)?;
        let q = self.q.forward(tape, store, n)?;
        let k = self.k.forward(tape, store, n)?;
        let v = self.v.forward(tape, store, n)?;
        let a = tape.attention(q, k, v, Arc::clone(layout))?;
        let a = self.o.forward(tape, store, a)?;
        let h = tape.add(x, a)?;
        let n = self.ln2.forward(tape, store, h, eps)?;
        let m = self.fc1.forward(tape, store, n)?;
        let m = tape.gelu(m)?;
        let m = self.fc2.forward(tape, store, m)?;
        tape.add(h, m)
    }
}
