use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            betas: (0.9, 0.95),
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Adam with decoupled weight decay: `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`,
/// decay only on parameters flagged for it.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new<T: Scalar>(cfg: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients accumulated in `store`.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::contract("optimizer state does not match parameter store"));
        }
        for p in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    step: self.step as usize + 1,
                    source: Box::new(Error::NonFinite {
                        op: format!("gradient of {}", p.name),
                    }),
                });
            }
        }
        self.step += 1;
        let (b1, b2) = self.cfg.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let shrink = if p.decay { 1.0 - lr * self.cfg.weight_decay } else { 1.0 };
            for (((x, g), mi), vi) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m).zip(v) {
                let g = g.as_f64();
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let upd = (*mi / c1) / ((*vi / c2).sqrt() + self.cfg.eps);
                *x = T::of(x.as_f64() * shrink - lr * upd);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one(p: f64, g: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new(vec![1], vec![p]).unwrap(), decay);
        s.get_mut(id).grad[0] = g;
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one(1.0, 1.0, false);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        opt.step(&mut s, 0.1).unwrap();
        assert!((s.iter().next().unwrap().value.data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut s = one(0.7, 0.0, true);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn decay_shrinks_geometrically() {
        let mut s = one(2.0, 0.0, true);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        for _ in 0..5 {
            opt.step(&mut s, 0.01).unwrap();
        }
        let want = 2.0 * (1.0f64 - 0.01 * 0.05).powi(5);
        assert!((s.iter().next().unwrap().value.data()[0] - want).abs() < 1e-12);

        let mut s = one(2.0, 0.0, false);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 0.01).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 2.0);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut s = one(0.3, 5.0, true);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.3);
    }

    #[test]
    fn non_finite_gradient_aborts_with_step() {
        let mut s = one(0.3, f64::NAN, true);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        assert!(matches!(opt.step(&mut s, 0.1), Err(Error::Diverged { step: 1, .. })));
    }
}
