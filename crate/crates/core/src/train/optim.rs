use super::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Rectified Adam.
///
/// `ρ_∞ = 2/(1-β2) - 1`, `ρ_t = ρ_∞ - 2tβ2ᵗ/(1-β2ᵗ)`. While `ρ_t ≤ 4` the
/// update is the bias-corrected momentum `θ -= lr·m̂`; afterwards
/// `θ -= lr·r_t·m̂/(√v̂ + eps)` with
/// `r_t = √((ρ_t-4)(ρ_t-2)ρ_∞ / ((ρ_∞-4)(ρ_∞-2)ρ_t))`.
#[derive(Clone, Debug)]
pub struct RAdam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> RAdam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        RAdam { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn from_config(cfg: &TrainConfig, params: &ParamStore<F>) -> Self {
        Self::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, params)
    }

    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powf(t as f64);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Applies one update from the accumulated gradients in `params`.
    pub fn step(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::usage("optimizer state does not match the parameter store"));
        }
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::usage(format!("no gradient for parameter {}", p.name)));
        }
        self.t += 1;
        let t = self.t as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let rho_inf = self.rho_inf();
        let rho_t = self.rho(self.t);
        let rect = if rho_t > 4.0 {
            Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
        } else {
            None
        };
        let inv_bc1 = 1.0 / bc1;
        let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.as_ref().expect("checked above");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((theta, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi.as_f64();
                let mn = b1 * mi.as_f64() + (1.0 - b1) * gi;
                let vn = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
                *mi = F::lit(mn);
                *vi = F::lit(vn);
                let m_hat = mn * inv_bc1;
                let delta = match rect {
                    Some(r) => self.lr * r * m_hat / (vn.sqrt() * inv_sqrt_bc2 + self.eps),
                    None => self.lr * m_hat,
                };
                *theta = F::lit(theta.as_f64() - delta);
            }
        }
        Ok(())
    }
}

/// `φ ← φ + α(θ - φ)`, then `θ ← φ`, element-wise.
pub fn lookahead_sync<F: Scalar>(theta: &mut [F], slow: &mut [F], alpha: f64) {
    let a = F::lit(alpha);
    for (t, s) in theta.iter_mut().zip(slow.iter_mut()) {
        *s = *s + a * (*t - *s);
        *t = *s;
    }
}

/// LookAhead wrapper state: slow weights synced every `k` inner steps.
#[derive(Clone, Debug)]
pub struct Lookahead<F> {
    pub k: usize,
    pub alpha: f64,
    pub counter: usize,
    pub slow: Vec<Tensor<F>>,
}

impl<F: Scalar> Lookahead<F> {
    pub fn new(k: usize, alpha: f64, params: &ParamStore<F>) -> Self {
        Lookahead { k, alpha, counter: 0, slow: params.iter().map(|p| p.value.clone()).collect() }
    }

    /// Call after every inner optimizer step. Returns true when a sync happened.
    pub fn after_step(&mut self, params: &mut ParamStore<F>) -> bool {
        self.counter += 1;
        if self.counter < self.k {
            return false;
        }
        self.counter = 0;
        for (p, s) in params.iter_mut().zip(&mut self.slow) {
            lookahead_sync(p.value.data_mut(), s.data_mut(), self.alpha);
        }
        true
    }
}

/// RAdam as the inner optimizer of LookAhead.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub radam: RAdam<F>,
    pub lookahead: Lookahead<F>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(cfg: &TrainConfig, params: &ParamStore<F>) -> Self {
        Optimizer {
            radam: RAdam::from_config(cfg, params),
            lookahead: Lookahead::new(cfg.lookahead_k, cfg.lookahead_alpha, params),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        self.radam.step(params)?;
        self.lookahead.after_step(params);
        Ok(())
    }
}
