//! The training optimizer: an adaptive-moment method with Nesterov-style
//! momentum correction, wrapped in a slow/fast-weight lookahead scheme.
//!
//! The inner update keeps first and second moment estimates per parameter
//! and applies the Nesterov correction through a decaying momentum
//! schedule; the wrapper keeps a second "slow" copy of the weights and
//! every `k` steps pulls it a fraction `alpha` toward the fast weights,
//! then restarts the fast weights from there. With `k = 1, alpha = 1` the
//! wrapper is a bit-exact no-op around the inner optimizer.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::net::NamedParam;

/// Inner adaptive-moment settings. `momentum_decay` controls how quickly
/// the Nesterov momentum schedule `beta1 * (1 - 0.5 * 0.96^(t * decay))`
/// ramps up over steps `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
}

impl Default for NAdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 0.004,
        }
    }
}

/// Slow-weight interpolation: every `k` fast steps, move the slow copy a
/// fraction `alpha` toward the fast weights and reset the fast weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LookaheadConfig {
    pub k: usize,
    pub alpha: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self { k: 5, alpha: 0.5 }
    }
}

/// Optimizer state for one parameter list; the list order must stay fixed
/// across steps (it is keyed by position, matching [`crate::net::Network::params`]).
pub struct Optimizer {
    nadam: NAdamConfig,
    lookahead: LookaheadConfig,
    step: u64,
    mu_product: f64,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
    slow: Vec<ArrayD<f64>>,
}

impl Optimizer {
    /// Starts fresh state (zero moments, slow weights = current weights).
    pub fn new(params: &[NamedParam], nadam: NAdamConfig, lookahead: LookaheadConfig) -> Self {
        assert!(lookahead.k >= 1, "lookahead sync period must be at least 1");
        assert!(
            lookahead.alpha > 0.0 && lookahead.alpha <= 1.0,
            "lookahead interpolation must be in (0, 1]"
        );
        Self {
            nadam,
            lookahead,
            step: 0,
            mu_product: 1.0,
            first: params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
            second: params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
            slow: params.iter().map(|p| p.value.clone()).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must align with `params` element-wise.
    pub fn step(&mut self, params: &mut [NamedParam], grads: &[ArrayD<f64>], lr: f64) {
        assert_eq!(
            params.len(),
            grads.len(),
            "gradient list must match parameter list"
        );
        let c = self.nadam;
        let t = self.step + 1;
        let mu_t = c.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * c.momentum_decay));
        let mu_next = c.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1) as f64 * c.momentum_decay));
        self.mu_product *= mu_t;
        let bias_m_now = 1.0 - self.mu_product;
        let bias_m_next = 1.0 - self.mu_product * mu_next;
        let bias_v = 1.0 - c.beta2.powi(t as i32);

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(&mut self.second))
        {
            assert_eq!(
                param.value.shape(),
                grad.shape(),
                "gradient shape mismatch for {}",
                param.name
            );
            ndarray::Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = mu_next * *m / bias_m_next + (1.0 - mu_t) * g / bias_m_now;
                    let v_hat = *v / bias_v;
                    *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
                });
        }

        self.step = t;
        if t % self.lookahead.k as u64 == 0 {
            self.sync_slow(params);
        }
    }

    fn sync_slow(&mut self, params: &mut [NamedParam]) {
        let alpha = self.lookahead.alpha;
        for (slow, param) in self.slow.iter_mut().zip(params.iter_mut()) {
            if alpha == 1.0 {
                slow.assign(&param.value);
            } else {
                ndarray::Zip::from(slow.view_mut())
                    .and(&param.value)
                    .for_each(|s, &f| *s += alpha * (f - *s));
                param.value.assign(slow);
            }
        }
    }
}
