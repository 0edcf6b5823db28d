use alloc::collections::BTreeMap;
use alloc::string::String;

use super::{Array, AutodiffError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 2.0,
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Array>, max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.values().map(Array::sum_squares).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_assign(k);
        }
    }
    norm
}

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Array>,
    second: BTreeMap<String, Array>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips, then applies one update. Parameters without a gradient entry
    /// are left alone. On a non-finite gradient nothing is modified.
    /// Returns the gradient norm before clipping.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        mut grads: BTreeMap<String, Array>,
    ) -> Result<f64, AutodiffError> {
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient(name.clone()));
            }
            match params.get(name) {
                None => return Err(AutodiffError::MissingParameter(name.clone())),
                Some(p) if p.shape() != g.shape() => {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "adam",
                        left: p.shape().to_vec(),
                        right: g.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        let norm = clip_global_norm(&mut grads, self.config.clip);
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (name, g) in grads {
            let p = params.get_mut(&name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.shape()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Array::zeros(g.shape()));
            for (((w, m), v), g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
            }
        }
        Ok(norm)
    }
}
