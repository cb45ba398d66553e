use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled L2 decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with decoupled weight decay. Moment estimates are kept per
/// parameter and survive across calls to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "adam",
                msg: format!("learning rate must be positive, got {}", cfg.lr),
            });
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(AutodiffError::InvalidArgument {
                op: "adam",
                msg: format!("betas must lie in [0, 1), got ({}, {})", cfg.beta1, cfg.beta2),
            });
        }
        Ok(Self {
            cfg,
            state: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Update every parameter in `ids` from its stored gradient, then clear
    /// those gradients. Fails before touching anything if a gradient is
    /// missing.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(AutodiffError::MissingGradient(store.name(id).to_string()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        for &id in ids {
            if self.state.len() <= id.index() {
                self.state.resize(id.index() + 1, None);
            }
            let n = store.value(id).len();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            let grad = store.grad(id).expect("checked above").to_vec();
            let p = store.value_mut(id).data_mut();
            for k in 0..n {
                let g = grad[k];
                st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * g;
                st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * g * g;
                let mhat = st.m[k] / bc1;
                let vhat = st.v[k] / bc2;
                p[k] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * p[k]);
            }
            store.clear_grad(id);
        }
        Ok(())
    }
}
