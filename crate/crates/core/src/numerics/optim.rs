use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every tensor in one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                cfg.lr
            )));
        }
        for (name, b) in [("beta1", cfg.beta1), ("beta2", cfg.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        let zeros = || {
            store
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect::<Vec<_>>()
        };
        Ok(Self {
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            lr: cfg.lr,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
///
/// `grads` must cover the store; an entry is "missing" when its buffer
/// length disagrees with the parameter, which is reported by name.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        match grads.bufs.get(id.0) {
            Some(g) if g.len() == store.get(id).len() => {}
            _ => return Err(Error::MissingGrad(store.name(id).to_string())),
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    for id in store.ids().collect::<Vec<_>>() {
        let g = &grads.bufs[id.0];
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: `initial_lr * 0.5^floor(epoch / half_period)`.
pub fn lr_schedule(initial_lr: f64, epoch: usize, half_period: usize) -> f64 {
    assert!(half_period > 0, "half_period must be positive");
    initial_lr * 0.5f64.powi((epoch / half_period) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(p));
        s
    }

    fn grads_of(store: &ParamStore, g: f64) -> Grads {
        let mut gr = Grads::zeros_like(store);
        gr.bufs[0][0] = g;
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]));
        let before = store.clone();
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        adam_step(&mut store, &Grads::zeros_like(&before), &mut st).unwrap();
        assert_eq!(store, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(1.0);
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let g = grads_of(&store, 1.0);
        adam_step(&mut store, &g, &mut st).unwrap();
        // mhat = 1, vhat = 1 => p = 1 - 0.001 * 1 / (1 + 1e-8)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((store.get(store.id("p").unwrap()).item() - expected).abs() < 1e-15);
        assert!((expected - 0.999).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        let mut store = scalar_store(1.0);
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let g = grads_of(&store, 1.0);
        adam_step(&mut store, &g, &mut st).unwrap();
        adam_step(&mut store, &g, &mut st).unwrap();

        // Independent trace of the textbook recursion.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 1e-3f64);
        let mut p = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        let got = store.get(store.id("p").unwrap()).item();
        assert!((got - p).abs() < 1e-12, "{got} vs {p}");
        assert_eq!(st.step, 2);
    }

    #[test]
    fn grads_left_untouched() {
        let mut store = scalar_store(0.3);
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let g = grads_of(&store, -0.7);
        let copy = g.clone();
        adam_step(&mut store, &g, &mut st).unwrap();
        assert_eq!(g, copy);
    }

    #[test]
    fn mismatched_grads_name_the_parameter() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(1.0));
        store.add("b", Tensor::row(vec![1.0, 2.0]));
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let mut g = Grads::zeros_like(&store);
        g.bufs[1].clear();
        match adam_step(&mut store, &g, &mut st) {
            Err(Error::MissingGrad(name)) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let store = scalar_store(0.0);
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&store, bad).is_err());
        let bad = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&store, bad).is_err());
    }

    #[test]
    fn step_decay_schedule() {
        assert_eq!(lr_schedule(0.001, 0, 80), 0.001);
        assert_eq!(lr_schedule(0.001, 79, 80), 0.001);
        assert_eq!(lr_schedule(0.001, 80, 80), 0.0005);
        assert_eq!(lr_schedule(0.001, 299, 80), 0.000125);
    }
}
