use crate::error::{Error, Result};
use crate::tensorcore::{Grads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

/// First/second moment accumulators with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from `grads`, then clears them.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut Grads) -> Result<()> {
        grads.matches(store).map_err(Error::MissingGradient)?;
        if self.m.len() != store.len() {
            return Err(Error::InvalidParam("optimizer state built for another model".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if let Some(max) = self.config.clip_norm {
            let norm = grads.norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let w = store.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        grads.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = one_param(vec![1.0, -2.0, 0.5]);
        let id = store.id("w").unwrap();
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).copy_from_slice(&[0.3, -4.0, 1e-2]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &mut grads).unwrap();
        let w = store.get(id).data();
        let expect = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(adam.steps(), 1);
        assert!(grads.get(id).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = one_param(vec![1.0, -2.0]);
        let before = store.clone();
        let mut grads = Grads::zeros_like(&store);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &mut grads).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn doubled_gradient_same_first_update() {
        let run = |scale: f64| {
            let mut store = one_param(vec![0.0, 0.0]);
            let id = store.id("w").unwrap();
            let mut grads = Grads::zeros_like(&store);
            grads.get_mut(id).copy_from_slice(&[0.2 * scale, -0.05 * scale]);
            let mut adam = AdamState::new(&store, AdamConfig::default());
            adam.step(&mut store, &mut grads).unwrap();
            store.get(id).data().to_vec()
        };
        let (a, b) = (run(1.0), run(2.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_gradients_rejected() {
        let mut store = one_param(vec![1.0]);
        let empty = ParamStore::new();
        let mut grads = Grads::zeros_like(&empty);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        assert!(matches!(adam.step(&mut store, &mut grads), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn converges_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = Tensor::uniform(&[6], 0.5, &mut rng);
        let mut store = one_param(Tensor::uniform(&[6], 0.5, &mut rng).into_data());
        let id = store.id("w").unwrap();
        let config = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut adam = AdamState::new(&store, config);
        for _ in 0..200 {
            let mut grads = {
                let mut tape = Tape::new(&store);
                let w = tape.param(id);
                let t = tape.constant(target.clone()).unwrap();
                let d = tape.sub(w, t).unwrap();
                let sq = tape.mul(d, d).unwrap();
                let loss = tape.sum(sq).unwrap();
                tape.backward(loss).unwrap()
            };
            adam.step(&mut store, &mut grads).unwrap();
        }
        let dist: f64 = store
            .get(id)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-2, "distance {dist}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = one_param(vec![0.0, 0.0]);
        let id = store.id("w").unwrap();
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).copy_from_slice(&[30.0, 40.0]);
        let config = AdamConfig { clip_norm: Some(5.0), ..AdamConfig::default() };
        let mut adam = AdamState::new(&store, config);
        adam.step(&mut store, &mut grads).unwrap();
        assert!(store.get(id).all_finite());
    }
}
