//! AdamW with decoupled weight decay.
//!
//! Decay is applied to the parameter before the moment-based update, so it
//! never leaks into the running averages. Frozen parameters are skipped
//! outright: no decay, no moments, bitwise unchanged.

use super::scalar::Real;
use super::store::ParamStore;
use super::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: T, weight_decay: T) -> Self {
        AdamW {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One optimizer step over the supplied gradients. Only names present in
    /// `grads` are touched; the caller guarantees frozen parameters are
    /// absent (see [`ParamStore::grad_map`]).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (name, grad) in grads {
            assert!(
                !store.is_frozen(name),
                "gradient supplied for frozen parameter {}",
                name
            );
            let param = store.get_mut(name);
            assert_eq!(param.shape, grad.shape, "grad shape mismatch for {}", name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&grad.shape));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&grad.shape));
            for j in 0..param.data.len() {
                let p = &mut param.data[j];
                // decoupled decay first
                *p -= self.lr * self.weight_decay * *p;
                let g = grad.data[j];
                m.data[j] = self.beta1 * m.data[j] + (T::one() - self.beta1) * g;
                v.data[j] = self.beta2 * v.data[j] + (T::one() - self.beta2) * g * g;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Serializable view of the optimizer state.
    pub fn state(&self) -> (u64, &BTreeMap<String, Tensor<T>>, &BTreeMap<String, Tensor<T>>) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore_state(
        &mut self,
        t: u64,
        m: BTreeMap<String, Tensor<T>>,
        v: BTreeMap<String, Tensor<T>>,
    ) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(&[1], vec![value]));
        s
    }

    #[test]
    fn first_step_unit_gradient() {
        // lr 0.1, no decay, grad 1: mhat = 1, vhat = 1, so p moves by
        // lr / (1 + eps)
        let mut store = single_param(1.0);
        let mut opt = AdamW::new(0.1, 0.0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::from_vec(&[1], vec![1.0]));
        opt.step(&mut store, &grads);
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.get("p").data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decay_applies_before_moments() {
        // zero gradient: only the decoupled decay moves the parameter
        let mut store = single_param(1.0);
        let mut opt = AdamW::new(1e-4, 1e-4);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::from_vec(&[1], vec![0.0]));
        opt.step(&mut store, &grads);
        assert!((store.get("p").data[0] - (1.0 - 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn frozen_param_bitwise_unchanged() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.insert("a", Tensor::from_vec(&[2], vec![0.123456789f32, -2.5]));
        store.insert("b", Tensor::from_vec(&[1], vec![1.0f32]));
        store.freeze("a");
        let before = store.get("a").data.clone();
        let before_bits: Vec<u32> = before.iter().map(|x| x.to_bits()).collect();

        let mut opt = AdamW::new(0.01f32, 0.01);
        let mut grads = BTreeMap::new();
        grads.insert("b".to_string(), Tensor::from_vec(&[1], vec![0.5f32]));
        for _ in 0..10 {
            opt.step(&mut store, &grads);
        }
        let after_bits: Vec<u32> = store.get("a").data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(before_bits, after_bits);
        assert!(store.get("b").data[0] < 1.0);
    }

    #[test]
    fn bias_correction_second_step() {
        // constant gradient g: after two steps mhat and vhat are exactly g
        // and g^2 again, so each step moves by lr/(|g|+eps)*sign adjustments
        let mut store = single_param(0.0);
        let mut opt = AdamW::new(0.5, 0.0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::from_vec(&[1], vec![2.0]));
        opt.step(&mut store, &grads);
        let after1 = store.get("p").data[0];
        assert!((after1 - (-0.5 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
        opt.step(&mut store, &grads);
        let after2 = store.get("p").data[0];
        assert!((after2 - (after1 - 0.5 * 2.0 / (2.0 + 1e-8))).abs() < 1e-9);
    }
}
