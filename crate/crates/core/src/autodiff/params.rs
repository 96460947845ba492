//! Named trainable parameters, batch-norm running statistics and Adam.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub moment1: Vec<T>,
    pub moment2: Vec<T>,
}

/// Running statistics of one batch-norm layer (not trainable).
#[derive(Clone, Debug)]
pub struct BatchNormStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub updates: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered collection of uniquely named parameters for one network.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    bn: Vec<BatchNormStats<T>>,
    step: u64,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            index: self.index.clone(),
            bn: self.bn.clone(),
            step: self.step,
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            index: HashMap::new(),
            bn: Vec::new(),
            step: 0,
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let n = value.len();
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter {
            name,
            value,
            moment1: vec![T::zero(); n],
            moment2: vec![T::zero(); n],
        });
        Ok(id)
    }

    /// Conv kernel `out x in x k x k` drawn from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn add_conv_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        out_c: usize,
        in_c: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (in_c * k * k) as f64).sqrt();
        let t = Tensor::from_fn(Shape::new(out_c, in_c, k, k), |_| {
            T::lit(rng.gen_range(-bound..bound))
        });
        self.add(name, t)
    }

    pub fn add_bn(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        self.bn.push(BatchNormStats {
            name: name.into(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        });
        BnId(self.bn.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn bn(&self, id: BnId) -> &BatchNormStats<T> {
        &self.bn[id.0]
    }

    pub fn bn_mut(&mut self, id: BnId) -> &mut BatchNormStats<T> {
        &mut self.bn[id.0]
    }

    pub fn bn_stats(&self) -> &[BatchNormStats<T>] {
        &self.bn
    }

    pub(crate) fn bn_stats_mut(&mut self) -> &mut [BatchNormStats<T>] {
        &mut self.bn
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One bias-corrected Adam update. `grads[i]` belongs to parameter `i`;
    /// parameters without a gradient are left untouched. Nothing is modified
    /// if any gradient is non-finite.
    pub fn adam_step(&mut self, grads: &[Option<&[T]>], lr: f64, cfg: &AdamConfig) -> Result<()> {
        let t = self.step + 1;
        for (p, g) in self.params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.value.len() {
                    return Err(Error::Shape(format!("gradient for `{}` has wrong length", p.name)));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        name: p.name.clone(),
                        step: t,
                    });
                }
            }
        }
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t as i32));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            let values = p.value.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                p.moment1[i] = b1 * p.moment1[i] + (T::one() - b1) * gi;
                p.moment2[i] = b2 * p.moment2[i] + (T::one() - b2) * gi * gi;
                let mhat = p.moment1[i] / bc1;
                let vhat = p.moment2[i] / bc2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step = t;
        Ok(())
    }

    /// Same names, values and optimizer state in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64().unwrap())).collect::<Vec<U>>();
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    moment1: conv(&p.moment1),
                    moment2: conv(&p.moment2),
                })
                .collect(),
            index: self.index.clone(),
            bn: self
                .bn
                .iter()
                .map(|b| BatchNormStats {
                    name: b.name.clone(),
                    mean: conv(&b.mean),
                    var: conv(&b.var),
                    updates: b.updates,
                })
                .collect(),
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(Shape::scalar())).unwrap();
        assert!(s.add("w", Tensor::zeros(Shape::scalar())).is_err());
    }

    #[test]
    fn conv_param_count() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        s.add_conv_weight("w", 32, 1, 3, &mut rng).unwrap();
        s.add("b", Tensor::zeros(Shape::new(32, 1, 1, 1))).unwrap();
        assert_eq!(s.param_count(), 320);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::full(Shape::new(1, 1, 1, 3), 0.7)).unwrap();
        let g = [0.0; 3];
        s.adam_step(&[Some(&g)], 5e-4, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(ParamId(0)).data(), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn first_adam_step_is_minus_lr() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::scalar(0.0)).unwrap();
        s.adam_step(&[Some(&[1.0])], 5e-4, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1: update = lr / (1 + eps)
        let v = s.value(ParamId(0)).data()[0];
        assert!((v + 5e-4).abs() < 1e-11, "{v}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::scalar(1.0)).unwrap();
        s.add("bad", Tensor::scalar(1.0)).unwrap();
        let err = s
            .adam_step(&[Some(&[0.5]), Some(&[f32::NAN])], 1e-3, &AdamConfig::default())
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { name, step } => {
                assert_eq!(name, "bad");
                assert_eq!(step, 1);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert_eq!(s.value(ParamId(0)).data()[0], 1.0);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut s = ParamStore::<f32>::new();
            s.add_conv_weight("w", 2, 2, 3, &mut rng).unwrap();
            for t in 0..10 {
                let g: Vec<f32> = (0..36).map(|i| ((i * 7 + t) % 5) as f32 - 2.0).collect();
                s.adam_step(&[Some(&g)], 5e-4, &AdamConfig::default()).unwrap();
            }
            s.value(ParamId(0)).clone()
        };
        assert_eq!(run(), run());
    }
}
