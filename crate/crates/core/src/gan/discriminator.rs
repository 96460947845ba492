//! Conditional patch discriminator scoring `(candidate, lrms_up, pan)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DiscriminatorConfig;
use crate::autodiff::{BnId, BnMode, Graph, HasParams, NodeId, ParamId, ParamStore, Shape, Tensor};
use crate::error::{shape_err, Result};
use crate::real::Real;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: BnId,
    stride: usize,
}

/// Convs carry no bias: the batch norm that follows each one cancels it.
#[derive(Debug)]
pub struct Discriminator<T> {
    cfg: DiscriminatorConfig,
    store: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Real> Clone for Discriminator<T> {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            store: self.store.clone(),
            layers: self.layers.clone(),
        }
    }
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if cfg.bands == 0 || cfg.base_width == 0 {
            return Err(crate::Error::InvalidArgument(
                "discriminator needs at least one band and one channel".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut in_c = 2 * cfg.bands + 1;
        for (i, (out_c, stride)) in cfg.layers().into_iter().enumerate() {
            let name = format!("layer{}", i + 1);
            let w = store.add_conv_weight(format!("{name}.w"), out_c, in_c, 3, &mut rng)?;
            let gamma = store.add(format!("{name}.bn.gamma"), Tensor::full(Shape::new(1, out_c, 1, 1), T::one()))?;
            let beta = store.add(format!("{name}.bn.beta"), Tensor::zeros(Shape::new(1, out_c, 1, 1)))?;
            let bn = store.add_bn(format!("{name}.bn"), out_c);
            layers.push(Layer {
                w,
                gamma,
                beta,
                bn,
                stride,
            });
            in_c = out_c;
        }
        Ok(Self { cfg, store, layers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Zeroes every conv kernel (test helper for the `sigmoid(0)` case).
    pub fn zero_convs(&mut self) {
        for l in &self.layers {
            self.store.value_mut(l.w).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Score map `N x 1 x H/8 x W/8` in `(0, 1)`.
    ///
    /// With `trainable = false` the weights enter the graph as constants, so
    /// gradients flow only to the inputs. Batch-norm statistics follow `mode`.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        candidate: NodeId,
        lrms_up: NodeId,
        pan: NodeId,
        mode: BnMode,
        trainable: bool,
    ) -> Result<NodeId> {
        self.run(g, candidate, lrms_up, pan, mode, trainable, None)
    }

    /// Like [`Self::forward`], also returning every layer's output shape.
    pub fn forward_traced(
        &mut self,
        g: &mut Graph<T>,
        candidate: NodeId,
        lrms_up: NodeId,
        pan: NodeId,
        mode: BnMode,
    ) -> Result<(NodeId, Vec<Shape>)> {
        let mut trace = Vec::new();
        let out = self.run(g, candidate, lrms_up, pan, mode, true, Some(&mut trace))?;
        Ok((out, trace))
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        g: &mut Graph<T>,
        candidate: NodeId,
        lrms_up: NodeId,
        pan: NodeId,
        mode: BnMode,
        trainable: bool,
        mut trace: Option<&mut Vec<Shape>>,
    ) -> Result<NodeId> {
        let (cs, ls, ps) = (g.shape(candidate), g.shape(lrms_up), g.shape(pan));
        let c = self.cfg.bands;
        if cs.c != c || ls != cs || ps != cs.with_c(1) {
            return shape_err(format!(
                "discriminator expects {c}-band candidate and lrms_up plus 1-band pan of equal size, got {cs}, {ls}, {ps}"
            ));
        }
        if cs.h % 8 != 0 || cs.w % 8 != 0 {
            return shape_err(format!("discriminator input {}x{} is not divisible by 8", cs.h, cs.w));
        }
        let mut x = g.concat_channels(&[candidate, lrms_up, pan])?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.clone().into_iter().enumerate() {
            let [w, gamma, beta] = [l.w, l.gamma, l.beta].map(|id| {
                if trainable {
                    g.param(&self.store, id)
                } else {
                    g.param_frozen(&self.store, id)
                }
            });
            let conv = g.conv2d(x, w, None, l.stride, 1)?;
            let norm = g.batch_norm(conv, gamma, beta, &mut self.store, l.bn, mode)?;
            x = if i == last {
                g.sigmoid(norm)
            } else {
                g.leaky_relu(norm, LEAKY_SLOPE)
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(g.shape(x));
            }
        }
        Ok(x)
    }
}

impl<T: Real> HasParams<T> for Discriminator<T> {
    fn param_stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.store]
    }
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        vec![&mut self.store]
    }
}
