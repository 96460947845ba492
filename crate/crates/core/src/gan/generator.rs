//! Two-branch feature extractor, per-level guided fusion with spatial
//! attention, and reconstruction on top of a bicubic skip connection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Fusion, GeneratorConfig};
use super::sam::{sam_forward, SAM_KERNEL};
use crate::autodiff::{Graph, HasParams, NodeId, ParamId, ParamStore, Shape, Tensor};
use crate::error::{shape_err, Result};
use crate::image::{ImageTensor, Interpolation};
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvIds {
    pub(crate) fn add<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.add_conv_weight(format!("{name}.w"), out_c, in_c, k, rng)?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(Shape::new(1, out_c, 1, 1)))?;
        Ok(Self { w, b })
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let k = store.value(self.w).shape().h;
        g.conv2d(x, w, Some(b), 1, k / 2)
    }
}

/// Activation sizes recorded during a traced forward pass, `(name, shape)`.
pub type Trace = Vec<(String, Shape)>;

#[derive(Debug)]
pub struct Generator<T> {
    cfg: GeneratorConfig,
    store: ParamStore<T>,
    /// Per level, the one (k = 1) or two convs of each branch.
    pan: Vec<Vec<ConvIds>>,
    lr: Vec<Vec<ConvIds>>,
    sam: Vec<ConvIds>,
    fuse: Vec<ConvIds>,
    rec: [ConvIds; 2],
}

impl<T: Real> Clone for Generator<T> {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            store: self.store.clone(),
            pan: self.pan.clone(),
            lr: self.lr.clone(),
            sam: self.sam.clone(),
            fuse: self.fuse.clone(),
            rec: self.rec,
        }
    }
}

impl<T: Real> Generator<T> {
    /// Randomly initialized generator; the same seed gives the same weights.
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (wd, c) = (cfg.width, cfg.bands);
        let mut pan = Vec::new();
        let mut lr = Vec::new();
        for k in 1..=cfg.k_layers {
            let mut p = Vec::new();
            let mut l = Vec::new();
            if k == 1 {
                p.push(ConvIds::add(&mut store, "pan1.conv1", wd, 1, 3, &mut rng)?);
                l.push(ConvIds::add(&mut store, "lr1.conv1", wd, c, 3, &mut rng)?);
            } else {
                for j in 1..=2 {
                    p.push(ConvIds::add(&mut store, &format!("pan{k}.conv{j}"), wd, wd, 3, &mut rng)?);
                }
                for j in 1..=2 {
                    l.push(ConvIds::add(&mut store, &format!("lr{k}.conv{j}"), wd, wd, 3, &mut rng)?);
                }
            }
            pan.push(p);
            lr.push(l);
        }
        // Optional blocks draw from their own streams so that toggling them
        // leaves every other initial weight unchanged.
        let mut fuse = Vec::new();
        if cfg.fusion == Fusion::Concat {
            let mut aux = stream(seed, 1);
            for k in 1..=cfg.k_layers {
                fuse.push(ConvIds::add(&mut store, &format!("fuse{k}"), wd, 2 * wd, 3, &mut aux)?);
            }
        }
        let mut sam = Vec::new();
        if cfg.use_sam {
            let mut aux = stream(seed, 2);
            for k in 1..=cfg.k_layers {
                sam.push(ConvIds::add(&mut store, &format!("sam{k}"), 1, 2, SAM_KERNEL, &mut aux)?);
            }
        }
        let rec = [
            ConvIds::add(&mut store, "rec1", wd, wd * cfg.k_layers, 3, &mut rng)?,
            ConvIds::add(&mut store, "rec2", c, wd, 3, &mut rng)?,
        ];
        Ok(Self {
            cfg,
            store,
            pan,
            lr,
            sam,
            fuse,
            rec,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Zeroes the final reconstruction conv, leaving only the bicubic skip.
    pub fn zero_reconstruction(&mut self) {
        for id in [self.rec[1].w, self.rec[1].b] {
            self.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            pan: self.pan.clone(),
            lr: self.lr.clone(),
            sam: self.sam.clone(),
            fuse: self.fuse.clone(),
            rec: self.rec,
        }
    }

    /// `pan` is `N x 1 x H x W`, `lrms` is `N x C x H/sus x W/sus`; returns
    /// the `N x C x H x W` estimate.
    pub fn forward(&self, g: &mut Graph<T>, pan: NodeId, lrms: NodeId) -> Result<NodeId> {
        self.run(g, pan, lrms, None)
    }

    /// Like [`Self::forward`], also returning every activation size.
    pub fn forward_traced(&self, g: &mut Graph<T>, pan: NodeId, lrms: NodeId) -> Result<(NodeId, Trace)> {
        let mut trace = Vec::new();
        let out = self.run(g, pan, lrms, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run(&self, g: &mut Graph<T>, pan: NodeId, lrms: NodeId, mut trace: Option<&mut Trace>) -> Result<NodeId> {
        let (ps, ls) = (g.shape(pan), g.shape(lrms));
        let s = self.cfg.sus;
        if ps.c != 1 || ls.c != self.cfg.bands || ps.n != ls.n || ps.h != ls.h * s || ps.w != ls.w * s {
            return shape_err(format!(
                "generator expects pan N x 1 x {s}h x {s}w and lrms N x {} x h x w, got {ps} and {ls}",
                self.cfg.bands
            ));
        }
        let mut record = |name: String, id: NodeId, g: &Graph<T>| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, g.shape(id)));
            }
        };
        let store = &self.store;
        let mut phi_pan = pan;
        let mut phi_lr = lrms;
        let mut levels = Vec::with_capacity(self.cfg.k_layers);
        for k in 0..self.cfg.k_layers {
            phi_pan = branch(g, store, &self.pan[k], phi_pan)?;
            phi_lr = branch(g, store, &self.lr[k], phi_lr)?;
            record(format!("F{}_PAN", k + 1), phi_pan, g);
            record(format!("F{}_LR", k + 1), phi_lr, g);
            let fused = match self.cfg.fusion {
                Fusion::GuidedFilter => {
                    let guide_lo = g.resize(phi_pan, Interpolation::Bicubic, ls.h, ls.w)?;
                    g.fgf(guide_lo, phi_lr, phi_pan, &self.cfg.filter)?
                }
                Fusion::Concat => {
                    let up = g.resize(phi_lr, Interpolation::Bicubic, ps.h, ps.w)?;
                    let cat = g.concat_channels(&[phi_pan, up])?;
                    let f = self.fuse[k].apply(g, store, cat)?;
                    g.relu(f)
                }
            };
            record(format!("G{}", k + 1), fused, g);
            let attended = if self.cfg.use_sam {
                let w = g.param(store, self.sam[k].w);
                let b = g.param(store, self.sam[k].b);
                let out = sam_forward(g, fused, w, b)?;
                record(format!("S{}", k + 1), out, g);
                out
            } else {
                fused
            };
            levels.push(attended);
        }
        let cat = g.concat_channels(&levels)?;
        let r1 = self.rec[0].apply(g, store, cat)?;
        let r1 = g.relu(r1);
        let r2 = self.rec[1].apply(g, store, r1)?;
        record("R".into(), r2, g);
        let skip = g.resize(lrms, Interpolation::Bicubic, ps.h, ps.w)?;
        let out = g.add(r2, skip)?;
        record("output".into(), out, g);
        Ok(out)
    }

    /// Fuses one PAN/LRMS pair (single image, no gradients).
    pub fn predict(&self, pan: &ImageTensor, lrms: &ImageTensor) -> Result<ImageTensor> {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_image(pan));
        let l = g.input(Tensor::from_image(lrms));
        let out = self.forward(&mut g, p, l)?;
        let mut imgs = g.value(out).to_images()?;
        Ok(imgs.remove(0))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn branch<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, convs: &[ConvIds], x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for c in convs {
        h = c.apply(g, store, h)?;
    }
    Ok(g.relu(h))
}

impl<T: Real> HasParams<T> for Generator<T> {
    fn param_stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.store]
    }
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        vec![&mut self.store]
    }
}
