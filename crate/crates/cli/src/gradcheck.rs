//! Finite-difference checks of every layer family on small random inputs.

use fgf_core::autodiff::{grad_check, BnMode, Graph, HasParams, NodeId, ParamStore, Shape, Tensor};
use fgf_core::gan::{attention_map, discriminator_loss, generator_loss, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use fgf_core::image::Interpolation;
use fgf_core::{FilterParams, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// magnitudes in [0.1, 1) with random sign, away from activation kinks
fn off_kink(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn worst<M: HasParams<f64>>(
    model: &mut M,
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Graph<f64>, &mut M, &[NodeId]) -> Result<NodeId>,
) -> Result<f64> {
    Ok(grad_check(model, inputs, seed, build)?.max_rel_err())
}

/// `(family, max relative error)` for each layer family.
pub fn run(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut conv = ParamStore::<f64>::new();
    let w = conv.add("w", uniform(&mut rng, Shape::new(3, 2, 3, 3), -1.0, 1.0))?;
    let b = conv.add("b", uniform(&mut rng, Shape::new(1, 3, 1, 1), -1.0, 1.0))?;
    let x = uniform(&mut rng, Shape::new(2, 2, 7, 7), -1.0, 1.0);
    let e1 = worst(&mut conv, &[x.clone()], seed, |g, s, i| {
        let (wn, bn) = (g.param(s, w), g.param(s, b));
        g.conv2d(i[0], wn, Some(bn), 1, 1)
    })?;
    let e2 = worst(&mut conv, &[x], seed, |g, s, i| {
        let wn = g.param(s, w);
        g.conv2d(i[0], wn, None, 2, 1)
    })?;
    out.push(("conv", e1.max(e2)));

    let mut bn = ParamStore::<f64>::new();
    let gamma = bn.add("gamma", uniform(&mut rng, Shape::new(1, 3, 1, 1), 0.5, 1.5))?;
    let beta = bn.add("beta", uniform(&mut rng, Shape::new(1, 3, 1, 1), -0.5, 0.5))?;
    let stats = bn.add_bn("bn", 3);
    let xb = uniform(&mut rng, Shape::new(2, 3, 4, 4), -2.0, 2.0);
    out.push((
        "batchnorm",
        worst(&mut bn, &[xb], seed, |g, s, i| {
            let (gn, bt) = (g.param(s, gamma), g.param(s, beta));
            g.batch_norm(i[0], gn, bt, s, stats, BnMode::Train)
        })?,
    ));

    let xa = off_kink(&mut rng, Shape::new(1, 2, 5, 5));
    out.push((
        "activations",
        worst(&mut (), &[xa], seed, |g, _, i| {
            let r = g.relu(i[0]);
            let l = g.leaky_relu(i[0], 0.2);
            let s = g.sigmoid(i[0]);
            g.concat_channels(&[r, l, s])
        })?,
    ));

    let xs = uniform(&mut rng, Shape::new(1, 1, 6, 6), -1.0, 1.0);
    out.push(("box", worst(&mut (), &[xs], seed, |g, _, i| Ok(g.box_filter(i[0], 1)))?));

    let xr = uniform(&mut rng, Shape::new(1, 2, 4, 5), -1.0, 1.0);
    out.push((
        "resample",
        worst(&mut (), &[xr], seed, |g, _, i| {
            let up = g.bilinear_up(i[0], 2)?;
            g.resize(up, Interpolation::Bicubic, 3, 3)
        })?,
    ));

    let fgf_in = [
        uniform(&mut rng, Shape::new(1, 2, 4, 4), 0.0, 1.0),
        uniform(&mut rng, Shape::new(1, 2, 4, 4), 0.0, 1.0),
        uniform(&mut rng, Shape::new(1, 2, 8, 8), 0.0, 1.0),
    ];
    let fp = FilterParams::new(1, 1e-2, 2)?;
    out.push(("fgf", worst(&mut (), &fgf_in, seed, |g, _, i| g.fgf(i[0], i[1], i[2], &fp))?));

    let mut sam = ParamStore::<f64>::new();
    let sw = sam.add("w", uniform(&mut rng, Shape::new(1, 2, 7, 7), -0.3, 0.3))?;
    let sb = sam.add("b", uniform(&mut rng, Shape::new(1, 1, 1, 1), -0.3, 0.3))?;
    let xf = uniform(&mut rng, Shape::new(1, 4, 6, 6), -1.0, 1.0);
    out.push((
        "sam",
        worst(&mut sam, &[xf], seed, |g, s, i| {
            let (w, b) = (g.param(s, sw), g.param(s, sb));
            let m = attention_map(g, i[0], w, b)?;
            g.mul_broadcast(i[0], m)
        })?,
    ));

    let cand = uniform(&mut rng, Shape::new(2, 2, 3, 3), 0.0, 1.0);
    let refr = Tensor::from_fn(cand.shape(), |k| cand.data()[k] + if k % 2 == 0 { 0.3 } else { -0.3 });
    let fake = uniform(&mut rng, Shape::new(2, 1, 2, 2), 0.1, 0.9);
    let real = uniform(&mut rng, Shape::new(2, 1, 2, 2), 0.1, 0.9);
    let eg = worst(&mut (), &[cand, refr, fake.clone()], seed, |g, _, i| {
        Ok(generator_loss(g, i[0], i[1], Some(i[2]), 0.01, 1.03)?.total)
    })?;
    let ed = worst(&mut (), &[fake, real], seed, |g, _, i| discriminator_loss(g, i[0], i[1], 0.07, 0.98))?;
    out.push(("losses", eg.max(ed)));

    let mut cfg = GeneratorConfig::new(2, 2);
    cfg.k_layers = 2;
    cfg.width = 4;
    cfg.filter.radius = 1;
    cfg.filter.eps = 1e-2;
    let mut gen = Generator::<f64>::new(cfg, seed)?;
    let gin = [
        uniform(&mut rng, Shape::new(1, 1, 8, 8), 0.0, 1.0),
        uniform(&mut rng, Shape::new(1, 2, 4, 4), 0.0, 1.0),
    ];
    out.push(("generator", worst(&mut gen, &gin, seed, |g, m, i| m.forward(g, i[0], i[1]))?));

    let mut disc = Discriminator::<f64>::new(DiscriminatorConfig { bands: 2, base_width: 2 }, seed)?;
    let din = [
        uniform(&mut rng, Shape::new(2, 2, 16, 16), 0.0, 1.0),
        uniform(&mut rng, Shape::new(2, 2, 16, 16), 0.0, 1.0),
        uniform(&mut rng, Shape::new(2, 1, 16, 16), 0.0, 1.0),
    ];
    out.push((
        "discriminator",
        worst(&mut disc, &din, seed, |g, m, i| m.forward(g, i[0], i[1], i[2], BnMode::Train, true))?,
    ));
    Ok(out)
}
