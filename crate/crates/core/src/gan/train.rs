//! Adversarial training loop: per batch one discriminator step on detached
//! generator output, then one generator step through the updated critic.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DiscriminatorConfig, GeneratorConfig, TrainConfig};
use super::discriminator::Discriminator;
use super::generator::Generator;
use super::loss::{discriminator_loss, generator_loss};
use crate::autodiff::{BnMode, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::image::{crop_patches, synth_scene, wald_degrade, DatasetSpec, Interpolation, WaldTriple};
use crate::metrics::psnr;

/// Training, validation and test triples.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<WaldTriple>,
    pub val: Vec<WaldTriple>,
    pub test: Vec<WaldTriple>,
}

impl Dataset {
    /// Synthetic scenes sized so that each yields exactly one patch; scene
    /// `i` goes to train, val or test in order of `spec.split`.
    pub fn synthetic(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let (a, b, c) = spec.split;
        let side = spec.pan_patch() * spec.sus;
        let mut all = Vec::with_capacity(a + b + c);
        for i in 0..a + b + c {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let (ms, pan) = synth_scene(seed, spec.bands, side, side, spec.sus)?;
            let triple = wald_degrade(&ms, &pan, spec.sus)?;
            let mut patches = crop_patches(&triple, spec)?;
            all.push(patches.swap_remove(0).triple);
        }
        let test = all.split_off(a + b);
        let val = all.split_off(a);
        Ok(Self { train: all, val, test })
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training L1 over the epoch's batches.
    pub l1: f64,
    /// Mean unweighted adversarial generator term (0 without a discriminator).
    pub g_adv: f64,
    pub d_loss: f64,
    pub val_psnr: f64,
    pub val_l1: f64,
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} l1 {:.6} g_adv {:.6} d_loss {:.6} val_psnr {:.4} lr {:e}",
            self.epoch, self.l1, self.g_adv, self.d_loss, self.val_psnr, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the best validation PSNR seen (initial weights included).
    pub best: Generator<f32>,
    pub best_epoch: usize,
    pub last: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    pub log: Vec<EpochRecord>,
    pub initial_val_l1: f64,
    pub initial_val_psnr: f64,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Mean absolute error and mean per-image PSNR of `gen` on `samples`.
pub fn evaluate(gen: &Generator<f32>, samples: &[WaldTriple], batch: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let mut abs = 0.0f64;
    let mut count = 0usize;
    let mut psnr_sum = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let (pan, lrms, _) = batch_inputs(&mut g, chunk)?;
        let out = gen.forward(&mut g, pan, lrms)?;
        let preds = g.value(out).to_images()?;
        for (p, t) in preds.iter().zip(chunk) {
            abs += p
                .data()
                .iter()
                .zip(t.reference.data())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum::<f64>();
            count += p.data().len();
            psnr_sum += psnr(p, &t.reference)?;
        }
    }
    Ok((abs / count as f64, psnr_sum / samples.len() as f64))
}

fn batch_inputs(g: &mut Graph<f32>, chunk: &[WaldTriple]) -> Result<(NodeId, NodeId, NodeId)> {
    let pans: Vec<_> = chunk.iter().map(|t| &t.pan).collect();
    let lrms: Vec<_> = chunk.iter().map(|t| &t.lrms).collect();
    let refs: Vec<_> = chunk.iter().map(|t| &t.reference).collect();
    Ok((
        g.input(Tensor::from_images(&pans)?),
        g.input(Tensor::from_images(&lrms)?),
        g.input(Tensor::from_images(&refs)?),
    ))
}

fn check_finite(v: f64, what: &'static str, epoch: usize, batch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { what, epoch, batch })
    }
}

/// Trains a generator (and, when `gen_cfg.use_gan`, a discriminator) on
/// `data.train`, selecting by PSNR on `data.val`. `on_epoch` sees each log
/// record as it is produced.
pub fn train(
    data: &Dataset,
    gen_cfg: &GeneratorConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    gen_cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Empty("training needs non-empty train and val splits".into()));
    }
    // Independent streams: ablations share initial weights, batch order and labels.
    let stream = |id: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(id);
        r
    };
    let mut order_rng = stream(0);
    let mut label_rng = stream(1);
    let mut gen = Generator::<f32>::new(gen_cfg.clone(), stream(2).gen())?;
    // Start from the bicubic skip alone; random output weights only add noise to unlearn.
    gen.zero_reconstruction();
    let mut disc = if gen_cfg.use_gan {
        let dcfg = DiscriminatorConfig {
            bands: gen_cfg.bands,
            base_width: cfg.disc_width,
        };
        Some(Discriminator::<f32>::new(dcfg, stream(3).gen())?)
    } else {
        None
    };
    let batch = cfg.batch.min(data.train.len());
    let (initial_val_l1, initial_val_psnr) = evaluate(&gen, &data.val, batch)?;
    log::info!("initial val_l1 {initial_val_l1:.6} val_psnr {initial_val_psnr:.4}");
    let mut best = gen.clone();
    let mut best_psnr = initial_val_psnr;
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let (mut l1_sum, mut adv_sum, mut d_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(batch).enumerate() {
            let chunk: Vec<WaldTriple> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let label_a = label_rng.gen_range(cfg.label_a.0..=cfg.label_a.1);
            let label_b = label_rng.gen_range(cfg.label_b.0..=cfg.label_b.1);
            let label_c = label_rng.gen_range(cfg.label_c.0..=cfg.label_c.1);

            let mut g = Graph::new();
            let (pan, lrms, reference) = batch_inputs(&mut g, &chunk)?;
            let fake = gen.forward(&mut g, pan, lrms)?;
            let ps = g.shape(pan);
            let lrms_up = g.resize(lrms, Interpolation::Bicubic, ps.h, ps.w)?;

            let scores = match disc.as_mut() {
                Some(d) => {
                    let mut gd = Graph::new();
                    let f = gd.input(g.value(fake).clone());
                    let r = gd.input(g.value(reference).clone());
                    let u = gd.input(g.value(lrms_up).clone());
                    let p = gd.input(g.value(pan).clone());
                    let d_fake = d.forward(&mut gd, f, u, p, BnMode::Train, true)?;
                    let d_real = d.forward(&mut gd, r, u, p, BnMode::Train, true)?;
                    let ld = discriminator_loss(&mut gd, d_fake, d_real, label_b, label_c)?;
                    d_sum += check_finite(gd.scalar(ld) as f64, "discriminator loss", epoch, bi)?;
                    let grads = gd.backward(ld)?;
                    let step = grads.for_store(d.store());
                    d.store_mut().adam_step(&step, lr, &cfg.adam)?;
                    Some(d.forward(&mut g, fake, lrms_up, pan, BnMode::Train, false)?)
                }
                None => None,
            };
            let alpha = if scores.is_some() { cfg.alpha } else { 0.0 };
            let lg = generator_loss(&mut g, fake, reference, scores, alpha, label_a)?;
            check_finite(g.scalar(lg.total) as f64, "generator loss", epoch, bi)?;
            l1_sum += g.scalar(lg.l1) as f64;
            adv_sum += lg.adversarial.map_or(0.0, |a| g.scalar(a) as f64);
            let grads = g.backward(lg.total)?;
            let step = grads.for_store(gen.store());
            gen.store_mut().adam_step(&step, lr, &cfg.adam)?;
            batches += 1;
        }
        let (val_l1, val_psnr) = evaluate(&gen, &data.val, batch)?;
        let n = batches as f64;
        let record = EpochRecord {
            epoch,
            l1: l1_sum / n,
            g_adv: adv_sum / n,
            d_loss: d_sum / n,
            val_psnr,
            val_l1,
            lr,
        };
        log::info!("{record}");
        on_epoch(&record);
        if val_psnr > best_psnr {
            best_psnr = val_psnr;
            best = gen.clone();
            best_epoch = epoch;
        }
        log.push(record);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: gen,
        discriminator: disc,
        log,
        initial_val_l1,
        initial_val_psnr,
    })
}
