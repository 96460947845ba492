//! Saving and restoring trained networks as FCKPT files.
//!
//! Generator tensors are prefixed `gen.`, discriminator tensors `disc.`. The
//! architecture is recovered from tensor names and shapes; the few settings
//! that leave no trace in the weights are stored as `gen.meta.*` scalars.

use std::collections::HashMap;
use std::path::Path;

use super::config::{DiscriminatorConfig, Fusion, GeneratorConfig};
use super::discriminator::Discriminator;
use super::generator::Generator;
use crate::autodiff::checkpoint::{load_store, read_checkpoint, store_tensors, write_checkpoint, NamedTensor};
use crate::error::{Error, Result};
use crate::guided::FilterParams;

pub fn network_tensors(gen: &Generator<f32>, disc: Option<&Discriminator<f32>>) -> Vec<NamedTensor> {
    let cfg = gen.config();
    let mut out = store_tensors(gen.store(), "gen.");
    let meta = [
        ("sus", cfg.sus as f32),
        ("radius", cfg.filter.radius as f32),
        ("use_gan", cfg.use_gan as u8 as f32),
    ];
    for (k, v) in meta {
        out.push(NamedTensor::new(format!("gen.meta.{k}"), vec![1], vec![v]));
    }
    // eps as four 16-bit words of its f64 bit pattern, each exact in f32
    let bits = cfg.filter.eps.to_bits();
    let words = (0..4).map(|i| ((bits >> (16 * i)) & 0xffff) as f32).collect();
    out.push(NamedTensor::new("gen.meta.eps_bits", vec![4], words));
    if let Some(d) = disc {
        out.extend(store_tensors(d.store(), "disc."));
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, gen: &Generator<f32>, disc: Option<&Discriminator<f32>>) -> Result<()> {
    write_checkpoint(path, &network_tensors(gen, disc))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Generator<f32>, Option<Discriminator<f32>>)> {
    networks_from_tensors(&read_checkpoint(path)?)
}

pub fn networks_from_tensors(tensors: &[NamedTensor]) -> Result<(Generator<f32>, Option<Discriminator<f32>>)> {
    let map: HashMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let get = |name: &str| {
        map.get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
    };
    let scalar = |name: &str| -> Result<f64> { Ok(get(name)?.data.first().copied().unwrap_or(0.0) as f64) };

    let width = get("gen.pan1.conv1.w")?.dims[0];
    let bands = get("gen.rec2.w")?.dims[0];
    let k_layers = (1..).take_while(|k| map.contains_key(format!("gen.pan{k}.conv1.w").as_str())).count();
    let sus = scalar("gen.meta.sus")? as usize;
    let mut cfg = GeneratorConfig::new(bands, sus);
    cfg.width = width;
    cfg.k_layers = k_layers;
    cfg.filter = FilterParams::new(scalar("gen.meta.radius")? as usize, eps_from_words(&get("gen.meta.eps_bits")?.data)?, sus)?;
    cfg.use_sam = map.contains_key("gen.sam1.w");
    cfg.use_gan = scalar("gen.meta.use_gan")? != 0.0;
    cfg.fusion = if map.contains_key("gen.fuse1.w") {
        Fusion::Concat
    } else {
        Fusion::GuidedFilter
    };
    let mut gen = Generator::new(cfg, 0)?;
    load_store(gen.store_mut(), "gen.", tensors)?;

    let disc = match map.get("disc.layer1.w") {
        Some(first) => {
            let dcfg = DiscriminatorConfig {
                bands: (first.dims[1].saturating_sub(1)) / 2,
                base_width: first.dims[0],
            };
            let mut d = Discriminator::new(dcfg, 0)?;
            load_store(d.store_mut(), "disc.", tensors)?;
            Some(d)
        }
        None => None,
    };
    Ok((gen, disc))
}

fn eps_from_words(words: &[f32]) -> Result<f64> {
    if words.len() != 4 {
        return Err(Error::Format("gen.meta.eps_bits must hold 4 words".into()));
    }
    let bits = words
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &w)| acc | ((w as u64) << (16 * i)));
    Ok(f64::from_bits(bits))
}
