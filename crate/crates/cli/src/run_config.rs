//! Flat `key = value` run configuration covering the dataset, generator,
//! filter and training settings.

use std::fmt;
use std::path::Path;

use fgf_core::gan::{Fusion, GeneratorConfig, TrainConfig};
use fgf_core::image::DatasetSpec;
use fgf_core::{Error, FilterParams, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "bands",
    "sus",
    "patch",
    "split",
    "data_seed",
    "k_layers",
    "width",
    "radius",
    "eps",
    "use_sam",
    "use_gan",
    "fusion",
    "epochs",
    "batch",
    "lr",
    "lr_decay_epoch",
    "lr_decay",
    "alpha",
    "label_a",
    "label_b",
    "label_c",
    "seed",
    "disc_width",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetSpec::default();
        Self {
            generator: GeneratorConfig::new(dataset.bands, dataset.sus),
            dataset,
            train: TrainConfig::default(),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn range(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| invalid(format!("`{key}`: expected `lo,hi`, got `{v}`")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

/// Parses `a/b/c`.
pub fn parse_split(v: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = v.split('/').collect();
    if parts.len() != 3 {
        return Err(invalid(format!("split must look like train/val/test, got `{v}`")));
    }
    Ok((
        num("split", parts[0].trim())?,
        num("split", parts[1].trim())?,
        num("split", parts[2].trim())?,
    ))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.generator;
        let t = &mut self.train;
        match key {
            "bands" => {
                self.dataset.bands = num(key, v)?;
                g.bands = self.dataset.bands;
            }
            "sus" => {
                self.dataset.sus = num(key, v)?;
                g.sus = self.dataset.sus;
                g.filter.subsample = self.dataset.sus;
            }
            "patch" => self.dataset.patch = num(key, v)?,
            "split" => self.dataset.split = parse_split(v)?,
            "data_seed" => self.dataset.seed = num(key, v)?,
            "k_layers" => g.k_layers = num(key, v)?,
            "width" => g.width = num(key, v)?,
            "radius" => g.filter.radius = num(key, v)?,
            "eps" => g.filter.eps = num(key, v)?,
            "use_sam" => g.use_sam = flag(key, v)?,
            "use_gan" => g.use_gan = flag(key, v)?,
            "fusion" => {
                g.fusion = match v {
                    "fgf" | "guided" => Fusion::GuidedFilter,
                    "concat" => Fusion::Concat,
                    _ => return Err(invalid(format!("`fusion`: expected fgf or concat, got `{v}`"))),
                }
            }
            "epochs" => t.epochs = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "lr_decay_epoch" => t.lr_decay_epoch = num(key, v)?,
            "lr_decay" => t.lr_decay = num(key, v)?,
            "alpha" => t.alpha = num(key, v)?,
            "label_a" => t.label_a = range(key, v)?,
            "label_b" => t.label_b = range(key, v)?,
            "label_c" => t.label_c = range(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "disc_width" => t.disc_width = num(key, v)?,
            "adam_beta1" => t.adam.beta1 = num(key, v)?,
            "adam_beta2" => t.adam.beta2 = num(key, v)?,
            "adam_eps" => t.adam.eps = num(key, v)?,
            _ => return Err(invalid(format!("unknown config key `{key}`; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| invalid(format!("override `{p}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.generator.validate()?;
        self.train.validate()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.dataset;
        let g = &self.generator;
        let t = &self.train;
        let fusion = match g.fusion {
            Fusion::GuidedFilter => "fgf",
            Fusion::Concat => "concat",
        };
        let FilterParams { radius, eps, .. } = g.filter;
        let lines = [
            format!("bands = {}", d.bands),
            format!("sus = {}", d.sus),
            format!("patch = {}", d.patch),
            format!("split = {}/{}/{}", d.split.0, d.split.1, d.split.2),
            format!("data_seed = {}", d.seed),
            format!("k_layers = {}", g.k_layers),
            format!("width = {}", g.width),
            format!("radius = {radius}"),
            format!("eps = {eps:e}"),
            format!("use_sam = {}", g.use_sam),
            format!("use_gan = {}", g.use_gan),
            format!("fusion = {fusion}"),
            format!("epochs = {}", t.epochs),
            format!("batch = {}", t.batch),
            format!("lr = {:e}", t.lr),
            format!("lr_decay_epoch = {}", t.lr_decay_epoch),
            format!("lr_decay = {}", t.lr_decay),
            format!("alpha = {}", t.alpha),
            format!("label_a = {},{}", t.label_a.0, t.label_a.1),
            format!("label_b = {},{}", t.label_b.0, t.label_b.1),
            format!("label_c = {},{}", t.label_c.0, t.label_c.1),
            format!("seed = {}", t.seed),
            format!("disc_width = {}", t.disc_width),
            format!("adam_beta1 = {}", t.adam.beta1),
            format!("adam_beta2 = {}", t.adam.beta2),
            format!("adam_eps = {:e}", t.adam.eps),
        ];
        for l in lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}
