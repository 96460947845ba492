//! On-disk layout of a prepared dataset:
//! `<root>/{train,val,test}/<name>_{pan,lrms,ref}.fimg` plus `manifest.txt`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use fgf_core::gan::Dataset;
use fgf_core::image::{crop_patches, load_image, save_image, wald_degrade, DatasetSpec, WaldTriple};
use fgf_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Scene files in `dir`, sorted by name.
fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pairs multispectral and PAN scenes by file stem; any unpaired file is an
/// error listing every offender.
pub fn pair_scenes(ms_dir: &Path, pan_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let ms = scene_files(ms_dir)?;
    let pan = scene_files(pan_dir)?;
    let ms_names: BTreeSet<String> = ms.iter().map(|p| stem(p)).collect();
    let pan_names: BTreeSet<String> = pan.iter().map(|p| stem(p)).collect();
    let mut problems: Vec<String> = ms_names
        .difference(&pan_names)
        .map(|n| format!("{n}: no pan"))
        .chain(pan_names.difference(&ms_names).map(|n| format!("{n}: no ms")))
        .collect();
    if ms_names.len() != ms.len() || pan_names.len() != pan.len() {
        problems.push("duplicate scene stems".into());
    }
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(format!("unpaired scenes: {}", problems.join(", "))));
    }
    Ok(ms
        .into_iter()
        .zip(pan)
        .map(|(m, p)| (stem(&m), m, p))
        .collect())
}

/// Degrades and tiles every scene pair, shuffles the patches with
/// `spec.seed` and writes the split. Returns the manifest text.
pub fn prepare(ms_dir: &Path, pan_dir: &Path, out: &Path, spec: &DatasetSpec) -> Result<String> {
    spec.validate()?;
    let pairs = pair_scenes(ms_dir, pan_dir)?;
    let mut patches = Vec::new();
    for (name, ms_path, pan_path) in &pairs {
        let ms = load_image(ms_path)?;
        let pan = load_image(pan_path)?;
        if ms.channels() != spec.bands {
            return Err(Error::Shape(format!(
                "{name}: {} bands, expected {}",
                ms.channels(),
                spec.bands
            )));
        }
        let triple = wald_degrade(&ms, &pan, spec.sus)
            .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        for p in crop_patches(&triple, spec)? {
            patches.push((format!("{name}@{},{}", p.origin.0, p.origin.1), p.triple));
        }
    }
    let (a, b, c) = spec.split;
    let need = a + b + c;
    if patches.len() < need {
        return Err(Error::Empty(format!(
            "split {a}/{b}/{c} needs {need} patches but only {} are available (short by {})",
            patches.len(),
            need - patches.len()
        )));
    }
    patches.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    patches.truncate(need);

    let mut manifest = format!(
        "sus = {}\nbands = {}\npatch = {}\nseed = {}\nscenes = {}\npatches_available = {}\ntrain = {a}\nval = {b}\ntest = {c}\n",
        spec.sus,
        spec.bands,
        spec.patch,
        spec.seed,
        pairs.len(),
        patches.len().max(need)
    );
    let mut iter = patches.into_iter();
    for (split, count) in SPLITS.iter().zip([a, b, c]) {
        let dir = out.join(split);
        fs::create_dir_all(&dir)?;
        for i in 0..count {
            let (origin, t) = iter.next().expect("counted above");
            let name = format!("{i:05}");
            write_triple(&dir, &name, &t)?;
            manifest.push_str(&format!("{split}/{name} <- {origin}\n"));
        }
    }
    fs::write(out.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}

pub fn write_triple(dir: &Path, name: &str, t: &WaldTriple) -> Result<()> {
    save_image(&t.pan, dir.join(format!("{name}_pan.fimg")))?;
    save_image(&t.lrms, dir.join(format!("{name}_lrms.fimg")))?;
    save_image(&t.reference, dir.join(format!("{name}_ref.fimg")))
}

/// Reads one split directory as (name, triple) pairs sorted by name.
pub fn read_split(dir: &Path) -> Result<Vec<(String, WaldTriple)>> {
    let mut names = BTreeSet::new();
    for e in fs::read_dir(dir)? {
        let file = e?.file_name().to_string_lossy().into_owned();
        if let Some(n) = file.strip_suffix("_pan.fimg") {
            names.insert(n.to_string());
        }
    }
    names
        .into_iter()
        .map(|n| {
            let t = WaldTriple {
                pan: load_image(dir.join(format!("{n}_pan.fimg")))?,
                lrms: load_image(dir.join(format!("{n}_lrms.fimg")))?,
                reference: load_image(dir.join(format!("{n}_ref.fimg")))?,
            };
            Ok((n, t))
        })
        .collect()
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let load = |s: &str| -> Result<Vec<WaldTriple>> {
        let dir = root.join(s);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        Ok(read_split(&dir)?.into_iter().map(|(_, t)| t).collect())
    };
    Ok(Dataset {
        train: load("train")?,
        val: load("val")?,
        test: load("test")?,
    })
}
