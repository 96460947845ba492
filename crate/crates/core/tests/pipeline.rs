use fgf_core::baselines::{Baseline, BaselineParams};
use fgf_core::gan::{evaluate, load_checkpoint, save_checkpoint, train, Dataset, GeneratorConfig, TrainConfig};
use fgf_core::image::{bicubic_resize, crop_patches, load_image, save_image, synth_scene, wald_degrade, DatasetSpec};
use fgf_core::{Error, ImageTensor, MetricsReport};
use proptest::prelude::*;

fn tiny_spec() -> DatasetSpec {
    DatasetSpec {
        sus: 2,
        bands: 3,
        split: (4, 2, 2),
        patch: 8,
        seed: 11,
    }
}

fn tiny_configs(epochs: usize) -> (GeneratorConfig, TrainConfig) {
    let mut gen = GeneratorConfig::new(3, 2);
    gen.width = 4;
    gen.k_layers = 2;
    let cfg = TrainConfig {
        epochs,
        batch: 2,
        disc_width: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    (gen, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fimg_round_trip_is_bitwise(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed in any::<u32>()) {
        let img = ImageTensor::from_fn(c, h, w, |k, y, x| {
            let v = (seed as f32).mul_add(1e-9, (k * 97 + y * 13 + x) as f32 * 0.37);
            if (k + y + x) % 5 == 0 { -v } else { v }
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fimg");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.dims(), img.dims());
        prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.fimg");
    save_image(&ImageTensor::filled(2, 3, 3, 0.5), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_image(&path), Err(Error::Truncated { .. })));
    std::fs::write(&path, b"GIF89a").unwrap();
    assert!(matches!(load_image(&path), Err(Error::Format(_))));
}

#[test]
fn wald_patches_are_reproducible_and_consistent() {
    let spec = tiny_spec();
    let (ms, pan) = synth_scene(3, 3, 80, 72, 2).unwrap();
    let triple = wald_degrade(&ms, &pan, 2).unwrap();
    assert_eq!(triple.lrms.dims(), (3, 20, 18));
    assert_eq!(triple.pan.dims(), (1, 40, 36));
    let a = crop_patches(&triple, &spec).unwrap();
    let b = crop_patches(&triple, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for p in &a {
        assert_eq!(p.triple.lrms.dims(), (3, 8, 8));
        assert_eq!(p.triple.reference.dims(), (3, 16, 16));
        let (y, x) = p.origin;
        assert_eq!(p.triple.reference, triple.reference.crop(2 * y, 2 * x, 16, 16).unwrap());
    }
}

#[test]
fn baselines_keep_shape_and_bicubic_matches_resampler() {
    let (ms, pan) = synth_scene(8, 4, 64, 64, 4).unwrap();
    let params = BaselineParams::default();
    let up = Baseline::Bicubic.run(&pan, &ms, 4, &params).unwrap();
    assert_eq!(up, bicubic_resize(&ms, 64, 64));
    for b in Baseline::ALL {
        let out = b.run(&pan, &ms, 4, &params).unwrap();
        assert_eq!(out.dims(), (4, 64, 64), "{}", b.name());
        assert!(out.data().iter().all(|v| v.is_finite()), "{}", b.name());
        assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
    }
    assert!(Baseline::Hpf.run(&pan, &ms, 3, &params).is_err());
}

#[test]
fn perfect_prediction_scores() {
    let (ms, _) = synth_scene(1, 4, 32, 32, 2).unwrap();
    let r = MetricsReport::compute(&ms, &ms, 2).unwrap();
    assert_eq!(r.psnr, 100.0);
    assert!((r.cc - 1.0).abs() < 1e-9);
    assert!(r.sam.abs() < 1e-3);
    assert_eq!(r.ergas, 0.0);
}

#[test]
fn short_training_run_and_checkpoint_round_trip() {
    let data = Dataset::synthetic(&tiny_spec()).unwrap();
    let (gen_cfg, cfg) = tiny_configs(3);
    let out = train(&data, &gen_cfg, &cfg, |_| {}).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.log.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(out.best_epoch <= 3);
    assert!(out.discriminator.is_some());
    let (_, best_psnr) = evaluate(&out.best, &data.val, 2).unwrap();
    let logged = out.log.iter().map(|r| r.val_psnr).fold(out.initial_val_psnr, f64::max);
    assert!((best_psnr - logged).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    save_checkpoint(&path, &out.best, out.discriminator.as_ref()).unwrap();
    let (gen, disc) = load_checkpoint(&path).unwrap();
    assert!(disc.is_some());
    let t = &data.test[0];
    assert_eq!(gen.predict(&t.pan, &t.lrms).unwrap(), out.best.predict(&t.pan, &t.lrms).unwrap());
}

#[test]
fn generator_only_run_skips_the_discriminator() {
    let data = Dataset::synthetic(&tiny_spec()).unwrap();
    let (mut gen_cfg, cfg) = tiny_configs(2);
    gen_cfg.use_gan = false;
    let out = train(&data, &gen_cfg, &cfg, |_| {}).unwrap();
    assert!(out.discriminator.is_none());
    assert!(out.log.iter().all(|r| r.g_adv == 0.0 && r.d_loss == 0.0));
}

#[test]
fn empty_splits_are_rejected() {
    let mut data = Dataset::synthetic(&tiny_spec()).unwrap();
    data.val.clear();
    let (gen_cfg, cfg) = tiny_configs(1);
    assert!(matches!(train(&data, &gen_cfg, &cfg, |_| {}), Err(Error::Empty(_))));
}
