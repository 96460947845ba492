use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fgf_core::autodiff::{Graph, Shape, Tensor};
use fgf_core::gan::{Generator, GeneratorConfig};
use fgf_core::{box_filter, fast_guided_filter, FilterParams, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(0.0..1.0))
}

fn bench_box(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = image(&mut rng, 4, 256, 256);
    let mut group = c.benchmark_group("box_filter_4x256x256");
    for r in [1, 4, 16] {
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| b.iter(|| box_filter(&img, r)));
    }
    group.finish();
}

fn bench_fgf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let guide_lo = image(&mut rng, 1, 64, 64);
    let input_lo = image(&mut rng, 4, 64, 64);
    let guide_hi = image(&mut rng, 1, 256, 256);
    let params = FilterParams::new(2, 1e-2, 4).unwrap();
    c.bench_function("fast_guided_filter_4x64_to_256", |b| {
        b.iter(|| fast_guided_filter(&guide_lo, &input_lo, &guide_hi, &params).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = |s: Shape| Tensor::<f32>::from_fn(s, |_| rng.gen_range(-1.0..1.0));
    let x = t(Shape::new(8, 32, 32, 32));
    let w = t(Shape::new(32, 32, 3, 3));
    c.bench_function("conv3x3_32ch_8x32x32_fwd_bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let wi = g.input(w.clone());
            let y = g.conv2d(xi, wi, None, 1, 1).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap()
        })
    });
}

fn bench_generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gen = Generator::<f32>::new(GeneratorConfig::new(4, 4), 0).unwrap();
    let pan = image(&mut rng, 1, 128, 128);
    let lrms = image(&mut rng, 4, 32, 32);
    let mut group = c.benchmark_group("generator");
    group.sample_size(10);
    group.bench_function("predict_128", |b| b.iter(|| gen.predict(&pan, &lrms).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_box, bench_fgf, bench_conv, bench_generator);
criterion_main!(benches);
