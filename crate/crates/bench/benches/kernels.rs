use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use htr_core::ctc::ctc_loss;
use htr_core::imageproc::sauvola_binarize;
use htr_core::nn::conv::{Conv2d, DepthwiseSeparableConv2d, Padding};
use htr_core::wbs::{DecoderConfig, WordBeamSearch};
use htr_core::{CharSet, GrayImage, PreprocConfig, ProbMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn probs(rng: &mut ChaCha8Rng, t: usize, k: usize) -> ProbMatrix {
    ProbMatrix::softmax(&random(rng, &[t, k])).unwrap()
}

fn ctc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = probs(&mut rng, 128, 98);
    let label: Vec<usize> = (0..40).map(|_| rng.random_range(0..97)).collect();
    c.bench_function("ctc_loss T=128 C=97 L=40", |b| b.iter(|| ctc_loss(black_box(&p), black_box(&label)).unwrap()));
}

fn wbs(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let chars: Vec<char> = " abcdefghij".chars().collect();
    let charset = CharSet::with_default_wordchars(chars.clone()).unwrap();
    let corpus: String = (0..200)
        .map(|_| {
            let words: Vec<String> = (0..rng.random_range(1..6))
                .map(|_| (0..rng.random_range(2..7)).map(|_| chars[rng.random_range(1..chars.len())]).collect())
                .collect();
            words.join(" ") + "\n"
        })
        .collect();
    let dec = WordBeamSearch::from_corpus(charset, &corpus, DecoderConfig::default()).unwrap();
    let p = probs(&mut rng, 64, chars.len() + 1);
    c.bench_function("wbs decode T=64 BW=50", |b| b.iter(|| dec.decode(black_box(&p)).unwrap()));
}

fn convolutions(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, n) = (32, 48);
    let x = random(&mut rng, &[16, 128, m]);
    let standard = Conv2d::new(random(&mut rng, &[3, 3, m, n]), random(&mut rng, &[n]), (1, 1), Padding::Same).unwrap();
    let separable = DepthwiseSeparableConv2d::new(
        random(&mut rng, &[3, 3, m]),
        random(&mut rng, &[m]),
        random(&mut rng, &[1, 1, m, n]),
        random(&mut rng, &[n]),
        (1, 1),
        Padding::Same,
    )
    .unwrap();
    let mut g = c.benchmark_group("conv 16x128x32 -> 48, 3x3");
    g.bench_function("standard", |b| b.iter(|| standard.forward(black_box(&x)).unwrap()));
    g.bench_function("depthwise separable", |b| b.iter(|| separable.forward(black_box(&x)).unwrap()));
    g.finish();
}

fn sauvola(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (128, 1024);
    let img = GrayImage::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
    let cfg = PreprocConfig::default();
    c.bench_function("sauvola 128x1024 w=25", |b| b.iter(|| sauvola_binarize(black_box(&img), &cfg).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20).measurement_time(Duration::from_secs(3));
    targets = ctc, wbs, convolutions, sauvola
}
criterion_main!(kernels);
