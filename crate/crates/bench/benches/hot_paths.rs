use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use eegfm_bench::{matrix, refs, signals};
use eegfm_core::numerics::{Graph, Tensor};
use eegfm_core::rng::stream;
use eegfm_core::{ArtConfig, ArtEncoder, Classifier, ClassifierConfig, GraphMode};

fn encoder(c: &mut Criterion) {
    let art = ArtConfig::new(8, &[128, 200]);
    let enc = ArtEncoder::<f32>::new(art, &mut stream(1, "bench")).unwrap();
    let xs = signals(32, 400, 2);
    let inputs = refs(&xs, 8, 1);
    let mut group = c.benchmark_group("encoder_32x400");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = enc.bind(&mut g, false);
            black_box(enc.represent(&mut g, &p, &inputs).unwrap());
        })
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = enc.bind(&mut g, true);
            let r = enc.represent(&mut g, &p, &inputs).unwrap();
            let loss = g.nt_xent(r, 0.5).unwrap();
            black_box(g.backward(loss).unwrap());
        })
    });
    group.finish();
}

fn nt_xent(c: &mut Criterion) {
    let z = matrix(128, 128, 3);
    c.bench_function("nt_xent_128x128_fwd_bwd", |b| {
        b.iter(|| {
            let mut g = Graph::<f32>::new();
            let v = g.param(&Tensor::from_vec(&[128, 128], z.clone()));
            let loss = g.nt_xent(v, 0.5).unwrap();
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn gat(c: &mut Criterion) {
    let clf = Classifier::<f32>::new(ClassifierConfig::new(8, 3, GraphMode::Gat), &mut stream(4, "bench")).unwrap();
    let reprs = matrix(16 * 8, 128, 5);
    c.bench_function("classifier_gat_16x8_fwd_bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = clf.bind(&mut g, true);
            let x = g.constant(Tensor::from_vec(&[16 * 8, 128], reprs.clone()));
            let out = clf.forward_from_reprs(&mut g, &p, x, 16, None).unwrap();
            let loss = g.cross_entropy(out.logits, &[0; 16]).unwrap();
            black_box(g.backward(loss).unwrap());
        })
    });
}

criterion_group!(benches, encoder, nt_xent, gat);
criterion_main!(benches);
