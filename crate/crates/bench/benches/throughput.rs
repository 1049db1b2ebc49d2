use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dilseg::arch::{ArchConfig, ModelKind, NetGraph, Network};
use dilseg::contour::{msd, PointSet};
use dilseg::tensor::kernels::{self, ConvGeom};
use dilseg::tensor::{Padding, Tensor};

fn pseudo(i: usize) -> f32 {
    ((i.wrapping_mul(2654435761)) % 1000) as f32 / 1000.0
}

/// One inference pass per model at its default width.
fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_128");
    g.sample_size(10);
    for kind in ModelKind::ALL {
        let graph = NetGraph::build(kind, ArchConfig::default()).unwrap();
        let mut net = Network::<f32>::new(graph, 0);
        let x = Tensor::from_fn(&[1, 1, 128, 128], pseudo);
        g.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| net.predict(black_box(x.clone())).unwrap())
        });
    }
    g.finish();
}

/// Dilated 3x3 against the equivalent dense kernel it replaces.
fn dilated_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv_16ch_64px");
    let x: Vec<f32> = (0..16 * 64 * 64).map(pseudo).collect();
    for d in [1usize, 2, 4] {
        let k = 2 * d + 1;
        let dense: Vec<f32> = (0..16 * 16 * k * k).map(pseudo).collect();
        let small: Vec<f32> = (0..16 * 16 * 9).map(pseudo).collect();
        let dil = ConvGeom::new([1, 16, 64, 64], [16, 16, 3, 3], d, 1, Padding::Same).unwrap();
        let full = ConvGeom::new([1, 16, 64, 64], [16, 16, k, k], 1, 1, Padding::Same).unwrap();
        g.bench_function(BenchmarkId::new("dilated", d), |b| {
            b.iter(|| kernels::conv2d_forward(&dil, black_box(&x), &small, None))
        });
        g.bench_function(BenchmarkId::new("dense", k), |b| {
            b.iter(|| kernels::conv2d_forward(&full, black_box(&x), &dense, None))
        });
    }
    g.finish();
}

/// MSD between two wavy 82-pixel contours.
fn contour_distance(c: &mut Criterion) {
    let curve = |phase: f64| {
        PointSet::new((0..82).map(|col| {
            let row = 41.0 + 12.0 * ((col as f64) / 9.0 + phase).sin();
            (row.round() as usize, col)
        }))
    };
    let (u, v) = (curve(0.0), curve(0.4));
    c.bench_function("msd_82px", |b| b.iter(|| msd(black_box(&u), black_box(&v)).unwrap()));
}

criterion_group!(benches, forward, dilated_conv, contour_distance);
criterion_main!(benches);
