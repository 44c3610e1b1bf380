use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ldwnet_bench::random_tensor;
use ldwnet_core::network::{init_parameters, predict};
use ldwnet_core::ops::{conv3d_forward, Conv3dSpec};
use ldwnet_core::{build_network, NetworkConfig};

// Shapes follow the 9×9 patch network on a 200-band scene (97 depth
// positions after the stem).

fn stem_conv(c: &mut Criterion) {
    let spec = Conv3dSpec::new(1, 24, [1, 1, 7]).with_stride([1, 1, 2]).with_bias(true);
    let x = random_tensor(&[8, 1, 9, 9, 200], 1);
    let w = random_tensor(&spec.weight_shape(), 2);
    let b = random_tensor(&[24], 3);
    c.bench_function("conv3d/stem 1x1x7 s2, batch 8", |bench| {
        bench.iter(|| conv3d_forward(black_box(&x), &w, Some(&b), &spec).unwrap())
    });
}

fn depthwise_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d/depthwise 3x3x3");
    for channels in [12usize, 48] {
        let spec = Conv3dSpec::depthwise(channels, [3, 3, 3], [1, 1, 1]);
        let x = random_tensor(&[8, channels, 9, 9, 97], 4);
        let w = random_tensor(&spec.weight_shape(), 5);
        g.throughput(Throughput::Elements(x.numel() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |bench, _| {
            bench.iter(|| conv3d_forward(black_box(&x), &w, None, &spec).unwrap())
        });
    }
    g.finish();
}

fn pointwise_conv(c: &mut Criterion) {
    let spec = Conv3dSpec::pointwise(48, 12);
    let x = random_tensor(&[8, 48, 9, 9, 97], 6);
    let w = random_tensor(&spec.weight_shape(), 7);
    c.bench_function("conv3d/pointwise 48->12, batch 8", |bench| {
        bench.iter(|| conv3d_forward(black_box(&x), &w, None, &spec).unwrap())
    });
}

fn network_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("network/predict");
    g.sample_size(10);
    for (bands, classes) in [(103usize, 9usize), (200, 16)] {
        let graph = build_network(&NetworkConfig::new(9, bands, classes)).unwrap();
        let params = init_parameters::<f32>(&graph, 0);
        let x = random_tensor(&[16, 1, 9, 9, bands], 8);
        g.throughput(Throughput::Elements(16));
        g.bench_with_input(BenchmarkId::new("bands", bands), &bands, |bench, _| {
            bench.iter(|| predict(&graph, &params, black_box(&x)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stem_conv, depthwise_conv, pointwise_conv, network_forward);
criterion_main!(benches);
