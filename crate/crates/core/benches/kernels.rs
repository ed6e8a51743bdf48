use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gcl_core::graph::gcn_normalized_adjacency;
use gcl_core::numerics::{Arch, DenseMatrix, ModelParams};
use gcl_core::proto::PrototypeBank;
use gcl_core::testkit::{synth_tag, SynthConfig};
use gcl_core::trainers::{fisher_diagonal, SessionData};
use gcl_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn dense(rows: usize, cols: usize, salt: u64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|i| {
            let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(salt);
            ((x >> 33) % 1000) as f64 / 500.0 - 1.0
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

fn kernels(c: &mut Criterion) {
    let cfg = SynthConfig {
        num_classes: 8,
        nodes_per_class: 250,
        feature_dim: 64,
        intra_p: 0.02,
        inter_p: 0.001,
        ..SynthConfig::default()
    };
    let g = synth_tag(&cfg).unwrap();
    let adj = gcn_normalized_adjacency(&g);
    let x = g.features().clone();
    let w = dense(64, 64, 1);

    let mut group = c.benchmark_group("spmm");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| adj.spmm_with(&x, exec).unwrap()));
    }
    group.finish();

    let mut group = c.benchmark_group("matmul");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| x.matmul_with(&w, exec).unwrap()));
    }
    group.finish();

    let mut bank = PrototypeBank::new(64, 1.0).unwrap();
    let protos: BTreeMap<usize, Vec<f64>> = (0..32).map(|c| (c, dense(1, 64, 100 + c as u64).into_vec())).collect();
    bank.insert(protos, 0).unwrap();
    let mut group = c.benchmark_group("predict_batch");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| bank.predict_batch(&x, None, exec).unwrap()));
    }
    group.finish();

    let p = ModelParams::init(Arch::Gcn2Mlp1, 64, 32, 8, 0.5, false, 0).unwrap();
    let rows: Vec<usize> = (0..g.node_count()).step_by(20).collect();
    let labels: Vec<usize> = rows.iter().map(|&v| g.labels()[v]).collect();
    let data = SessionData {
        propagation: Some(&adj),
        features: &x,
        train_rows: &rows,
        train_labels: &labels,
    };
    let mut group = c.benchmark_group("fisher");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fisher_diagonal(&p, &data, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
