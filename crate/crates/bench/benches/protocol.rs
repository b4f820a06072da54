use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maskinfer_bench::template;
use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::{run_protocol, TEMPLATES};
use std::hint::black_box;

fn plaintext(c: &mut Criterion) {
    let mut g = c.benchmark_group("plaintext");
    for name in TEMPLATES {
        let (model, _, x) = template(name, 1);
        g.bench_function(name, |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    }
    g.finish();
}

fn obfuscation(c: &mut Criterion) {
    let mut g = c.benchmark_group("obfuscate");
    for name in TEMPLATES {
        let (model, _, _) = template(name, 2);
        g.bench_function(name, |b| {
            b.iter(|| Enclave::new(black_box(&model), EnclaveConfig::default(), 2).unwrap())
        });
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let mut g = c.benchmark_group("inference");
    for name in TEMPLATES {
        let (_, mut enclave, x) = template(name, 3);
        g.bench_function(BenchmarkId::new("pads", name), |b| {
            b.iter(|| enclave.prepare_inference().unwrap())
        });
        g.bench_function(BenchmarkId::new("masked", name), |b| {
            b.iter(|| run_protocol(&mut enclave, black_box(&x)).unwrap().labels)
        });
    }
    g.finish();
}

criterion_group!(benches, plaintext, obfuscation, inference);
criterion_main!(benches);
