use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use nymkit::ids::NymMode;
use nymkit::metrics::{ksm_account, DuplicationModel};
use nymkit::nymcore::{Engine, EngineConfig, NymBoxSpec, StoreTarget, VmRole, Workload};
use nymkit::overlay::{FileEntry, Layer};
use nymkit::snapstore::{pack, unpack, KdfParams, Manifest, MockCloud};
use nymkit::transports::{select_guard_set, GuardSeed, RelayId, TransportKind};

fn layer(files: usize, size: usize) -> Layer {
    let mut l = Layer::writable();
    for i in 0..files {
        l.put(&format!("/home/user/f{i}"), FileEntry::new(vec![(i % 251) as u8; size])).unwrap();
    }
    l
}

fn archive(c: &mut Criterion) {
    let mut g = c.benchmark_group("archive");
    for kib in [64usize, 1024] {
        let anon = layer(16, kib * 64);
        let comm = layer(4, 512);
        let m = Manifest::new("bench", NymMode::Persistent, 0);
        g.throughput(Throughput::Bytes((kib * 1024) as u64));
        g.bench_with_input(BenchmarkId::new("pack", kib), &kib, |b, _| {
            b.iter(|| pack(black_box(&anon), &comm, &m, "pw", &KdfParams::FAST))
        });
        let bytes = pack(&anon, &comm, &m, "pw", &KdfParams::FAST);
        g.bench_with_input(BenchmarkId::new("unpack", kib), &kib, |b, _| b.iter(|| unpack(black_box(&bytes), "pw").unwrap()));
    }
    g.finish();
}

fn lifecycle(c: &mut Criterion) {
    let mut g = c.benchmark_group("lifecycle");
    g.sample_size(20);
    g.bench_function("create_terminate", |b| {
        let mut e = Engine::new(EngineConfig::fast()).unwrap();
        b.iter(|| {
            let id = e.create_nym(NymMode::Ephemeral, Some(TransportKind::OnionSim), None).unwrap();
            e.terminate_nym(id).unwrap();
        })
    });
    g.bench_function("store_load", |b| {
        let mut e = Engine::new(EngineConfig::fast()).unwrap();
        let mut cloud = MockCloud::new("cloud.example").with_account("u", "p");
        cloud.login("u", "p").unwrap();
        let id = e.create_nym(NymMode::Persistent, None, None).unwrap();
        e.run_workload(id, &Workload::default()).unwrap();
        e.store_nym(id, StoreTarget { object: "bench", password: "pw", backend: &mut cloud }).unwrap();
        e.terminate_nym(id).unwrap();
        b.iter(|| {
            let l = e.load_nym("bench", "pw", &mut cloud, None).unwrap();
            e.terminate_nym(l).unwrap();
        })
    });
    g.bench_function("write_file_4k", |b| {
        let mut e = Engine::new(EngineConfig::fast()).unwrap();
        let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
        let data = vec![7u8; 4096];
        let mut i = 0u32;
        b.iter(|| {
            i = (i + 1) % 512;
            e.write_file(id, VmRole::Anon, &format!("/tmp/{i}"), &data).unwrap()
        })
    });
    g.finish();
}

fn isolation(c: &mut Criterion) {
    let mut g = c.benchmark_group("probe");
    for n in [1usize, 8] {
        let mut e = Engine::new(EngineConfig::fast()).unwrap();
        for _ in 0..n {
            e.create_nym(NymMode::Ephemeral, Some(TransportKind::Incognito), None).unwrap();
        }
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| e.probe()));
    }
    g.finish();
}

fn integrity(c: &mut Criterion) {
    let e = Engine::new(EngineConfig::fast()).unwrap();
    c.bench_function("base_verify_all", |b| b.iter(|| e.base_image().verify_all().unwrap()));
    let relays: Vec<RelayId> = (0..1000).map(|i| RelayId(format!("relay{i:04}"))).collect();
    c.bench_function("guard_set_1000_relays", |b| {
        b.iter_batched(|| GuardSeed::random(), |s| select_guard_set(&s, &relays, 3).unwrap(), BatchSize::SmallInput)
    });
    let spec = NymBoxSpec::default();
    let pools = DuplicationModel::default().nymbox_pools(8, spec.anonvm.host_mb(), spec.commvm.host_mb());
    let mut g = c.benchmark_group("ksm");
    g.sample_size(10);
    g.bench_function("account_8_nyms", |b| b.iter(|| ksm_account(black_box(&pools))));
    g.finish();
}

criterion_group!(benches, archive, lifecycle, isolation, integrity);
criterion_main!(benches);
