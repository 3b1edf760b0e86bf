use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rezone_core::adversary::{
    attack_builder, brute_force_token, explore, mutant_scenario, run_attack, AttackId, ExploreConfig, Mutant,
};
use rezone_core::cost::{account, CostWeights, DeploymentConfig, Workload};
use rezone_core::{RandomScheduler, SimConfig};

fn world_switch(c: &mut Criterion) {
    let mut g = c.benchmark_group("world_switch");
    for d in DeploymentConfig::ALL {
        let workload = Workload::Batched { units: 1 };
        let sim = workload.builder(d).build().unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &sim, |b, sim| {
            b.iter(|| {
                let mut s = sim.clone();
                s.run(&mut rezone_core::InOrder, 100_000).unwrap()
            })
        });
    }
    g.finish();
}

fn attacks(c: &mut Criterion) {
    let mut g = c.benchmark_group("attack_random_run");
    for a in [AttackId::A1Mapping, AttackId::A3CacheLeak, AttackId::A4CodeInject] {
        let mut seed = 0u64;
        g.bench_function(BenchmarkId::from_parameter(a.to_string()), |b| {
            b.iter(|| {
                seed += 1;
                run_attack(SimConfig::default(), a, &mut RandomScheduler::new(seed), 20_000).unwrap().0
            })
        });
    }
    g.finish();
}

fn exploration(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    g.sample_size(10);
    let a1 = attack_builder(SimConfig::default(), AttackId::A1Mapping).build().unwrap();
    g.bench_function("a1_depth_30", |b| b.iter(|| explore(&a1, &ExploreConfig::depth(30)).unwrap()));
    let mutant = mutant_scenario(Mutant::FlushCaches, true).build().unwrap();
    g.bench_function("no_flush_depth_40", |b| b.iter(|| explore(&mutant, &ExploreConfig::depth(40)).unwrap()));
    g.finish();
}

fn costing(c: &mut Criterion) {
    let events = Workload::Chatty { calls: 8 }.run(DeploymentConfig::Rz).unwrap();
    let w = CostWeights::default();
    c.bench_function("account_chatty_8", |b| b.iter(|| account(black_box(&events), &w)));
}

fn token_guessing(c: &mut Criterion) {
    let mut g = c.benchmark_group("brute_force");
    g.sample_size(10);
    g.bench_function("8_bits", |b| b.iter(|| brute_force_token(8, 7).unwrap()));
    g.finish();
}

criterion_group!(benches, world_switch, attacks, exploration, costing, token_guessing);
criterion_main!(benches);
