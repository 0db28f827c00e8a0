use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gradgrasp::fixtures;
use gradgrasp::objective::BarrierParams;
use gradgrasp::planner::{Execution, Planner, PlannerConfig};

fn plan_sphere(c: &mut Criterion) {
    let assets = fixtures::plate_gripper_assets();
    let cloud = fixtures::sphere_fixture();
    let mut group = c.benchmark_group("plan_sphere");
    group.sample_size(10);
    for samples in [8, 40] {
        let config = PlannerConfig {
            d_gripper: fixtures::PLATE_GRIPPER_STANDOFF,
            samples,
            ..Default::default()
        };
        let planner = Planner::new(&assets, &cloud, BarrierParams::default(), config);
        group.bench_with_input(BenchmarkId::new("sequential", samples), &planner, |b, p| {
            b.iter(|| p.plan(&Execution::sequential()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", samples), &planner, |b, p| {
            b.iter(|| p.plan(&Execution::parallel(None)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, plan_sphere);
criterion_main!(benches);
