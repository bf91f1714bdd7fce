use criterion::{black_box, criterion_group, criterion_main, Criterion};
use stlth_bench::{batch, experiment, tensor};
use stlth_core::lottery::{initial_params, train, TrainStart};
use stlth_core::models::{init_parameters, stylize, ModelKind};
use stlth_core::numerics::{conv2d, Padding, Tape};
use stlth_core::pruning::{global_magnitude_prune, PruningMask, Scope};

fn conv(c: &mut Criterion) {
    let x = tensor(&[4, 32, 32, 32], 1);
    let w = tensor(&[32, 32, 3, 3], 2);
    c.bench_function("conv2d 4x32x32x32 k3 forward", |b| {
        b.iter(|| conv2d(black_box(&x), &w, None, 1, Padding::Reflect).unwrap())
    });
    c.bench_function("conv2d 4x32x32x32 k3 forward+backward", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let (xv, wv) = (t.leaf(x.clone(), true), t.leaf(w.clone(), true));
            let y = t.conv2d(xv, wv, None, 1, Padding::Reflect).unwrap();
            let s = t.sum(y);
            t.backward(s).unwrap();
            black_box(t.grad(wv).map(|g| g[0]))
        })
    });
}

fn prune(c: &mut Criterion) {
    let params = init_parameters(ModelKind::SANetToy, 3);
    let dense = PruningMask::ones(&params);
    c.bench_function("global magnitude prune, full-width SANet", |b| {
        b.iter(|| global_magnitude_prune(black_box(&params), &dense, 0.2, Scope::PT).unwrap())
    });
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    for kind in [ModelKind::AdaInToy, ModelKind::SANetToy] {
        let (cfg, exp) = experiment(kind, 32);
        let params = initial_params(&cfg, &exp).unwrap();
        let mask = PruningMask::ones(&params);
        g.bench_function(format!("{kind} train step, batch 4, 32px"), |b| {
            b.iter(|| {
                let mut stream = exp.dataset.stream(stlth_core::data::Split::Train, 0);
                let st = TrainStart { params: params.clone(), adam: None, iteration: 0, init_seed: 0 };
                train(st, &mut stream, 1, &mask, &cfg.train, &exp.yard, &[], |_| Ok(())).unwrap()
            })
        });
        let (cs, ss) = batch(&exp, 4);
        g.bench_function(format!("{kind} stylize, batch 4, 32px"), |b| {
            b.iter(|| stylize(black_box(&cs), &ss, &params, None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, prune, step);
criterion_main!(benches);
