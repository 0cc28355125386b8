use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use headwise::adapters::{adapted_weight, compose_delta, factored_forward, init_adapter};
use headwise::attention::{attention_layer, attention_layer_node};
use headwise::harness::{make_task, train, AdaptedModel, Model, ToyTask, TrainConfig};
use headwise::{rng, AdapterScheme, AttentionWeights, BudgetPlan, Graph, Matrix, ModelDims, Target};
use std::hint::black_box;

fn gpt2_layer() -> ModelDims {
    ModelDims::attention_only(1, 12, 64).unwrap()
}

fn schemes() -> [AdapterScheme; 5] {
    [
        AdapterScheme::lora(4),
        AdapterScheme::kernel_wise(1),
        AdapterScheme::kernel_wise_lite(4),
        AdapterScheme::kernel_mix(2, 1),
        AdapterScheme::kernel_mix_lite(2, 1),
    ]
}

fn matmul(c: &mut Criterion) {
    let mut r = rng::seeded(0);
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 768] {
        let a = Matrix::gaussian(n, n, 1.0, &mut r);
        let b = Matrix::gaussian(n, n, 1.0, &mut r);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let dims = gpt2_layer();
    let mut r = rng::seeded(1);
    let w = AttentionWeights::random(&dims, 0.1, &mut r);
    let x = Matrix::gaussian(32, dims.model_dim, 1.0, &mut r);
    let y = Matrix::gaussian(32, dims.model_dim, 1.0, &mut r);
    c.bench_function("attention/forward", |b| b.iter(|| black_box(attention_layer(&x, &w, &dims).unwrap())));
    c.bench_function("attention/forward-backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let yn = g.constant(y.clone());
            let wn = w.params(&mut g);
            let out = attention_layer_node(&mut g, xn, &wn, &dims).unwrap();
            let loss = g.mse(out, yn).unwrap();
            g.backward(loss).unwrap();
            black_box(g.grad(wn.weight(Target::Q)).is_some())
        })
    });
}

fn adapters(c: &mut Criterion) {
    let dims = gpt2_layer();
    let mut r = rng::seeded(2);
    let w = AttentionWeights::random(&dims, 0.1, &mut r);
    let x = Matrix::gaussian(32, dims.model_dim, 1.0, &mut r);
    let mut compose = c.benchmark_group("compose_delta");
    for scheme in schemes() {
        let mut s = init_adapter(scheme, Target::V, &dims, 3).unwrap();
        s.randomize(4, 0.1);
        compose.bench_function(scheme.to_string(), |b| {
            b.iter(|| black_box(compose_delta(&s, Some(&w), &dims).unwrap()))
        });
    }
    compose.finish();

    let mut forward = c.benchmark_group("adapted_projection");
    for scheme in schemes() {
        let mut s = init_adapter(scheme, Target::V, &dims, 3).unwrap();
        s.randomize(4, 0.1);
        forward.bench_function(format!("{scheme}/factored"), |b| {
            b.iter(|| black_box(factored_forward(&x, &s, &w, &dims).unwrap()))
        });
        forward.bench_function(format!("{scheme}/merged"), |b| {
            b.iter(|| {
                let merged = adapted_weight(w.weight(Target::V), &s, Some(&w), &dims).unwrap();
                black_box(x.matmul(&merged).unwrap())
            })
        });
    }
    forward.finish();
}

fn train_steps(c: &mut Criterion) {
    let task = ToyTask::default();
    let inst = make_task(&task).unwrap();
    let cfg = TrainConfig {
        warmup_steps: 2,
        total_steps: 10,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_10_steps");
    for scheme in schemes() {
        let plan = BudgetPlan {
            name: scheme.to_string(),
            dims: task.dims,
            include_bias: true,
            targets: [(Target::V, scheme)].into_iter().collect(),
            published_percent: None,
        };
        group.bench_function(scheme.to_string(), |b| {
            b.iter(|| {
                let mut m = AdaptedModel::from_plan(inst.base.clone(), &plan, 0).unwrap();
                black_box(train(&mut m, &inst.dataset, &cfg).unwrap().final_loss)
            })
        });
    }
    group.finish();
    let base = Model::random(task.dims, 0);
    c.bench_function("base_forward_toy", |b| b.iter(|| black_box(base.forward(&inst.dataset[0].0).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, attention, adapters, train_steps
}
criterion_main!(benches);
