//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs with `cargo test -p headwise-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use headwise::adapters::count_params;
use headwise::analysis::{
    grad_audit_suite, verify_fast_path_equivalence, verify_kernel_equivalence, verify_merged_equivalence,
    verify_rank_structure, verify_rewrite_equivalence, EquivalenceReport,
};
use headwise::harness::{make_task, train, AdaptedModel, ToyTask, TrainConfig};
use headwise::planner::{builtin_plan, report};
use headwise::{AdapterScheme, BudgetPlan, ModelDims, Target};
use headwise_cli::Context;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "budget reproduction", limit: Duration::from_secs(1), run: budget_reproduction },
        Criterion { id: 2, name: "parameter-count parity", limit: Duration::from_secs(1), run: count_parity },
        Criterion { id: 3, name: "kernel-form equivalence", limit: Duration::from_secs(10), run: kernel_form },
        Criterion { id: 4, name: "rewrite equivalence", limit: Duration::from_secs(10), run: rewrite },
        Criterion { id: 5, name: "merged/factored and fast path", limit: Duration::from_secs(30), run: merged_and_fast },
        Criterion { id: 6, name: "gradient audit", limit: Duration::from_secs(60), run: gradient_audit },
        Criterion { id: 7, name: "rank structure", limit: Duration::from_secs(30), run: rank_structure },
        Criterion { id: 8, name: "zero-init neutrality, frozen base", limit: Duration::from_secs(120), run: neutrality },
        Criterion { id: 9, name: "trainability", limit: Duration::from_secs(300), run: trainability },
        Criterion { id: 10, name: "determinism", limit: Duration::from_secs(300), run: determinism },
    ];
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0?} limit", c.limit)),
            Err(d) => (false, d),
        };
        failures += usize::from(!ok);
        println!(
            "{} {:>2} {:<34} {:>8.2}s  {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            took.as_secs_f64(),
            detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget_reproduction() -> Outcome {
    let published = [
        ("lora-4", 0.13),
        ("kernel-mix-lite-qv-tiny", 0.07),
        ("kernel-mix-qvo-intermediate", 1.61),
        ("lora-54", 1.61),
        ("kernel-wise-lite-qv-small", 0.13),
        ("kernel-wise-mq", 1.56),
        ("kernel-wise-mv", 1.56),
        ("kernel-wise-qvo", 1.61),
        // Published as 0.13; the configuration's exact count gives 0.1185%.
        ("kernel-mix-lite-qv-small", 0.12),
    ];
    let dims = ModelDims::gpt2_small();
    for (name, want) in published {
        let r = report(&builtin_plan(name, dims).map_err(|e| e.to_string())?);
        let got = (r.percent_of_base * 100.0).round() / 100.0;
        ensure((got - want).abs() <= 0.02 + 1e-9, || format!("{name}: {got:.2}% vs {want:.2}%"))?;
    }
    let flagged = report(&builtin_plan("kernel-mix-lite-qv-small", dims).map_err(|e| e.to_string())?);
    ensure(flagged.discrepancy.is_some(), || "kernel-mix-lite-qv-small discrepancy not flagged".into())?;
    Ok(format!(
        "{} presets match; kernel-mix-lite-qv-small computed {:.4}% (flagged)",
        published.len() - 1,
        flagged.percent_of_base
    ))
}

fn count_parity() -> Outcome {
    let dims = ModelDims::attention_only(1, 12, 64).map_err(|e| e.to_string())?;
    for r in 1..=16 {
        let lite = count_params(&AdapterScheme::kernel_wise_lite(r).with_bias(false), &dims);
        let lora = count_params(&AdapterScheme::lora(r).with_bias(false), &dims);
        let formula = (2 * 12 * 64 * r) as u64;
        ensure(lite == lora && lora == formula, || format!("r = {r}: lite {lite}, lora {lora}, 2·N_h·p·r {formula}"))?;
        let with_bias = |s: AdapterScheme| count_params(&s, &dims);
        ensure(with_bias(AdapterScheme::kernel_wise_lite(r)) == with_bias(AdapterScheme::lora(r)), || {
            format!("r = {r}: counts differ with bias")
        })?;
    }
    Ok("r = 1..16 equal to 2·N_h·p·r".into())
}

fn summarize(reports: &[EquivalenceReport]) -> Outcome {
    let mut parts = Vec::new();
    for r in reports {
        ensure(r.passed && r.trials == 100, || {
            format!(
                "{} at {:?}: worst {:.3e} (tol {:.0e}) at seed {} trial {}",
                r.check, r.dims, r.worst_diff, r.tolerance, r.seed, r.worst_trial
            )
        })?;
        parts.push(format!("{} {:?} {:.1e}", r.check, r.dims, r.worst_diff));
    }
    Ok(parts.join(", "))
}

fn head_dims(n_heads: usize, head_dim: usize) -> ModelDims {
    ModelDims::attention_only(1, n_heads, head_dim).expect("positive dims")
}

fn kernel_form() -> Outcome {
    let reports: Vec<_> = [(1, 2), (4, 8), (12, 64)]
        .into_iter()
        .map(|(h, p)| verify_kernel_equivalence(&head_dims(h, p), 100, 11))
        .collect();
    summarize(&reports)
}

fn rewrite() -> Outcome {
    let reports: Vec<_> = [(4, 8), (12, 64)]
        .into_iter()
        .map(|(h, p)| verify_rewrite_equivalence(&head_dims(h, p), 100, 12))
        .collect();
    summarize(&reports)
}

fn merged_and_fast() -> Outcome {
    let dims = ModelDims::toy();
    summarize(&[verify_merged_equivalence(&dims, 100, 13), verify_fast_path_equivalence(&dims, 100, 14)])
}

fn gradient_audit() -> Outcome {
    let cases = grad_audit_suite(&ModelDims::toy(), 15).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut entries = 0;
    for (case, r) in &cases {
        ensure(r.passed && r.worst_rel_err < 1e-6, || {
            format!("{case}: {:.3e} at {}", r.worst_rel_err, r.worst_param.as_deref().unwrap_or("-"))
        })?;
        worst = worst.max(r.worst_rel_err);
        entries += r.entries_checked;
    }
    Ok(format!("{} cases, {entries} entries, worst relative error {worst:.2e}", cases.len()))
}

fn rank_structure() -> Outcome {
    let checks = verify_rank_structure(&head_dims(12, 64), 50, 16).map_err(|e| e.to_string())?;
    for c in &checks {
        ensure(c.passed && c.seeds == 50, || format!("{}: failing seeds {:?}", c.check, c.failures))?;
    }
    Ok(checks.iter().map(|c| c.check.as_str()).collect::<Vec<_>>().join(", ") + " over 50 seeds")
}

fn schemes() -> [AdapterScheme; 5] {
    [
        AdapterScheme::lora(4),
        AdapterScheme::kernel_wise(1),
        AdapterScheme::kernel_wise_lite(1),
        AdapterScheme::kernel_mix(2, 1),
        AdapterScheme::kernel_mix_lite(2, 1),
    ]
}

fn plan_for(scheme: AdapterScheme, targets: &[Target], dims: ModelDims) -> BudgetPlan {
    BudgetPlan {
        name: scheme.to_string(),
        dims,
        include_bias: scheme.include_bias,
        targets: targets.iter().map(|&t| (t, scheme)).collect(),
        published_percent: None,
    }
}

fn neutrality() -> Outcome {
    let task = ToyTask::default();
    let inst = make_task(&task).map_err(|e| e.to_string())?;
    let x = &inst.dataset[0].0;
    let base_out = inst.base.forward(x).map_err(|e| e.to_string())?;
    let base_digest = inst.base.digest();
    for scheme in schemes() {
        let plan = plan_for(scheme, &[Target::Q, Target::V, Target::O], task.dims);
        for fast in [false, true] {
            let mut m = AdaptedModel::from_plan(inst.base.clone(), &plan, 3).map_err(|e| e.to_string())?;
            m.fast_path = fast;
            let out = m.forward(x).map_err(|e| e.to_string())?;
            let same = out.as_slice().iter().zip(base_out.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("{scheme} (fast path {fast}): fresh output differs from base"))?;
        }
    }
    let plan = plan_for(AdapterScheme::kernel_mix_lite(2, 1), &[Target::Q, Target::V, Target::O], task.dims);
    let mut m = AdaptedModel::from_plan(inst.base.clone(), &plan, 4).map_err(|e| e.to_string())?;
    let log = train(&mut m, &inst.dataset, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure(log.steps.len() == 2000, || format!("{} steps", log.steps.len()))?;
    ensure(m.base.digest() == base_digest, || "base digest changed".into())?;
    ensure(
        log.base_weight_checksum_before == log.base_weight_checksum_after,
        || "logged checksums differ".into(),
    )?;
    Ok(format!("5 schemes bit-exact at init; base digest {}… unchanged after 2000 steps", &base_digest[..12]))
}

fn trainability() -> Outcome {
    let task = ToyTask::preset("head-specific").map_err(|e| e.to_string())?;
    ensure(
        (task.dims.n_heads, task.dims.head_dim, task.teacher_rank, task.teacher_scale) == (4, 8, 1, 0.5),
        || format!("unexpected task {task:?}"),
    )?;
    let inst = make_task(&task).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let mut ratios = Vec::new();
    for scheme in schemes() {
        let plan = plan_for(scheme, &task.targets, task.dims);
        let mut m = AdaptedModel::from_plan(inst.base.clone(), &plan, cfg.seed).map_err(|e| e.to_string())?;
        let log = train(&mut m, &inst.dataset, &cfg).map_err(|e| e.to_string())?;
        let ratio = log.final_loss / log.initial_loss;
        ensure(log.steps.len() <= 2000 && ratio < 0.1, || format!("{scheme}: final/initial {ratio:.3e}"))?;
        ratios.push(format!("{scheme} {ratio:.1e}"));
    }

    let null = ToyTask::preset("null").map_err(|e| e.to_string())?;
    let inst = make_task(&null).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for scheme in schemes() {
        let plan = plan_for(scheme, &null.targets, null.dims);
        let mut m = AdaptedModel::from_plan(inst.base.clone(), &plan, cfg.seed).map_err(|e| e.to_string())?;
        let log = train(&mut m, &inst.dataset, &cfg).map_err(|e| e.to_string())?;
        let peak = log.steps.iter().map(|s| s.loss).chain([log.initial_loss, log.final_loss]).fold(0.0, f64::max);
        ensure(peak < 1e-12, || format!("null task, {scheme}: loss reached {peak:.3e}"))?;
        worst = worst.max(peak);
    }
    Ok(format!("final/initial: {}; null task peak {worst:.1e}", ratios.join(", ")))
}

fn run_cli(args: &[&str], ctx: &Context) -> Result<(), String> {
    let mut argv = vec!["headwise"];
    argv.extend_from_slice(args);
    match headwise_cli::run(argv, ctx, &mut std::io::sink()) {
        0 => Ok(()),
        code => Err(format!("`{}` exited {code}", args.join(" "))),
    }
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ctx = Context {
        default_out: tmp.path().to_path_buf(),
        source_date_epoch: Some(1_700_000_000),
    };
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/plans");
    let plan = |n: &str| configs.join(format!("{n}.json")).display().to_string();
    let out = tmp.path().join("run");
    let out = out.to_str().unwrap();
    let plans = [plan("toy-lora-4"), plan("toy-kernel-wise-lite-1"), plan("toy-kernel-mix-2-1")].join(",");
    let runs: [&[&str]; 2] = [
        &["train", "--task", "head-specific", "--plan", &plan("toy-kernel-mix-lite-2-1"), "--out", out],
        &["compare", "--task", "head-specific", "--plans", &plans, "--out", out],
    ];
    let mut checked = 0;
    for args in runs {
        let mut snaps = Vec::new();
        for _ in 0..2 {
            let _ = std::fs::remove_dir_all(out);
            run_cli(args, &ctx)?;
            snaps.push(snapshot(Path::new(out))?);
        }
        ensure(snaps[0].len() >= 3, || format!("{}: only {} files", args[0], snaps[0].len()))?;
        for (name, bytes) in &snaps[0] {
            ensure(snaps[1].get(name) == Some(bytes), || format!("{} output {name} differs", args[0]))?;
            checked += 1;
        }
    }
    Ok(format!("train and compare: {checked} files byte-identical across repeated runs"))
}
