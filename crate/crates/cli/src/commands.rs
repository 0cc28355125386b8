use std::io::Write;
use std::path::{Path, PathBuf};

use headwise::analysis::{
    grad_audit_suite, verify_fast_path_equivalence, verify_kernel_equivalence, verify_merged_equivalence,
    verify_rank_structure, verify_rewrite_equivalence, EquivalenceReport, GradAuditReport, RankCheck,
};
use headwise::harness::{compare_schemes, make_task, train, AdaptedModel, ComparisonRow};
use headwise::planner::report;
use headwise::{BudgetPlan, BudgetReport, ModelDims};
use serde::Serialize;

use crate::args::{Command, Suite};
use crate::checkpoint::AdapterCheckpoint;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::{inputs, write_json, Context};

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        let _ = writeln!($out, $($arg)*);
    };
}

pub fn dispatch(command: &Command, args: &[String], ctx: &Context, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Plan {
            preset,
            config,
            dims,
            out: path,
        } => cmd_plan(preset.as_deref(), config.as_deref(), dims.as_deref(), path.as_deref(), args, ctx, out),
        Command::Verify {
            suite,
            trials,
            seed,
            dims,
            json,
        } => cmd_verify(*suite, *trials, *seed, dims, json.as_deref(), args, ctx, out),
        Command::Train {
            task,
            plan,
            train_config,
            out: dir,
        } => cmd_train(task, plan, train_config.as_deref(), dir.as_deref(), args, ctx, out),
        Command::Compare {
            task,
            plans,
            train_config,
            out: dir,
        } => cmd_compare(task, plans, train_config.as_deref(), dir.as_deref(), args, ctx, out),
    }
}

/// `1234567` → `1,234,567`.
pub fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Serialize)]
struct PlanDocument<'a> {
    plan: &'a BudgetPlan,
    report: &'a BudgetReport,
}

fn print_plan(plan: &BudgetPlan, r: &BudgetReport, out: &mut dyn Write) {
    let d = &plan.dims;
    say!(
        out,
        "plan {}: {} layers x {} heads x {} (d = {}), base {} parameters",
        plan.name,
        d.n_layers,
        d.n_heads,
        d.head_dim,
        d.model_dim,
        group_digits(d.base_param_total)
    );
    say!(out, "{:<6} {:<22} {:>6} {:>6} {:>5} {:>14}", "target", "scheme", "shared", "head", "bias", "params/layer");
    for (t, s) in &plan.targets {
        say!(
            out,
            "{:<6} {:<22} {:>6} {:>6} {:>5} {:>14}",
            t.to_string(),
            s.to_string(),
            s.rank_shared,
            s.rank_head,
            if s.include_bias { "yes" } else { "no" },
            group_digits(r.per_target_breakdown[t])
        );
    }
    say!(
        out,
        "total {} / {:.3}% of base",
        group_digits(r.params_total),
        r.percent_of_base
    );
    let [q, v, o] = r.ratio_q_v_o;
    say!(out, "factor ratio Q:V:O = {q:.2}:{v:.2}:{o:.2}");
    if let Some(p) = r.published_percent {
        say!(out, "published {p:.2}%");
    }
    if let Some(note) = &r.discrepancy {
        say!(out, "discrepancy: {note}");
    }
}

fn manifest_beside(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    preset: Option<&str>,
    config: Option<&Path>,
    dims: Option<&str>,
    path: Option<&Path>,
    args: &[String],
    ctx: &Context,
    out: &mut dyn Write,
) -> Result<()> {
    let dims = dims.map(inputs::dims).transpose()?;
    let mut manifest = RunManifest::new("plan", args, ctx.timestamp());
    let plan = match (preset, config) {
        (Some(name), _) => inputs::plan(name, dims)?,
        (None, Some(file)) => {
            manifest.config_paths.insert("plan".into(), file.display().to_string());
            let spec = file.to_string_lossy();
            if !inputs::is_path(&spec) {
                return Err(CliError::io(file, std::io::ErrorKind::NotFound.into()));
            }
            inputs::plan(&spec, dims)?
        }
        (None, None) => return Err(CliError::Usage("one of --preset or --config is required".into())),
    };
    let r = report(&plan);
    print_plan(&plan, &r, out);
    let target = path.map_or_else(|| ctx.default_out.join(format!("plan-{}.json", plan.name)), Path::to_path_buf);
    write_json(&target, &PlanDocument { plan: &plan, report: &r })?;
    manifest.outputs.push(file_name(&target));
    manifest.write(&manifest_beside(&target))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradCase {
    case: String,
    report: GradAuditReport,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    dims: ModelDims,
    seed: u64,
    trials: usize,
    passed: bool,
    equivalence: Vec<EquivalenceReport>,
    rank: Vec<RankCheck>,
    grad: Vec<GradCase>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    suite: Suite,
    trials: usize,
    seed: u64,
    dims: &str,
    json: Option<&Path>,
    args: &[String],
    ctx: &Context,
    out: &mut dyn Write,
) -> Result<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let dims = inputs::dims(dims)?;
    let wants = |s: Suite| suite == s || suite == Suite::All;
    let mut equivalence = Vec::new();
    if wants(Suite::Kernel) {
        equivalence.push(verify_kernel_equivalence(&dims, trials, seed));
    }
    if wants(Suite::Rewrite) {
        equivalence.push(verify_rewrite_equivalence(&dims, trials, seed));
    }
    if wants(Suite::Merged) {
        equivalence.push(verify_merged_equivalence(&dims, trials, seed));
    }
    if wants(Suite::FastPath) {
        equivalence.push(verify_fast_path_equivalence(&dims, trials, seed));
    }
    let rank = if wants(Suite::Rank) {
        verify_rank_structure(&dims, trials, seed)?
    } else {
        Vec::new()
    };
    let grad: Vec<GradCase> = if wants(Suite::Grad) {
        grad_audit_suite(&dims, seed)?
            .into_iter()
            .map(|(case, report)| GradCase { case, report })
            .collect()
    } else {
        Vec::new()
    };

    let mut failed = Vec::new();
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    for e in &equivalence {
        say!(
            out,
            "{:<16} {}: worst diff {:.3e} (tol {:.0e}) over {} trials, worst trial {}",
            e.check,
            verdict(e.passed),
            e.worst_diff,
            e.tolerance,
            e.trials,
            e.worst_trial
        );
        if !e.passed {
            failed.push(format!("{} (seed {}, trial {})", e.check, e.seed, e.worst_trial));
        }
    }
    for r in &rank {
        say!(out, "{:<24} {}: {} seeds, failing seeds {:?}", r.check, verdict(r.passed), r.seeds, r.failures);
        if !r.passed {
            failed.push(format!("{} (seeds {:?})", r.check, r.failures));
        }
    }
    for g in &grad {
        let r = &g.report;
        say!(
            out,
            "grad {:<19} {}: worst rel err {:.3e} (tol {:.0e}) at {} over {} entries",
            g.case,
            verdict(r.passed),
            r.worst_rel_err,
            r.tolerance,
            r.worst_param.as_deref().unwrap_or("-"),
            r.entries_checked
        );
        if !r.passed {
            failed.push(format!("grad {} at {}", g.case, r.worst_param.as_deref().unwrap_or("-")));
        }
    }

    let report = VerifyReport {
        dims,
        seed,
        trials,
        passed: failed.is_empty(),
        equivalence,
        rank,
        grad,
    };
    // A failing run always leaves a replayable report behind.
    let json = match json {
        Some(p) => Some(p.to_path_buf()),
        None if !report.passed => Some(ctx.default_out.join(format!("verify-failure-seed{seed}.json"))),
        None => None,
    };
    if let Some(path) = json.as_deref() {
        write_json(path, &report)?;
        if !report.passed {
            say!(out, "failing cases written to {}", path.display());
        }
        let mut manifest = RunManifest::new("verify", args, ctx.timestamp());
        manifest.seeds.insert("seed".into(), seed);
        manifest.outputs.push(file_name(path));
        manifest.write(&manifest_beside(path))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(failed.join("; ")))
    }
}

fn record_inputs(manifest: &mut RunManifest, task: &str, plans: &[&str], train_config: Option<&Path>) {
    if inputs::is_path(task) {
        manifest.config_paths.insert("task".into(), task.to_string());
    }
    for (i, p) in plans.iter().enumerate() {
        if inputs::is_path(p) {
            let key = if plans.len() == 1 { "plan".to_string() } else { format!("plan{i}") };
            manifest.config_paths.insert(key, p.to_string());
        }
    }
    if let Some(p) = train_config {
        manifest.config_paths.insert("train_config".into(), p.display().to_string());
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cmd_train(
    task_spec: &str,
    plan_spec: &str,
    train_config: Option<&Path>,
    dir: Option<&Path>,
    args: &[String],
    ctx: &Context,
    out: &mut dyn Write,
) -> Result<()> {
    let task = inputs::task(task_spec)?;
    let plan = inputs::plan(plan_spec, Some(task.dims))?;
    let cfg = inputs::train_config(train_config)?;
    let dir = dir.map_or_else(|| ctx.default_out.join(format!("train-{}", plan.name)), Path::to_path_buf);

    let instance = make_task(&task)?;
    let mut model = AdaptedModel::from_plan(instance.base.clone(), &plan, cfg.seed)?;
    let log = train(&mut model, &instance.dataset, &cfg)?;

    create_dir(&dir)?;
    let mut manifest = RunManifest::new("train", args, ctx.timestamp());
    record_inputs(&mut manifest, task_spec, &[plan_spec], train_config);
    manifest.seeds.insert("task_base_seed".into(), task.base_seed);
    manifest.seeds.insert("train_seed".into(), cfg.seed);

    write_json(&dir.join("train_log.json"), &log)?;
    write_text(&dir.join("loss.csv"), &log.to_csv())?;
    let checkpoint = AdapterCheckpoint {
        dims: task.dims,
        seeds: manifest.seeds.clone(),
        layers: model.adapters.clone(),
    };
    checkpoint.save(&dir.join("adapters.ckpt"))?;
    manifest.outputs = vec!["train_log.json".into(), "loss.csv".into(), "adapters.ckpt".into()];
    manifest.write(&dir.join("manifest.json"))?;

    say!(
        out,
        "trained {} ({} trainable parameters) for {} steps: loss {:.6e} -> {:.6e} ({:.4}% of initial)",
        plan.name,
        group_digits(log.trainable_param_count as u64),
        cfg.total_steps,
        log.initial_loss,
        log.final_loss,
        100.0 * log.final_loss / log.initial_loss
    );
    say!(out, "outputs in {}", dir.display());
    Ok(())
}

fn cmd_compare(
    task_spec: &str,
    plan_specs: &[String],
    train_config: Option<&Path>,
    dir: Option<&Path>,
    args: &[String],
    ctx: &Context,
    out: &mut dyn Write,
) -> Result<()> {
    if plan_specs.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two plans, got {}",
            plan_specs.len()
        )));
    }
    let task = inputs::task(task_spec)?;
    let plans = plan_specs
        .iter()
        .map(|p| inputs::plan(p, Some(task.dims)))
        .collect::<Result<Vec<_>>>()?;
    let cfg = inputs::train_config(train_config)?;
    let dir = dir.map_or_else(|| ctx.default_out.join("compare"), Path::to_path_buf);

    let rows = compare_schemes(&task, &plans, &cfg)?;

    create_dir(&dir)?;
    let csv_path = dir.join("comparison.csv");
    write_csv(&csv_path, &rows)?;
    write_json(&dir.join("comparison.json"), &rows)?;
    let mut manifest = RunManifest::new("compare", args, ctx.timestamp());
    let specs: Vec<&str> = plan_specs.iter().map(String::as_str).collect();
    record_inputs(&mut manifest, task_spec, &specs, train_config);
    manifest.seeds.insert("task_base_seed".into(), task.base_seed);
    manifest.seeds.insert("train_seed".into(), cfg.seed);
    manifest.outputs = vec!["comparison.csv".into(), "comparison.json".into()];
    manifest.write(&dir.join("manifest.json"))?;

    say!(
        out,
        "{:<32} {:>10} {:>9} {:>13} {:>13} {:>6}",
        "plan",
        "params",
        "percent",
        "initial loss",
        "final loss",
        "rank"
    );
    for r in &rows {
        say!(
            out,
            "{:<32} {:>10} {:>8.3}% {:>13.6e} {:>13.6e} {:>6}",
            r.plan,
            group_digits(r.params),
            r.percent,
            r.initial_loss,
            r.final_loss,
            r.delta_rank
        );
    }
    say!(out, "outputs in {}", dir.display());
    Ok(())
}

fn write_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let to_err = |e: csv::Error| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
