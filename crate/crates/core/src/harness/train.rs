use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::compose_delta;
use crate::analysis::{numerical_rank, RANK_THRESHOLD};
use crate::error::{Error, Result};
use crate::harness::model::AdaptedModel;
use crate::harness::optim::{AdamW, LinearWarmup};
use crate::harness::task::{make_task, ToyTask};
use crate::linalg::Matrix;
use crate::planner::{report, BudgetPlan};
use crate::rng;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds adapter initialization and batch order.
    pub seed: u64,
    /// Reuse projected keys for lite `Q`/`V` updates.
    pub fast_path: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 8,
            warmup_steps: 500,
            total_steps: 2000,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            fast_path: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate >= 0.0 && self.learning_rate.is_finite()),
            ("batch_size", self.batch_size > 0),
            ("total_steps", self.total_steps > 0),
            ("weight_decay", self.weight_decay >= 0.0),
            ("adam_beta1", (0.0..1.0).contains(&self.adam_beta1)),
            ("adam_beta2", (0.0..1.0).contains(&self.adam_beta2)),
            ("adam_eps", self.adam_eps > 0.0),
        ];
        for (field, ok) in positive {
            if !ok {
                return Err(Error::config(field, "out of range"));
            }
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::config("warmup_steps", "must not exceed total_steps"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LinearWarmup {
        LinearWarmup {
            peak: self.learning_rate,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mini-batch loss before the update.
    pub loss: f64,
    pub lr: f64,
}

/// Record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Full-dataset loss before the first update.
    pub initial_loss: f64,
    /// Full-dataset loss after the last update.
    pub final_loss: f64,
    pub base_weight_checksum_before: String,
    pub base_weight_checksum_after: String,
    pub trainable_param_count: usize,
}

impl TrainLog {
    /// `step,loss,lr` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{}\n", s.step, s.loss, s.lr));
        }
        out
    }
}

fn dataset_loss(model: &AdaptedModel, dataset: &[(Matrix, Matrix)]) -> Result<f64> {
    let all: Vec<&(Matrix, Matrix)> = dataset.iter().collect();
    model.loss(&all)
}

/// Trains only the adapter factors of `model` with AdamW under a linear
/// warmup/decay schedule. The base weights are read, never written.
pub fn train(model: &mut AdaptedModel, dataset: &[(Matrix, Matrix)], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("empty dataset".into()));
    }
    model.fast_path = cfg.fast_path;
    let checksum_before = model.base.digest();
    let initial_loss = dataset_loss(model, dataset)?;
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = dataset.len();
    let mut epoch = 0u64;
    let mut steps = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(dataset.len()) {
            if cursor == dataset.len() {
                order.shuffle(&mut rng::derive(cfg.seed, 0x5eed_0000 + epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = model.loss_and_grads(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let lr = schedule.lr(step);
        opt.step(&mut model.factors_mut(), &grads, lr);
        steps.push(StepRecord { step, loss, lr });
    }

    let final_loss = dataset_loss(model, dataset)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: cfg.total_steps,
            loss: final_loss,
        });
    }
    Ok(TrainLog {
        steps,
        initial_loss,
        final_loss,
        base_weight_checksum_before: checksum_before,
        base_weight_checksum_after: model.base.digest(),
        trainable_param_count: model.trainable_param_count(),
    })
}

/// One row of a scheme comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub plan: String,
    pub params: u64,
    pub percent: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Largest numerical rank of any trained update `ΔW`.
    pub delta_rank: usize,
}

/// Largest numerical rank over every adapted matrix of `model`.
pub fn max_delta_rank(model: &AdaptedModel) -> Result<usize> {
    let mut best = 0;
    for (layer, map) in model.base.layers.iter().zip(&model.adapters) {
        for st in map.values() {
            let delta = compose_delta(st, Some(layer), model.dims())?;
            best = best.max(numerical_rank(&delta, RANK_THRESHOLD));
        }
    }
    Ok(best)
}

/// Trains each plan on the same task from the same seeds. Rows follow `plans`.
pub fn compare_schemes(task: &ToyTask, plans: &[BudgetPlan], cfg: &TrainConfig) -> Result<Vec<ComparisonRow>> {
    let instance = make_task(task)?;
    plans
        .par_iter()
        .map(|plan| {
            let plan = plan.with_dims(task.dims)?;
            let mut model = AdaptedModel::from_plan(instance.base.clone(), &plan, cfg.seed)?;
            let log = train(&mut model, &instance.dataset, cfg)?;
            let r = report(&plan);
            Ok(ComparisonRow {
                plan: plan.name.clone(),
                params: r.params_total,
                percent: r.percent_of_base,
                initial_loss: log.initial_loss,
                final_loss: log.final_loss,
                delta_rank: max_delta_rank(&model)?,
            })
        })
        .collect()
}
