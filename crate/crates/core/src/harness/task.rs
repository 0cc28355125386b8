use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::Target;
use crate::attention::ModelDims;
use crate::error::{Error, Result};
use crate::harness::model::Model;
use crate::linalg::Matrix;
use crate::rng;

/// Structure of the teacher's weight perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    /// Head block `h` is `W_k⁽ʰ⁾ · b⁽ʰ⁾ · a⁽ʰ⁾` with rank `teacher_rank`:
    /// every head moves in its own column space.
    HeadSpecificLowrank,
    /// `B · A` with rank `teacher_rank`: one column space for all heads.
    SharedLowrank,
    /// Full random perturbation.
    Dense,
}

fn default_targets() -> Vec<Target> {
    vec![Target::V]
}

/// A regression task: match a teacher that differs from the frozen base
/// only in the attention weights of `targets`.
///
/// Missing fields take their [`Default`] values; `dims` may be a preset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTask {
    #[serde(deserialize_with = "ModelDims::deserialize_named")]
    pub dims: ModelDims,
    pub seq_len: usize,
    pub base_seed: u64,
    pub teacher_kind: TeacherKind,
    pub teacher_rank: usize,
    /// Perturbation norm relative to the perturbed weight's norm.
    pub teacher_scale: f64,
    pub dataset_size: usize,
    pub targets: Vec<Target>,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            dims: ModelDims::toy(),
            seq_len: 16,
            base_seed: 0,
            teacher_kind: TeacherKind::HeadSpecificLowrank,
            teacher_rank: 1,
            teacher_scale: 0.5,
            dataset_size: 64,
            targets: default_targets(),
        }
    }
}

/// Names accepted by [`ToyTask::preset`].
pub const REGISTERED_TASKS: [&str; 4] = ["head-specific", "shared", "dense", "null"];

impl ToyTask {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "head-specific" => Ok(base),
            "shared" => Ok(Self {
                teacher_kind: TeacherKind::SharedLowrank,
                teacher_rank: 2,
                ..base
            }),
            "dense" => Ok(Self {
                teacher_kind: TeacherKind::Dense,
                teacher_rank: base.dims.model_dim,
                ..base
            }),
            "null" => Ok(Self {
                teacher_scale: 0.0,
                ..base
            }),
            other => Err(Error::Lookup {
                what: "task",
                name: other.to_string(),
                registered: REGISTERED_TASKS.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::config("seq_len", "must be positive"));
        }
        if self.dataset_size == 0 {
            return Err(Error::config("dataset_size", "must be positive"));
        }
        if !(self.teacher_scale >= 0.0 && self.teacher_scale.is_finite()) {
            return Err(Error::config("teacher_scale", "must be finite and non-negative"));
        }
        if self.targets.is_empty() {
            return Err(Error::config("targets", "at least one target must be perturbed"));
        }
        let limit = match self.teacher_kind {
            TeacherKind::HeadSpecificLowrank => self.dims.head_dim,
            TeacherKind::SharedLowrank | TeacherKind::Dense => self.dims.model_dim,
        };
        if self.teacher_kind != TeacherKind::Dense && (self.teacher_rank == 0 || self.teacher_rank > limit) {
            return Err(Error::config(
                "teacher_rank",
                format!("must be in 1..={limit} for {:?}", self.teacher_kind),
            ));
        }
        Ok(())
    }
}

/// Everything [`make_task`] produces.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub base: Model,
    pub teacher: Model,
    /// The teacher's weight updates per layer and target.
    pub teacher_deltas: Vec<BTreeMap<Target, Matrix>>,
    /// `(x, teacher(x))` pairs, `x` i.i.d. standard normal `seq_len × d`.
    pub dataset: Vec<(Matrix, Matrix)>,
}

/// Builds the frozen base, the perturbed teacher and the dataset.
/// Deterministic in `task.base_seed`.
pub fn make_task(task: &ToyTask) -> Result<TaskInstance> {
    task.validate()?;
    let dims = task.dims;
    let base = Model::random(dims, task.base_seed);
    let mut teacher = base.clone();
    let mut teacher_deltas = Vec::with_capacity(dims.n_layers);
    let mut rng = rng::derive(task.base_seed, 1);
    for layer in &mut teacher.layers {
        let mut deltas = BTreeMap::new();
        for &t in &task.targets {
            let oriented = teacher_update(task, &layer.w_k, &mut rng)?;
            let raw = if t == Target::O { oriented.transpose() } else { oriented };
            let norm = raw.frobenius_norm();
            let factor = if norm > 0.0 {
                task.teacher_scale * layer.weight(t).frobenius_norm() / norm
            } else {
                0.0
            };
            let delta = raw.scale(factor);
            let w = layer.weight_mut(t);
            *w = w.add(&delta)?;
            deltas.insert(t, delta);
        }
        teacher_deltas.push(deltas);
    }
    let mut data_rng = rng::derive(task.base_seed, 2);
    let dataset = (0..task.dataset_size)
        .map(|_| {
            let x = Matrix::gaussian(task.seq_len, dims.model_dim, 1.0, &mut data_rng);
            let y = teacher.forward(&x)?;
            Ok((x, y))
        })
        .collect::<Result<_>>()?;
    Ok(TaskInstance {
        base,
        teacher,
        teacher_deltas,
        dataset,
    })
}

/// Column-oriented perturbation (head blocks are column blocks).
fn teacher_update(task: &ToyTask, w_k: &Matrix, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Matrix> {
    let dims = task.dims;
    let (d, p, r) = (dims.model_dim, dims.head_dim, task.teacher_rank);
    Ok(match task.teacher_kind {
        TeacherKind::HeadSpecificLowrank => {
            let mut out = Matrix::zeros(d, d);
            for h in 0..dims.n_heads {
                let (s, e) = dims.head_range(h);
                let b = Matrix::gaussian(p, r, 1.0, rng);
                let a = Matrix::gaussian(r, p, 1.0, rng);
                let block = w_k.slice_cols(s, e)?.matmul(&b)?.matmul(&a)?;
                out.set_block(0, s, &block)?;
            }
            out
        }
        TeacherKind::SharedLowrank => {
            let b = Matrix::gaussian(d, r, 1.0, rng);
            let a = Matrix::gaussian(r, d, 1.0, rng);
            b.matmul(&a)?
        }
        TeacherKind::Dense => Matrix::gaussian(d, d, 1.0, rng),
    })
}
