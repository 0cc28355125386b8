//! Numerical checks of the structural claims behind the adapters.
//!
//! - numerical rank and column-space containment via SVD;
//! - equivalence of softmax attention and the kernel smoother `D⁻¹ κ(Q, K) V`;
//! - equivalence of the concatenated and head-sum forms of the output map;
//! - autodiff gradients of every adapter factor against central differences.
//!
//! Checks report failures instead of returning errors.

use faer::Mat;
use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{
    adapted_weight, compose_delta, factored_forward, init_adapter, lite_fast_forward, AdapterScheme, AdapterState, Target,
};
use crate::attention::{attention_head, attention_layer, kernel_view, rewritten_attention, AttentionWeights, ModelDims};
use crate::error::{Error, Result};
use crate::harness::{AdaptedModel, Model};
use crate::linalg::gradcheck::{finite_diff_grad, relative_error, FD_STEP};
use crate::linalg::Matrix;
use crate::rng;

/// Relative singular-value cutoff for numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;
/// Tolerance for two evaluation orders of the same quantity.
pub const EQUIVALENCE_TOL: f64 = 1e-12;
/// Tolerance when one path merges a `d × d` product and the other does not.
pub const MERGED_TOL: f64 = 1e-9;
/// Worst acceptable autodiff vs finite-difference relative error.
pub const GRAD_TOL: f64 = 1e-6;

fn to_faer(m: &Matrix) -> Mat<f64> {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s = to_faer(m).singular_values().expect("SVD of finite input converges");
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `threshold × σ_max`; 0 for a zero matrix.
pub fn numerical_rank(m: &Matrix, threshold: f64) -> usize {
    let s = singular_values(m);
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > threshold * max).count()
}

/// Orthonormal basis of the column space, or `None` for a zero matrix.
pub fn column_basis(m: &Matrix, threshold: f64) -> Option<Matrix> {
    let svd = to_faer(m).thin_svd().expect("SVD of finite input converges");
    let (u, s) = (svd.U(), svd.S().column_vector());
    let max = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..s.nrows()).filter(|&i| s[i] > threshold * max).collect();
    Some(Matrix::from_fn(m.rows(), keep.len(), |i, j| u[(i, keep[j])]))
}

/// Whether the columns of `block` lie in the span of `basis`:
/// `rank([basis | block]) == rank(basis)`.
pub fn span_contains(basis: &Matrix, block: &Matrix, threshold: f64) -> Result<bool> {
    let joined = Matrix::concat_cols(&[basis, block])?;
    Ok(numerical_rank(&joined, threshold) == numerical_rank(basis, threshold))
}

/// Rank structure of an update `ΔW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Numerical rank of each head's column block.
    pub per_head_rank: Vec<usize>,
    pub full_rank: usize,
    /// Rank of the concatenated orthonormal bases of all head blocks.
    pub shared_space_dim: usize,
    pub threshold: f64,
}

/// Ranks of the column blocks of `delta` and of `delta` itself.
pub fn rank_analysis(delta: &Matrix, dims: &ModelDims, threshold: f64) -> Result<RankReport> {
    let d = dims.model_dim;
    if delta.shape() != (d, d) {
        return Err(Error::Dimension {
            op: "rank_analysis",
            left: (d, d),
            right: delta.shape(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("threshold {threshold} outside (0, 1)")));
    }
    if !delta.is_finite() {
        return Err(Error::Contract("update has non-finite entries".into()));
    }
    let mut per_head_rank = Vec::with_capacity(dims.n_heads);
    let mut bases = Vec::new();
    for h in 0..dims.n_heads {
        let (s, e) = dims.head_range(h);
        let block = delta.slice_cols(s, e)?;
        per_head_rank.push(numerical_rank(&block, threshold));
        if let Some(b) = column_basis(&block, threshold) {
            if b.cols() > 0 {
                bases.push(b);
            }
        }
    }
    let shared_space_dim = if bases.is_empty() {
        0
    } else {
        let refs: Vec<&Matrix> = bases.iter().collect();
        numerical_rank(&Matrix::concat_cols(&refs)?, threshold)
    };
    Ok(RankReport {
        per_head_rank,
        full_rank: numerical_rank(delta, threshold),
        shared_space_dim,
        threshold,
    })
}

/// Outcome of a dual-path equivalence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub check: String,
    pub dims: (usize, usize),
    pub seed: u64,
    pub trials: usize,
    pub worst_diff: f64,
    /// Trial index of the worst difference; rerun with the same seed to replay.
    pub worst_trial: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    fn new(check: &str, dims: &ModelDims, seed: u64, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            dims: (dims.n_heads, dims.head_dim),
            seed,
            trials: 0,
            worst_diff: 0.0,
            worst_trial: 0,
            tolerance,
            passed: true,
        }
    }

    fn record(&mut self, trial: usize, diff: f64) {
        self.trials += 1;
        // NaN counts as a failure
        if diff.is_nan() || diff > self.worst_diff {
            self.worst_diff = diff;
            self.worst_trial = trial;
        }
        self.passed = self.worst_diff < self.tolerance;
    }
}

/// Softmax attention vs `D⁻¹ κ(Q, K) V` for every head, with query and key
/// counts drawn per trial from `1..=8`.
pub fn verify_kernel_equivalence(dims: &ModelDims, trials: usize, seed: u64) -> EquivalenceReport {
    let mut report = EquivalenceReport::new("kernel", dims, seed, EQUIVALENCE_TOL);
    for trial in 0..trials {
        let mut r = rng::derive(seed, trial as u64);
        let n = r.random_range(1..=8);
        let big_n = r.random_range(1..=8);
        report.record(trial, kernel_trial(dims, n, big_n, &mut r));
    }
    report
}

/// [`verify_kernel_equivalence`] with fixed query (`n`) and key (`big_n`) counts.
pub fn verify_kernel_equivalence_shaped(
    dims: &ModelDims,
    trials: usize,
    seed: u64,
    n: usize,
    big_n: usize,
) -> EquivalenceReport {
    let mut report = EquivalenceReport::new("kernel", dims, seed, EQUIVALENCE_TOL);
    for trial in 0..trials {
        let mut r = rng::derive(seed, trial as u64);
        report.record(trial, kernel_trial(dims, n, big_n, &mut r));
    }
    report
}

fn kernel_trial<R: Rng>(dims: &ModelDims, n: usize, big_n: usize, r: &mut R) -> f64 {
    let p = dims.head_dim;
    let mut worst: f64 = 0.0;
    for _ in 0..dims.n_heads {
        let q = Matrix::gaussian(n, p, 1.0, r);
        let k = Matrix::gaussian(big_n, p, 1.0, r);
        let v = Matrix::gaussian(big_n, p, 1.0, r);
        let diff = (|| -> Result<f64> {
            let softmax = attention_head(&q, &k, &v, p)?;
            let view = kernel_view(&q, &k, p)?.with_coefficients(v.clone());
            let rows = view.weights();
            let mut stochastic: f64 = 0.0;
            for i in 0..rows.rows() {
                stochastic = stochastic.max((rows.row(i).iter().sum::<f64>() - 1.0).abs());
            }
            Ok(softmax.max_abs_diff(&view.estimate()?)?.max(stochastic))
        })()
        .unwrap_or(f64::INFINITY);
        worst = worst.max(diff);
    }
    worst
}

/// Concatenated output map plus `b_o` vs the head-sum form plus `b_o`.
pub fn verify_rewrite_equivalence(dims: &ModelDims, trials: usize, seed: u64) -> EquivalenceReport {
    let mut report = EquivalenceReport::new("rewrite", dims, seed, EQUIVALENCE_TOL);
    for trial in 0..trials {
        let mut r = rng::derive(seed, trial as u64);
        let n = r.random_range(1..=8);
        let w = AttentionWeights::random(dims, 0.1, &mut r);
        let x = Matrix::gaussian(n, dims.model_dim, 1.0, &mut r);
        let diff = (|| -> Result<f64> {
            let concat = attention_layer(&x, &w, dims)?;
            let summed = rewritten_attention(&x, &w, dims)?.add_row(&w.b_o)?;
            concat.max_abs_diff(&summed)
        })()
        .unwrap_or(f64::INFINITY);
        report.record(trial, diff);
    }
    report
}

/// One adapter of every kind with ranks that fit `dims`.
pub fn sample_schemes(dims: &ModelDims) -> [AdapterScheme; 5] {
    let d = dims.model_dim;
    let p = dims.head_dim;
    [
        AdapterScheme::lora(d.min(4)),
        AdapterScheme::kernel_wise(d.min(2)),
        AdapterScheme::kernel_wise_lite(p.min(2)),
        AdapterScheme::kernel_mix(d.min(2), 1),
        AdapterScheme::kernel_mix_lite(d.min(2), 1),
    ]
}

fn random_state(scheme: AdapterScheme, target: Target, dims: &ModelDims, seed: u64) -> Result<AdapterState> {
    let mut st = init_adapter(scheme, target, dims, seed)?;
    st.randomize(seed, 0.1);
    Ok(st)
}

/// `X · (W + ΔW)` vs the factored product `X W + X ΔW` for every scheme
/// and target, with random factors.
pub fn verify_merged_equivalence(dims: &ModelDims, trials: usize, seed: u64) -> EquivalenceReport {
    let mut report = EquivalenceReport::new("merged-factored", dims, seed, MERGED_TOL);
    for trial in 0..trials {
        let mut r = rng::derive(seed, trial as u64);
        let n = r.random_range(1..=8);
        let w = AttentionWeights::random(dims, 0.1, &mut r);
        let x = Matrix::gaussian(n, dims.model_dim, 1.0, &mut r);
        let state_seed: u64 = r.random();
        let diff = (|| -> Result<f64> {
            let mut worst: f64 = 0.0;
            for scheme in sample_schemes(dims) {
                for t in Target::ALL {
                    let st = random_state(scheme, t, dims, state_seed)?;
                    let merged = x.matmul(&adapted_weight(w.weight(t), &st, Some(&w), dims)?)?;
                    let factored = factored_forward(&x, &st, &w, dims)?;
                    worst = worst.max(merged.max_abs_diff(&factored)?);
                }
            }
            Ok(worst)
        })()
        .unwrap_or(f64::INFINITY);
        report.record(trial, diff);
    }
    report
}

/// Lite projections computed from the reused keys vs the merged weight,
/// both for a single projection and for a whole adapted model with lite
/// adapters on `Q` and `V`.
pub fn verify_fast_path_equivalence(dims: &ModelDims, trials: usize, seed: u64) -> EquivalenceReport {
    let mut report = EquivalenceReport::new("fast-path", dims, seed, MERGED_TOL);
    let p = dims.head_dim;
    let lite = [
        AdapterScheme::kernel_wise_lite(p.min(2)),
        AdapterScheme::kernel_mix_lite(dims.model_dim.min(2), 1),
    ];
    for trial in 0..trials {
        let mut r = rng::derive(seed, trial as u64);
        let n = r.random_range(1..=8);
        let base_seed: u64 = r.random();
        let x = Matrix::gaussian(n, dims.model_dim, 1.0, &mut r);
        let diff = (|| -> Result<f64> {
            let base = Model::random(*dims, base_seed);
            let w = &base.layers[0];
            let keys = x.matmul(&w.w_k)?.add_row(&w.b_k)?;
            let mut worst: f64 = 0.0;
            for (i, scheme) in lite.iter().enumerate() {
                let st = random_state(*scheme, Target::Q, dims, base_seed ^ i as u64)?;
                let fast = lite_fast_forward(&x, &keys, &st, w, dims)?;
                let merged = x.matmul(&adapted_weight(&w.w_q, &st, Some(w), dims)?)?;
                worst = worst.max(fast.max_abs_diff(&merged)?);
            }
            let mut model = AdaptedModel::new(base);
            for layer in 0..dims.n_layers {
                for (t, scheme) in [(Target::Q, lite[0]), (Target::V, lite[1])] {
                    let st = random_state(scheme, t, dims, base_seed.wrapping_add((layer * 4 + t.index()) as u64))?;
                    model = model.with_adapter(layer, st)?;
                }
            }
            let merged = model.forward(&x)?;
            model.fast_path = true;
            let fast = model.forward(&x)?;
            Ok(worst.max(fast.max_abs_diff(&merged)?))
        })()
        .unwrap_or(f64::INFINITY);
        report.record(trial, diff);
    }
    report
}

/// One structural rank claim checked over many seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub check: String,
    pub seeds: usize,
    pub failures: Vec<u64>,
    pub passed: bool,
}

/// Rank claims over `seeds` random adapters:
/// LoRA updates have rank `r` and every head block inside `span(B)`;
/// Kernel-wise rank-1 updates reach rank `min(N_h, d)`;
/// lite head blocks stay inside `span(W_k⁽ʰ⁾)`.
pub fn verify_rank_structure(dims: &ModelDims, seeds: usize, seed: u64) -> Result<Vec<RankCheck>> {
    let outcomes = (0..seeds as u64)
        .into_par_iter()
        .map(|i| rank_trial(dims, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let failing = |k: usize| -> Vec<u64> {
        (0..seeds as u64)
            .zip(&outcomes)
            .filter(|(_, ok)| !ok[k])
            .map(|(i, _)| seed.wrapping_add(i))
            .collect()
    };
    let (lora, wise, lite) = (failing(0), failing(1), failing(2));
    let check = |name: &str, failures: Vec<u64>| RankCheck {
        check: name.to_string(),
        seeds,
        passed: failures.is_empty(),
        failures,
    };
    Ok(vec![
        check("lora-shared-column-space", lora),
        check("kernel-wise-full-rank", wise),
        check("lite-key-span", lite),
    ])
}

/// Outcomes of the LoRA, kernel-wise and lite checks for one seed.
fn rank_trial(dims: &ModelDims, s: u64) -> Result<[bool; 3]> {
    let mut r = rng::derive(s, 7);
    let w = AttentionWeights::random(dims, 0.0, &mut r);

    let lora_rank = dims.model_dim.min(4);
    let mut st = init_adapter(AdapterScheme::lora(lora_rank).with_bias(false), Target::Q, dims, s)?;
    st.randomize(s, 1.0);
    let delta = compose_delta(&st, None, dims)?;
    let b = st.factors.shared_b.as_ref().expect("LoRA has B");
    let mut lora = numerical_rank(&delta, RANK_THRESHOLD) == lora_rank;
    for h in 0..dims.n_heads {
        let (a, e) = dims.head_range(h);
        lora &= span_contains(b, &delta.slice_cols(a, e)?, RANK_THRESHOLD)?;
    }

    let mut st = init_adapter(AdapterScheme::kernel_wise(1).with_bias(false), Target::Q, dims, s)?;
    st.randomize(s, 1.0);
    let delta = compose_delta(&st, None, dims)?;
    let wise = numerical_rank(&delta, RANK_THRESHOLD) == dims.n_heads.min(dims.model_dim);

    let rank = dims.head_dim.min(2);
    let mut st = init_adapter(AdapterScheme::kernel_wise_lite(rank).with_bias(false), Target::V, dims, s)?;
    st.randomize(s, 1.0);
    let delta = compose_delta(&st, Some(&w), dims)?;
    let mut lite = true;
    for h in 0..dims.n_heads {
        let (a, e) = dims.head_range(h);
        lite &= span_contains(&w.w_k.slice_cols(a, e)?, &delta.slice_cols(a, e)?, RANK_THRESHOLD)?;
    }
    Ok([lora, wise, lite])
}

/// Worst disagreement between autodiff and central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradAuditReport {
    pub worst_rel_err: f64,
    /// Factor holding the worst entry, e.g. `layer0.V.head_b[2]`.
    pub worst_param: Option<String>,
    pub factors_checked: usize,
    pub entries_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares backward gradients of the batch loss with central differences
/// for every trainable factor of `model`.
pub fn grad_audit(model: &AdaptedModel, batch: &[(Matrix, Matrix)]) -> Result<GradAuditReport> {
    let batch_refs: Vec<&(Matrix, Matrix)> = batch.iter().collect();
    let ids = model.factor_ids();
    let mut report = GradAuditReport {
        worst_rel_err: 0.0,
        worst_param: None,
        factors_checked: 0,
        entries_checked: 0,
        tolerance: GRAD_TOL,
        passed: true,
    };
    if ids.is_empty() {
        return Ok(report);
    }
    let (_, grads) = model.loss_and_grads(&batch_refs)?;
    let mut probe = model.clone();
    for (id, analytic) in ids.iter().zip(&grads) {
        let at = model.factor(id).clone();
        let numeric = finite_diff_grad(
            |m| {
                *probe.factor_mut(id) = m.clone();
                probe.loss(&batch_refs).unwrap_or(f64::NAN)
            },
            &at,
            FD_STEP,
        );
        *probe.factor_mut(id) = at;
        for (&a, &n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let err = relative_error(a, n);
            if err.is_nan() || err > report.worst_rel_err {
                report.worst_rel_err = err;
                report.worst_param = Some(id.to_string());
            }
        }
        report.factors_checked += 1;
        report.entries_checked += analytic.len();
    }
    report.passed = report.worst_rel_err < GRAD_TOL;
    Ok(report)
}

/// [`grad_audit`] for each adapter kind placed on `Q`, `V` and `O` of every
/// layer, plus lite adapters on the key-reuse path. Factors are random so
/// every gradient is non-trivial.
pub fn grad_audit_suite(dims: &ModelDims, seed: u64) -> Result<Vec<(String, GradAuditReport)>> {
    let base = Model::random(*dims, seed);
    // targets near the base output keep the loss small, and with it the
    // rounding noise of the central differences
    let mut r = rng::derive(seed, 0x6a);
    let batch: Vec<(Matrix, Matrix)> = (0..2)
        .map(|_| {
            let x = Matrix::gaussian(4, dims.model_dim, 1.0, &mut r);
            let noise = Matrix::gaussian(4, dims.model_dim, 0.1, &mut r);
            let y = base.forward(&x)?.add(&noise)?;
            Ok((x, y))
        })
        .collect::<Result<_>>()?;
    let mut cases: Vec<(String, AdaptedModel)> = Vec::new();
    for scheme in sample_schemes(dims) {
        let mut model = AdaptedModel::new(base.clone());
        for layer in 0..dims.n_layers {
            for t in [Target::Q, Target::V, Target::O] {
                let s = seed.wrapping_add((layer * 4 + t.index()) as u64);
                model = model.with_adapter(layer, random_state(scheme, t, dims, s)?)?;
            }
        }
        cases.push((scheme.to_string(), model));
    }
    let mut fast = AdaptedModel::new(base);
    let lite = sample_schemes(dims);
    for layer in 0..dims.n_layers {
        fast = fast.with_adapter(layer, random_state(lite[2], Target::Q, dims, seed ^ layer as u64)?)?;
        fast = fast.with_adapter(layer, random_state(lite[4], Target::V, dims, seed ^ 0x100 ^ layer as u64)?)?;
    }
    fast.fast_path = true;
    cases.push(("key-reuse".to_string(), fast));
    cases
        .into_iter()
        .map(|(name, model)| Ok((name, grad_audit(&model, &batch)?)))
        .collect()
}
