//! Budget plans: which scheme adapts which projection, and what it costs.
//!
//! A [`BudgetPlan`] assigns at most one [`AdapterScheme`] to each of the
//! `Q`, `K`, `V`, `O` projections, uniformly across layers. [`report`] turns a
//! plan into exact trainable-parameter totals and a percentage of the base
//! model size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::{count_params, AdapterScheme, Target};
use crate::attention::ModelDims;
use crate::error::{Error, Result};

/// Per-target scheme assignment shared by every layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetPlan {
    pub name: String,
    pub dims: ModelDims,
    pub include_bias: bool,
    /// Targets without an entry are left frozen.
    pub targets: BTreeMap<Target, AdapterScheme>,
    /// Budget percentage published for this configuration, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published_percent: Option<f64>,
}

impl BudgetPlan {
    pub fn scheme(&self, t: Target) -> Option<&AdapterScheme> {
        self.targets.get(&t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::config("targets", "at least one target must be adapted"));
        }
        for (t, s) in &self.targets {
            s.validate(&self.dims, &format!("targets.{t}"))?;
        }
        Ok(())
    }

    /// Same plan with its ranks checked against other dims.
    pub fn with_dims(&self, dims: ModelDims) -> Result<Self> {
        let plan = Self {
            dims,
            ..self.clone()
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Parameter accounting for a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub plan: String,
    pub params_per_layer: u64,
    pub params_total: u64,
    pub percent_of_base: f64,
    /// Per-layer count for each adapted target, bias included.
    pub per_target_breakdown: BTreeMap<Target, u64>,
    /// `Q : V : O` factor budgets (biases excluded), scaled so the smallest
    /// non-zero entry is 1; absent targets are 0.
    pub ratio_q_v_o: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published_percent: Option<f64>,
    /// Set when the computed percentage, rounded to two decimals, differs
    /// from the published one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<String>,
}

/// Names accepted by [`builtin_plan`].
pub const REGISTERED_PLANS: [&str; 10] = [
    "lora-4",
    "lora-54",
    "kernel-mix-lite-qv-tiny",
    "kernel-mix-lite-qv-small",
    "kernel-mix-qvo-intermediate",
    "kernel-wise-lite-qv-small",
    "kernel-wise-mq",
    "kernel-wise-mv",
    "kernel-wise-qvo",
    "kernel-mix-qvo-nlu",
];

/// Looks up a preset plan and validates it against `dims`.
pub fn builtin_plan(name: &str, dims: ModelDims) -> Result<BudgetPlan> {
    use AdapterScheme as S;
    let (targets, published): (Vec<(Target, AdapterScheme)>, f64) = match name {
        "lora-4" => (vec![(Target::Q, S::lora(4)), (Target::V, S::lora(4))], 0.13),
        "lora-54" => (vec![(Target::Q, S::lora(54)), (Target::V, S::lora(54))], 1.61),
        "kernel-mix-lite-qv-tiny" => (
            vec![(Target::Q, S::kernel_mix_lite(1, 1)), (Target::V, S::kernel_mix_lite(1, 1))],
            0.07,
        ),
        "kernel-mix-lite-qv-small" => (
            vec![(Target::Q, S::kernel_mix_lite(2, 2)), (Target::V, S::kernel_mix_lite(2, 1))],
            0.13,
        ),
        "kernel-mix-qvo-intermediate" => (
            vec![
                (Target::Q, S::kernel_mix(12, 3)),
                (Target::V, S::kernel_mix_lite(8, 8)),
                (Target::O, S::kernel_mix(8, 8)),
            ],
            1.61,
        ),
        "kernel-wise-lite-qv-small" => (
            vec![(Target::Q, S::kernel_wise_lite(4)), (Target::V, S::kernel_wise_lite(4))],
            0.13,
        ),
        "kernel-wise-mq" => (vec![(Target::Q, S::kernel_wise(12)), (Target::V, S::kernel_wise(4))], 1.56),
        "kernel-wise-mv" => (vec![(Target::Q, S::kernel_wise(4)), (Target::V, S::kernel_wise(12))], 1.56),
        "kernel-wise-qvo" => (
            vec![
                (Target::Q, S::kernel_wise(5)),
                (Target::V, S::kernel_wise_lite(10)),
                (Target::O, S::kernel_wise(10)),
            ],
            1.61,
        ),
        "kernel-mix-qvo-nlu" => (
            vec![
                (Target::Q, S::kernel_mix(2, 1)),
                (Target::V, S::kernel_mix_lite(4, 2)),
                (Target::O, S::kernel_mix(4, 2)),
            ],
            0.5,
        ),
        other => {
            return Err(Error::Lookup {
                what: "plan",
                name: other.to_string(),
                registered: REGISTERED_PLANS.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    let plan = BudgetPlan {
        name: name.to_string(),
        dims,
        include_bias: true,
        targets: targets.into_iter().collect(),
        published_percent: Some(published),
    };
    plan.validate()?;
    Ok(plan)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Exact trainable-parameter accounting for `plan`.
pub fn report(plan: &BudgetPlan) -> BudgetReport {
    let dims = &plan.dims;
    let per_target_breakdown: BTreeMap<Target, u64> =
        plan.targets.iter().map(|(&t, s)| (t, count_params(s, dims))).collect();
    let params_per_layer: u64 = per_target_breakdown.values().sum();
    let params_total = params_per_layer * dims.n_layers as u64;
    let percent_of_base = params_total as f64 / dims.base_param_total as f64 * 100.0;

    let factor_budget = |t: Target| {
        plan.scheme(t)
            .map_or(0, |s| count_params(&s.with_bias(false), dims)) as f64
    };
    let raw = [factor_budget(Target::Q), factor_budget(Target::V), factor_budget(Target::O)];
    let unit = raw.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let ratio_q_v_o = if unit.is_finite() { raw.map(|v| v / unit) } else { [0.0; 3] };

    let discrepancy = plan.published_percent.and_then(|published| {
        let computed = round2(percent_of_base);
        ((computed - published).abs() > 1e-9).then(|| {
            format!("computed {percent_of_base:.3}% rounds to {computed:.2}%, published {published:.2}%")
        })
    });

    BudgetReport {
        plan: plan.name.clone(),
        params_per_layer,
        params_total,
        percent_of_base,
        per_target_breakdown,
        ratio_q_v_o,
        published_percent: plan.published_percent,
        discrepancy,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    name: String,
    dims: RawDims,
    #[serde(default = "yes")]
    include_bias: bool,
    targets: BTreeMap<String, RawScheme>,
    #[serde(default)]
    published_percent: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDims {
    Preset(String),
    Fields(ModelDims),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    kind: crate::adapters::SchemeKind,
    #[serde(default)]
    rank_shared: usize,
    #[serde(default)]
    rank_head: usize,
    #[serde(default)]
    include_bias: Option<bool>,
}

fn yes() -> bool {
    true
}

/// Parses and validates a plan document (JSON).
///
/// `dims` is either a preset name or an object with `n_layers`, `n_heads`,
/// `head_dim` and optionally `base_param_total`. Each scheme's
/// `include_bias` defaults to the plan-level flag.
pub fn custom_plan(json: &str) -> Result<BudgetPlan> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let raw: RawPlan = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    let dims = match raw.dims {
        RawDims::Preset(name) => ModelDims::preset(&name).map_err(|e| Error::config("dims", e.to_string()))?,
        RawDims::Fields(d) => d,
    };
    let mut targets = BTreeMap::new();
    for (key, s) in raw.targets {
        let t = Target::parse(&key)
            .ok_or_else(|| Error::config(format!("targets.{key}"), "target must be one of Q, K, V, O"))?;
        let scheme = AdapterScheme {
            kind: s.kind,
            rank_shared: s.rank_shared,
            rank_head: s.rank_head,
            include_bias: s.include_bias.unwrap_or(raw.include_bias),
        };
        if targets.insert(t, scheme).is_some() {
            return Err(Error::config(format!("targets.{key}"), "duplicate target"));
        }
    }
    let plan = BudgetPlan {
        name: raw.name,
        dims,
        include_bias: raw.include_bias,
        targets,
        published_percent: raw.published_percent,
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::init_adapter;

    fn gpt2(name: &str) -> BudgetPlan {
        builtin_plan(name, ModelDims::gpt2_small()).unwrap()
    }

    /// Instantiates every factor and counts entries.
    fn brute_force_total(plan: &BudgetPlan) -> u64 {
        let mut total = 0;
        for layer in 0..plan.dims.n_layers {
            for (&t, s) in &plan.targets {
                let st = init_adapter(*s, t, &plan.dims, layer as u64).unwrap();
                total += st.trainable_params().iter().map(|m| m.len() as u64).sum::<u64>();
            }
        }
        total
    }

    #[test]
    fn table_rows() {
        let mv = gpt2("kernel-wise-mv");
        assert_eq!(mv.scheme(Target::Q), Some(&AdapterScheme::kernel_wise(4)));
        assert_eq!(mv.scheme(Target::V), Some(&AdapterScheme::kernel_wise(12)));
        let qvo = gpt2("kernel-wise-qvo");
        assert_eq!(qvo.scheme(Target::V), Some(&AdapterScheme::kernel_wise_lite(10)));
        assert_eq!(qvo.scheme(Target::O), Some(&AdapterScheme::kernel_wise(10)));
        let nlu = gpt2("kernel-mix-qvo-nlu");
        assert_eq!(nlu.scheme(Target::Q), Some(&AdapterScheme::kernel_mix(2, 1)));
        assert_eq!(nlu.scheme(Target::V), Some(&AdapterScheme::kernel_mix_lite(4, 2)));
        assert_eq!(nlu.scheme(Target::O), Some(&AdapterScheme::kernel_mix(4, 2)));
        let mix = gpt2("kernel-mix-qvo-intermediate");
        assert_eq!(mix.scheme(Target::Q), Some(&AdapterScheme::kernel_mix(12, 3)));
        assert!(mix.targets.values().all(|s| s.include_bias));
        assert!(mix.scheme(Target::K).is_none());
    }

    #[test]
    fn unknown_plan_lists_registered() {
        let err = builtin_plan("nope", ModelDims::gpt2_small()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kernel-wise-mq") && msg.contains("lora-4"), "{msg}");
    }

    #[test]
    fn lora_4_accounting() {
        let r = report(&gpt2("lora-4"));
        assert_eq!(r.params_total, 165_888);
        assert!((r.percent_of_base - 0.1333).abs() < 1e-4);
        assert!(r.discrepancy.is_none());
    }

    #[test]
    fn kernel_mix_intermediate_accounting() {
        let r = report(&gpt2("kernel-mix-qvo-intermediate"));
        assert_eq!(r.per_target_breakdown[&Target::Q], 48_384 + 768);
        assert_eq!(r.per_target_breakdown[&Target::V], 24_576 + 768);
        assert_eq!(r.per_target_breakdown[&Target::O], 92_160 + 768);
        assert_eq!(r.params_total, 2_009_088);
        assert_eq!(r.params_total, report(&gpt2("lora-54")).params_total);
    }

    #[test]
    fn kernel_wise_mq_ratio() {
        let r = report(&gpt2("kernel-wise-mq"));
        assert_eq!(r.params_total, 1_935_360);
        assert_eq!(r.ratio_q_v_o, [3.0, 1.0, 0.0]);
        let qvo = report(&gpt2("kernel-wise-qvo"));
        assert_eq!(qvo.ratio_q_v_o, [3.25, 1.0, 6.5]);
    }

    #[test]
    fn small_mix_lite_is_flagged() {
        let r = report(&gpt2("kernel-mix-lite-qv-small"));
        assert_eq!(r.params_total, 147_456);
        assert!(r.discrepancy.as_deref().unwrap().contains("0.13"));
    }

    #[test]
    fn brute_force_matches_report() {
        for name in REGISTERED_PLANS {
            let plan = gpt2(name);
            let r = report(&plan);
            assert_eq!(r.params_total, brute_force_total(&plan), "{name}");
            assert_eq!(r.params_total, r.params_per_layer * 12);
        }
    }

    #[test]
    fn custom_plans() {
        let plan = custom_plan(
            r#"{"name": "q-only", "dims": "gpt2-small", "targets": {"Q": {"kind": "lora", "rank_shared": 4}}}"#,
        )
        .unwrap();
        assert_eq!(plan.targets.len(), 1);
        assert!(plan.scheme(Target::V).is_none());

        let err = custom_plan(
            r#"{"name": "x", "dims": "toy", "targets": {"V": {"kind": "kernel-wise-lite", "rank_head": 9}}}"#,
        )
        .unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "targets.V.rank_head"), "{err}");

        let err = custom_plan(
            r#"{"name": "x", "dims": "toy", "targets": {"V": {"kind": "lora", "rank_shared": -1}}}"#,
        )
        .unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "targets.V.rank_shared"), "{err}");

        let err = custom_plan(r#"{"name": "x", "dims": "toy", "targets": {"Z": {"kind": "lora", "rank_shared": 1}}}"#)
            .unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "targets.Z"), "{err}");
    }

    #[test]
    fn builtin_round_trip() {
        for name in REGISTERED_PLANS {
            let plan = gpt2(name);
            assert_eq!(custom_plan(&plan.to_json()).unwrap(), plan, "{name}");
        }
    }

    #[test]
    fn toy_dims_reject_wide_lite_ranks() {
        assert!(builtin_plan("kernel-wise-qvo", ModelDims::toy()).is_err());
        assert!(builtin_plan("kernel-wise-lite-qv-small", ModelDims::toy()).is_ok());
    }
}
