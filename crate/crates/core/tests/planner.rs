use headwise::planner::{builtin_plan, custom_plan, report, REGISTERED_PLANS};
use headwise::{ModelDims, Target};
use proptest::prelude::*;

#[test]
fn registered_plans_round_trip_and_add_up() {
    for name in REGISTERED_PLANS {
        let plan = builtin_plan(name, ModelDims::gpt2_small()).unwrap();
        assert_eq!(custom_plan(&plan.to_json()).unwrap(), plan, "{name}");
        let r = report(&plan);
        assert_eq!(r.params_total, r.params_per_layer * 12);
        assert_eq!(r.per_target_breakdown.values().sum::<u64>(), r.params_per_layer);
        assert!(!r.per_target_breakdown.contains_key(&Target::K));
    }
}

#[test]
fn equal_budget_pairs() {
    let total = |n| report(&builtin_plan(n, ModelDims::gpt2_small()).unwrap()).params_total;
    assert_eq!(total("lora-54"), total("kernel-mix-qvo-intermediate"));
    assert_eq!(total("lora-4"), total("kernel-wise-lite-qv-small"));
    assert_eq!(total("kernel-wise-mq"), total("kernel-wise-mv"));
}

#[test]
fn toy_dims_plan_with_lite_rank_above_head_dim_is_rejected() {
    let err = builtin_plan("kernel-wise-qvo", ModelDims::toy()).unwrap_err();
    assert!(err.to_string().contains("targets.V"), "{err}");
}

fn plan_json(q_shared: usize, q_head: usize, v_head: usize, bias: bool) -> String {
    format!(
        r#"{{"name": "p", "dims": "gpt2-small", "include_bias": {bias},
            "targets": {{"Q": {{"kind": "kernel-mix", "rank_shared": {q_shared}, "rank_head": {q_head}}},
                         "V": {{"kind": "kernel-wise-lite", "rank_head": {v_head}}}}}}}"#
    )
}

proptest! {
    #[test]
    fn raising_any_rank_raises_the_total(rs in 1usize..20, rh in 1usize..20, rv in 1usize..64, bias in any::<bool>()) {
        let total = |a, b, c| report(&custom_plan(&plan_json(a, b, c, bias)).unwrap()).params_total;
        let base = total(rs, rh, rv);
        prop_assert!(total(rs + 1, rh, rv) > base);
        prop_assert!(total(rs, rh + 1, rv) > base);
        prop_assert!(total(rs, rh, rv + 1) > base);
    }

    #[test]
    fn percent_is_total_over_base(rs in 1usize..20, rh in 1usize..20, rv in 1usize..64) {
        let r = report(&custom_plan(&plan_json(rs, rh, rv, true)).unwrap());
        let expect = r.params_total as f64 * 100.0 / 124_439_808.0;
        prop_assert!((r.percent_of_base - expect).abs() < 1e-12);
    }
}
