use headwise::adapters::{compose_delta, init_adapter};
use headwise::analysis::{
    grad_audit_suite, rank_analysis, singular_values, verify_kernel_equivalence_shaped, verify_rank_structure,
    RANK_THRESHOLD,
};
use headwise::linalg::Matrix;
use headwise::{rng, AdapterScheme, ModelDims, Target};

#[test]
fn lora_rank_report() {
    let dims = ModelDims::attention_only(1, 12, 64).unwrap();
    let mut st = init_adapter(AdapterScheme::lora(2), Target::Q, &dims, 0).unwrap();
    st.randomize(1, 1.0);
    let r = rank_analysis(&compose_delta(&st, None, &dims).unwrap(), &dims, RANK_THRESHOLD).unwrap();
    assert_eq!(r.full_rank, 2);
    assert!(r.per_head_rank.iter().all(|&k| k <= 2));
    assert_eq!(r.shared_space_dim, 2);
}

#[test]
fn kernel_wise_rank_report() {
    let dims = ModelDims::attention_only(1, 12, 64).unwrap();
    let mut st = init_adapter(AdapterScheme::kernel_wise(1), Target::Q, &dims, 0).unwrap();
    st.randomize(2, 1.0);
    let r = rank_analysis(&compose_delta(&st, None, &dims).unwrap(), &dims, RANK_THRESHOLD).unwrap();
    assert_eq!(r.full_rank, 12);
    assert_eq!(r.per_head_rank, vec![1; 12]);
    assert_eq!(r.shared_space_dim, 12);
    assert!(r.full_rank <= r.per_head_rank.iter().sum());
}

#[test]
fn singular_values_of_diagonal() {
    let m = Matrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, -5.0, 0.0], [0.0, 0.0, 1e-12]]).unwrap();
    let s = singular_values(&m);
    assert!((s[0] - 5.0).abs() < 1e-12 && (s[1] - 3.0).abs() < 1e-12 && s[2] < 1e-11);
    assert_eq!(headwise::analysis::numerical_rank(&m, RANK_THRESHOLD), 2);
}

#[test]
fn rank_structure_at_gpt2_heads() {
    let dims = ModelDims::attention_only(1, 12, 64).unwrap();
    for check in verify_rank_structure(&dims, 50, 0).unwrap() {
        assert!(check.passed, "{}: failing seeds {:?}", check.check, check.failures);
    }
}

#[test]
fn rank_structure_at_toy_dims() {
    for check in verify_rank_structure(&ModelDims::toy(), 50, 100).unwrap() {
        assert!(check.passed, "{}: failing seeds {:?}", check.check, check.failures);
    }
}

#[test]
fn single_query_and_key_returns_value() {
    let dims = ModelDims::attention_only(1, 1, 4).unwrap();
    let r = verify_kernel_equivalence_shaped(&dims, 5, 9, 1, 1);
    assert!(r.passed);
    assert_eq!(r.worst_diff, 0.0);
}

#[test]
fn every_scheme_passes_gradient_audit() {
    let reports = grad_audit_suite(&ModelDims::toy(), 5).unwrap();
    assert_eq!(reports.len(), 6);
    for (name, r) in reports {
        assert!(r.passed, "{name}: {} at {:?}", r.worst_rel_err, r.worst_param);
        assert!(r.entries_checked > 0);
    }
}

#[test]
fn equivalence_reports_are_replayable() {
    let dims = ModelDims::toy();
    let a = headwise::analysis::verify_kernel_equivalence(&dims, 10, 42);
    let b = headwise::analysis::verify_kernel_equivalence(&dims, 10, 42);
    assert_eq!(a, b);
    let _ = rng::seeded(0);
}
