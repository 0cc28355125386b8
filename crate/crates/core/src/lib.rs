//! Head-specific low-rank adaptation of multi-head attention.
//!
//! The crate is layered bottom-up:
//!
//! - [`linalg`]: dense `f64` matrices, an arena-based reverse-mode autodiff
//!   graph and a central finite-difference oracle.
//! - [`attention`]: multi-head attention, its kernel-smoother form
//!   `D⁻¹ κ(Q, K) V`, and the head-sum rewrite `Σ_h L⁽ʰ⁾ V⁽ʰ⁾ W_o⁽ʰ⁾`.
//! - [`adapters`]: LoRA, Kernel-wise, Kernel-wise-lite, Kernel-mix and
//!   Kernel-mix-lite weight updates, with exact parameter counting.
//! - [`planner`]: preset budget plans and parameter accounting.
//! - [`harness`]: a frozen toy transformer, a perturbed teacher and
//!   adapter-only AdamW training.
//! - [`analysis`]: numerical rank diagnostics, equivalence checks and
//!   gradient audits.

pub mod adapters;
pub mod analysis;
pub mod attention;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod planner;
pub mod rng;

pub use adapters::{AdapterScheme, AdapterState, SchemeKind, Target};
pub use attention::{AttentionWeights, ModelDims};
pub use error::{Error, Result};
pub use linalg::{Graph, Matrix, NodeId};
pub use planner::{BudgetPlan, BudgetReport};
