//! Multi-head self-attention and its kernel-smoother reading.
//!
//! For an input `X` (`n × d`) the sub-layer computes
//!
//! ```text
//! Q, K, V = X W_q + 1 b_qᵀ,  X W_k + 1 b_kᵀ,  X W_v + 1 b_vᵀ
//! head h  = softmax(Q⁽ʰ⁾ K⁽ʰ⁾ᵀ / √p) V⁽ʰ⁾
//! out     = (head 1, …, head N_h) W_o + 1 b_oᵀ
//! ```
//!
//! Head `h` owns columns `[h·p, (h+1)·p)` of `W_q`, `W_k`, `W_v` and rows
//! `[h·p, (h+1)·p)` of `W_o`. The softmax head equals the normalized kernel
//! smoother `D⁻¹ κ(Q, K) V` with `κ(q, k) = exp(⟨q, k⟩ / √p)`, and the output
//! can be written as the head sum `Σ_h L⁽ʰ⁾ V⁽ʰ⁾ W_o⁽ʰ⁾` (without `b_o`).
//!
//! No causal mask is applied; the number of keys may differ from the number
//! of queries.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Graph, Matrix, NodeId};

/// Architecture shape of a stack of attention sub-layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct ModelDims {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    /// Denominator for budget percentages.
    pub base_param_total: u64,
}

#[derive(Deserialize)]
struct RawDims {
    n_layers: usize,
    n_heads: usize,
    head_dim: usize,
    model_dim: Option<usize>,
    base_param_total: Option<u64>,
}

impl TryFrom<RawDims> for ModelDims {
    type Error = Error;

    fn try_from(raw: RawDims) -> Result<Self> {
        let base = raw.base_param_total.unwrap_or_else(|| {
            Self::attention_param_count(raw.n_layers, raw.n_heads * raw.head_dim)
        });
        let dims = ModelDims::new(raw.n_layers, raw.n_heads, raw.head_dim, base)?;
        if let Some(d) = raw.model_dim {
            if d != dims.model_dim {
                return Err(Error::config(
                    "dims.model_dim",
                    format!("{d} != n_heads * head_dim = {}", dims.model_dim),
                ));
            }
        }
        Ok(dims)
    }
}

impl ModelDims {
    pub fn new(n_layers: usize, n_heads: usize, head_dim: usize, base_param_total: u64) -> Result<Self> {
        for (name, v) in [("n_layers", n_layers), ("n_heads", n_heads), ("head_dim", head_dim)] {
            if v == 0 {
                return Err(Error::config(format!("dims.{name}"), "must be positive"));
            }
        }
        if base_param_total == 0 {
            return Err(Error::config("dims.base_param_total", "must be positive"));
        }
        Ok(Self {
            n_layers,
            n_heads,
            head_dim,
            model_dim: n_heads * head_dim,
            base_param_total,
        })
    }

    /// Dims whose base total counts only the attention weights and biases,
    /// `L · (4d² + 4d)`.
    pub fn attention_only(n_layers: usize, n_heads: usize, head_dim: usize) -> Result<Self> {
        let d = n_heads * head_dim;
        Self::new(n_layers, n_heads, head_dim, Self::attention_param_count(n_layers, d).max(1))
    }

    fn attention_param_count(n_layers: usize, d: usize) -> u64 {
        (n_layers * (4 * d * d + 4 * d)) as u64
    }

    /// GPT-2 small: 12 layers, 12 heads of size 64, 124,439,808 parameters.
    pub fn gpt2_small() -> Self {
        Self::new(12, 12, 64, 124_439_808).expect("valid preset")
    }

    /// Desk-scale default: 2 layers, 4 heads of size 8.
    pub fn toy() -> Self {
        Self::attention_only(2, 4, 8).expect("valid preset")
    }

    /// Looks up a named preset (`gpt2-small` or `toy`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gpt2-small" => Ok(Self::gpt2_small()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Lookup {
                what: "dims preset",
                name: other.to_string(),
                registered: vec!["gpt2-small".into(), "toy".into()],
            }),
        }
    }

    /// Serde helper accepting either a preset name or a field object.
    pub fn deserialize_named<'de, D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(de)? {
            serde_json::Value::String(name) => Self::preset(&name).map_err(D::Error::custom),
            other => serde_json::from_value(other).map_err(D::Error::custom),
        }
    }

    /// Column range of head `h` inside a `d`-wide projection.
    pub fn head_range(&self, h: usize) -> (usize, usize) {
        (h * self.head_dim, (h + 1) * self.head_dim)
    }
}

/// One of the four projection matrices of an attention sub-layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    Q,
    K,
    V,
    O,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Q, Target::K, Target::V, Target::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Q" | "q" => Some(Target::Q),
            "K" | "k" => Some(Target::K),
            "V" | "v" => Some(Target::V),
            "O" | "o" => Some(Target::O),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Q => "Q",
            Target::K => "K",
            Target::V => "V",
            Target::O => "O",
        })
    }
}

/// Weights of one attention sub-layer: `d × d` projections and `1 × d` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub b_q: Matrix,
    pub b_k: Matrix,
    pub b_v: Matrix,
    pub b_o: Matrix,
}

impl AttentionWeights {
    /// Gaussian weights with standard deviation `1/√d`; biases with
    /// standard deviation `bias_std` (zero gives exact zeros).
    pub fn random<R: Rng + ?Sized>(dims: &ModelDims, bias_std: f64, rng: &mut R) -> Self {
        let d = dims.model_dim;
        let std = 1.0 / (d as f64).sqrt();
        let mut w = || Matrix::gaussian(d, d, std, rng);
        let (w_q, w_k, w_v, w_o) = (w(), w(), w(), w());
        let mut b = || Matrix::gaussian(1, d, bias_std, rng);
        let (b_q, b_k, b_v, b_o) = (b(), b(), b(), b());
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            b_q,
            b_k,
            b_v,
            b_o,
        }
    }

    pub fn weight(&self, t: Target) -> &Matrix {
        match t {
            Target::Q => &self.w_q,
            Target::K => &self.w_k,
            Target::V => &self.w_v,
            Target::O => &self.w_o,
        }
    }

    pub fn weight_mut(&mut self, t: Target) -> &mut Matrix {
        match t {
            Target::Q => &mut self.w_q,
            Target::K => &mut self.w_k,
            Target::V => &mut self.w_v,
            Target::O => &mut self.w_o,
        }
    }

    pub fn bias(&self, t: Target) -> &Matrix {
        match t {
            Target::Q => &self.b_q,
            Target::K => &self.b_k,
            Target::V => &self.b_v,
            Target::O => &self.b_o,
        }
    }

    pub fn bias_mut(&mut self, t: Target) -> &mut Matrix {
        match t {
            Target::Q => &mut self.b_q,
            Target::K => &mut self.b_k,
            Target::V => &mut self.b_v,
            Target::O => &mut self.b_o,
        }
    }

    /// Weights then biases, in `Q, K, V, O` order.
    pub fn matrices(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("b_q", &self.b_q),
            ("b_k", &self.b_k),
            ("b_v", &self.b_v),
            ("b_o", &self.b_o),
        ]
    }

    pub fn check(&self, dims: &ModelDims) -> Result<()> {
        let d = dims.model_dim;
        for (name, m) in self.matrices() {
            let want = if name.starts_with('w') { (d, d) } else { (1, d) };
            if m.shape() != want {
                return Err(Error::Dimension {
                    op: "attention weights",
                    left: want,
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }

    /// Records every weight and bias as a constant leaf.
    pub fn constants(&self, g: &mut Graph) -> WeightNodes {
        let mut leaf = |m: &Matrix| g.constant(m.clone());
        WeightNodes {
            w: [leaf(&self.w_q), leaf(&self.w_k), leaf(&self.w_v), leaf(&self.w_o)],
            b: [leaf(&self.b_q), leaf(&self.b_k), leaf(&self.b_v), leaf(&self.b_o)],
        }
    }

    /// Records every weight and bias as a differentiable leaf.
    pub fn params(&self, g: &mut Graph) -> WeightNodes {
        let mut leaf = |m: &Matrix| g.param(m.clone());
        WeightNodes {
            w: [leaf(&self.w_q), leaf(&self.w_k), leaf(&self.w_v), leaf(&self.w_o)],
            b: [leaf(&self.b_q), leaf(&self.b_k), leaf(&self.b_v), leaf(&self.b_o)],
        }
    }
}

/// Graph handles for a layer's weights, indexed by [`Target`].
#[derive(Debug, Clone, Copy)]
pub struct WeightNodes {
    pub w: [NodeId; 4],
    pub b: [NodeId; 4],
}

impl WeightNodes {
    pub fn weight(&self, t: Target) -> NodeId {
        self.w[t.index()]
    }

    pub fn bias(&self, t: Target) -> NodeId {
        self.b[t.index()]
    }
}

fn check_input(g: &Graph, x: NodeId, dims: &ModelDims, op: &'static str) -> Result<()> {
    let (_, c) = g.shape(x);
    if c != dims.model_dim {
        return Err(Error::Dimension {
            op,
            left: g.shape(x),
            right: (dims.model_dim, dims.model_dim),
        });
    }
    Ok(())
}

/// `X W + 1 bᵀ` on graph nodes.
pub fn project_node(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// `softmax(Q_h K_hᵀ / √p) V_h` on graph nodes.
pub fn attention_head_node(g: &mut Graph, qh: NodeId, kh: NodeId, vh: NodeId, p: usize) -> Result<NodeId> {
    let (qs, ks, vs) = (g.shape(qh), g.shape(kh), g.shape(vh));
    if qs.1 != p || ks.1 != p {
        return Err(Error::Dimension {
            op: "attention_head",
            left: qs,
            right: ks,
        });
    }
    if vs.0 != ks.0 {
        return Err(Error::Dimension {
            op: "attention_head",
            left: ks,
            right: vs,
        });
    }
    let kt = g.transpose(kh);
    let scores = g.matmul(qh, kt)?;
    let scaled = g.scale(scores, 1.0 / (p as f64).sqrt());
    let weights = g.softmax_rows(scaled);
    g.matmul(weights, vh)
}

/// Per-head outputs `L⁽ʰ⁾ V⁽ʰ⁾` from full-width `Q, K, V` nodes.
pub fn head_outputs(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, dims: &ModelDims) -> Result<Vec<NodeId>> {
    let p = dims.head_dim;
    (0..dims.n_heads)
        .map(|h| {
            let (s, e) = dims.head_range(h);
            let qh = g.slice_cols(q, s, e)?;
            let kh = g.slice_cols(k, s, e)?;
            let vh = g.slice_cols(v, s, e)?;
            attention_head_node(g, qh, kh, vh, p)
        })
        .collect()
}

/// Concatenates head outputs and applies the output map: `L W_o + 1 b_oᵀ`.
pub fn attention_from_qkv(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    w_o: NodeId,
    b_o: NodeId,
    dims: &ModelDims,
) -> Result<NodeId> {
    let heads = head_outputs(g, q, k, v, dims)?;
    let cat = g.concat_cols(&heads)?;
    project_node(g, cat, w_o, b_o)
}

/// Full attention sub-layer on graph nodes.
pub fn attention_layer_node(g: &mut Graph, x: NodeId, w: &WeightNodes, dims: &ModelDims) -> Result<NodeId> {
    check_input(g, x, dims, "attention_layer")?;
    let q = project_node(g, x, w.weight(Target::Q), w.bias(Target::Q))?;
    let k = project_node(g, x, w.weight(Target::K), w.bias(Target::K))?;
    let v = project_node(g, x, w.weight(Target::V), w.bias(Target::V))?;
    attention_from_qkv(g, q, k, v, w.weight(Target::O), w.bias(Target::O), dims)
}

/// Head-sum form `Σ_h L⁽ʰ⁾ V⁽ʰ⁾ W_o⁽ʰ⁾` on graph nodes; excludes `b_o`.
pub fn rewritten_attention_node(g: &mut Graph, x: NodeId, w: &WeightNodes, dims: &ModelDims) -> Result<NodeId> {
    check_input(g, x, dims, "rewritten_attention")?;
    let q = project_node(g, x, w.weight(Target::Q), w.bias(Target::Q))?;
    let k = project_node(g, x, w.weight(Target::K), w.bias(Target::K))?;
    let v = project_node(g, x, w.weight(Target::V), w.bias(Target::V))?;
    let heads = head_outputs(g, q, k, v, dims)?;
    let mut total: Option<NodeId> = None;
    for (h, head) in heads.into_iter().enumerate() {
        let (s, e) = dims.head_range(h);
        let wo_h = g.slice_rows(w.weight(Target::O), s, e)?;
        let term = g.matmul(head, wo_h)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one head"))
}

/// Query, key and value projections of `x`.
pub fn project_qkv(x: &Matrix, w: &AttentionWeights) -> Result<(Matrix, Matrix, Matrix)> {
    let proj = |wm: &Matrix, b: &Matrix| x.matmul(wm)?.add_row(b);
    Ok((proj(&w.w_q, &w.b_q)?, proj(&w.w_k, &w.b_k)?, proj(&w.w_v, &w.b_v)?))
}

/// Output of a single head, `softmax(Q_h K_hᵀ / √p) V_h` (`n × p`).
pub fn attention_head(qh: &Matrix, kh: &Matrix, vh: &Matrix, p: usize) -> Result<Matrix> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(qh.clone()), g.constant(kh.clone()), g.constant(vh.clone()));
    let out = attention_head_node(&mut g, q, k, v, p)?;
    Ok(g.value(out).clone())
}

/// Attention sub-layer output (`n × d`).
pub fn attention_layer(x: &Matrix, w: &AttentionWeights, dims: &ModelDims) -> Result<Matrix> {
    w.check(dims)?;
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let wn = w.constants(&mut g);
    let out = attention_layer_node(&mut g, xn, &wn, dims)?;
    Ok(g.value(out).clone())
}

/// Head-sum form of the sub-layer; adding `1 b_oᵀ` recovers [`attention_layer`].
pub fn rewritten_attention(x: &Matrix, w: &AttentionWeights, dims: &ModelDims) -> Result<Matrix> {
    w.check(dims)?;
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let wn = w.constants(&mut g);
    let out = rewritten_attention_node(&mut g, xn, &wn, dims)?;
    Ok(g.value(out).clone())
}

/// Attention read as a normalized kernel smoother: `D⁻¹ κ(Q, K) C`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimatorView {
    /// `κ(q_i, k_j) = exp(⟨q_i, k_j⟩ / √p)`, `n × N`.
    pub kernel_matrix: Matrix,
    /// Row sums of the kernel matrix, `n × 1`.
    pub normalizer: Matrix,
    /// Coefficients `C`; supplied by the caller.
    pub coefficients: Option<Matrix>,
}

impl KernelEstimatorView {
    pub fn with_coefficients(mut self, c: Matrix) -> Self {
        self.coefficients = Some(c);
        self
    }

    /// Normalized weights `D⁻¹ κ(Q, K)`; rows sum to one.
    pub fn weights(&self) -> Matrix {
        let mut w = self.kernel_matrix.clone();
        let cols = w.cols();
        for (i, row) in w.as_mut_slice().chunks_mut(cols).enumerate() {
            let z = self.normalizer.get(i, 0);
            for v in row {
                *v /= z;
            }
        }
        w
    }

    /// `D⁻¹ κ(Q, K) C` for the stored coefficients.
    pub fn estimate(&self) -> Result<Matrix> {
        let c = self
            .coefficients
            .as_ref()
            .ok_or_else(|| Error::Contract("kernel view has no coefficients".into()))?;
        self.weights().matmul(c)
    }
}

/// Kernel matrix and normalizer of one head. The kernel is evaluated without
/// max-subtraction, so very large scores overflow.
pub fn kernel_view(qh: &Matrix, kh: &Matrix, p: usize) -> Result<KernelEstimatorView> {
    if qh.cols() != p || kh.cols() != p {
        return Err(Error::Dimension {
            op: "kernel_view",
            left: qh.shape(),
            right: kh.shape(),
        });
    }
    let scale = 1.0 / (p as f64).sqrt();
    let kernel_matrix = qh.matmul(&kh.transpose())?.map(|s| (s * scale).exp());
    let normalizer = Matrix::from_fn(kernel_matrix.rows(), 1, |i, _| kernel_matrix.row(i).iter().sum());
    Ok(KernelEstimatorView {
        kernel_matrix,
        normalizer,
        coefficients: None,
    })
}
