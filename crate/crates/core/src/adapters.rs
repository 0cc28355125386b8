//! Weight-update adapters for attention projections.
//!
//! Every scheme produces an additive update `ΔW` for one `d × d` projection.
//! Viewed head by head (column block `h` for `Q`, `K`, `V`), the block of
//! `ΔW` belonging to head `h` is:
//!
//! | scheme            | block `h`                                         | trainable factors                 |
//! |-------------------|---------------------------------------------------|-----------------------------------|
//! | LoRA              | `B · A⁽ʰ⁾`                                        | `B: d×r`, `A⁽ʰ⁾: r×p`            |
//! | Kernel-wise       | `B⁽ʰ⁾ · A⁽ʰ⁾`                                     | `B⁽ʰ⁾: d×r`, `A⁽ʰ⁾: r×p`         |
//! | Kernel-wise-lite  | `W_k⁽ʰ⁾ · B_k⁽ʰ⁾ · A⁽ʰ⁾`                          | `B_k⁽ʰ⁾: p×r`, `A⁽ʰ⁾: r×p`       |
//! | Kernel-mix        | `(B_LoRA, B⁽ʰ⁾) · (A_LoRA⁽ʰ⁾; A⁽ʰ⁾)`              | both of the above                 |
//! | Kernel-mix-lite   | `B_LoRA · A_LoRA⁽ʰ⁾ + W_k⁽ʰ⁾ · B_k⁽ʰ⁾ · A⁽ʰ⁾`     | LoRA and lite factors             |
//!
//! `W_k⁽ʰ⁾` is the frozen key projection's head block and is never trained.
//! For the output projection `W_o` the head blocks are rows, so the same
//! construction is applied to `W_oᵀ` and the result transposed.
//!
//! A-side factors start Gaussian with standard deviation `1/√rank` and
//! B-side factors start at zero, so every update is exactly zero at
//! initialization. No `α/r` output scaling is applied.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionWeights, ModelDims};
use crate::error::{Error, Result};
use crate::linalg::{Graph, Matrix, NodeId};
use crate::rng;

pub use crate::attention::Target;

/// The five adaptation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Lora,
    KernelWise,
    KernelWiseLite,
    KernelMix,
    KernelMixLite,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Lora,
        SchemeKind::KernelWise,
        SchemeKind::KernelWiseLite,
        SchemeKind::KernelMix,
        SchemeKind::KernelMixLite,
    ];

    pub fn has_shared(self) -> bool {
        matches!(self, SchemeKind::Lora | SchemeKind::KernelMix | SchemeKind::KernelMixLite)
    }

    pub fn has_head(self) -> bool {
        self != SchemeKind::Lora
    }

    /// Uses the frozen `W_k⁽ʰ⁾` as head basis.
    pub fn is_lite(self) -> bool {
        matches!(self, SchemeKind::KernelWiseLite | SchemeKind::KernelMixLite)
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Lora => "LoRA",
            SchemeKind::KernelWise => "KernelWise",
            SchemeKind::KernelWiseLite => "KernelWiseLite",
            SchemeKind::KernelMix => "KernelMix",
            SchemeKind::KernelMixLite => "KernelMixLite",
        }
    }
}

fn default_true() -> bool {
    true
}

/// One adaptation method with its ranks, applied to one weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdapterScheme {
    pub kind: SchemeKind,
    /// Rank of the shared LoRA basis (LoRA and the mixes).
    #[serde(default)]
    pub rank_shared: usize,
    /// Rank of the per-head factors (every scheme but LoRA).
    #[serde(default)]
    pub rank_head: usize,
    /// Whether the adapted matrix's bias is trainable.
    #[serde(default = "default_true")]
    pub include_bias: bool,
}

impl AdapterScheme {
    pub fn lora(rank: usize) -> Self {
        Self::new(SchemeKind::Lora, rank, 0)
    }

    pub fn kernel_wise(rank: usize) -> Self {
        Self::new(SchemeKind::KernelWise, 0, rank)
    }

    pub fn kernel_wise_lite(rank: usize) -> Self {
        Self::new(SchemeKind::KernelWiseLite, 0, rank)
    }

    pub fn kernel_mix(shared: usize, head: usize) -> Self {
        Self::new(SchemeKind::KernelMix, shared, head)
    }

    pub fn kernel_mix_lite(shared: usize, head: usize) -> Self {
        Self::new(SchemeKind::KernelMixLite, shared, head)
    }

    /// A scheme of `kind` with bias training enabled.
    pub fn new(kind: SchemeKind, rank_shared: usize, rank_head: usize) -> Self {
        Self {
            kind,
            rank_shared,
            rank_head,
            include_bias: true,
        }
    }

    pub fn with_bias(mut self, include_bias: bool) -> Self {
        self.include_bias = include_bias;
        self
    }

    /// Checks the rank pattern against the kind and the head capacity.
    /// `path` prefixes the field names in error messages.
    pub fn validate(&self, dims: &ModelDims, path: &str) -> Result<()> {
        let kind = self.kind;
        let field = |f: &str| {
            if path.is_empty() {
                f.to_string()
            } else {
                format!("{path}.{f}")
            }
        };
        if kind.has_shared() && self.rank_shared == 0 {
            return Err(Error::config(field("rank_shared"), format!("{} needs rank_shared >= 1", kind.name())));
        }
        if !kind.has_shared() && self.rank_shared != 0 {
            return Err(Error::config(field("rank_shared"), format!("{} takes no shared rank", kind.name())));
        }
        if kind.has_head() && self.rank_head == 0 {
            return Err(Error::config(field("rank_head"), format!("{} needs rank_head >= 1", kind.name())));
        }
        if !kind.has_head() && self.rank_head != 0 {
            return Err(Error::config(field("rank_head"), format!("{} takes no head rank", kind.name())));
        }
        if kind.is_lite() && self.rank_head > dims.head_dim {
            return Err(Error::config(
                field("rank_head"),
                format!(
                    "lite rank {} exceeds head dimension {}",
                    self.rank_head, dims.head_dim
                ),
            ));
        }
        if self.rank_shared > dims.model_dim || self.rank_head > dims.model_dim {
            return Err(Error::config(
                field("rank"),
                format!("rank exceeds model dimension {}", dims.model_dim),
            ));
        }
        Ok(())
    }

    /// Shapes of every trainable factor, in declaration order.
    pub fn factor_shapes(&self, dims: &ModelDims) -> Factors<(usize, usize)> {
        let (d, p, nh) = (dims.model_dim, dims.head_dim, dims.n_heads);
        let (rs, rh) = (self.rank_shared, self.rank_head);
        let kind = self.kind;
        let head_b_rows = if kind.is_lite() { p } else { d };
        Factors {
            shared_b: kind.has_shared().then_some((d, rs)),
            shared_a: if kind.has_shared() { vec![(rs, p); nh] } else { vec![] },
            head_b: if kind.has_head() { vec![(head_b_rows, rh); nh] } else { vec![] },
            head_a: if kind.has_head() { vec![(rh, p); nh] } else { vec![] },
            bias_delta: self.include_bias.then_some((1, d)),
        }
    }
}

impl fmt::Display for AdapterScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SchemeKind::Lora => write!(f, "LoRA({})", self.rank_shared),
            SchemeKind::KernelWise | SchemeKind::KernelWiseLite => {
                write!(f, "{}({})", self.kind.name(), self.rank_head)
            }
            SchemeKind::KernelMix | SchemeKind::KernelMixLite => {
                write!(f, "{}({}, {})", self.kind.name(), self.rank_shared, self.rank_head)
            }
        }
    }
}

/// Exact number of trainable entries one scheme adds to one weight matrix.
///
/// LoRA: `2dr`. Kernel-wise: `N_h(dr + rp)`. Kernel-wise-lite: `2 N_h p r`.
/// Kernel-mix: `d r₁ + N_h(r₁p + d r₂ + r₂p)`. Kernel-mix-lite:
/// `d r₁ + N_h(r₁p + 2p r₂)`. Plus `d` when the bias is trainable.
pub fn count_params(scheme: &AdapterScheme, dims: &ModelDims) -> u64 {
    let (d, p, nh) = (dims.model_dim as u64, dims.head_dim as u64, dims.n_heads as u64);
    let (rs, rh) = (scheme.rank_shared as u64, scheme.rank_head as u64);
    let core = match scheme.kind {
        SchemeKind::Lora => 2 * d * rs,
        SchemeKind::KernelWise => nh * (d * rh + rh * p),
        SchemeKind::KernelWiseLite => nh * (p * rh + rh * p),
        SchemeKind::KernelMix => d * rs + nh * (rs * p + d * rh + rh * p),
        SchemeKind::KernelMixLite => d * rs + nh * (rs * p + 2 * p * rh),
    };
    core + if scheme.include_bias { d } else { 0 }
}

/// Trainable factors of one adapter, generic over the storage (matrices for
/// state, graph nodes during a forward pass, shapes for validation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors<T> {
    /// `B` (LoRA) or `B_LoRA` (mixes), `d × r_shared`.
    pub shared_b: Option<T>,
    /// `A⁽ʰ⁾` / `A_LoRA⁽ʰ⁾`, one `r_shared × p` slice per head.
    pub shared_a: Vec<T>,
    /// `B⁽ʰ⁾` (`d × r_head`) or, for lite schemes, `B_k⁽ʰ⁾` (`p × r_head`).
    pub head_b: Vec<T>,
    /// `A⁽ʰ⁾`, `r_head × p` per head.
    pub head_a: Vec<T>,
    /// Trainable bias increment, `1 × d`.
    pub bias_delta: Option<T>,
}

impl<T> Factors<T> {
    /// Factors in declaration order with stable names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        if let Some(b) = &self.shared_b {
            out.push(("shared_b".to_string(), b));
        }
        out.extend(self.shared_a.iter().enumerate().map(|(h, a)| (format!("shared_a[{h}]"), a)));
        out.extend(self.head_b.iter().enumerate().map(|(h, b)| (format!("head_b[{h}]"), b)));
        out.extend(self.head_a.iter().enumerate().map(|(h, a)| (format!("head_a[{h}]"), a)));
        if let Some(b) = &self.bias_delta {
            out.push(("bias_delta".to_string(), b));
        }
        out
    }

    /// Factors in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.shared_b
            .iter()
            .chain(&self.shared_a)
            .chain(&self.head_b)
            .chain(&self.head_a)
            .chain(self.bias_delta.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.shared_b
            .iter_mut()
            .chain(&mut self.shared_a)
            .chain(&mut self.head_b)
            .chain(&mut self.head_a)
            .chain(self.bias_delta.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Factors<U> {
        Factors {
            shared_b: self.shared_b.as_ref().map(&mut f),
            shared_a: self.shared_a.iter().map(&mut f).collect(),
            head_b: self.head_b.iter().map(&mut f).collect(),
            head_a: self.head_a.iter().map(&mut f).collect(),
            bias_delta: self.bias_delta.as_ref().map(&mut f),
        }
    }

    /// Rebuilds factors with this layout from values in declaration order.
    pub fn refill<U>(&self, values: impl IntoIterator<Item = U>) -> Result<Factors<U>> {
        let mut it = values.into_iter();
        let mut next = || it.next().ok_or_else(|| Error::Contract("too few factor values".into()));
        let shared_b = match self.shared_b {
            Some(_) => Some(next()?),
            None => None,
        };
        let shared_a = self.shared_a.iter().map(|_| next()).collect::<Result<_>>()?;
        let head_b = self.head_b.iter().map(|_| next()).collect::<Result<_>>()?;
        let head_a = self.head_a.iter().map(|_| next()).collect::<Result<_>>()?;
        let bias_delta = match self.bias_delta {
            Some(_) => Some(next()?),
            None => None,
        };
        if it.next().is_some() {
            return Err(Error::Contract("too many factor values".into()));
        }
        Ok(Factors {
            shared_b,
            shared_a,
            head_b,
            head_a,
            bias_delta,
        })
    }
}

/// Trainable factors of one adapted weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterState {
    pub scheme: AdapterScheme,
    pub target: Target,
    pub factors: Factors<Matrix>,
}

/// Creates an adapter whose update is exactly zero.
pub fn init_adapter(scheme: AdapterScheme, target: Target, dims: &ModelDims, seed: u64) -> Result<AdapterState> {
    scheme.validate(dims, "")?;
    let shapes = scheme.factor_shapes(dims);
    let mut rng = rng::seeded(seed);
    let a_std = |r: usize| 1.0 / (r as f64).sqrt();
    let zeros = |&(r, c): &(usize, usize)| Matrix::zeros(r, c);
    let shared_a = shapes
        .shared_a
        .iter()
        .map(|&(r, c)| Matrix::gaussian(r, c, a_std(r), &mut rng))
        .collect();
    let head_a = shapes
        .head_a
        .iter()
        .map(|&(r, c)| Matrix::gaussian(r, c, a_std(r), &mut rng))
        .collect();
    Ok(AdapterState {
        scheme,
        target,
        factors: Factors {
            shared_b: shapes.shared_b.as_ref().map(zeros),
            shared_a,
            head_b: shapes.head_b.iter().map(zeros).collect(),
            head_a,
            bias_delta: shapes.bias_delta.as_ref().map(zeros),
        },
    })
}

impl AdapterState {
    /// Checks that the present factors and their shapes match the scheme.
    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        self.scheme.validate(dims, "scheme")?;
        let shapes = self.scheme.factor_shapes(dims);
        let want = shapes.named();
        let got = self.factors.named();
        if want.len() != got.len() {
            return Err(Error::Contract(format!(
                "{} adapter expects {} factors, found {}",
                self.scheme,
                want.len(),
                got.len()
            )));
        }
        for ((name, &shape), (got_name, m)) in want.iter().zip(&got) {
            if name != got_name || m.shape() != shape {
                return Err(Error::Contract(format!(
                    "factor {name}: expected {shape:?}, found {got_name} {:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    /// Factor matrices in declaration order; never includes frozen weights.
    pub fn trainable_params(&self) -> Vec<&Matrix> {
        self.factors.iter().collect()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Matrix> {
        self.factors.iter_mut().collect()
    }

    pub fn param_count(&self) -> usize {
        self.factors.iter().map(Matrix::len).sum()
    }

    /// Overwrites every factor (B side included) with Gaussian entries.
    /// Gives non-degenerate updates for rank and gradient diagnostics.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = rng::seeded(seed);
        for m in self.factors.iter_mut() {
            *m = Matrix::gaussian(m.rows(), m.cols(), std, &mut rng);
        }
    }
}

/// Records the update `ΔW` for factors already placed in a graph.
///
/// `w_k` must be supplied for lite schemes.
pub fn compose_delta_node(
    g: &mut Graph,
    scheme: &AdapterScheme,
    target: Target,
    f: &Factors<NodeId>,
    w_k: Option<NodeId>,
    dims: &ModelDims,
) -> Result<NodeId> {
    let kind = scheme.kind;
    let w_k = match (kind.is_lite(), w_k) {
        (true, None) => {
            return Err(Error::Contract(format!(
                "{} needs the frozen W_k as head basis",
                kind.name()
            )))
        }
        (_, w_k) => w_k,
    };
    let missing = || Error::Contract(format!("{} factors are incomplete", kind.name()));
    let shared_b = || f.shared_b.ok_or_else(missing);
    let shared_a = |h: usize| f.shared_a.get(h).copied().ok_or_else(missing);
    let head_b = |h: usize| f.head_b.get(h).copied().ok_or_else(missing);
    let head_a = |h: usize| f.head_a.get(h).copied().ok_or_else(missing);
    let mut blocks = Vec::with_capacity(dims.n_heads);
    for h in 0..dims.n_heads {
        let lite = |g: &mut Graph| -> Result<NodeId> {
            let (s, e) = dims.head_range(h);
            let basis = g.slice_cols(w_k.ok_or_else(missing)?, s, e)?;
            let spanned = g.matmul(basis, head_b(h)?)?;
            g.matmul(spanned, head_a(h)?)
        };
        let block = match kind {
            SchemeKind::Lora => g.matmul(shared_b()?, shared_a(h)?)?,
            SchemeKind::KernelWise => g.matmul(head_b(h)?, head_a(h)?)?,
            SchemeKind::KernelWiseLite => lite(g)?,
            SchemeKind::KernelMix => {
                let b = g.concat_cols(&[shared_b()?, head_b(h)?])?;
                let a = g.concat_rows(&[shared_a(h)?, head_a(h)?])?;
                g.matmul(b, a)?
            }
            SchemeKind::KernelMixLite => {
                let s = g.matmul(shared_b()?, shared_a(h)?)?;
                let l = lite(g)?;
                g.add(s, l)?
            }
        };
        blocks.push(block);
    }
    let delta = g.concat_cols(&blocks)?;
    Ok(match target {
        Target::O => g.transpose(delta),
        _ => delta,
    })
}

/// Full `d × d` update of `state`. `frozen` supplies `W_k` for lite schemes.
pub fn compose_delta(state: &AdapterState, frozen: Option<&AttentionWeights>, dims: &ModelDims) -> Result<Matrix> {
    state.validate(dims)?;
    let mut g = Graph::new();
    let f = state.factors.map(|m| g.constant(m.clone()));
    let w_k = frozen.map(|w| g.constant(w.w_k.clone()));
    let out = compose_delta_node(&mut g, &state.scheme, state.target, &f, w_k, dims)?;
    Ok(g.value(out).clone())
}

/// `w_base + ΔW`; `w_base` is left untouched.
pub fn adapted_weight(
    w_base: &Matrix,
    state: &AdapterState,
    frozen: Option<&AttentionWeights>,
    dims: &ModelDims,
) -> Result<Matrix> {
    w_base.add(&compose_delta(state, frozen, dims)?)
}

/// `input · W_target + input · ΔW` evaluated without forming `ΔW`.
///
/// For `Q`, `K`, `V` the input is the layer input `X`; for `O` it is the
/// concatenated head output `L`. Biases are not included.
pub fn factored_forward(input: &Matrix, state: &AdapterState, w: &AttentionWeights, dims: &ModelDims) -> Result<Matrix> {
    state.validate(dims)?;
    let f = &state.factors;
    let kind = state.scheme.kind;
    let mut out = input.matmul(w.weight(state.target))?;
    let shared_b = || f.shared_b.as_ref().expect("validated");
    match state.target {
        Target::O => {
            // L · ΔW_o = Σ_h L⁽ʰ⁾ · A⁽ʰ⁾ᵀ · basis⁽ʰ⁾ᵀ
            for h in 0..dims.n_heads {
                let (s, e) = dims.head_range(h);
                let l_h = input.slice_cols(s, e)?;
                let mut terms: Vec<(Matrix, &Matrix)> = Vec::new();
                if kind.has_shared() {
                    terms.push((shared_b().clone(), &f.shared_a[h]));
                }
                if kind.has_head() {
                    let basis = if kind.is_lite() {
                        w.w_k.slice_cols(s, e)?.matmul(&f.head_b[h])?
                    } else {
                        f.head_b[h].clone()
                    };
                    terms.push((basis, &f.head_a[h]));
                }
                for (basis, a) in terms {
                    let contrib = l_h.matmul(&a.transpose())?.matmul(&basis.transpose())?;
                    out.add_assign(&contrib)?;
                }
            }
        }
        _ => {
            let x_shared = if kind.has_shared() {
                Some(input.matmul(shared_b())?)
            } else {
                None
            };
            let mut blocks = Vec::with_capacity(dims.n_heads);
            for h in 0..dims.n_heads {
                let (s, e) = dims.head_range(h);
                let head_part = |x_basis: Matrix| x_basis.matmul(&f.head_b[h])?.matmul(&f.head_a[h]);
                let block = match kind {
                    SchemeKind::Lora => x_shared.as_ref().expect("shared").matmul(&f.shared_a[h])?,
                    SchemeKind::KernelWise => head_part(input.clone())?,
                    SchemeKind::KernelWiseLite => head_part(input.matmul(&w.w_k.slice_cols(s, e)?)?)?,
                    SchemeKind::KernelMix => {
                        let b = Matrix::concat_cols(&[shared_b(), &f.head_b[h]])?;
                        let a = Matrix::concat_rows(&[&f.shared_a[h], &f.head_a[h]])?;
                        input.matmul(&b)?.matmul(&a)?
                    }
                    SchemeKind::KernelMixLite => {
                        let shared = x_shared.as_ref().expect("shared").matmul(&f.shared_a[h])?;
                        shared.add(&head_part(input.matmul(&w.w_k.slice_cols(s, e)?)?)?)?
                    }
                };
                blocks.push(block);
            }
            let refs: Vec<&Matrix> = blocks.iter().collect();
            out.add_assign(&Matrix::concat_cols(&refs)?)?;
        }
    }
    Ok(out)
}

/// Lite projection that reuses an already computed key product.
///
/// `key_product` is the bias-free `X W_k` (`n × d`); head `h` contributes
/// `(X W_k)⁽ʰ⁾ · B_k⁽ʰ⁾ · A⁽ʰ⁾` to column block `h`, so the product
/// `X · (W_k⁽ʰ⁾ B_k⁽ʰ⁾ A⁽ʰ⁾)` is never formed. Returns `X W_base + X ΔW`
/// without bias.
#[allow(clippy::too_many_arguments)]
pub fn lite_fast_projection_node(
    g: &mut Graph,
    x: NodeId,
    key_product: NodeId,
    w_base: NodeId,
    scheme: &AdapterScheme,
    target: Target,
    f: &Factors<NodeId>,
    dims: &ModelDims,
) -> Result<NodeId> {
    if !scheme.kind.is_lite() {
        return Err(Error::Contract(format!(
            "key-reuse path needs a lite scheme, got {}",
            scheme.kind.name()
        )));
    }
    if target == Target::O {
        return Err(Error::Contract(
            "key-reuse path applies to column-blocked targets (Q, K, V)".into(),
        ));
    }
    if g.shape(key_product) != g.shape(x) || g.shape(x).1 != dims.model_dim {
        return Err(Error::Dimension {
            op: "lite_fast_forward",
            left: g.shape(x),
            right: g.shape(key_product),
        });
    }
    let x_shared = match f.shared_b {
        Some(b) if scheme.kind.has_shared() => Some(g.matmul(x, b)?),
        _ => None,
    };
    let mut blocks = Vec::with_capacity(dims.n_heads);
    for h in 0..dims.n_heads {
        let (s, e) = dims.head_range(h);
        let k_h = g.slice_cols(key_product, s, e)?;
        let kb = g.matmul(k_h, f.head_b[h])?;
        let mut block = g.matmul(kb, f.head_a[h])?;
        if let Some(xs) = x_shared {
            let shared = g.matmul(xs, f.shared_a[h])?;
            block = g.add(shared, block)?;
        }
        blocks.push(block);
    }
    let update = g.concat_cols(&blocks)?;
    let base = g.matmul(x, w_base)?;
    g.add(base, update)
}

/// Lite projection `X W_base + X ΔW` computed from the layer's key
/// projection `keys = X W_k + 1 b_kᵀ`. The key bias is removed before reuse
/// so the result matches the merged weight exactly up to rounding.
pub fn lite_fast_forward(
    x: &Matrix,
    keys: &Matrix,
    state: &AdapterState,
    w: &AttentionWeights,
    dims: &ModelDims,
) -> Result<Matrix> {
    state.validate(dims)?;
    if keys.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "lite_fast_forward",
            left: x.shape(),
            right: keys.shape(),
        });
    }
    let key_product = keys.add_row(&w.b_k.scale(-1.0))?;
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let kn = g.constant(key_product);
    let wn = g.constant(w.weight(state.target).clone());
    let f = state.factors.map(|m| g.constant(m.clone()));
    let out = lite_fast_projection_node(&mut g, xn, kn, wn, &state.scheme, state.target, &f, dims)?;
    Ok(g.value(out).clone())
}
