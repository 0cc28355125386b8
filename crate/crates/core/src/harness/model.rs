use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::adapters::{compose_delta_node, init_adapter, lite_fast_projection_node, AdapterState, Factors, Target};
use crate::attention::{attention_from_qkv, project_node, AttentionWeights, ModelDims, WeightNodes};
use crate::error::{Error, Result};
use crate::linalg::{Graph, Matrix, NodeId};
use crate::planner::BudgetPlan;
use crate::rng;

/// A stack of attention sub-layers with residual connections:
/// `h ← h + attention(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub layers: Vec<AttentionWeights>,
}

impl Model {
    /// Gaussian weights with standard deviation `1/√d` and small biases.
    pub fn random(dims: ModelDims, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let std = 1.0 / (dims.model_dim as f64).sqrt();
        let layers = (0..dims.n_layers)
            .map(|_| AttentionWeights::random(&dims, std, &mut rng))
            .collect();
        Self { dims, layers }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let mut h = g.constant(x.clone());
        for w in &self.layers {
            let wn = w.constants(&mut g);
            let a = crate::attention::attention_layer_node(&mut g, h, &wn, &self.dims)?;
            h = g.add(h, a)?;
        }
        Ok(g.value(h).clone())
    }

    /// SHA-256 over every weight's little-endian bytes, in layer order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.layers {
            for (_, m) in w.matrices() {
                hasher.update(m.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Total number of weight and bias entries.
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|w| w.matrices().map(|(_, m)| m.len() as u64))
            .sum()
    }
}

/// Location of one trainable factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorId {
    pub layer: usize,
    pub target: Target,
    pub index: usize,
    pub name: String,
}

impl std::fmt::Display for FactorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer{}.{}.{}", self.layer, self.target, self.name)
    }
}

/// A frozen base model plus per-layer adapters.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub base: Model,
    /// One map per layer; targets without an entry are frozen.
    pub adapters: Vec<BTreeMap<Target, AdapterState>>,
    /// Compute lite `Q`/`V` updates from the already projected keys.
    pub fast_path: bool,
}

/// Graph handles created by [`AdaptedModel::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    layers: Vec<LayerNodes>,
    /// Factor nodes in the order of [`AdaptedModel::factor_ids`].
    pub factor_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct LayerNodes {
    base: WeightNodes,
    /// Weights with their updates merged in.
    effective: WeightNodes,
    factors: BTreeMap<Target, Factors<NodeId>>,
}

impl AdaptedModel {
    pub fn new(base: Model) -> Self {
        let n = base.dims.n_layers;
        Self {
            base,
            adapters: vec![BTreeMap::new(); n],
            fast_path: false,
        }
    }

    /// Initializes one adapter per planned target in every layer. Layer `l`,
    /// target `t` draws from a stream derived from `seed`.
    pub fn from_plan(base: Model, plan: &BudgetPlan, seed: u64) -> Result<Self> {
        let plan = plan.with_dims(base.dims)?;
        let mut m = Self::new(base);
        for (l, layer) in m.adapters.iter_mut().enumerate() {
            for (&t, scheme) in &plan.targets {
                let s = seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((l * 4 + t.index()) as u64);
                layer.insert(t, init_adapter(*scheme, t, &plan.dims, s)?);
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.base.dims
    }

    pub fn with_adapter(mut self, layer: usize, state: AdapterState) -> Result<Self> {
        state.validate(&self.base.dims)?;
        let slot = self
            .adapters
            .get_mut(layer)
            .ok_or_else(|| Error::Contract(format!("layer {layer} out of range")))?;
        slot.insert(state.target, state);
        Ok(self)
    }

    pub fn factor_ids(&self) -> Vec<FactorId> {
        let mut out = Vec::new();
        for (layer, map) in self.adapters.iter().enumerate() {
            for (&target, st) in map {
                for (index, (name, _)) in st.factors.named().into_iter().enumerate() {
                    out.push(FactorId {
                        layer,
                        target,
                        index,
                        name,
                    });
                }
            }
        }
        out
    }

    pub fn factor(&self, id: &FactorId) -> &Matrix {
        self.adapters[id.layer][&id.target]
            .factors
            .iter()
            .nth(id.index)
            .expect("valid factor id")
    }

    pub fn factor_mut(&mut self, id: &FactorId) -> &mut Matrix {
        self.adapters[id.layer]
            .get_mut(&id.target)
            .expect("valid factor id")
            .factors
            .iter_mut()
            .nth(id.index)
            .expect("valid factor id")
    }

    /// All factors in [`AdaptedModel::factor_ids`] order.
    pub fn factors_mut(&mut self) -> Vec<&mut Matrix> {
        self.adapters
            .iter_mut()
            .flat_map(|m| m.values_mut().flat_map(|s| s.factors.iter_mut()))
            .collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.adapters
            .iter()
            .flat_map(|m| m.values().map(AdapterState::param_count))
            .sum()
    }

    /// Records weights, factors and merged weights in `g`. Factors become
    /// differentiable leaves when `trainable`; base weights are constants.
    pub fn record(&self, g: &mut Graph, trainable: bool) -> Result<Recorded> {
        let dims = self.base.dims;
        let mut layers = Vec::with_capacity(dims.n_layers);
        let mut factor_nodes = Vec::new();
        for (w, adapters) in self.base.layers.iter().zip(&self.adapters) {
            let base = w.constants(g);
            let mut effective = base;
            let mut factors = BTreeMap::new();
            for (&t, st) in adapters {
                let f = st.factors.map(|m| g.leaf(m.clone(), trainable));
                factor_nodes.extend(f.iter().copied());
                let delta = compose_delta_node(g, &st.scheme, t, &f, Some(base.weight(Target::K)), &dims)?;
                effective.w[t.index()] = g.add(base.weight(t), delta)?;
                if let Some(b) = f.bias_delta {
                    effective.b[t.index()] = g.add(base.bias(t), b)?;
                }
                factors.insert(t, f);
            }
            layers.push(LayerNodes {
                base,
                effective,
                factors,
            });
        }
        Ok(Recorded { layers, factor_nodes })
    }

    fn uses_fast_path(&self, layer: usize, t: Target) -> bool {
        let adapters = &self.adapters[layer];
        self.fast_path
            && matches!(t, Target::Q | Target::V)
            && !adapters.contains_key(&Target::K)
            && adapters.get(&t).is_some_and(|s| s.scheme.kind.is_lite())
    }

    /// Forward pass of one sequence through recorded weights.
    pub fn forward_node(&self, g: &mut Graph, rec: &Recorded, x: NodeId) -> Result<NodeId> {
        let dims = self.base.dims;
        let mut h = x;
        for (l, ln) in rec.layers.iter().enumerate() {
            let w = &ln.effective;
            let key_product = g.matmul(h, w.weight(Target::K))?;
            let k = g.add_row(key_product, w.bias(Target::K))?;
            let project = |g: &mut Graph, t: Target| -> Result<NodeId> {
                if self.uses_fast_path(l, t) {
                    let st = &self.adapters[l][&t];
                    let lin = lite_fast_projection_node(
                        g,
                        h,
                        key_product,
                        ln.base.weight(t),
                        &st.scheme,
                        t,
                        &ln.factors[&t],
                        &dims,
                    )?;
                    g.add_row(lin, w.bias(t))
                } else {
                    project_node(g, h, w.weight(t), w.bias(t))
                }
            };
            let q = project(g, Target::Q)?;
            let v = project(g, Target::V)?;
            let a = attention_from_qkv(g, q, k, v, w.weight(Target::O), w.bias(Target::O), &dims)?;
            h = g.add(h, a)?;
        }
        Ok(h)
    }

    /// Mean of per-sequence MSE over `batch`, as a `1 × 1` node.
    pub fn loss_node(&self, g: &mut Graph, rec: &Recorded, batch: &[&(Matrix, Matrix)]) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut total: Option<NodeId> = None;
        for (x, y) in batch {
            let xn = g.constant(x.clone());
            let yn = g.constant(y.clone());
            let out = self.forward_node(g, rec, xn)?;
            let l = g.mse(out, yn)?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        Ok(g.scale(total.expect("non-empty"), 1.0 / batch.len() as f64))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, false)?;
        let xn = g.constant(x.clone());
        let out = self.forward_node(&mut g, &rec, xn)?;
        Ok(g.value(out).clone())
    }

    pub fn loss(&self, batch: &[&(Matrix, Matrix)]) -> Result<f64> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, false)?;
        let l = self.loss_node(&mut g, &rec, batch)?;
        Ok(g.value(l).get(0, 0))
    }

    /// Loss and the gradient of every factor, in [`AdaptedModel::factor_ids`] order.
    pub fn loss_and_grads(&self, batch: &[&(Matrix, Matrix)]) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, true)?;
        let l = self.loss_node(&mut g, &rec, batch)?;
        g.backward(l)?;
        let grads = rec
            .factor_nodes
            .iter()
            .map(|&n| {
                g.grad(n).cloned().unwrap_or_else(|| {
                    let (r, c) = g.shape(n);
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        Ok((g.value(l).get(0, 0), grads))
    }
}
