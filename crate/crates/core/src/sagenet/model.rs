use super::checkpoint::{Checkpoint, FeatureScales};
use super::params::{Layout, Params, Slot};
use super::tensor::{add_bias, bias_grad, input_grad, linear, relu_backward, relu_checked, relu_in_place, weight_grad, Float};
use super::{LayerKind, ModelConfig, ModelError};
use crate::meshgraph::DeformationGraph;
use crate::Vec3;

const NO_NEIGHBOR: u32 = u32::MAX;

fn gcn_coefficient(graph: &DeformationGraph, v: usize, w: usize) -> f64 {
    1.0 / (((graph.degree(v) + 1) * (graph.degree(w) + 1)) as f64).sqrt()
}

/// Neighborhood aggregation of `h` (n×d); records the max-routing indices when `argmax` is given.
fn aggregate<T: Float>(kind: LayerKind, graph: &DeformationGraph, h: &[T], d: usize, out: &mut [T], mut argmax: Option<&mut [u32]>) {
    out.fill(T::ZERO);
    for v in 0..graph.n_nodes {
        let row = &mut out[v * d..(v + 1) * d];
        let nb = graph.neighbors(v);
        match kind {
            LayerKind::SageMax => {
                let Some((&first, rest)) = nb.split_first() else {
                    if let Some(a) = argmax.as_deref_mut() {
                        a[v * d..(v + 1) * d].fill(NO_NEIGHBOR);
                    }
                    continue;
                };
                row.copy_from_slice(&h[first * d..(first + 1) * d]);
                match argmax.as_deref_mut() {
                    Some(a) => {
                        let idx = &mut a[v * d..(v + 1) * d];
                        idx.fill(first as u32);
                        for &w in rest {
                            for ((r, i), x) in row.iter_mut().zip(idx.iter_mut()).zip(&h[w * d..(w + 1) * d]) {
                                if *x > *r {
                                    *r = *x;
                                    *i = w as u32;
                                }
                            }
                        }
                    }
                    None => {
                        for &w in rest {
                            for (r, x) in row.iter_mut().zip(&h[w * d..(w + 1) * d]) {
                                *r = if *x > *r { *x } else { *r };
                            }
                        }
                    }
                }
            }
            LayerKind::GraphConv => {
                for &w in nb {
                    for (r, x) in row.iter_mut().zip(&h[w * d..(w + 1) * d]) {
                        *r += *x;
                    }
                }
            }
            LayerKind::GcnMean => {
                for &w in nb.iter().chain(std::iter::once(&v)) {
                    let c = T::from_f64(gcn_coefficient(graph, v, w));
                    for (r, x) in row.iter_mut().zip(&h[w * d..(w + 1) * d]) {
                        *r += c * *x;
                    }
                }
            }
        }
    }
}

/// Adds the adjoint of [`aggregate`] applied to `d_agg` into `dh`.
fn aggregate_backward(kind: LayerKind, graph: &DeformationGraph, d_agg: &[f64], d: usize, argmax: &[u32], dh: &mut [f64]) {
    for v in 0..graph.n_nodes {
        let g = &d_agg[v * d..(v + 1) * d];
        match kind {
            LayerKind::SageMax => {
                for (c, (&src, &x)) in argmax[v * d..(v + 1) * d].iter().zip(g).enumerate() {
                    if src != NO_NEIGHBOR {
                        dh[src as usize * d + c] += x;
                    }
                }
            }
            LayerKind::GraphConv => {
                for &w in graph.neighbors(v) {
                    for (t, x) in dh[w * d..(w + 1) * d].iter_mut().zip(g) {
                        *t += x;
                    }
                }
            }
            LayerKind::GcnMean => {
                for &w in graph.neighbors(v).iter().chain(std::iter::once(&v)) {
                    let c = gcn_coefficient(graph, v, w);
                    for (t, x) in dh[w * d..(w + 1) * d].iter_mut().zip(g) {
                        *t += c * x;
                    }
                }
            }
        }
    }
}

/// One max-aggregation message-passing layer on standalone weights (`d_out×d_in` each).
pub fn sage_layer(
    h: &[f64],
    d_in: usize,
    graph: &DeformationGraph,
    w_self: &[f64],
    w_neighbor: &[f64],
    d_out: usize,
    apply_relu: bool,
) -> Result<Vec<f64>, ModelError> {
    let n = graph.n_nodes;
    if h.len() != n * d_in || w_self.len() != d_out * d_in || w_neighbor.len() != d_out * d_in {
        return Err(ModelError::Shape(format!(
            "h {} (expected {}), weights {} and {} (expected {})",
            h.len(),
            n * d_in,
            w_self.len(),
            w_neighbor.len(),
            d_out * d_in
        )));
    }
    let mut agg = vec![0.0; n * d_in];
    aggregate(LayerKind::SageMax, graph, h, d_in, &mut agg, None);
    let mut z = vec![0.0; n * d_out];
    linear(h, n, d_in, w_self, d_out, &mut z, false);
    linear(&agg, n, d_in, w_neighbor, d_out, &mut z, true);
    if apply_relu {
        relu_in_place(&mut z);
    }
    Ok(z)
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace<T> {
    pub x: Vec<T>,
    /// `hs[0]` is the projection output, `hs[l]` the output of message-passing layer `l`.
    pub hs: Vec<Vec<T>>,
    pub aggs: Vec<Vec<T>>,
    pub argmax: Vec<Vec<u32>>,
    pub jk: Vec<T>,
    pub jk_source: Vec<u8>,
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

fn non_finite(layer: impl Into<String>) -> ModelError {
    ModelError::NonFiniteActivation { layer: layer.into() }
}

/// Forward pass on scaled features keeping everything backpropagation needs.
pub(crate) fn run(
    config: &ModelConfig,
    layout: &Layout,
    data: &[f64],
    graph: &DeformationGraph,
    x: Vec<f64>,
) -> Result<Trace<f64>, ModelError> {
    let n = graph.n_nodes;
    let d = config.hidden_dim;
    let half = d / 2;
    check_shapes(layout, data, graph, x.len())?;
    let mut trace = Trace { x, ..Default::default() };

    let mut h = vec![0.0; n * d];
    linear(&trace.x, n, 3, layout.proj_w.of(data), d, &mut h, false);
    add_bias(&mut h, layout.proj_b.of(data));
    if !relu_checked(&mut h) {
        return Err(non_finite("projection"));
    }

    let jk = config.use_jumping_knowledge;
    for (l, slots) in layout.layers.iter().enumerate() {
        let mut agg = vec![0.0; n * d];
        let mut idx = if config.layer_kind == LayerKind::SageMax { vec![0u32; n * d] } else { Vec::new() };
        aggregate(config.layer_kind, graph, &h, d, &mut agg, if idx.is_empty() { None } else { Some(&mut idx) });
        let mut z = vec![0.0; n * d];
        layer_linear(config.layer_kind, slots, data, &h, &agg, n, d, &mut z);
        if !relu_checked(&mut z) {
            return Err(non_finite(format!("message-passing layer {l}")));
        }
        if jk {
            if l == 0 {
                trace.jk = z.clone();
                trace.jk_source = vec![1; n * d];
            } else {
                for (i, (m, v)) in trace.jk.iter_mut().zip(&z).enumerate() {
                    if *v > *m {
                        *m = *v;
                        trace.jk_source[i] = (l + 1) as u8;
                    }
                }
            }
        }
        trace.hs.push(std::mem::replace(&mut h, z));
        trace.aggs.push(agg);
        trace.argmax.push(idx);
    }
    let top = if jk { &trace.jk } else { &h };
    let mut hidden = vec![0.0; n * half];
    let mut out = vec![0.0; n * 3];
    head(layout, data, top, n, d, &mut hidden, &mut out)?;
    trace.hs.push(h);
    trace.hidden = hidden;
    trace.out = out;
    Ok(trace)
}

fn check_shapes<T>(layout: &Layout, data: &[T], graph: &DeformationGraph, x_len: usize) -> Result<(), ModelError> {
    if x_len != graph.n_nodes * 3 {
        return Err(ModelError::Shape(format!("{x_len} feature values for {} nodes", graph.n_nodes)));
    }
    if data.len() != layout.total {
        return Err(ModelError::Shape(format!("{} parameters, layout needs {}", data.len(), layout.total)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn layer_linear<T: Float>(kind: LayerKind, slots: &[Slot], data: &[T], h: &[T], agg: &[T], n: usize, d: usize, z: &mut [T]) {
    match kind {
        LayerKind::GcnMean => linear(agg, n, d, slots[0].of(data), d, z, false),
        LayerKind::SageMax | LayerKind::GraphConv => {
            linear(h, n, d, slots[0].of(data), d, z, false);
            linear(agg, n, d, slots[1].of(data), d, z, true);
        }
    }
}

fn head<T: Float>(layout: &Layout, data: &[T], top: &[T], n: usize, d: usize, hidden: &mut [T], out: &mut [T]) -> Result<(), ModelError> {
    let half = d / 2;
    linear(top, n, d, layout.head0_w.of(data), half, hidden, false);
    add_bias(hidden, layout.head0_b.of(data));
    if !relu_checked(hidden) {
        return Err(non_finite("prediction head"));
    }
    linear(hidden, n, half, layout.head1_w.of(data), 3, out, false);
    add_bias(out, layout.head1_b.of(data));
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(non_finite("prediction head"))
    }
}

/// Reusable buffers for repeated inference on graphs of one size.
#[derive(Debug, Clone, Default)]
struct Workspace<T> {
    x: Vec<T>,
    h: Vec<T>,
    z: Vec<T>,
    agg: Vec<T>,
    jk: Vec<T>,
    hidden: Vec<T>,
    out: Vec<T>,
}

/// Forward pass without bookkeeping; the prediction (scaled units) is left in `ws.out`.
fn infer<T: Float>(
    config: &ModelConfig,
    layout: &Layout,
    data: &[T],
    graph: &DeformationGraph,
    input_scale: f64,
    ws: &mut Workspace<T>,
) -> Result<(), ModelError> {
    let n = graph.n_nodes;
    let d = config.hidden_dim;
    check_shapes(layout, data, graph, 3 * n)?;
    ws.x.clear();
    ws.x.extend(graph.node_features.iter().flat_map(|v| v.iter().map(|x| T::from_f64(x / input_scale))));
    for (buf, len) in [(&mut ws.h, n * d), (&mut ws.z, n * d), (&mut ws.agg, n * d), (&mut ws.hidden, n * (d / 2)), (&mut ws.out, 3 * n)] {
        buf.resize(len, T::ZERO);
    }
    linear(&ws.x, n, 3, layout.proj_w.of(data), d, &mut ws.h, false);
    add_bias(&mut ws.h, layout.proj_b.of(data));
    if !relu_checked(&mut ws.h) {
        return Err(non_finite("projection"));
    }

    let jk = config.use_jumping_knowledge;
    for (l, slots) in layout.layers.iter().enumerate() {
        aggregate(config.layer_kind, graph, &ws.h, d, &mut ws.agg, None);
        layer_linear(config.layer_kind, slots, data, &ws.h, &ws.agg, n, d, &mut ws.z);
        if !relu_checked(&mut ws.z) {
            return Err(non_finite(format!("message-passing layer {l}")));
        }
        std::mem::swap(&mut ws.h, &mut ws.z);
        if jk {
            if l == 0 {
                ws.jk.clone_from(&ws.h);
            } else {
                for (m, v) in ws.jk.iter_mut().zip(&ws.h) {
                    *m = if *v > *m { *v } else { *m };
                }
            }
        }
    }
    let top = if jk { &ws.jk } else { &ws.h };
    head(layout, data, top, n, d, &mut ws.hidden, &mut ws.out)
}

fn scaled_features(graph: &DeformationGraph, scale: f64) -> Vec<f64> {
    graph.node_features.iter().flat_map(|v| v.iter().map(move |x| x / scale)).collect()
}

fn to_field<T: Float>(out: &[T], scale: f64) -> Vec<Vec3> {
    out.chunks_exact(3)
        .map(|c| Vec3::new(c[0].to_f64(), c[1].to_f64(), c[2].to_f64()) * scale)
        .collect()
}

/// Predicted displacement field (meters) for the features stored in `graph`.
pub fn forward(graph: &DeformationGraph, checkpoint: &Checkpoint) -> Result<Vec<Vec3>, ModelError> {
    forward_params(&checkpoint.config, &checkpoint.params, &checkpoint.scales, graph)
}

pub(crate) fn forward_params(
    config: &ModelConfig,
    params: &Params,
    scales: &FeatureScales,
    graph: &DeformationGraph,
) -> Result<Vec<Vec3>, ModelError> {
    let mut ws = Workspace::default();
    infer(config, &params.layout, &params.data, graph, scales.input, &mut ws)?;
    Ok(to_field(&ws.out, scales.output))
}

/// ReLU on/off pattern and max-routing choices of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<bool>,
    routing: Vec<u32>,
    jk: Vec<u8>,
}

impl ActivationPattern {
    pub fn of(config: &ModelConfig, params: &Params, scales: &FeatureScales, graph: &DeformationGraph) -> Result<Self, ModelError> {
        let t = run(config, &params.layout, &params.data, graph, scaled_features(graph, scales.input))?;
        Ok(Self {
            relu: t.hs.iter().chain(std::iter::once(&t.hidden)).flatten().map(|v| *v > 0.0).collect(),
            routing: t.argmax.into_iter().flatten().collect(),
            jk: t.jk_source,
        })
    }
}

/// Mean squared error over all `n×3` entries (in scaled units) and its exact gradient.
pub fn loss_and_gradients(
    config: &ModelConfig,
    params: &Params,
    scales: &FeatureScales,
    graph: &DeformationGraph,
    target: &[Vec3],
) -> Result<(f64, Params), ModelError> {
    let n = graph.n_nodes;
    if target.len() != n {
        return Err(ModelError::Shape(format!("target has {} nodes, graph has {n}", target.len())));
    }
    let layout = &params.layout;
    let data = &params.data;
    let t = run(config, layout, data, graph, scaled_features(graph, scales.input))?;
    let d = config.hidden_dim;
    let half = d / 2;
    let count = (3 * n) as f64;

    let mut loss = 0.0;
    let mut d_out = vec![0.0; 3 * n];
    for (i, (p, y)) in t.out.iter().zip(target.iter().flat_map(|v| v.iter())).enumerate() {
        let e = p - y / scales.output;
        loss += e * e;
        d_out[i] = 2.0 * e / count;
    }
    loss /= count;

    let mut grads = params.zeros_like();
    let g = &mut grads.data;
    weight_grad(&d_out, n, 3, &t.hidden, half, layout.head1_w.of_mut(g));
    bias_grad(&d_out, layout.head1_b.of_mut(g));
    let mut d_hidden = vec![0.0; n * half];
    input_grad(&d_out, n, 3, layout.head1_w.of(data), half, &mut d_hidden, false);
    relu_backward(&mut d_hidden, &t.hidden);
    let n_layers = layout.layers.len();
    let top = if config.use_jumping_knowledge { &t.jk } else { &t.hs[n_layers] };
    weight_grad(&d_hidden, n, half, top, d, layout.head0_w.of_mut(g));
    bias_grad(&d_hidden, layout.head0_b.of_mut(g));
    let mut d_top = vec![0.0; n * d];
    input_grad(&d_hidden, n, half, layout.head0_w.of(data), d, &mut d_top, false);

    // Gradient flowing into each layer output from the jumping-knowledge max, by layer.
    let mut jk_grads: Vec<Vec<f64>> = Vec::new();
    let mut dh = if config.use_jumping_knowledge {
        jk_grads = vec![vec![0.0; n * d]; n_layers + 1];
        for (i, (&src, &x)) in t.jk_source.iter().zip(&d_top).enumerate() {
            jk_grads[src as usize][i] = x;
        }
        std::mem::take(&mut jk_grads[n_layers])
    } else {
        d_top
    };

    let mut d_agg = vec![0.0; n * d];
    for l in (0..n_layers).rev() {
        let out = &t.hs[l + 1];
        let input = &t.hs[l];
        let agg = &t.aggs[l];
        relu_backward(&mut dh, out);
        let slots = &layout.layers[l];
        let mut d_in = if l >= 1 && config.use_jumping_knowledge { std::mem::take(&mut jk_grads[l]) } else { vec![0.0; n * d] };
        match config.layer_kind {
            LayerKind::GcnMean => {
                weight_grad(&dh, n, d, agg, d, slots[0].of_mut(g));
                input_grad(&dh, n, d, slots[0].of(data), d, &mut d_agg, false);
            }
            LayerKind::SageMax | LayerKind::GraphConv => {
                weight_grad(&dh, n, d, input, d, slots[0].of_mut(g));
                weight_grad(&dh, n, d, agg, d, slots[1].of_mut(g));
                input_grad(&dh, n, d, slots[0].of(data), d, &mut d_in, true);
                input_grad(&dh, n, d, slots[1].of(data), d, &mut d_agg, false);
            }
        }
        aggregate_backward(config.layer_kind, graph, &d_agg, d, &t.argmax[l], &mut d_in);
        dh = d_in;
    }

    relu_backward(&mut dh, &t.hs[0]);
    weight_grad(&dh, n, d, &t.x, 3, layout.proj_w.of_mut(g));
    bias_grad(&dh, layout.proj_b.of_mut(g));
    Ok((loss, grads))
}

/// Parameters converted to `T` plus buffers reused across predictions.
#[derive(Debug, Clone)]
pub struct InferenceModel<T> {
    config: ModelConfig,
    layout: Layout,
    data: Vec<T>,
    scales: FeatureScales,
    workspace: Workspace<T>,
}

impl<T: Float> InferenceModel<T> {
    pub fn new(checkpoint: &Checkpoint) -> Self {
        Self {
            config: checkpoint.config.clone(),
            layout: checkpoint.params.layout.clone(),
            data: checkpoint.params.data.iter().map(|x| T::from_f64(*x)).collect(),
            scales: checkpoint.scales,
            workspace: Workspace::default(),
        }
    }

    pub fn predict(&mut self, graph: &DeformationGraph) -> Result<Vec<Vec3>, ModelError> {
        infer(&self.config, &self.layout, &self.data, graph, self.scales.input, &mut self.workspace)?;
        Ok(to_field(&self.workspace.out, self.scales.output))
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn path_graph() -> DeformationGraph {
        DeformationGraph::from_edges(3, &[(0, 1), (1, 2)], &[])
    }

    pub(crate) fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> DeformationGraph {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let mut g = DeformationGraph::from_edges(n, &edges, &[]);
        let features: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        g.set_features(&features).unwrap();
        g
    }

    #[test]
    fn identity_layer_passes_features_through() {
        let g = path_graph();
        let h = [0.5, 1.0, 2.0, 0.0, 3.0, 1.5];
        let eye = [1.0, 0.0, 0.0, 1.0];
        let out = sage_layer(&h, 2, &g, &eye, &[0.0; 4], 2, true).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn hand_evaluated_path_graph() {
        let g = path_graph();
        let out = sage_layer(&[1.0, 2.0, 3.0], 1, &g, &[1.0], &[1.0], 1, false).unwrap();
        assert_eq!(out, vec![3.0, 5.0, 5.0]);
    }

    #[test]
    fn isolated_node_sees_only_itself() {
        let g = DeformationGraph::from_edges(3, &[(0, 1)], &[]);
        let out = sage_layer(&[1.0, 4.0, -2.0], 1, &g, &[2.0], &[10.0], 1, true).unwrap();
        assert_eq!(out[2], 0.0);
        let out = sage_layer(&[1.0, 4.0, 2.0], 1, &g, &[2.0], &[10.0], 1, true).unwrap();
        assert_eq!(out[2], 4.0);
    }

    #[test]
    fn zero_features_and_biases_give_zero_output() {
        let cfg = ModelConfig { hidden_dim: 8, n_layers: 3, ..Default::default() };
        let mut p = Params::init(&cfg).unwrap();
        for name in ["projection.bias", "head.0.bias", "head.1.bias"] {
            p.tensor_mut(name).unwrap().fill(0.0);
        }
        let g = DeformationGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], &[]);
        let out = forward_params(&cfg, &p, &FeatureScales::default(), &g).unwrap();
        assert!(out.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn single_layer_jumping_knowledge_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(20, 0.2, &mut rng);
        let cfg = ModelConfig { hidden_dim: 8, n_layers: 1, ..Default::default() };
        let p = Params::init(&cfg).unwrap();
        let jk = ModelConfig { use_jumping_knowledge: true, ..cfg.clone() };
        let s = FeatureScales::default();
        assert_eq!(forward_params(&cfg, &p, &s, &g).unwrap(), forward_params(&jk, &p, &s, &g).unwrap());
    }

    #[test]
    fn exact_prediction_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(12, 0.3, &mut rng);
        let cfg = ModelConfig { hidden_dim: 6, n_layers: 2, ..Default::default() };
        let p = Params::init(&cfg).unwrap();
        let s = FeatureScales::default();
        let target = forward_params(&cfg, &p, &s, &g).unwrap();
        let (loss, grads) = loss_and_gradients(&cfg, &p, &s, &g, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn doubling_targets_of_a_zero_model_quadruples_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(10, 0.3, &mut rng);
        let cfg = ModelConfig { hidden_dim: 4, n_layers: 2, ..Default::default() };
        let p = Params::zeros(&cfg);
        let target: Vec<Vec3> = g.node_features.clone();
        let doubled: Vec<Vec3> = target.iter().map(|v| v * 2.0).collect();
        let s = FeatureScales::default();
        let (a, _) = loss_and_gradients(&cfg, &p, &s, &g, &target).unwrap();
        let (b, _) = loss_and_gradients(&cfg, &p, &s, &g, &doubled).unwrap();
        assert!((b - 4.0 * a).abs() <= 1e-15 * b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (kind, jk) in [(LayerKind::SageMax, false), (LayerKind::SageMax, true), (LayerKind::GcnMean, false), (LayerKind::GraphConv, true)] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let g = random_graph(30, 0.12, &mut rng);
            let cfg = ModelConfig { hidden_dim: 6, n_layers: 3, layer_kind: kind, use_jumping_knowledge: jk, rng_seed: 5, ..Default::default() };
            let p = Params::init(&cfg).unwrap();
            let s = FeatureScales::default();
            let target: Vec<Vec3> = (0..30).map(|i| Vec3::new((i as f64).sin(), 0.3, -(i as f64) * 0.01)).collect();
            let (_, grads) = loss_and_gradients(&cfg, &p, &s, &g, &target).unwrap();
            let base = ActivationPattern::of(&cfg, &p, &s, &g).unwrap();
            let eps = 1e-5;
            let mut skipped = 0;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.data[i] += eps;
                let mut minus = p.clone();
                minus.data[i] -= eps;
                if ActivationPattern::of(&cfg, &plus, &s, &g).unwrap() != base
                    || ActivationPattern::of(&cfg, &minus, &s, &g).unwrap() != base
                {
                    skipped += 1;
                    continue;
                }
                let lp = loss_and_gradients(&cfg, &plus, &s, &g, &target).unwrap().0;
                let lm = loss_and_gradients(&cfg, &minus, &s, &g, &target).unwrap().0;
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads.data[i];
                let scale = fd.abs().max(an.abs());
                assert!((fd - an).abs() <= 1e-4 * scale + 1e-10, "{kind} jk={jk} param {i}: fd {fd} analytic {an}");
            }
            assert!(skipped * 100 < p.len(), "{skipped} of {} entries skipped", p.len());
        }
    }

    #[test]
    fn relabelling_nodes_permutes_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = ModelConfig { hidden_dim: 8, n_layers: 3, ..Default::default() };
        let p = Params::init(&cfg).unwrap();
        let s = FeatureScales::default();
        let g = random_graph(20, 0.2, &mut rng);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.reverse();
        perm.swap(3, 11);
        let out = forward_params(&cfg, &p, &s, &g).unwrap();
        let out_perm = forward_params(&cfg, &p, &s, &g.permuted(&perm)).unwrap();
        for v in 0..20 {
            assert_eq!(out[v], out_perm[perm[v]]);
        }
    }

    #[test]
    fn features_beyond_receptive_field_do_not_matter() {
        let n = 12;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let mut g = DeformationGraph::from_edges(n, &edges, &[]);
        g.set_features(&(0..n).map(|i| Vec3::new(i as f64, 1.0, -0.5)).collect::<Vec<_>>()).unwrap();
        let cfg = ModelConfig { hidden_dim: 8, n_layers: 3, rng_seed: 6, ..Default::default() };
        let p = Params::init(&cfg).unwrap();
        let s = FeatureScales::default();
        let before = forward_params(&cfg, &p, &s, &g).unwrap();
        g.node_features[4] = Vec3::new(-3.0, 7.0, 2.0);
        let after = forward_params(&cfg, &p, &s, &g).unwrap();
        assert_eq!(before[0], after[0]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn non_finite_weights_are_reported_by_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(10, 0.3, &mut rng);
        let cfg = ModelConfig { hidden_dim: 4, n_layers: 3, ..Default::default() };
        let mut p = Params::init(&cfg).unwrap();
        p.tensor_mut("layers.1.self").unwrap().fill(f64::INFINITY);
        let err = forward_params(&cfg, &p, &FeatureScales::default(), &g).unwrap_err();
        assert!(matches!(&err, ModelError::NonFiniteActivation { layer } if layer == "message-passing layer 1"), "{err}");
    }

    #[test]
    fn single_precision_inference_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(25, 0.2, &mut rng);
        let cfg = ModelConfig { hidden_dim: 8, n_layers: 4, ..Default::default() };
        let ckpt = Checkpoint::fresh(cfg, Default::default()).unwrap();
        let exact = forward(&g, &ckpt).unwrap();
        let approx = InferenceModel::<f32>::new(&ckpt).predict(&g).unwrap();
        for (a, b) in exact.iter().zip(&approx) {
            assert!((a - b).norm() < 1e-5 * (1.0 + a.norm()));
        }
        assert_eq!(InferenceModel::<f64>::new(&ckpt).predict(&g).unwrap(), exact);
    }
}
