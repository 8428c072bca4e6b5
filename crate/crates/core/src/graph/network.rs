//! The refinement network: per-type embeddings, message passing and
//! residual heads, expressed as one computation graph shared by all scene
//! sizes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{assemble_features, FeatureBundle, FeatureDims, OBJECT_LAYOUT_RELATION_VALUE, RELATION_FEATURE_DIM};
use super::{build_graph, GraphError, SceneGraphSpec};
use crate::scene::{ParamCodec, Residuals, SceneState};
use crate::tensor::{Bindings, Evaluation, Gradients, Graph, GraphBuilder, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgcnConfig {
    /// Node representation width.
    pub d: usize,
    /// Hidden width of the decoding heads.
    pub head_hidden: usize,
    /// Message-passing steps.
    pub steps: usize,
    pub dims: FeatureDims,
    /// Dropout rate on the embedded representations during training.
    pub dropout: f64,
}

impl SgcnConfig {
    pub fn new(dims: FeatureDims) -> Self {
        Self {
            d: 512,
            head_hidden: 128,
            steps: 4,
            dims,
            dropout: 0.0,
        }
    }
}

/// Node representation matrices: `zo` is `d×(N+1)`, `zr` is `d×(N+1)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensors {
    pub zo: Tensor,
    pub zr: Tensor,
}

/// The five message transforms (all `d×d`).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageWeights {
    pub sd: Tensor,
    pub rs: Tensor,
    pub rd: Tensor,
    pub sr: Tensor,
    pub dr: Tensor,
}

const MESSAGE_NAMES: [&str; 5] = ["msg_sd", "msg_rs", "msg_rd", "msg_sr", "msg_dr"];
const NODE_TYPES: [&str; 3] = ["obj", "lay", "rel"];
const HEAD_TYPES: [&str; 3] = ["obj", "lay", "cam"];

/// Named weight tensors, kept in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct SgcnWeights {
    pub tensors: BTreeMap<String, Tensor>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl SgcnWeights {
    /// Seeded initialization. Decoding heads end in zero layers, so the
    /// untrained network predicts zero residuals.
    pub fn init(config: &SgcnConfig, codec: &ParamCodec, seed: u64) -> Self {
        let d = config.d;
        let h = config.head_hidden;
        let mut shapes: Vec<(String, [usize; 2], f64)> = Vec::new();
        let inputs = [
            config.dims.object_dim(codec),
            config.dims.layout_dim(codec),
            RELATION_FEATURE_DIM,
        ];
        for (t, f) in NODE_TYPES.iter().zip(inputs) {
            shapes.push((format!("emb_{t}_w1"), [d, f], (2.0 / f as f64).sqrt()));
            shapes.push((format!("emb_{t}_b1"), [d, 1], 0.0));
            shapes.push((format!("emb_{t}_w2"), [d, d], (2.0 / d as f64).sqrt()));
            shapes.push((format!("emb_{t}_b2"), [d, 1], 0.0));
        }
        for m in MESSAGE_NAMES {
            shapes.push((m.to_string(), [d, d], 0.5 / (d as f64).sqrt()));
        }
        let outs = [codec.object_dim(), codec.layout_dim(), codec.camera_dim()];
        for (t, o) in HEAD_TYPES.iter().zip(outs) {
            shapes.push((format!("head_{t}_w1"), [h, d], (2.0 / d as f64).sqrt()));
            shapes.push((format!("head_{t}_b1"), [h, 1], 0.0));
            shapes.push((format!("head_{t}_w2"), [o, h], 0.0));
            shapes.push((format!("head_{t}_b2"), [o, 1], 0.0));
        }
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = shapes
            .into_iter()
            .map(|(name, [r, c], std)| {
                let t = if std > 0.0 {
                    normal_matrix(&mut rng, r, c, std)
                } else {
                    Tensor::zeros(&[r, c])
                };
                (name, t)
            })
            .collect();
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn message_weights(&self) -> Option<MessageWeights> {
        Some(MessageWeights {
            sd: self.get("msg_sd")?.clone(),
            rs: self.get("msg_rs")?.clone(),
            rd: self.get("msg_rd")?.clone(),
            sr: self.get("msg_sr")?.clone(),
            dr: self.get("msg_dr")?.clone(),
        })
    }

    /// Randomizes the decoding-head output layers (zero after [`init`]).
    ///
    /// [`init`]: SgcnWeights::init
    pub fn randomize_heads(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in HEAD_TYPES {
            for part in ["w2", "b2"] {
                let w = self.tensors.get_mut(&format!("head_{t}_{part}")).expect("head weight");
                for v in w.data_mut() {
                    *v = rng.random_range(-1.0..1.0) * std;
                }
            }
        }
    }
}

/// Adjacency maps of a scene graph: relation `(i, j)` sends to its source
/// and destination with weight `1/N` (mean over each node's `N` incident
/// relations per direction) and receives from them with weight 1.
/// Diagonal relations have no entries.
struct Adjacency {
    rs: Tensor,
    rd: Tensor,
    sr: Tensor,
    dr: Tensor,
}

impl Adjacency {
    fn new(spec: &SceneGraphSpec) -> Self {
        let nodes = spec.node_count();
        let rels = spec.relation_count();
        let mut rs = Tensor::zeros(&[rels, nodes]);
        let mut rd = Tensor::zeros(&[rels, nodes]);
        let mut sr = Tensor::zeros(&[nodes, rels]);
        let mut dr = Tensor::zeros(&[nodes, rels]);
        let share = 1.0 / spec.n_objects as f64;
        for (i, j) in spec.active_relations() {
            let r = spec.relation_index(i, j);
            rs.set(r, i, share);
            rd.set(r, j, share);
            sr.set(i, r, 1.0);
            dr.set(j, r, 1.0);
        }
        Self { rs, rd, sr, dr }
    }
}

struct MessageNodes {
    w: [NodeId; 5],
    a_rs: NodeId,
    a_rd: NodeId,
    a_sr: NodeId,
    a_dr: NodeId,
}

/// Unrolls `steps` synchronous updates:
/// `Zo' = relu(Zo + Wsd·Zo + Wrs·Zr·αrs + Wrd·Zr·αrd)` and
/// `Zr' = relu(Zr + Wsr·Zo·αsr + Wdr·Zo·αdr)`.
fn add_message_passing(
    b: &mut GraphBuilder,
    mut zo: NodeId,
    mut zr: NodeId,
    m: &MessageNodes,
    steps: usize,
) -> (NodeId, NodeId) {
    let [sd, rs, rd, sr, dr] = m.w;
    for _ in 0..steps {
        let self_msg = b.matmul(sd, zo);
        let agg_rs = b.matmul_order_invariant(zr, m.a_rs);
        let agg_rd = b.matmul_order_invariant(zr, m.a_rd);
        let from_rs = b.matmul(rs, agg_rs);
        let from_rd = b.matmul(rd, agg_rd);
        let o1 = b.add(zo, self_msg);
        let o2 = b.add(o1, from_rs);
        let o3 = b.add(o2, from_rd);
        let zo_next = b.relu(o3);

        let src = b.matmul(sr, zo);
        let dst = b.matmul(dr, zo);
        let to_sr = b.matmul_order_invariant(src, m.a_sr);
        let to_dr = b.matmul_order_invariant(dst, m.a_dr);
        let r1 = b.add(zr, to_sr);
        let r2 = b.add(r1, to_dr);
        zr = b.relu(r2);
        zo = zo_next;
    }
    (zo, zr)
}

fn message_nodes(b: &mut GraphBuilder) -> MessageNodes {
    MessageNodes {
        w: MESSAGE_NAMES.map(|n| b.input(n)),
        a_rs: b.constant("adj_rs"),
        a_rd: b.constant("adj_rd"),
        a_sr: b.constant("adj_sr"),
        a_dr: b.constant("adj_dr"),
    }
}

fn bind_adjacency(bindings: &mut Bindings, spec: &SceneGraphSpec) {
    let a = Adjacency::new(spec);
    bindings
        .bind_owned("adj_rs", a.rs)
        .bind_owned("adj_rd", a.rd)
        .bind_owned("adj_sr", a.sr)
        .bind_owned("adj_dr", a.dr);
}

/// `w·x + b·1ᵀ`.
fn linear(b: &mut GraphBuilder, w: NodeId, bias: NodeId, x: NodeId, ones: NodeId) -> NodeId {
    let wx = b.matmul(w, x);
    let bb = b.matmul(bias, ones);
    b.add(wx, bb)
}

fn head(b: &mut GraphBuilder, t: &str, x: NodeId, ones: NodeId) -> NodeId {
    let w1 = b.input(&format!("head_{t}_w1"));
    let b1 = b.input(&format!("head_{t}_b1"));
    let w2 = b.input(&format!("head_{t}_w2"));
    let b2 = b.input(&format!("head_{t}_b2"));
    let h = linear(b, w1, b1, x, ones);
    let h = b.relu(h);
    linear(b, w2, b2, h, ones)
}

/// Object, layout and camera heads reading the final object/layout
/// representations.
fn add_heads(b: &mut GraphBuilder, zo: NodeId) -> [NodeId; 3] {
    let sel_obj = b.constant("sel_obj");
    let sel_lay = b.constant("sel_lay");
    let ones_obj = b.constant("ones_obj");
    let ones_one = b.constant("ones_one");
    let zobj = b.matmul(zo, sel_obj);
    let zlay = b.matmul(zo, sel_lay);
    let o = head(b, "obj", zobj, ones_obj);
    let l = head(b, "lay", zlay, ones_one);
    let c = head(b, "cam", zlay, ones_one);
    b.name(o, "res_obj");
    b.name(l, "res_lay");
    b.name(c, "res_cam");
    [o, l, c]
}

fn bind_heads(bindings: &mut Bindings, spec: &SceneGraphSpec) {
    let n = spec.n_objects;
    let nodes = spec.node_count();
    bindings
        .bind_owned("sel_obj", Tensor::from_fn(nodes, n, |r, c| (r == c) as u8 as f64))
        .bind_owned("sel_lay", Tensor::from_fn(nodes, 1, |r, _| (r == n) as u8 as f64))
        .bind_owned("ones_obj", Tensor::filled(&[1, n], 1.0))
        .bind_owned("ones_one", Tensor::filled(&[1, 1], 1.0));
}

fn residuals_from(res_obj: &Tensor, res_lay: &Tensor, res_cam: &Tensor) -> Residuals {
    Residuals {
        objects: (0..res_obj.cols()).map(|c| res_obj.column_values(c)).collect(),
        layout: res_lay.data().to_vec(),
        camera: res_cam.data().to_vec(),
    }
}

fn residual_seeds(r: &Residuals, rows: usize) -> Result<[Tensor; 3], GraphError> {
    let n = r.objects.len();
    let obj = Tensor::from_fn(rows, n, |row, c| r.objects[c][row]);
    Ok([obj, Tensor::column(r.layout.clone())?, Tensor::column(r.camera.clone())?])
}

/// Runs message passing on given representations.
pub fn message_pass(
    t: &GraphTensors,
    w: &MessageWeights,
    spec: &SceneGraphSpec,
    steps: usize,
) -> Result<GraphTensors, GraphError> {
    let mut b = GraphBuilder::new();
    let zo = b.constant("zo");
    let zr = b.constant("zr");
    let m = message_nodes(&mut b);
    let (zo, zr) = add_message_passing(&mut b, zo, zr, &m, steps);
    b.name(zo, "zo_out");
    b.name(zr, "zr_out");
    let g = b.build();
    let mut bindings = Bindings::new();
    bindings
        .bind("zo", &t.zo)
        .bind("zr", &t.zr)
        .bind("msg_sd", &w.sd)
        .bind("msg_rs", &w.rs)
        .bind("msg_rd", &w.rd)
        .bind("msg_sr", &w.sr)
        .bind("msg_dr", &w.dr);
    bind_adjacency(&mut bindings, spec);
    let eval = g.evaluate(&bindings)?;
    Ok(GraphTensors {
        zo: eval.output("zo_out")?.clone(),
        zr: eval.output("zr_out")?.clone(),
    })
}

/// Decodes per-object, layout and camera residuals from final
/// representations.
pub fn decode_residuals(
    t: &GraphTensors,
    weights: &SgcnWeights,
    spec: &SceneGraphSpec,
) -> Result<Residuals, GraphError> {
    let mut b = GraphBuilder::new();
    let zo = b.constant("zo");
    add_heads(&mut b, zo);
    let g = b.build();
    let mut bindings = Bindings::new();
    bindings.bind("zo", &t.zo);
    bind_heads(&mut bindings, spec);
    bind_weights(&mut bindings, &g, weights)?;
    let eval = g.evaluate(&bindings)?;
    Ok(residuals_from(
        eval.output("res_obj")?,
        eval.output("res_lay")?,
        eval.output("res_cam")?,
    ))
}

fn bind_weights<'a>(bindings: &mut Bindings<'a>, g: &Graph, weights: &'a SgcnWeights) -> Result<(), GraphError> {
    for name in g.trainable_inputs() {
        let t = weights
            .get(name)
            .ok_or_else(|| GraphError::Checkpoint(format!("missing weight `{name}`")))?;
        bindings.bind(name, t);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    /// Embedded representations before message passing.
    pub initial: GraphTensors,
    pub last: GraphTensors,
    pub residuals: Residuals,
}

/// The full network graph.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: SgcnConfig,
    pub codec: ParamCodec,
    inference: Graph,
    training: Graph,
}

fn build_network(config: &SgcnConfig, dropout: bool) -> Graph {
    let mut b = GraphBuilder::new();
    let mut emb = Vec::new();
    for t in NODE_TYPES {
        let x = b.constant(&format!("x_{t}"));
        let ones = b.constant(&format!("ones_{t}_in"));
        let w1 = b.input(&format!("emb_{t}_w1"));
        let b1 = b.input(&format!("emb_{t}_b1"));
        let w2 = b.input(&format!("emb_{t}_w2"));
        let b2 = b.input(&format!("emb_{t}_b2"));
        let h = linear(&mut b, w1, b1, x, ones);
        let h = b.relu(h);
        let h = linear(&mut b, w2, b2, h, ones);
        emb.push(b.relu(h));
    }
    let mut zo = b.concat(&[emb[0], emb[1]], 1);
    let scatter = b.constant("rel_scatter");
    let rel_const = b.constant("rel_const");
    let zr_obj = b.matmul(emb[2], scatter);
    let mut zr = b.add(zr_obj, rel_const);
    if dropout {
        let mo = b.constant("drop_o");
        let mr = b.constant("drop_r");
        zo = b.matmul(mo, zo);
        zr = b.matmul(mr, zr);
    }
    b.name(zo, "zo0");
    b.name(zr, "zr0");
    let m = message_nodes(&mut b);
    let (zo, zr) = add_message_passing(&mut b, zo, zr, &m, config.steps);
    b.name(zo, "zo");
    b.name(zr, "zr");
    add_heads(&mut b, zo);
    b.build()
}

impl Network {
    pub fn new(config: SgcnConfig, codec: ParamCodec) -> Self {
        Self {
            inference: build_network(&config, false),
            training: build_network(&config, config.dropout > 0.0),
            config,
            codec,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.inference
    }

    fn bindings<'a>(
        &self,
        graph: &Graph,
        weights: &'a SgcnWeights,
        spec: &SceneGraphSpec,
        features: FeatureBundle,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Bindings<'a>, GraphError> {
        let d = self.config.d;
        let rels = spec.relation_count();
        let pairs: Vec<(usize, usize)> = spec.object_relations().collect();
        let mut bindings = Bindings::new();
        bindings
            .bind_owned("ones_obj_in", Tensor::filled(&[1, spec.n_objects], 1.0))
            .bind_owned("ones_lay_in", Tensor::filled(&[1, 1], 1.0))
            .bind_owned("ones_rel_in", Tensor::filled(&[1, pairs.len()], 1.0))
            .bind_owned("x_obj", features.object)
            .bind_owned("x_lay", features.layout)
            .bind_owned("x_rel", features.relation);
        let mut scatter = Tensor::zeros(&[pairs.len(), rels]);
        for (k, (i, j)) in pairs.iter().enumerate() {
            scatter.set(k, spec.relation_index(*i, *j), 1.0);
        }
        let n = spec.n_objects;
        let mut rel_const = Tensor::zeros(&[d, rels]);
        for (i, j) in spec.active_relations() {
            if i == n || j == n {
                let c = spec.relation_index(i, j);
                for r in 0..d {
                    rel_const.set(r, c, OBJECT_LAYOUT_RELATION_VALUE);
                }
            }
        }
        bindings.bind_owned("rel_scatter", scatter).bind_owned("rel_const", rel_const);
        if let Some(rng) = dropout_rng {
            let p = self.config.dropout;
            let keep = 1.0 / (1.0 - p);
            for name in ["drop_o", "drop_r"] {
                let mut m = Tensor::zeros(&[d, d]);
                for r in 0..d {
                    if rng.random::<f64>() >= p {
                        m.set(r, r, keep);
                    }
                }
                bindings.bind_owned(name, m);
            }
        }
        bind_adjacency(&mut bindings, spec);
        bind_heads(&mut bindings, spec);
        bind_weights(&mut bindings, graph, weights)?;
        Ok(bindings)
    }

    fn prepare(&self, scene: &SceneState) -> Result<(SceneGraphSpec, FeatureBundle), GraphError> {
        let spec = build_graph(scene)?;
        let features = assemble_features(scene, &spec, &self.config.dims, &self.codec)?;
        Ok((spec, features))
    }

    fn output(eval: &Evaluation) -> Result<NetworkOutput, GraphError> {
        Ok(NetworkOutput {
            initial: GraphTensors {
                zo: eval.output("zo0")?.clone(),
                zr: eval.output("zr0")?.clone(),
            },
            last: GraphTensors {
                zo: eval.output("zo")?.clone(),
                zr: eval.output("zr")?.clone(),
            },
            residuals: residuals_from(
                eval.output("res_obj")?,
                eval.output("res_lay")?,
                eval.output("res_cam")?,
            ),
        })
    }

    /// Inference pass (no dropout).
    pub fn forward(&self, weights: &SgcnWeights, scene: &SceneState) -> Result<NetworkOutput, GraphError> {
        let (spec, features) = self.prepare(scene)?;
        let bindings = self.bindings(&self.inference, weights, &spec, features, None)?;
        let eval = self.inference.evaluate(&bindings)?;
        Self::output(&eval)
    }

    /// ReLU activation pattern of the inference pass; changes exactly when
    /// a perturbation crosses a kink of the network.
    pub fn relu_pattern(&self, weights: &SgcnWeights, scene: &SceneState) -> Result<Vec<i8>, GraphError> {
        let (spec, features) = self.prepare(scene)?;
        let bindings = self.bindings(&self.inference, weights, &spec, features, None)?;
        Ok(self.inference.evaluate(&bindings)?.relu_pattern())
    }

    /// Forward pass, then back-propagation of the residual gradients that
    /// `loss` returns. Yields the weight gradients and `loss`'s payload.
    pub fn backprop<T>(
        &self,
        weights: &SgcnWeights,
        scene: &SceneState,
        dropout_rng: Option<&mut ChaCha8Rng>,
        loss: impl FnOnce(&NetworkOutput) -> Result<(Residuals, T), GraphError>,
    ) -> Result<(Gradients, T), GraphError> {
        let (spec, features) = self.prepare(scene)?;
        let graph = if dropout_rng.is_some() && self.config.dropout > 0.0 {
            &self.training
        } else {
            &self.inference
        };
        let rng = if std::ptr::eq(graph, &self.training) { dropout_rng } else { None };
        let bindings = self.bindings(graph, weights, &spec, features, rng)?;
        let eval = graph.evaluate(&bindings)?;
        let out = Self::output(&eval)?;
        let (grads, payload) = loss(&out)?;
        let [go, gl, gc] = residual_seeds(&grads, self.codec.object_dim())?;
        let g = eval.vjp(&[("res_obj", &go), ("res_lay", &gl), ("res_cam", &gc)])?;
        Ok((g, payload))
    }
}
