use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{GrlPosition, NetworkConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::activation::{sigmoid, softmax_rows};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
use crate::nn::loss::{event_loss_batch, mtl_loss, scene_loss_batch};
use crate::nn::{
    BatchNorm2d, BiGru, Conv2d, FrameFlatten, GlobalMaxPool, GrlNode, Layer, LayerParams,
    LayerSpec, LeakyRelu, Linear, LossWeights, MaxPool2d, Mode, Radam,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
}

impl Node {
    fn new(name: impl Into<String>, layer: Layer) -> Self {
        Node {
            name: name.into(),
            layer,
        }
    }
}

/// The assembled network: a shared trunk feeding an optional scene branch
/// and an optional event branch.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    config: NetworkConfig,
    trunk: Vec<Node>,
    scene: Vec<Node>,
    event: Vec<Node>,
    trace: Vec<(String, Vec<usize>)>,
}

/// Raw head outputs before the softmax / sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    /// `[N, n_scenes]`
    pub scene_logits: Option<Tensor>,
    /// `[N, T, n_events]`
    pub event_logits: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `[N, n_scenes]`, rows sum to one.
    pub scene_probs: Option<Tensor>,
    /// `[N, T, n_events]`, entries in (0, 1).
    pub event_probs: Option<Tensor>,
}

impl NetworkOutput {
    pub fn predictions(&self) -> Predictions {
        Predictions {
            scene_probs: self.scene_logits.as_ref().map(softmax_rows),
            event_probs: self.event_logits.as_ref().map(sigmoid),
        }
    }
}

/// Training targets for one batch.
#[derive(Debug, Clone)]
pub struct Targets {
    /// One-hot `[N, n_scenes]`.
    pub scene: Tensor,
    /// Binary `[N, T, n_events]`.
    pub events: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub scene: f64,
    pub event: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub spec: LayerSpec,
}

/// Topology manifest stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: NetworkConfig,
    pub trunk: Vec<LayerDescriptor>,
    pub scene: Vec<LayerDescriptor>,
    pub event: Vec<LayerDescriptor>,
}

fn conv_block(
    nodes: &mut Vec<Node>,
    prefix: &str,
    idx: usize,
    cin: usize,
    cout: usize,
    slope: f64,
    rng: &mut impl Rng,
) {
    nodes.push(Node::new(format!("{prefix}.conv{idx}"), Layer::Conv2d(Conv2d::new(cin, cout, rng))));
    nodes.push(Node::new(format!("{prefix}.bn{idx}"), Layer::BatchNorm2d(BatchNorm2d::new(cout))));
    nodes.push(Node::new(format!("{prefix}.act{idx}"), Layer::LeakyRelu(LeakyRelu::new(slope))));
}

/// Builds the network described by `config`, drawing initial weights from `rng`.
///
/// A GRL position in `config.grl` is inserted after construction.
pub fn build_network(config: &NetworkConfig, rng: &mut impl Rng) -> Result<LayerGraph> {
    config.validate()?;
    let arch = &config.arch;
    let slope = arch.leaky_slope;

    let mut trunk = Vec::new();
    let mut cin = 1;
    for (i, &pool) in arch.trunk_freq_pools.iter().enumerate() {
        conv_block(&mut trunk, "trunk", i + 1, cin, arch.trunk_channels, slope, rng);
        trunk.push(Node::new(format!("trunk.pool{}", i + 1), Layer::MaxPool2d(MaxPool2d::new(1, pool))));
        cin = arch.trunk_channels;
    }

    let mut scene = Vec::new();
    if config.variant.has_scene() {
        conv_block(&mut scene, "scene", 1, arch.trunk_channels, arch.scene_channels, slope, rng);
        scene.push(Node::new(
            "scene.pool1",
            Layer::MaxPool2d(MaxPool2d::new(arch.scene_time_pool, 1)),
        ));
        conv_block(&mut scene, "scene", 2, arch.scene_channels, arch.scene_channels, slope, rng);
        scene.push(Node::new("scene.gpool", Layer::GlobalMaxPool(GlobalMaxPool::new())));
        scene.push(Node::new("scene.fc1", Layer::Linear(Linear::new(arch.scene_channels, arch.fc_units, rng))));
        scene.push(Node::new("scene.act3", Layer::LeakyRelu(LeakyRelu::new(slope))));
        scene.push(Node::new("scene.fc2", Layer::Linear(Linear::new(arch.fc_units, config.n_scenes, rng))));
    }

    let mut event = Vec::new();
    if config.variant.has_event() {
        let frame_width = arch.trunk_channels * arch.trunk_output_bins(config.n_bins);
        event.push(Node::new("event.flatten", Layer::FrameFlatten(FrameFlatten::default())));
        event.push(Node::new("event.bigru", Layer::BiGru(BiGru::new(frame_width, arch.gru_units, rng))));
        event.push(Node::new("event.fc1", Layer::Linear(Linear::new(2 * arch.gru_units, arch.fc_units, rng))));
        event.push(Node::new("event.act1", Layer::LeakyRelu(LeakyRelu::new(slope))));
        event.push(Node::new("event.fc2", Layer::Linear(Linear::new(arch.fc_units, config.n_events, rng))));
    }

    let mut base = config.clone();
    base.grl.position = None;
    let mut graph = LayerGraph {
        config: base,
        trunk,
        scene,
        event,
        trace: Vec::new(),
    };
    if let Some(pos) = config.grl.position {
        graph.insert_grl(pos, config.grl.lambda)?;
    }
    Ok(graph)
}

fn run_stack(nodes: &mut [Node], x: &Tensor, mode: Mode, trace: &mut Vec<(String, Vec<usize>)>) -> Result<Tensor> {
    let mut cur = x.clone();
    for node in nodes.iter_mut() {
        cur = node.layer.forward(&cur, mode)?;
        trace.push((node.name.clone(), cur.shape().to_vec()));
    }
    Ok(cur)
}

fn backprop_stack(nodes: &mut [Node], dy: &Tensor) -> Result<Tensor> {
    let mut grad = dy.clone();
    for node in nodes.iter_mut().rev() {
        grad = node.layer.backward(&grad)?;
    }
    Ok(grad)
}

fn descriptors(nodes: &[Node]) -> Vec<LayerDescriptor> {
    nodes
        .iter()
        .map(|n| LayerDescriptor {
            name: n.name.clone(),
            spec: n.layer.spec(),
        })
        .collect()
}

impl LayerGraph {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn trunk(&self) -> &[Node] {
        &self.trunk
    }

    pub fn scene_branch(&self) -> &[Node] {
        &self.scene
    }

    pub fn event_branch(&self) -> &[Node] {
        &self.event
    }

    /// Every node in trunk, scene, event order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.trunk.iter().chain(&self.scene).chain(&self.event)
    }

    /// `(layer name, output shape)` for every node visited by the last forward pass.
    pub fn last_trace(&self) -> &[(String, Vec<usize>)] {
        &self.trace
    }

    /// Inserts a gradient reversal layer at `pos`.
    pub fn insert_grl(&mut self, pos: GrlPosition, lambda: f64) -> Result<()> {
        if self.config.variant != Variant::Mtl {
            return Err(Error::Config(format!(
                "GRL {pos} requires the MTL variant, not {}",
                self.config.variant
            )));
        }
        if let Some(existing) = self.config.grl.position {
            return Err(Error::Config(format!("a GRL is already inserted at {existing}")));
        }
        let node = Node::new(
            if pos.is_scene() { "scene.grl" } else { "event.grl" },
            Layer::Grl(GrlNode::new(lambda)?),
        );
        let find = |nodes: &[Node], name: &str| -> Result<usize> {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::Config(format!("layer {name} missing")))
        };
        match pos {
            GrlPosition::S1 => self.scene.insert(0, node),
            GrlPosition::S2 => {
                let at = find(&self.scene, "scene.gpool")? + 1;
                self.scene.insert(at, node);
            }
            GrlPosition::E1 => self.event.insert(0, node),
            GrlPosition::E2 => {
                let at = find(&self.event, "event.bigru")? + 1;
                self.event.insert(at, node);
            }
        }
        self.config.grl.position = Some(pos);
        self.config.grl.lambda = lambda;
        Ok(())
    }

    /// Runs the network on `[N, 1, T, n_bins]` features.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<NetworkOutput> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[3] != self.config.n_bins || s[0] == 0 {
            return Err(Error::shape(format!(
                "network input must be [N, 1, T, {}], got {s:?}",
                self.config.n_bins
            )));
        }
        let mut trace = Vec::new();
        let shared = run_stack(&mut self.trunk, x, mode, &mut trace)?;
        let scene_logits = if self.scene.is_empty() {
            None
        } else {
            Some(run_stack(&mut self.scene, &shared, mode, &mut trace)?)
        };
        let event_logits = if self.event.is_empty() {
            None
        } else {
            Some(run_stack(&mut self.event, &shared, mode, &mut trace)?)
        };
        self.trace = trace;
        Ok(NetworkOutput {
            scene_logits,
            event_logits,
        })
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Predictions> {
        Ok(self.forward(x, Mode::Eval)?.predictions())
    }

    /// Backpropagates logit gradients from either head; the trunk receives
    /// the sum of both branch gradients.
    pub fn backward(&mut self, d_scene: Option<&Tensor>, d_event: Option<&Tensor>) -> Result<()> {
        let mut d_shared: Option<Tensor> = None;
        for (nodes, grad) in [(&mut self.scene, d_scene), (&mut self.event, d_event)] {
            let Some(grad) = grad else { continue };
            if nodes.is_empty() {
                return Err(Error::shape("gradient supplied for a head this variant lacks"));
            }
            let g = backprop_stack(nodes, grad)?;
            match d_shared.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => d_shared = Some(g),
            }
        }
        if let Some(g) = d_shared {
            backprop_stack(&mut self.trunk, &g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.param_groups_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes gradients, runs forward and backward for the weighted loss and
    /// leaves parameter gradients populated. Single-task variants use their
    /// one loss with unit weight.
    pub fn loss_and_grad(&mut self, x: &Tensor, targets: &Targets, w: LossWeights, mode: Mode) -> Result<StepLosses> {
        self.zero_grad();
        let out = self.forward(x, mode)?;
        let (alpha, beta) = match self.config.variant {
            Variant::Mtl => (w.alpha, w.beta),
            Variant::AscOnly => (1.0, 0.0),
            Variant::SedOnly => (0.0, 1.0),
        };
        let mut scene = 0.0;
        let mut event = 0.0;
        let mut d_scene = None;
        let mut d_event = None;
        if let Some(logits) = &out.scene_logits {
            let (l, g) = scene_loss_batch(logits, &targets.scene)?;
            scene = l;
            d_scene = Some(g.scale(alpha));
        }
        if let Some(logits) = &out.event_logits {
            let (l, g) = event_loss_batch(logits, &targets.events)?;
            event = l;
            d_event = Some(g.scale(beta));
        }
        let total = mtl_loss(scene, event, LossWeights { alpha, beta });
        if !total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss (scene {scene}, event {event})")));
        }
        self.backward(d_scene.as_ref(), d_event.as_ref())?;
        Ok(StepLosses { total, scene, event })
    }

    /// One optimization step in train mode.
    pub fn train_step(&mut self, x: &Tensor, targets: &Targets, w: LossWeights, opt: &mut Radam) -> Result<StepLosses> {
        let losses = self.loss_and_grad(x, targets, w, Mode::Train)?;
        opt.step(self.param_groups_mut())?;
        Ok(losses)
    }

    /// Parameter groups with stable names, in trunk, scene, event order.
    pub fn named_params(&self) -> Vec<(String, &LayerParams)> {
        let mut out = Vec::new();
        for node in self.nodes() {
            let groups = node.layer.params();
            let multi = groups.len() > 1;
            for (i, p) in groups.into_iter().enumerate() {
                let name = if multi {
                    format!("{}.{}", node.name, if i == 0 { "fwd" } else { "bwd" })
                } else {
                    node.name.clone()
                };
                out.push((name, p));
            }
        }
        out
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut LayerParams> {
        self.trunk
            .iter_mut()
            .chain(self.scene.iter_mut())
            .chain(self.event.iter_mut())
            .flat_map(|n| n.layer.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.count()).sum()
    }

    /// All weights and biases concatenated in parameter-group order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.weights.data().iter().chain(p.biases.data()).copied())
            .collect()
    }

    /// Gradients laid out like [`LayerGraph::flat_params`].
    pub fn flat_grads(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.weight_grad.data().iter().chain(p.bias_grad.data()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut rest = values;
        for p in self.param_groups_mut() {
            for t in [&mut p.weights, &mut p.biases] {
                let (head, tail) = rest.split_at(t.len());
                t.data_mut().copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            trunk: descriptors(&self.trunk),
            scene: descriptors(&self.scene),
            event: descriptors(&self.event),
        }
    }

    pub fn checkpoint_entries(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, p) in self.named_params() {
            out.push(NamedTensor {
                name: format!("{name}.weights"),
                tensor: p.weights.clone(),
            });
            out.push(NamedTensor {
                name: format!("{name}.biases"),
                tensor: p.biases.clone(),
            });
            for (i, a) in p.aux.iter().enumerate() {
                out.push(NamedTensor {
                    name: format!("{name}.aux{i}"),
                    tensor: a.clone(),
                });
            }
        }
        out
    }

    /// Overwrites parameters and statistics from checkpoint entries; names
    /// and shapes must match this graph exactly.
    pub fn load_entries(&mut self, entries: &[NamedTensor]) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let mut it = entries.iter();
        let mut next = |expected: String, shape: &[usize]| -> Result<Tensor> {
            let e = it
                .next()
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {expected}")))?;
            if e.name != expected || e.tensor.shape() != shape {
                return Err(Error::Format(format!(
                    "checkpoint entry {} {:?} does not match {expected} {shape:?}",
                    e.name,
                    e.tensor.shape()
                )));
            }
            Ok(e.tensor.clone())
        };
        let mut loaded = Vec::new();
        for (name, p) in names.iter().zip(self.named_params()) {
            let w = next(format!("{name}.weights"), p.1.weights.shape())?;
            let b = next(format!("{name}.biases"), p.1.biases.shape())?;
            let aux = p
                .1
                .aux
                .iter()
                .enumerate()
                .map(|(i, a)| next(format!("{name}.aux{i}"), a.shape()))
                .collect::<Result<Vec<_>>>()?;
            loaded.push((w, b, aux));
        }
        if it.next().is_some() {
            return Err(Error::Format("checkpoint has extra entries".into()));
        }
        for (p, (w, b, aux)) in self.param_groups_mut().into_iter().zip(loaded) {
            p.weights = w;
            p.biases = b;
            p.aux = aux;
        }
        Ok(())
    }

    pub fn save(&self, checkpoint: &Path, manifest: &Path) -> Result<()> {
        write_checkpoint(checkpoint, &self.checkpoint_entries())?;
        let json = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        std::fs::write(manifest, json).map_err(|e| Error::io(manifest, e))
    }

    /// Rebuilds a graph from a manifest and checkpoint written by [`LayerGraph::save`].
    pub fn load(checkpoint: &Path, manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut graph = build_network(&m.config, &mut rng)?;
        if graph.manifest() != m {
            return Err(Error::Format("manifest topology does not match its config".into()));
        }
        graph.load_entries(&read_checkpoint(checkpoint)?)?;
        Ok(graph)
    }
}
