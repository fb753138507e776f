use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Window};
use super::{seed_for, EngineError, Scalar, Tensor};
use crate::ir::{self, Graph, LayerKind, Padding, PoolMode, Shape3};

/// Momentum of the batchnorm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass switches. Dropout masks in train mode are a pure function
/// of `dropout_seed` and the node id, so a train-mode pass is repeatable.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            dropout_seed: 0,
        }
    }

    pub fn train(dropout_seed: u64) -> Self {
        ForwardOptions {
            mode: Mode::Train,
            dropout_seed,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        pad_top: usize,
        pad_left: usize,
        cout: usize,
        relu: bool,
    },
    Dense {
        fout: usize,
        relu: bool,
    },
    Pool {
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        max: bool,
    },
    BatchNorm {
        eps: f64,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Flatten,
    Concat,
    Add,
}

#[derive(Debug, Clone)]
struct CompiledNode {
    id: String,
    op: Op,
    inputs: Vec<usize>,
    in_shapes: Vec<Shape3>,
    out_shape: Shape3,
}

/// The compiled node program shared by every model built from one graph.
#[derive(Debug)]
pub struct Program {
    inputs: Vec<(String, Shape3)>,
    nodes: Vec<CompiledNode>,
    output_slot: usize,
    classes: usize,
    /// Provenance label of every channel of every slot, used to line up
    /// parameters between models of different topologies.
    labels: Vec<Vec<Arc<str>>>,
}

impl Program {
    fn compile(graph: &Graph) -> Result<Program, EngineError> {
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let mut slot_shapes: Vec<Shape3> = Vec::new();
        let mut labels: Vec<Vec<Arc<str>>> = Vec::new();
        let mut inputs = Vec::new();
        for input in graph.inputs() {
            slot_of.insert(input.id.as_str(), slot_shapes.len());
            slot_shapes.push(input.shape);
            labels.push(
                (0..input.shape.c)
                    .map(|k| Arc::from(format!("{}#{k}", input.id)))
                    .collect(),
            );
            inputs.push((input.id.clone(), input.shape));
        }
        let mut nodes = Vec::with_capacity(graph.nodes().len());
        for spec in graph.nodes() {
            let in_slots: Vec<usize> = spec.inputs.iter().map(|i| slot_of[i.as_str()]).collect();
            let in_shapes: Vec<Shape3> = in_slots.iter().map(|&s| slot_shapes[s]).collect();
            let out_shape = graph.shape(&spec.id).expect("graph infers every shape");
            let x = in_shapes[0];
            let own = |n: usize| -> Vec<Arc<str>> {
                (0..n)
                    .map(|k| Arc::from(format!("{}#{k}", spec.id)))
                    .collect()
            };
            let (op, out_labels) = match &spec.kind {
                LayerKind::Conv(p) => {
                    let (pad_top, pad_left) = match p.padding {
                        Padding::Valid => (0, 0),
                        Padding::Same => {
                            let total = |size: usize, out: usize, k: usize, s: usize| {
                                ((out - 1) * s + k).saturating_sub(size)
                            };
                            (
                                total(x.h, out_shape.h, p.kernel_hw.0, p.stride.0) / 2,
                                total(x.w, out_shape.w, p.kernel_hw.1, p.stride.1) / 2,
                            )
                        }
                    };
                    (
                        Op::Conv {
                            kh: p.kernel_hw.0,
                            kw: p.kernel_hw.1,
                            sh: p.stride.0,
                            sw: p.stride.1,
                            pad_top,
                            pad_left,
                            cout: p.kernel_count,
                            relu: p.activation == ir::Activation::Relu,
                        },
                        own(p.kernel_count),
                    )
                }
                LayerKind::Dense(p) => (
                    Op::Dense {
                        fout: p.units,
                        relu: p.activation == ir::Activation::Relu,
                    },
                    own(p.units),
                ),
                LayerKind::Pool(p) => (
                    Op::Pool {
                        kh: p.window.0,
                        kw: p.window.1,
                        sh: p.stride.0,
                        sw: p.stride.1,
                        max: p.mode == PoolMode::Max,
                    },
                    labels[in_slots[0]].clone(),
                ),
                LayerKind::GlobalPool(p) => (
                    Op::Pool {
                        kh: x.h,
                        kw: x.w,
                        sh: x.h,
                        sw: x.w,
                        max: p.mode == PoolMode::Max,
                    },
                    labels[in_slots[0]].clone(),
                ),
                LayerKind::BatchNorm(p) => (
                    Op::BatchNorm { eps: p.epsilon },
                    labels[in_slots[0]].clone(),
                ),
                LayerKind::Dropout(p) => {
                    (Op::Dropout { rate: p.rate }, labels[in_slots[0]].clone())
                }
                LayerKind::Relu => (Op::Relu, labels[in_slots[0]].clone()),
                LayerKind::Flatten => {
                    let src = &labels[in_slots[0]];
                    let mut flat = Vec::with_capacity(x.len());
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            for l in src {
                                flat.push(Arc::from(format!("{y},{xx}:{l}")));
                            }
                        }
                    }
                    (Op::Flatten, flat)
                }
                LayerKind::Concat => (
                    Op::Concat,
                    in_slots
                        .iter()
                        .flat_map(|&s| labels[s].iter().cloned())
                        .collect(),
                ),
                LayerKind::Add => (Op::Add, labels[in_slots[0]].clone()),
            };
            slot_of.insert(spec.id.as_str(), slot_shapes.len());
            slot_shapes.push(out_shape);
            labels.push(out_labels);
            nodes.push(CompiledNode {
                id: spec.id.clone(),
                op,
                inputs: in_slots,
                in_shapes,
                out_shape,
            });
        }
        let output_slot = slot_of[graph.output()];
        let out = graph.output_shape();
        if out.h != 1 || out.w != 1 {
            return Err(EngineError::UnsupportedLayer(format!(
                "network output must be flat logits, got {out}"
            )));
        }
        Ok(Program {
            inputs,
            nodes,
            output_slot,
            classes: out.c,
            labels,
        })
    }

    pub fn inputs(&self) -> &[(String, Shape3)] {
        &self.inputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    fn node_labels(&self, idx: usize) -> &[Arc<str>] {
        &self.labels[self.inputs.len() + idx]
    }

    /// Per-axis provenance labels of each parameter tensor of a node.
    fn param_axis_labels(&self, idx: usize) -> Vec<Vec<Vec<Arc<str>>>> {
        let node = &self.nodes[idx];
        let index =
            |n: usize| -> Vec<Arc<str>> { (0..n).map(|i| Arc::from(i.to_string())).collect() };
        let input = self.labels[node.inputs[0]].clone();
        let own = self.node_labels(idx).to_vec();
        match node.op {
            Op::Conv { kh, kw, .. } => {
                vec![vec![index(kh), index(kw), input, own.clone()], vec![own]]
            }
            Op::Dense { .. } => vec![vec![input, own.clone()], vec![own]],
            Op::BatchNorm { .. } => vec![vec![input]; 4],
            _ => Vec::new(),
        }
    }
}

/// Parameter tensors of one node; the first `trainable` are optimized, the
/// rest are buffers (batchnorm running mean and variance).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams<T> {
    pub tensors: Vec<Tensor<T>>,
    pub trainable: usize,
}

pub type ParamMap<T> = BTreeMap<String, NodeParams<T>>;
/// Gradients of the trainable tensors, keyed like [`ParamMap`].
pub type Gradients<T> = BTreeMap<String, Vec<Tensor<T>>>;

/// A compiled network with its parameters.
#[derive(Debug, Clone)]
pub struct ExecutableModel<T: Scalar> {
    program: Arc<Program>,
    params: ParamMap<T>,
    seed: u64,
}

enum Cache<T> {
    None,
    Cols(Vec<T>),
    Argmax(Vec<u32>),
    Bn {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
        train: bool,
    },
    Mask(Vec<T>),
}

/// Activations and per-node caches of one forward pass.
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
    batch: usize,
}

impl<T: Scalar> Tape<T> {
    /// Logits as a `(batch, classes)` tensor.
    pub fn logits(&self, program: &Program) -> Tensor<T> {
        let v = &self.values[program.output_slot];
        Tensor::new(vec![self.batch, program.classes], v.data().to_vec()).expect("flat logits")
    }
}

/// How parameters were carried over by [`ExecutableModel::inherit_from`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InheritStats {
    /// Elements copied from the source model.
    pub copied: usize,
    /// Elements left at their fresh initialization.
    pub fresh: usize,
    /// Nodes whose every element was freshly initialized.
    pub reinitialized: Vec<String>,
    /// Nodes mixing copied and fresh elements.
    pub partial: Vec<String>,
}

impl<T: Scalar> ExecutableModel<T> {
    /// Compiles a graph and initializes parameters deterministically from
    /// `(seed, node id)`: fan-in-scaled uniform weights, zero biases,
    /// unit batchnorm scale.
    pub fn compile(graph: &Graph, seed: u64) -> Result<Self, EngineError> {
        let program = Program::compile(graph)?;
        let mut params = BTreeMap::new();
        for node in &program.nodes {
            if let Some(p) = init_node(node, seed) {
                params.insert(node.id.clone(), p);
            }
        }
        Ok(ExecutableModel {
            program: Arc::new(program),
            params,
            seed,
        })
    }

    pub fn from_blueprint(b: &ir::Blueprint, seed: u64) -> Result<Self, EngineError> {
        Self::compile(b.graph(), seed)
    }

    pub fn from_xblueprint(x: &ir::XBlueprint, seed: u64) -> Result<Self, EngineError> {
        Self::compile(x.graph(), seed)
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn classes(&self) -> usize {
        self.program.classes
    }

    pub fn params(&self) -> &ParamMap<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap<T> {
        &mut self.params
    }

    /// Replaces all parameters; every node and tensor shape must match.
    pub fn set_params(&mut self, params: ParamMap<T>) -> Result<(), EngineError> {
        if params.len() != self.params.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "expected parameters for {} nodes, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (id, p) in &params {
            let own = self.params.get(id).ok_or_else(|| {
                EngineError::ShapeMismatch(format!("unexpected parameters for `{id}`"))
            })?;
            let same = own.tensors.len() == p.tensors.len()
                && own
                    .tensors
                    .iter()
                    .zip(&p.tensors)
                    .all(|(a, b)| a.shape() == b.shape());
            if !same {
                return Err(EngineError::ShapeMismatch(format!(
                    "parameter shapes for `{id}` differ"
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Number of trainable scalars, counted element by element.
    pub fn trainable_elements(&self) -> usize {
        self.params
            .values()
            .flat_map(|p| p.tensors[..p.trainable].iter())
            .map(|t| t.len())
            .sum()
    }

    fn check_inputs(&self, inputs: &[Tensor<T>]) -> Result<usize, EngineError> {
        if inputs.len() != self.program.inputs.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "model takes {} input tensor(s), got {}",
                self.program.inputs.len(),
                inputs.len()
            )));
        }
        let batch = inputs.first().map(|t| t.batch()).unwrap_or(0);
        for (t, (id, s)) in inputs.iter().zip(&self.program.inputs) {
            if t.shape() != [batch, s.h, s.w, s.c] {
                return Err(EngineError::ShapeMismatch(format!(
                    "input `{id}` expects [{batch}, {}, {}, {}], got {:?}",
                    s.h,
                    s.w,
                    s.c,
                    t.shape()
                )));
            }
        }
        Ok(batch)
    }

    /// Eval-mode logits, `(batch, classes)`.
    pub fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        let tape = self.forward_tape(inputs, ForwardOptions::eval())?;
        Ok(tape.logits(&self.program))
    }

    pub fn forward_tape(
        &self,
        inputs: &[Tensor<T>],
        opts: ForwardOptions,
    ) -> Result<Tape<T>, EngineError> {
        let batch = self.check_inputs(inputs)?;
        let mut values: Vec<Tensor<T>> = inputs.to_vec();
        let mut caches = Vec::with_capacity(self.program.nodes.len());
        for node in &self.program.nodes {
            let (out, cache) = self.forward_node(node, &values, batch, opts);
            debug_assert!(
                !inputs.iter().all(|t| t.all_finite()) || out.iter().all(|v| v.is_finite()),
                "non-finite activation at `{}`",
                node.id
            );
            let s = node.out_shape;
            values.push(Tensor::new(vec![batch, s.h, s.w, s.c], out)?);
            caches.push(cache);
        }
        Ok(Tape {
            values,
            caches,
            batch,
        })
    }

    fn forward_node(
        &self,
        node: &CompiledNode,
        values: &[Tensor<T>],
        batch: usize,
        opts: ForwardOptions,
    ) -> (Vec<T>, Cache<T>) {
        let x = values[node.inputs[0]].data();
        let xs = node.in_shapes[0];
        let params = self.params.get(&node.id);
        match node.op {
            Op::Conv {
                kh,
                kw,
                sh,
                sw,
                pad_top,
                pad_left,
                cout,
                relu,
            } => {
                let g = window(
                    batch,
                    xs,
                    node.out_shape,
                    (kh, kw),
                    (sh, sw),
                    (pad_top, pad_left),
                );
                let p = params.expect("conv params");
                let cols = ops::im2col(x, &g);
                let out = ops::linear_forward(
                    &cols,
                    g.out_rows(),
                    g.patch_len(),
                    p.tensors[0].data(),
                    p.tensors[1].data(),
                    cout,
                    relu,
                );
                (out, Cache::Cols(cols))
            }
            Op::Dense { fout, relu } => {
                let p = params.expect("dense params");
                let out = ops::linear_forward(
                    x,
                    batch,
                    xs.len(),
                    p.tensors[0].data(),
                    p.tensors[1].data(),
                    fout,
                    relu,
                );
                (out, Cache::None)
            }
            Op::Pool {
                kh,
                kw,
                sh,
                sw,
                max,
            } => {
                let g = window(batch, xs, node.out_shape, (kh, kw), (sh, sw), (0, 0));
                let (out, argmax) = ops::pool_forward(x, &g, max);
                (out, Cache::Argmax(argmax))
            }
            Op::BatchNorm { eps } => {
                let p = params.expect("batchnorm params");
                let train = opts.mode == Mode::Train;
                let running = if train {
                    None
                } else {
                    Some((p.tensors[2].data(), p.tensors[3].data()))
                };
                let f = ops::batchnorm_forward(
                    x,
                    xs.c,
                    p.tensors[0].data(),
                    p.tensors[1].data(),
                    T::from_f64_lossy(eps),
                    running,
                );
                (
                    f.y,
                    Cache::Bn {
                        xhat: f.xhat,
                        inv_std: f.inv_std,
                        mean: f.mean,
                        var: f.var,
                        train,
                    },
                )
            }
            Op::Dropout { rate } => {
                if opts.mode == Mode::Eval || rate == 0.0 {
                    return (x.to_vec(), Cache::None);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed_for(opts.dropout_seed, &node.id));
                let keep = T::from_f64_lossy(if rate >= 1.0 { 0.0 } else { 1.0 / (1.0 - rate) });
                let mask: Vec<T> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() >= rate {
                            keep
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let out = x.iter().zip(&mask).map(|(a, m)| *a * *m).collect();
                (out, Cache::Mask(mask))
            }
            Op::Relu => (x.iter().map(|v| v.max(T::zero())).collect(), Cache::None),
            Op::Flatten => (x.to_vec(), Cache::None),
            Op::Concat => {
                let positions = batch * xs.h * xs.w;
                let parts: Vec<(&[T], usize)> = node
                    .inputs
                    .iter()
                    .zip(&node.in_shapes)
                    .map(|(&s, shape)| (values[s].data(), shape.c))
                    .collect();
                (ops::concat_channels(&parts, positions), Cache::None)
            }
            Op::Add => {
                let mut out = x.to_vec();
                for &s in &node.inputs[1..] {
                    for (o, v) in out.iter_mut().zip(values[s].data()) {
                        *o += *v;
                    }
                }
                (out, Cache::None)
            }
        }
    }

    /// Mean cross-entropy loss and gradients of every trainable tensor.
    pub fn loss_and_gradients(
        &self,
        inputs: &[Tensor<T>],
        labels: &[u32],
        opts: ForwardOptions,
    ) -> Result<(T, Gradients<T>, Tape<T>), EngineError> {
        let tape = self.forward_tape(inputs, opts)?;
        if labels.len() != tape.batch {
            return Err(EngineError::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                tape.batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.program.classes) {
            return Err(EngineError::LabelOutOfRange {
                label: bad,
                classes: self.program.classes,
            });
        }
        let (loss, dlogits) = ops::softmax_cross_entropy(
            tape.values[self.program.output_slot].data(),
            labels,
            self.program.classes,
        );
        let grads = self.backward(&tape, dlogits);
        Ok((loss, grads, tape))
    }

    fn backward(&self, tape: &Tape<T>, dlogits: Vec<T>) -> Gradients<T> {
        let program = &self.program;
        let n_inputs = program.inputs.len();
        let mut slot_grads: Vec<Option<Vec<T>>> = vec![None; tape.values.len()];
        slot_grads[program.output_slot] = Some(dlogits);
        let mut grads: Gradients<T> = BTreeMap::new();
        let batch = tape.batch;

        let accumulate = |slot_grads: &mut Vec<Option<Vec<T>>>, slot: usize, g: Vec<T>| {
            if slot < n_inputs {
                return;
            }
            match &mut slot_grads[slot] {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                none => *none = Some(g),
            }
        };

        for (idx, node) in program.nodes.iter().enumerate().rev() {
            let slot = n_inputs + idx;
            let Some(dout) = slot_grads[slot].take() else {
                // Nothing downstream depends on this node; its parameters get zero gradient.
                if let Some(p) = self.params.get(&node.id) {
                    grads.insert(
                        node.id.clone(),
                        p.tensors[..p.trainable]
                            .iter()
                            .map(|t| Tensor::zeros(t.shape().to_vec()))
                            .collect(),
                    );
                }
                continue;
            };
            let xs = node.in_shapes[0];
            let out = tape.values[slot].data();
            let params = self.params.get(&node.id);
            match (&node.op, &tape.caches[idx]) {
                (
                    Op::Conv {
                        kh,
                        kw,
                        sh,
                        sw,
                        pad_top,
                        pad_left,
                        cout,
                        relu,
                    },
                    Cache::Cols(cols),
                ) => {
                    let g = window(
                        batch,
                        xs,
                        node.out_shape,
                        (*kh, *kw),
                        (*sh, *sw),
                        (*pad_top, *pad_left),
                    );
                    let p = params.expect("conv params");
                    let lg = ops::linear_backward(
                        &dout,
                        out,
                        cols,
                        g.out_rows(),
                        g.patch_len(),
                        p.tensors[0].data(),
                        *cout,
                        *relu,
                    );
                    grads.insert(
                        node.id.clone(),
                        vec![
                            Tensor::new(p.tensors[0].shape().to_vec(), lg.dweight).expect("shape"),
                            Tensor::new(p.tensors[1].shape().to_vec(), lg.dbias).expect("shape"),
                        ],
                    );
                    accumulate(&mut slot_grads, node.inputs[0], ops::col2im(&lg.dcols, &g));
                }
                (Op::Dense { fout, relu }, _) => {
                    let p = params.expect("dense params");
                    let x = tape.values[node.inputs[0]].data();
                    let lg = ops::linear_backward(
                        &dout,
                        out,
                        x,
                        batch,
                        xs.len(),
                        p.tensors[0].data(),
                        *fout,
                        *relu,
                    );
                    grads.insert(
                        node.id.clone(),
                        vec![
                            Tensor::new(p.tensors[0].shape().to_vec(), lg.dweight).expect("shape"),
                            Tensor::new(p.tensors[1].shape().to_vec(), lg.dbias).expect("shape"),
                        ],
                    );
                    accumulate(&mut slot_grads, node.inputs[0], lg.dcols);
                }
                (Op::Pool { kh, kw, sh, sw, .. }, Cache::Argmax(argmax)) => {
                    let g = window(batch, xs, node.out_shape, (*kh, *kw), (*sh, *sw), (0, 0));
                    accumulate(
                        &mut slot_grads,
                        node.inputs[0],
                        ops::pool_backward(&dout, &g, argmax),
                    );
                }
                (
                    Op::BatchNorm { .. },
                    Cache::Bn {
                        xhat,
                        inv_std,
                        train,
                        ..
                    },
                ) => {
                    let p = params.expect("batchnorm params");
                    let (dx, dgamma, dbeta) = ops::batchnorm_backward(
                        &dout,
                        xhat,
                        inv_std,
                        p.tensors[0].data(),
                        xs.c,
                        *train,
                    );
                    grads.insert(
                        node.id.clone(),
                        vec![
                            Tensor::new(vec![xs.c], dgamma).expect("shape"),
                            Tensor::new(vec![xs.c], dbeta).expect("shape"),
                        ],
                    );
                    accumulate(&mut slot_grads, node.inputs[0], dx);
                }
                (Op::Dropout { .. }, Cache::Mask(mask)) => {
                    let dx = dout.iter().zip(mask).map(|(d, m)| *d * *m).collect();
                    accumulate(&mut slot_grads, node.inputs[0], dx);
                }
                (Op::Dropout { .. }, _) | (Op::Flatten, _) => {
                    accumulate(&mut slot_grads, node.inputs[0], dout);
                }
                (Op::Relu, _) => {
                    let dx = dout
                        .iter()
                        .zip(out)
                        .map(|(d, o)| if *o > T::zero() { *d } else { T::zero() })
                        .collect();
                    accumulate(&mut slot_grads, node.inputs[0], dx);
                }
                (Op::Concat, _) => {
                    let widths: Vec<usize> = node.in_shapes.iter().map(|s| s.c).collect();
                    let parts = ops::split_channels(&dout, &widths, batch * xs.h * xs.w);
                    for (&s, part) in node.inputs.iter().zip(parts) {
                        accumulate(&mut slot_grads, s, part);
                    }
                }
                (Op::Add, _) => {
                    for &s in &node.inputs {
                        accumulate(&mut slot_grads, s, dout.clone());
                    }
                }
                (op, _) => unreachable!("cache does not match op {op:?}"),
            }
        }
        grads
    }

    /// Folds the batch statistics of a train-mode tape into the running
    /// batchnorm buffers.
    pub fn update_batchnorm_stats(&mut self, tape: &Tape<T>) {
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        for (node, cache) in self.program.nodes.iter().zip(&tape.caches) {
            if let Cache::Bn {
                mean,
                var,
                train: true,
                ..
            } = cache
            {
                let m = tape.batch * node.in_shapes[0].h * node.in_shapes[0].w;
                let unbias = if m > 1 {
                    T::from_f64_lossy(m as f64 / (m as f64 - 1.0))
                } else {
                    T::one()
                };
                let p = self.params.get_mut(&node.id).expect("batchnorm params");
                for (r, b) in p.tensors[2].data_mut().iter_mut().zip(mean) {
                    *r = momentum * *r + (T::one() - momentum) * *b;
                }
                for (r, b) in p.tensors[3].data_mut().iter_mut().zip(var) {
                    *r = momentum * *r + (T::one() - momentum) * *b * unbias;
                }
            }
        }
    }

    /// Copies parameters from `source` wherever they line up.
    ///
    /// Elements are matched by node id and by the provenance of every axis
    /// (which upstream channel feeds a weight row, which output channel a
    /// column produces), so a layer whose input concat gained or lost a
    /// segment keeps the rows of the segments it still has. Nodes for which
    /// `exact_only` returns true are copied only when every tensor shape is
    /// unchanged. Everything else keeps this model's fresh initialization.
    pub fn inherit_from(
        &mut self,
        source: &ExecutableModel<T>,
        exact_only: impl Fn(&str) -> bool,
    ) -> InheritStats {
        let mut stats = InheritStats::default();
        let src_index: HashMap<&str, usize> = source
            .program
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let program = Arc::clone(&self.program);
        for (idx, node) in program.nodes.iter().enumerate() {
            let Some(dst) = self.params.get_mut(&node.id) else {
                continue;
            };
            let total: usize = dst.tensors.iter().map(|t| t.len()).sum();
            let (Some(&sidx), Some(src)) =
                (src_index.get(node.id.as_str()), source.params.get(&node.id))
            else {
                stats.fresh += total;
                stats.reinitialized.push(node.id.clone());
                continue;
            };
            let same_shapes = dst.tensors.len() == src.tensors.len()
                && dst
                    .tensors
                    .iter()
                    .zip(&src.tensors)
                    .all(|(a, b)| a.shape() == b.shape());
            let copied = if exact_only(&node.id) {
                if same_shapes {
                    dst.tensors = src.tensors.clone();
                    total
                } else {
                    0
                }
            } else {
                let dst_axes = program.param_axis_labels(idx);
                let src_axes = source.program.param_axis_labels(sidx);
                dst.tensors
                    .iter_mut()
                    .zip(&src.tensors)
                    .zip(dst_axes.iter().zip(&src_axes))
                    .map(|((d, s), (da, sa))| copy_by_labels(d, s, da, sa))
                    .sum()
            };
            stats.copied += copied;
            stats.fresh += total - copied;
            if copied == 0 {
                stats.reinitialized.push(node.id.clone());
            } else if copied < total {
                stats.partial.push(node.id.clone());
            }
        }
        stats
    }
}

fn window(
    batch: usize,
    x: Shape3,
    out: Shape3,
    k: (usize, usize),
    s: (usize, usize),
    pad: (usize, usize),
) -> Window {
    Window {
        n: batch,
        h: x.h,
        w: x.w,
        c: x.c,
        oh: out.h,
        ow: out.w,
        kh: k.0,
        kw: k.1,
        sh: s.0,
        sw: s.1,
        pad_top: pad.0,
        pad_left: pad.1,
    }
}

fn init_node<T: Scalar>(node: &CompiledNode, seed: u64) -> Option<NodeParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, &node.id));
    let x = node.in_shapes[0];
    let mut uniform = |shape: Vec<usize>, fan_in: usize| {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
            .collect();
        Tensor::new(shape, data).expect("sized")
    };
    match node.op {
        Op::Conv { kh, kw, cout, .. } => {
            let fan_in = kh * kw * x.c;
            Some(NodeParams {
                tensors: vec![
                    uniform(vec![kh, kw, x.c, cout], fan_in),
                    Tensor::zeros(vec![cout]),
                ],
                trainable: 2,
            })
        }
        Op::Dense { fout, .. } => {
            let fin = x.len();
            Some(NodeParams {
                tensors: vec![uniform(vec![fin, fout], fin), Tensor::zeros(vec![fout])],
                trainable: 2,
            })
        }
        Op::BatchNorm { .. } => Some(NodeParams {
            tensors: vec![
                Tensor::full(vec![x.c], T::one()),
                Tensor::zeros(vec![x.c]),
                Tensor::zeros(vec![x.c]),
                Tensor::full(vec![x.c], T::one()),
            ],
            trainable: 2,
        }),
        _ => None,
    }
}

/// Copies every element whose per-axis labels all exist in the source.
fn copy_by_labels<T: Scalar>(
    dst: &mut Tensor<T>,
    src: &Tensor<T>,
    dst_axes: &[Vec<Arc<str>>],
    src_axes: &[Vec<Arc<str>>],
) -> usize {
    debug_assert_eq!(dst_axes.len(), dst.shape().len());
    let maps: Vec<Vec<Option<usize>>> = dst_axes
        .iter()
        .zip(src_axes)
        .map(|(d, s)| {
            let lookup: HashMap<&str, usize> =
                s.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
            d.iter().map(|l| lookup.get(l.as_ref()).copied()).collect()
        })
        .collect();
    let src_strides = strides(src.shape());
    let dst_shape = dst.shape().to_vec();
    let src_data = src.data();
    let mut copied = 0;
    let mut index = vec![0usize; dst_shape.len()];
    for v in dst.data_mut().iter_mut() {
        let mut offset = Some(0usize);
        for (axis, &i) in index.iter().enumerate() {
            offset = match (offset, maps[axis][i]) {
                (Some(o), Some(j)) => Some(o + j * src_strides[axis]),
                _ => None,
            };
        }
        if let Some(o) = offset {
            *v = src_data[o];
            copied += 1;
        }
        // advance the row-major multi-index
        for axis in (0..index.len()).rev() {
            index[axis] += 1;
            if index[axis] < dst_shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    copied
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
