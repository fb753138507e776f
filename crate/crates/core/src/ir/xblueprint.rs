use std::collections::{BTreeMap, HashMap};

use super::{
    Activation, Blueprint, ConvParams, Graph, GraphInput, IrError, LayerKind, LayerSpec, Padding,
    Result, Shape3, INPUT_ID,
};

/// Namespace prefix of the shared classifier's nodes in a lowered graph.
pub const CLASSIFIER_NAMESPACE: &str = "cls";
/// Concat node that merges all super-layer outputs in front of the classifier.
pub const CLASSIFIER_CONCAT_ID: &str = "cls/concat";

const CONNECTION_BN_EPSILON: f64 = 1e-3;

pub fn namespaced(namespace: &str, id: &str) -> String {
    format!("{namespace}/{id}")
}

/// Drops a leading `namespace/` from an id, if present.
pub fn strip_namespace(id: &str) -> &str {
    id.split_once('/').map(|(_, rest)| rest).unwrap_or(id)
}

/// Common prefix of the three nodes realizing one connection.
pub fn connection_prefix(src: &str, dst: &str, depth: usize) -> String {
    format!("{src}>{dst}@{depth}")
}

/// Concat node feeding a destination super-layer after an insertion depth.
pub fn merge_node_id(dst: &str, depth: usize) -> String {
    format!("{dst}@{depth}/merge")
}

/// A directed cross-modal connection at one insertion depth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossConnection {
    pub src_modality: String,
    pub dst_modality: String,
    pub depth_index: usize,
    pub weight: f64,
    /// 1x1 projection width; zero means the connection is dropped.
    pub projection_channels: usize,
}

impl CrossConnection {
    pub fn is_dropped(&self) -> bool {
        self.projection_channels == 0
    }

    pub fn prefix(&self) -> String {
        connection_prefix(&self.src_modality, &self.dst_modality, self.depth_index)
    }

    /// Ids of the projection, normalization and activation nodes.
    pub fn node_ids(&self) -> [String; 3] {
        let p = self.prefix();
        [format!("{p}/proj"), format!("{p}/bn"), format!("{p}/relu")]
    }
}

/// Cross-modal network: per-modality super-layers, weighted connections
/// between them and a classifier shared by all.
#[derive(Debug, Clone, PartialEq)]
pub struct XBlueprint {
    modality_order: Vec<String>,
    superlayers: BTreeMap<String, Blueprint>,
    insertion_points: Vec<String>,
    connections: Vec<CrossConnection>,
    classifier: Blueprint,
    lowered: Graph,
}

impl XBlueprint {
    /// Validates the parts and lowers them to a single graph.
    ///
    /// Super-layer fragments carry ids namespaced `modality/base_id`;
    /// `insertion_points` are the un-namespaced base ids, and a connection's
    /// `depth_index` indexes into them. The classifier fragment's `input`
    /// is the channel concat of all super-layer outputs in modality order.
    pub fn new(
        modality_order: Vec<String>,
        superlayers: BTreeMap<String, Blueprint>,
        insertion_points: Vec<String>,
        connections: Vec<CrossConnection>,
        classifier: Blueprint,
    ) -> Result<XBlueprint> {
        for m in &modality_order {
            if m.is_empty() || m.contains(['/', '>', '@']) || m == CLASSIFIER_NAMESPACE {
                return Err(IrError::Modality(format!(
                    "invalid modality name `{m}` (must be non-empty, not `{CLASSIFIER_NAMESPACE}`, and free of '/', '>', '@')"
                )));
            }
            if !superlayers.contains_key(m) {
                return Err(IrError::Modality(format!(
                    "no super-layer for modality `{m}`"
                )));
            }
        }
        if superlayers.len() != modality_order.len() {
            return Err(IrError::Modality(
                "super-layers and modality_order disagree".into(),
            ));
        }
        for c in &connections {
            if c.src_modality == c.dst_modality {
                return Err(IrError::Connection(format!(
                    "self-connection on `{}`",
                    c.src_modality
                )));
            }
            for m in [&c.src_modality, &c.dst_modality] {
                if !superlayers.contains_key(m) {
                    return Err(IrError::Connection(format!("unknown modality `{m}`")));
                }
            }
            if c.depth_index >= insertion_points.len() {
                return Err(IrError::Connection(format!(
                    "depth {} out of range ({} insertion points)",
                    c.depth_index,
                    insertion_points.len()
                )));
            }
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(IrError::Connection(format!(
                    "weight {} of {} outside [0, 1]",
                    c.weight,
                    c.prefix()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &connections {
            if !seen.insert(c.prefix()) {
                return Err(IrError::Connection(format!(
                    "duplicate connection {}",
                    c.prefix()
                )));
            }
        }
        for (d, p) in insertion_points.iter().enumerate() {
            let mut spatial: Option<(usize, usize)> = None;
            for m in &modality_order {
                let s = superlayers[m]
                    .graph()
                    .shape(&namespaced(m, p))
                    .ok_or_else(|| {
                        IrError::Connection(format!(
                            "insertion point `{p}` missing from super-layer `{m}`"
                        ))
                    })?;
                match spatial {
                    None => spatial = Some((s.h, s.w)),
                    Some(hw) if hw != (s.h, s.w) => {
                        return Err(IrError::Shape {
                            node: merge_node_id(m, d),
                            message: format!(
                                "super-layers disagree on spatial dims at `{p}`: {hw:?} vs {s}"
                            ),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let lowered = lower(
            &modality_order,
            &superlayers,
            &insertion_points,
            &connections,
            &classifier,
        )?;
        Ok(XBlueprint {
            modality_order,
            superlayers,
            insertion_points,
            connections,
            classifier,
            lowered,
        })
    }

    pub fn modality_order(&self) -> &[String] {
        &self.modality_order
    }

    pub fn superlayers(&self) -> &BTreeMap<String, Blueprint> {
        &self.superlayers
    }

    pub fn superlayer(&self, modality: &str) -> Option<&Blueprint> {
        self.superlayers.get(modality)
    }

    pub fn insertion_points(&self) -> &[String] {
        &self.insertion_points
    }

    pub fn connections(&self) -> &[CrossConnection] {
        &self.connections
    }

    pub fn active_connections(&self) -> impl Iterator<Item = &CrossConnection> {
        self.connections.iter().filter(|c| !c.is_dropped())
    }

    pub fn classifier(&self) -> &Blueprint {
        &self.classifier
    }

    /// The whole network as one multi-input graph (one input per modality).
    pub fn graph(&self) -> &Graph {
        &self.lowered
    }

    pub fn parameter_count(&self) -> usize {
        self.lowered.parameter_count()
    }

    /// Same super-layers and classifier, different connection list.
    pub fn with_connections(&self, connections: Vec<CrossConnection>) -> Result<XBlueprint> {
        XBlueprint::new(
            self.modality_order.clone(),
            self.superlayers.clone(),
            self.insertion_points.clone(),
            connections,
            self.classifier.clone(),
        )
    }
}

fn lower(
    order: &[String],
    superlayers: &BTreeMap<String, Blueprint>,
    points: &[String],
    connections: &[CrossConnection],
    classifier: &Blueprint,
) -> Result<Graph> {
    let mut inputs = Vec::new();
    let mut nodes: Vec<LayerSpec> = Vec::new();

    // dst node id at an insertion point -> merge node that replaces it downstream
    let mut rewire: HashMap<String, String> = HashMap::new();
    for (d, p) in points.iter().enumerate() {
        for dst in order {
            let incoming: Vec<&CrossConnection> = order
                .iter()
                .filter_map(|src| {
                    connections.iter().find(|c| {
                        c.depth_index == d
                            && &c.src_modality == src
                            && &c.dst_modality == dst
                            && !c.is_dropped()
                    })
                })
                .collect();
            if incoming.is_empty() {
                continue;
            }
            let dst_point = namespaced(dst, p);
            let mut merge_inputs = vec![dst_point.clone()];
            for c in incoming {
                let [proj, bn, relu] = c.node_ids();
                nodes.push(LayerSpec {
                    id: proj.clone(),
                    kind: LayerKind::Conv(ConvParams {
                        kernel_count: c.projection_channels,
                        kernel_hw: (1, 1),
                        stride: (1, 1),
                        padding: Padding::Same,
                        activation: Activation::None,
                    }),
                    inputs: vec![namespaced(&c.src_modality, p)],
                });
                nodes.push(LayerSpec {
                    id: bn.clone(),
                    kind: LayerKind::BatchNorm(super::BatchNormParams {
                        epsilon: CONNECTION_BN_EPSILON,
                    }),
                    inputs: vec![proj],
                });
                nodes.push(LayerSpec {
                    id: relu.clone(),
                    kind: LayerKind::Relu,
                    inputs: vec![bn],
                });
                merge_inputs.push(relu);
            }
            let merge = merge_node_id(dst, d);
            nodes.push(LayerSpec {
                id: merge.clone(),
                kind: LayerKind::Concat,
                inputs: merge_inputs,
            });
            rewire.insert(dst_point, merge);
        }
    }

    for m in order {
        let sl = &superlayers[m];
        let input_id = namespaced(m, INPUT_ID);
        inputs.push(GraphInput {
            id: input_id.clone(),
            shape: sl.input_shape(),
        });
        for n in sl.nodes() {
            let mut n = n.clone();
            for i in &mut n.inputs {
                if i == INPUT_ID {
                    *i = input_id.clone();
                } else if let Some(r) = rewire.get(i.as_str()) {
                    *i = r.clone();
                }
            }
            nodes.push(n);
        }
    }

    let concat_shape = {
        let outs: Vec<Shape3> = order
            .iter()
            .map(|m| superlayers[m].output_shape())
            .collect();
        LayerKind::Concat.output_shape(CLASSIFIER_CONCAT_ID, &outs)?
    };
    if concat_shape != classifier.input_shape() {
        return Err(IrError::Shape {
            node: CLASSIFIER_CONCAT_ID.into(),
            message: format!(
                "classifier expects {} but super-layers concatenate to {concat_shape}",
                classifier.input_shape()
            ),
        });
    }
    nodes.push(LayerSpec {
        id: CLASSIFIER_CONCAT_ID.to_string(),
        kind: LayerKind::Concat,
        inputs: order
            .iter()
            .map(|m| superlayers[m].output_id().to_string())
            .collect(),
    });
    let cls = |id: &str| {
        if id == INPUT_ID {
            CLASSIFIER_CONCAT_ID.to_string()
        } else {
            namespaced(CLASSIFIER_NAMESPACE, id)
        }
    };
    for n in classifier.nodes() {
        nodes.push(LayerSpec {
            id: cls(&n.id),
            kind: n.kind.clone(),
            inputs: n.inputs.iter().map(|i| cls(i)).collect(),
        });
    }
    Graph::new(inputs, nodes, &cls(classifier.output_id()))
}
