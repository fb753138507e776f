use std::collections::{BTreeSet, HashMap, HashSet};

use indexmap::IndexMap;

use super::{IrError, LayerKind, LayerSpec, Result, Shape3};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphInput {
    pub id: String,
    pub shape: Shape3,
}

/// Validated multi-input layer DAG with nodes held in canonical topological
/// order and every node shape already inferred.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    inputs: Vec<GraphInput>,
    nodes: Vec<LayerSpec>,
    output: String,
    shapes: IndexMap<String, Shape3>,
}

impl Graph {
    /// Validates and canonicalizes a node list.
    ///
    /// Nodes are re-ordered topologically; among ready nodes the one listed
    /// first wins, so an already sorted list keeps its order.
    pub fn new(inputs: Vec<GraphInput>, nodes: Vec<LayerSpec>, output: &str) -> Result<Graph> {
        let mut known: HashSet<&str> = HashSet::new();
        for input in &inputs {
            if !known.insert(input.id.as_str()) {
                return Err(IrError::DuplicateId(input.id.clone()));
            }
        }
        for node in &nodes {
            if !known.insert(node.id.as_str()) {
                return Err(IrError::DuplicateId(node.id.clone()));
            }
            node.kind.validate(&node.id)?;
        }
        for node in &nodes {
            if let Some(missing) = node.inputs.iter().find(|i| !known.contains(i.as_str())) {
                return Err(IrError::DanglingReference {
                    node: node.id.clone(),
                    missing: missing.clone(),
                });
            }
        }
        if !nodes.iter().any(|n| n.id == output) {
            return Err(IrError::UnknownOutput(output.to_string()));
        }

        let nodes = topo_sort(nodes)?;

        // Every input must be consumed and every node must feed the output.
        let mut used: HashSet<&str> = HashSet::new();
        for node in &nodes {
            used.extend(node.inputs.iter().map(String::as_str));
        }
        if let Some(unused) = inputs.iter().find(|i| !used.contains(i.id.as_str())) {
            return Err(IrError::UnusedInput(unused.id.clone()));
        }
        let live = ancestors_inclusive(&nodes, output);
        let dead: Vec<String> = nodes
            .iter()
            .filter(|n| !live.contains(n.id.as_str()))
            .map(|n| n.id.clone())
            .collect();
        if !dead.is_empty() {
            return Err(IrError::Unreachable(dead));
        }

        let mut shapes: IndexMap<String, Shape3> = IndexMap::new();
        for input in &inputs {
            if input.shape.is_empty() {
                return Err(IrError::Shape {
                    node: input.id.clone(),
                    message: format!("input shape {} has a zero dimension", input.shape),
                });
            }
            shapes.insert(input.id.clone(), input.shape);
        }
        for node in &nodes {
            let in_shapes: Vec<Shape3> = node.inputs.iter().map(|i| shapes[i.as_str()]).collect();
            let out = node.kind.output_shape(&node.id, &in_shapes)?;
            if out.is_empty() {
                return Err(IrError::Shape {
                    node: node.id.clone(),
                    message: format!("non-positive output shape {out}"),
                });
            }
            shapes.insert(node.id.clone(), out);
        }

        Ok(Graph {
            inputs,
            nodes,
            output: output.to_string(),
            shapes,
        })
    }

    pub fn inputs(&self) -> &[GraphInput] {
        &self.inputs
    }

    pub fn nodes(&self) -> &[LayerSpec] {
        &self.nodes
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn node(&self, id: &str) -> Option<&LayerSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn is_input(&self, id: &str) -> bool {
        self.inputs.iter().any(|i| i.id == id)
    }

    /// Output shape of every input and node, inputs first, then topological order.
    pub fn shapes(&self) -> &IndexMap<String, Shape3> {
        &self.shapes
    }

    pub fn shape(&self, id: &str) -> Option<Shape3> {
        self.shapes.get(id).copied()
    }

    pub fn output_shape(&self) -> Shape3 {
        self.shapes[self.output.as_str()]
    }

    /// Input shape seen by a single-input node.
    pub fn input_shape_of(&self, node: &LayerSpec) -> Shape3 {
        self.shapes[node.inputs[0].as_str()]
    }

    pub fn consumers(&self, id: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.iter().any(|i| i == id))
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Sum of trainable parameters over all layers.
    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n.kind {
                LayerKind::Conv(_) | LayerKind::Dense(_) | LayerKind::BatchNorm(_) => {
                    n.kind.parameter_count(self.input_shape_of(n))
                }
                _ => 0,
            })
            .sum()
    }

    /// Ids of every node that `id` transitively depends on (inputs excluded).
    pub fn ancestors(&self, id: &str) -> HashSet<String> {
        let mut set: HashSet<String> = ancestors_inclusive(&self.nodes, id)
            .into_iter()
            .map(str::to_string)
            .collect();
        set.remove(id);
        set
    }

    /// Ids of every node that transitively depends on `id`.
    pub fn descendants(&self, id: &str) -> HashSet<String> {
        let mut out: HashSet<String> = HashSet::new();
        for node in &self.nodes {
            if node
                .inputs
                .iter()
                .any(|i| i == id || out.contains(i.as_str()))
            {
                out.insert(node.id.clone());
            }
        }
        out
    }
}

fn topo_sort(nodes: Vec<LayerSpec>) -> Result<Vec<LayerSpec>> {
    let index: HashMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i))
        .collect();
    let mut pending: Vec<usize> = vec![0; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(&j) = index.get(input) {
                pending[i] += 1;
                consumers[j].push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let placed: HashSet<usize> = order.iter().copied().collect();
        let stuck = (0..nodes.len())
            .filter(|i| !placed.contains(i))
            .map(|i| nodes[i].id.clone())
            .collect();
        return Err(IrError::Cycle(stuck));
    }
    let mut slots: Vec<Option<LayerSpec>> = nodes.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("each node placed once"))
        .collect())
}

fn ancestors_inclusive<'a>(nodes: &'a [LayerSpec], id: &str) -> HashSet<&'a str> {
    let by_id: HashMap<&str, &LayerSpec> = nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut stack: Vec<&str> = Vec::new();
    if let Some(n) = by_id.get(id) {
        stack.push(n.id.as_str());
    }
    while let Some(cur) = stack.pop() {
        if !seen.insert(cur) {
            continue;
        }
        if let Some(n) = by_id.get(cur) {
            for i in &n.inputs {
                if let Some(p) = by_id.get(i.as_str()) {
                    stack.push(p.id.as_str());
                }
            }
        }
    }
    seen
}
