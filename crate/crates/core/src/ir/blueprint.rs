use std::collections::{HashSet, VecDeque};

use indexmap::IndexMap;

use super::{Graph, GraphInput, IrError, LayerKind, LayerSpec, Result, Shape3};

/// Reserved predecessor id standing for the network input.
pub const INPUT_ID: &str = "input";

/// An immutable, validated single-input CNN description.
#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    graph: Graph,
    classifier_boundary: Option<String>,
}

impl Blueprint {
    pub fn new(
        input_shape: Shape3,
        nodes: Vec<LayerSpec>,
        output: &str,
        classifier_boundary: Option<String>,
    ) -> Result<Blueprint> {
        let graph = Graph::new(
            vec![GraphInput {
                id: INPUT_ID.to_string(),
                shape: input_shape,
            }],
            nodes,
            output,
        )?;
        let bp = Blueprint {
            graph,
            classifier_boundary,
        };
        if let Some(b) = &bp.classifier_boundary {
            bp.check_boundary(b)?;
        }
        Ok(bp)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn input_shape(&self) -> Shape3 {
        self.graph.inputs()[0].shape
    }

    pub fn nodes(&self) -> &[LayerSpec] {
        self.graph.nodes()
    }

    pub fn node(&self, id: &str) -> Option<&LayerSpec> {
        self.graph.node(id)
    }

    pub fn output_id(&self) -> &str {
        self.graph.output()
    }

    pub fn output_shape(&self) -> Shape3 {
        self.graph.output_shape()
    }

    /// The explicitly marked boundary, if any.
    pub fn classifier_boundary(&self) -> Option<&str> {
        self.classifier_boundary.as_deref()
    }

    /// Output shape of every node (the input is excluded).
    pub fn infer_shapes(&self) -> IndexMap<String, Shape3> {
        self.graph
            .shapes()
            .iter()
            .filter(|(k, _)| k.as_str() != INPUT_ID)
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.parameter_count()
    }

    /// Marked boundary, or else the first flatten / global-pool node.
    pub fn effective_boundary(&self) -> Result<&str> {
        if let Some(b) = &self.classifier_boundary {
            return Ok(b);
        }
        self.nodes()
            .iter()
            .find(|n| matches!(n.kind, LayerKind::Flatten | LayerKind::GlobalPool(_)))
            .map(|n| n.id.as_str())
            .ok_or_else(|| {
                IrError::Boundary(
                    "no classifier boundary marked and no flatten/global_pool node to infer it from"
                        .into(),
                )
            })
    }

    fn check_boundary(&self, boundary: &str) -> Result<()> {
        if self.graph.node(boundary).is_none() {
            return Err(IrError::Boundary(format!("`{boundary}` is not a node")));
        }
        // Removing the boundary must disconnect the input from the output.
        let mut seen: HashSet<&str> = HashSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([INPUT_ID]);
        while let Some(cur) = queue.pop_front() {
            for c in self.graph.consumers(cur) {
                if c != boundary && seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        if boundary != self.output_id() && seen.contains(self.output_id()) {
            return Err(IrError::Boundary(format!(
                "`{boundary}` does not lie on every path from input to output"
            )));
        }
        Ok(())
    }

    /// Splits into (feature extractor, classifier) at the effective boundary.
    ///
    /// The classifier fragment reads the extractor output through its own
    /// `input` placeholder.
    pub fn split_at_classifier(&self) -> Result<(Blueprint, Blueprint)> {
        let boundary = self.effective_boundary()?.to_string();
        self.check_boundary(&boundary)?;
        let bnode = self.node(&boundary).expect("checked");
        if bnode.inputs.len() != 1 {
            return Err(IrError::Boundary(format!(
                "`{boundary}` must have exactly one predecessor"
            )));
        }
        let feature_out = bnode.inputs[0].clone();
        if feature_out == INPUT_ID {
            return Err(IrError::Boundary(
                "the feature extractor in front of the boundary is empty".into(),
            ));
        }
        let mut head: HashSet<String> = self.graph.descendants(&boundary);
        head.insert(boundary.clone());

        let extractor_nodes: Vec<LayerSpec> = self
            .nodes()
            .iter()
            .filter(|n| !head.contains(&n.id))
            .cloned()
            .collect();
        let classifier_nodes: Vec<LayerSpec> = self
            .nodes()
            .iter()
            .filter(|n| head.contains(&n.id))
            .map(|n| {
                let mut n = n.clone();
                for i in &mut n.inputs {
                    if *i == feature_out {
                        *i = INPUT_ID.to_string();
                    }
                }
                n
            })
            .collect();
        let feature_shape = self.graph.shape(&feature_out).expect("inferred");
        let extractor = Blueprint::new(self.input_shape(), extractor_nodes, &feature_out, None)?;
        let classifier = Blueprint::new(feature_shape, classifier_nodes, self.output_id(), None)?;
        Ok((extractor, classifier))
    }

    /// Block ends inside the feature extractor where cross-connections may
    /// attach: pooling nodes with a conv ancestor and add/concat merges, in
    /// topological order, minus the last one (whose output already feeds the
    /// shared classifier).
    pub fn find_insertion_points(&self) -> Result<Vec<String>> {
        let (extractor, _) = self.split_at_classifier()?;
        extractor_insertion_points(&extractor)
    }
}

/// Insertion points of an already split feature extractor.
pub fn extractor_insertion_points(extractor: &Blueprint) -> Result<Vec<String>> {
    let graph = extractor.graph();
    let mut points: Vec<String> = graph
        .nodes()
        .iter()
        .filter(|n| {
            if n.kind.is_merge() {
                return true;
            }
            n.kind.is_pool()
                && graph
                    .ancestors(&n.id)
                    .iter()
                    .any(|a| matches!(graph.node(a).map(|x| &x.kind), Some(LayerKind::Conv(_))))
        })
        .map(|n| n.id.clone())
        .collect();
    points.pop();
    if points.is_empty() {
        return Err(IrError::NoInsertionPoints);
    }
    Ok(points)
}

/// Same node sequence, kinds, wiring and non-width hyperparameters, ignoring
/// any `modality/` namespace on ids and any difference in conv/dense widths.
pub fn structurally_isomorphic(a: &Blueprint, b: &Blueprint) -> bool {
    use super::strip_namespace as strip;
    if a.nodes().len() != b.nodes().len() || strip(a.output_id()) != strip(b.output_id()) {
        return false;
    }
    a.nodes().iter().zip(b.nodes()).all(|(x, y)| {
        strip(&x.id) == strip(&y.id)
            && x.inputs.len() == y.inputs.len()
            && x.inputs
                .iter()
                .zip(&y.inputs)
                .all(|(p, q)| strip(p) == strip(q))
            && x.kind.with_width(1) == y.kind.with_width(1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{conv, dense, max_pool, zoo, Activation, Padding};

    #[test]
    fn valid_conv_shrinks_by_kernel_minus_one() {
        let bp = Blueprint::new(
            Shape3::new(8, 8, 3),
            vec![
                LayerSpec::new("c", conv(16, 3, 3, Padding::Valid), &[INPUT_ID]),
                LayerSpec::new("f", LayerKind::Flatten, &["c"]),
            ],
            "f",
            None,
        )
        .unwrap();
        assert_eq!(bp.infer_shapes()["c"], Shape3::new(6, 6, 16));
    }

    #[test]
    fn same_conv_and_pool_shapes() {
        let bp = Blueprint::new(
            Shape3::new(8, 8, 3),
            vec![
                LayerSpec::new("c", conv(16, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("p", max_pool(2), &["c"]),
                LayerSpec::new("f", LayerKind::Flatten, &["p"]),
                LayerSpec::new("d", dense(10, Activation::None), &["f"]),
            ],
            "d",
            None,
        )
        .unwrap();
        let shapes = bp.infer_shapes();
        assert_eq!(shapes["c"], Shape3::new(8, 8, 16));
        assert_eq!(shapes["p"], Shape3::new(4, 4, 16));
        assert_eq!(
            bp.node("c")
                .unwrap()
                .kind
                .parameter_count(Shape3::new(8, 8, 3)),
            448
        );
        assert_eq!(
            bp.node("d").unwrap().kind.parameter_count(shapes["f"]),
            2570
        );
    }

    #[test]
    fn oversized_valid_conv_is_a_shape_error() {
        let err = Blueprint::new(
            Shape3::new(2, 2, 1),
            vec![LayerSpec::new(
                "c",
                conv(4, 3, 3, Padding::Valid),
                &[INPUT_ID],
            )],
            "c",
            None,
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Shape { node, .. } if node == "c"));
    }

    #[test]
    fn add_with_mismatched_shapes_fails() {
        let err = Blueprint::new(
            Shape3::new(4, 4, 1),
            vec![
                LayerSpec::new("a", conv(4, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("b", conv(5, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("s", LayerKind::Add, &["a", "b"]),
            ],
            "s",
            None,
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Shape { .. }));
    }

    #[test]
    fn kerasnet_split_counts() {
        let bp = zoo::kerasnet(Shape3::new(32, 32, 3), 10);
        let (ext, cls) = bp.split_at_classifier().unwrap();
        assert_eq!(ext.nodes().len(), 8);
        assert_eq!(cls.nodes().len(), 4);
        assert_eq!(ext.output_id(), "drop2");
        assert_eq!(cls.input_shape(), Shape3::new(8, 8, 64));
    }

    #[test]
    fn kerasnet_insertion_points() {
        let bp = zoo::kerasnet(Shape3::new(32, 32, 3), 10);
        assert_eq!(
            bp.find_insertion_points().unwrap(),
            vec!["pool1".to_string()]
        );
    }

    #[test]
    fn residual_insertion_points_count_merges() {
        let bp = zoo::residual_fragment();
        assert_eq!(
            bp.find_insertion_points().unwrap(),
            vec!["add1".to_string()]
        );
    }

    #[test]
    fn chain_without_blocks_has_no_insertion_points() {
        let bp = Blueprint::new(
            Shape3::new(4, 4, 1),
            vec![
                LayerSpec::new("c", conv(4, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("f", LayerKind::Flatten, &["c"]),
                LayerSpec::new("d", dense(2, Activation::None), &["f"]),
            ],
            "d",
            None,
        )
        .unwrap();
        assert_eq!(bp.find_insertion_points(), Err(IrError::NoInsertionPoints));
    }

    #[test]
    fn inferred_boundary_is_the_single_flatten() {
        let bp = zoo::desk_cnn(Shape3::new(8, 8, 3), 4);
        assert_eq!(bp.classifier_boundary(), None);
        assert_eq!(bp.effective_boundary().unwrap(), "flatten");
    }

    #[test]
    fn inferred_boundary_on_a_branch_is_rejected_by_split() {
        // Two flatten branches: the first flatten does not dominate the output.
        let bp = Blueprint::new(
            Shape3::new(4, 4, 1),
            vec![
                LayerSpec::new("c", conv(2, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("f1", LayerKind::Flatten, &["c"]),
                LayerSpec::new("f2", LayerKind::Flatten, &["c"]),
                LayerSpec::new("cat", LayerKind::Concat, &["f1", "f2"]),
                LayerSpec::new("d", dense(2, Activation::None), &["cat"]),
            ],
            "d",
            None,
        )
        .unwrap();
        assert!(matches!(
            bp.split_at_classifier(),
            Err(IrError::Boundary(_))
        ));
    }

    #[test]
    fn explicit_boundary_off_the_main_path_is_rejected() {
        let err = Blueprint::new(
            Shape3::new(4, 4, 1),
            vec![
                LayerSpec::new("c", conv(2, 3, 3, Padding::Same), &[INPUT_ID]),
                LayerSpec::new("f1", LayerKind::Flatten, &["c"]),
                LayerSpec::new("f2", LayerKind::Flatten, &["c"]),
                LayerSpec::new("cat", LayerKind::Concat, &["f1", "f2"]),
                LayerSpec::new("d", dense(2, Activation::None), &["cat"]),
            ],
            "d",
            Some("f1".into()),
        )
        .unwrap_err();
        assert!(matches!(err, IrError::Boundary(_)));
    }

    #[test]
    fn isomorphism_ignores_widths_and_namespace() {
        let bp = zoo::kerasnet(Shape3::new(32, 32, 3), 10);
        let (ext, _) = bp.split_at_classifier().unwrap();
        let renamed: Vec<LayerSpec> = ext
            .nodes()
            .iter()
            .map(|n| LayerSpec {
                id: format!("Y/{}", n.id),
                kind: n
                    .kind
                    .with_width(n.kind.width().map(|w| w / 2).unwrap_or(0)),
                inputs: n
                    .inputs
                    .iter()
                    .map(|i| {
                        if i == INPUT_ID {
                            i.clone()
                        } else {
                            format!("Y/{i}")
                        }
                    })
                    .collect(),
            })
            .collect();
        let other = Blueprint::new(
            Shape3::new(32, 32, 1),
            renamed,
            &format!("Y/{}", ext.output_id()),
            None,
        )
        .unwrap();
        assert!(structurally_isomorphic(&ext, &other));
        assert!(!structurally_isomorphic(&ext, &bp));
    }
}
