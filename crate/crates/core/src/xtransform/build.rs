use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;

use super::{ScalePlan, TransformError, WeightMatrix};
use crate::ir::{namespaced, Blueprint, CrossConnection, LayerSpec, Shape3, XBlueprint, INPUT_ID};

/// `max(1, round(base · scale))`, ties away from zero.
pub fn scaled_width(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

/// The base network with every extractor conv/dense width scaled and the
/// input replaced; the classifier keeps its widths.
pub fn probe_blueprint(
    b: &Blueprint,
    input: Shape3,
    scale: f64,
) -> Result<Blueprint, TransformError> {
    let (extractor, _) = b.split_at_classifier()?;
    let in_extractor: HashSet<&str> = extractor.nodes().iter().map(|n| n.id.as_str()).collect();
    let nodes = b
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            if in_extractor.contains(n.id.as_str()) {
                if let Some(w) = n.kind.width() {
                    n.kind = n.kind.with_width(scaled_width(w, scale));
                }
            }
            n
        })
        .collect();
    Ok(Blueprint::new(
        input,
        nodes,
        b.output_id(),
        b.classifier_boundary().map(str::to_string),
    )?)
}

/// One width-scaled copy of the extractor per modality, ids namespaced
/// `modality/node`.
pub fn build_superlayers(
    extractor: &Blueprint,
    plan: &ScalePlan,
    inputs: &IndexMap<String, Shape3>,
) -> Result<BTreeMap<String, Blueprint>, TransformError> {
    let mut out = BTreeMap::new();
    for (m, &shape) in inputs {
        let scale = plan
            .get(m)
            .ok_or_else(|| TransformError::Config(format!("no scale for modality `{m}`")))?;
        let nodes = extractor
            .nodes()
            .iter()
            .map(|n| LayerSpec {
                id: namespaced(m, &n.id),
                kind: match n.kind.width() {
                    Some(w) => n.kind.with_width(scaled_width(w, scale)),
                    None => n.kind.clone(),
                },
                inputs: n
                    .inputs
                    .iter()
                    .map(|i| {
                        if i == INPUT_ID {
                            i.clone()
                        } else {
                            namespaced(m, i)
                        }
                    })
                    .collect(),
            })
            .collect();
        let sl = Blueprint::new(shape, nodes, &namespaced(m, extractor.output_id()), None)?;
        out.insert(m.clone(), sl);
    }
    Ok(out)
}

/// Complete digraph of connections at every insertion depth, in
/// (depth, source, destination) order. A zero weight, or one below
/// `drop_threshold`, gives a dropped connection; otherwise the projection keeps
/// `max(1, round(w · c_src))` channels.
pub fn place_connections(
    superlayers: &BTreeMap<String, Blueprint>,
    insertion_points: &[String],
    weights: &WeightMatrix,
    drop_threshold: f64,
) -> Result<Vec<CrossConnection>, TransformError> {
    if insertion_points.is_empty() {
        return Err(crate::ir::IrError::NoInsertionPoints.into());
    }
    let order = weights.order();
    let mut out = Vec::new();
    for (d, p) in insertion_points.iter().enumerate() {
        for (i, j) in weights.pairs() {
            let (src, dst) = (&order[i], &order[j]);
            let w = weights.get(i, j);
            let sl = superlayers
                .get(src)
                .ok_or_else(|| TransformError::Config(format!("no super-layer for `{src}`")))?;
            let c_src = sl
                .graph()
                .shape(&namespaced(src, p))
                .ok_or_else(|| TransformError::Config(format!("`{src}` has no node `{p}`")))?
                .c;
            let projection_channels = if w <= 0.0 || w < drop_threshold {
                0
            } else {
                scaled_width(c_src, w)
            };
            out.push(CrossConnection {
                src_modality: src.clone(),
                dst_modality: dst.clone(),
                depth_index: d,
                weight: w,
                projection_channels,
            });
        }
    }
    Ok(out)
}

/// Joins the super-layers, the connections and a classifier rebuilt over
/// the concatenated super-layer outputs.
pub fn assemble_xcnn(
    modality_order: &[String],
    superlayers: BTreeMap<String, Blueprint>,
    insertion_points: Vec<String>,
    connections: Vec<CrossConnection>,
    classifier: &Blueprint,
) -> Result<XBlueprint, TransformError> {
    let outs: Vec<Shape3> = modality_order
        .iter()
        .map(|m| {
            superlayers
                .get(m)
                .map(|s| s.output_shape())
                .ok_or_else(|| TransformError::Config(format!("no super-layer for `{m}`")))
        })
        .collect::<Result<_, _>>()?;
    let concat =
        crate::ir::LayerKind::Concat.output_shape(crate::ir::CLASSIFIER_CONCAT_ID, &outs)?;
    let classifier = Blueprint::new(
        concat,
        classifier.nodes().to_vec(),
        classifier.output_id(),
        None,
    )?;
    Ok(XBlueprint::new(
        modality_order.to_vec(),
        superlayers,
        insertion_points,
        connections,
        classifier,
    )?)
}
